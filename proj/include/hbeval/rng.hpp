#pragma once
// Counter-based random streams.
//
// Every stochastic procedure in the library draws from Philox4x32-10
// (Salmon et al., "Parallel random numbers: as easy as 1, 2, 3", SC'11).
// A stream is addressed by a master seed plus a path of integer ids, e.g.
// (seed, replicate, app). Two streams with different paths never share
// counter blocks, so work units can run in any order or on any thread and
// still see exactly the same numbers.

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace hbeval {

// SplitMix64 finalizer; used only to turn (seed, path) into key/stream words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Philox4x32 {
 public:
  using result_type = std::uint64_t;
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  // Counter words 0-1 walk the block index, words 2-3 hold the stream id.
  explicit Philox4x32(std::uint64_t key, std::uint64_t stream = 0) noexcept
      : key_{static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)},
        stream_(stream) {}

  result_type operator()() noexcept {
    if (pos_ == 4) {
      buffer_ = generate(counter(block_++), key_);
      pos_ = 0;
    }
    const std::uint64_t lo = buffer_[pos_];
    const std::uint64_t hi = buffer_[pos_ + 1];
    pos_ += 2;
    return (hi << 32) | lo;
  }

  // Skip `n` 64-bit outputs.
  void discard(std::uint64_t n) noexcept {
    while (n > 0 && pos_ != 4) {
      pos_ += 2;
      --n;
    }
    block_ += n / 2;
    if (n % 2 == 1) {
      buffer_ = generate(counter(block_++), key_);
      pos_ = 2;
    }
  }

  // The raw bijection: ten Philox rounds of `ctr` under `key`.
  static constexpr Block generate(Block ctr, Key key) noexcept {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
      ctr = {static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0],
             static_cast<std::uint32_t>(p1),
             static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1],
             static_cast<std::uint32_t>(p0)};
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  Block counter(std::uint64_t block) const noexcept {
    return {static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
            static_cast<std::uint32_t>(stream_), static_cast<std::uint32_t>(stream_ >> 32)};
  }

  Key key_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Block buffer_{};
  unsigned pos_ = 4;
};

// Stream ids for distinct consumers sharing one master seed.
enum class StreamDomain : std::uint64_t {
  bootstrap = 1,
  simulation_tree = 2,
  simulation_bootstrap = 3,
  coverage_base = 4,
  calibration = 5,
  replay_record = 6,
  replay_match = 7,
  split_half = 8,
  fixture = 9,
};

inline Philox4x32 substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t stream = 0x243f6a8885a308d3ULL;
  for (const std::uint64_t id : path) stream = mix64(stream ^ mix64(id));
  return Philox4x32(mix64(seed), stream);
}

inline Philox4x32 substream(std::uint64_t seed, StreamDomain domain,
                            std::initializer_list<std::uint64_t> path = {}) noexcept {
  std::uint64_t stream = mix64(static_cast<std::uint64_t>(domain));
  for (const std::uint64_t id : path) stream = mix64(stream ^ mix64(id));
  return Philox4x32(mix64(seed), stream);
}

// A 64-bit seed for a nested consumer that takes a plain seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t h = mix64(seed ^ 0x13198a2e03707344ULL);
  for (const std::uint64_t id : path) h = mix64(h ^ mix64(id));
  return h;
}

// Uniform double in [0, 1) with 53 random bits.
template <class Gen>
inline double uniform01(Gen& gen) {
  return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// Uniform index in [0, n); bias is below 2^-53 * n.
template <class Gen>
inline std::size_t uniform_index(Gen& gen, std::size_t n) {
  const auto i = static_cast<std::size_t>(uniform01(gen) * static_cast<double>(n));
  return i < n ? i : n - 1;
}

template <class Gen>
inline bool bernoulli(Gen& gen, double p) {
  return uniform01(gen) < p;
}

}  // namespace hbeval
