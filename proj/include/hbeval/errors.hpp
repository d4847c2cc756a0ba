#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hbeval {

// Bad numeric arguments: R = 0, k > R, alpha outside (0,1), B = 0, ...
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A named app/scenario/leaf/table that does not exist.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Malformed input text. `line` is 1-based (0 when not line oriented),
// `column` is 1-based (0 when unknown).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::size_t column = 0)
      : std::runtime_error(format(what, line, column)), line_(line), column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  static std::string format(const std::string& what, std::size_t line, std::size_t column) {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (column > 0) out += "column " + std::to_string(column) + ": ";
    return out + what;
  }

  std::size_t line_;
  std::size_t column_;
};

// Data that parses but contradicts itself (conflicting duplicate outcomes).
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyDatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Template resolution or constraint evaluation could not complete.
class ResolutionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hbeval
