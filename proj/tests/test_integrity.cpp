#include <catch_amalgamated.hpp>

#include "hbeval/integrity.hpp"
#include "support.hpp"

using namespace hbeval;
namespace brute = testing::brute;

namespace {

ProfileStore store_of(const char* text) { return profile_from_json(Json::parse(text)); }

const char* kStore = R"({
  "profile_id": "p",
  "user_meta": {"email": "a@b.c", "id": 7},
  "tables": {
    "accounts": [{"id": 1, "kind": "checking"}, {"id": 2, "kind": "savings"}],
    "wallets": [{"id": "w1", "balance": 300}],
    "addresses": [{"city": "Oslo"}, {"city": "Lima"}, {"city": "Rome"}],
    "transactions": [{"timestamp": "2024-01-01T14:00:00Z"}, {"timestamp": "2024-01-01T10:00:00Z"},
                     {"timestamp": "2024-01-01T12:00:00Z"}],
    "rooms": []
  }
})";

struct Suite {
  std::vector<TaskInstance> instances;
  std::vector<ProfileStore> profiles;
  Json raw_instances;
  std::vector<Json> raw_profiles;
};

Suite load_suite(const std::string& name) {
  Suite s;
  const auto dir = testing::fixture("integrity/" + name);
  s.raw_instances = read_json_file(dir + "/instances.json");
  s.instances = load_instances(s.raw_instances);
  s.profiles = load_profiles(dir + "/profiles");
  for (const auto& p : s.profiles) s.raw_profiles.push_back(read_json_file(dir + "/profiles/" + p.profile_id + ".json"));
  return s;
}

// Brute-force triviality: feasible cells whose predicate is false survive.
std::set<std::pair<std::string, std::string>> brute_survivors(const Suite& s) {
  std::set<std::pair<std::string, std::string>> out;
  for (const Json& inst : s.raw_instances["instances"])
    for (std::size_t p = 0; p < s.profiles.size(); ++p) {
      if (!brute::feasible(inst, s.raw_profiles[p])) continue;
      bool trivial = false;
      if (inst.contains("predicate")) {
        try {
          trivial = brute::predicate_holds(inst["predicate"], inst.value("params", Json::object()), s.raw_profiles[p]);
        } catch (const std::out_of_range&) {
          trivial = true;
        }
      }
      if (!trivial) out.emplace(inst["id"], s.profiles[p].profile_id);
    }
  return out;
}

}  // namespace

TEST_CASE("template classification", "[integrity]") {
  const auto id = parse_template("{{current_user_email}}");
  CHECK(id.kind == TemplateKind::identity);
  CHECK(id.key == "email");
  const auto rel = parse_template("{{first_room_id}}");
  CHECK(rel.kind == TemplateKind::relational);
  CHECK(rel.table == "rooms");
  CHECK(rel.field == "id");
  const auto pos = parse_template("{{middle_transaction_time}}");
  CHECK(pos.kind == TemplateKind::positioning);
  CHECK(pos.position == Position::middle);
  CHECK(pos.table == "transactions");
  const auto dotted = parse_template("{{first_order_item.sku}}");
  CHECK(dotted.table == "order_items");
  CHECK(dotted.field == "sku");
  const auto filtered = parse_template("{{first_account_id:kind='savings'}}");
  REQUIRE(filtered.filter.size() == 1);
  CHECK(filtered.filter[0].field == "kind");
  try {
    parse_template("{{oops}}");
    FAIL("no exception");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("{{oops}}") != std::string::npos);
  }
}

TEST_CASE("plural table names", "[integrity]") {
  CHECK(plural("room") == "rooms");
  CHECK(plural("address") == "addresses");
  CHECK(plural("entry") == "entries");
  CHECK(plural("day") == "days");
  CHECK(plural("box") == "boxes");
}

TEST_CASE("template resolution", "[integrity]") {
  const auto store = store_of(kStore);
  CHECK(resolve_template(parse_template("{{current_user_email}}"), store) == "a@b.c");
  CHECK(resolve_template(parse_template("{{current_user_id}}"), store) == 7);
  CHECK(resolve_template(parse_template("{{middle_transaction_time}}"), store) == "2024-01-01T12:00:00Z");
  CHECK(resolve_template(parse_template("{{beginning_transaction_time}}"), store) == "2024-01-01T10:00:00Z");
  CHECK(resolve_template(parse_template("{{end_transaction_time}}"), store) == "2024-01-01T14:00:00Z");
  CHECK(resolve_template(parse_template("{{first_account_id}}"), store) == 1);
  CHECK(resolve_template(parse_template("{{first_account_id:kind='savings'}}"), store) == 2);
  CHECK_THROWS_AS(resolve_template(parse_template("{{first_room_id}}"), store), ResolutionError);
  CHECK_THROWS_AS(resolve_template(parse_template("{{current_user_name}}"), store), ResolutionError);
  try {
    resolve_template(parse_template("{{first_room_id}}"), store);
  } catch (const ResolutionError& e) {
    CHECK(std::string(e.what()).find("rooms") != std::string::npos);
  }
}

TEST_CASE("even-count middle is the midpoint", "[integrity]") {
  const auto store = store_of(R"({"profile_id": "q", "tables": {"events": [
      {"timestamp": "2024-01-01T10:00:00Z"}, {"timestamp": "2024-01-01T11:00:01Z"}]}})");
  CHECK(resolve_template(parse_template("{{middle_event_time}}"), store) == "2024-01-01T10:30:00.500Z");
  const auto numeric = store_of(R"({"profile_id": "r", "tables": {"events": [{"timestamp": 10}, {"timestamp": 20}]}})");
  CHECK(resolve_template(parse_template("{{middle_event_time}}"), numeric) == 15.0);
}

TEST_CASE("mockdata substitution keeps types", "[integrity]") {
  const auto store = store_of(kStore);
  const Json mock = {{"who", "{{current_user_email}}"},
                     {"acct", "{{first_account_id}}"},
                     {"note", "ref {{first_account_id}} for {{current_user_email}}"},
                     {"list", {"{{first_wallet_id}}", 3}},
                     {"plain", 4}};
  const Json out = resolve_templates(mock, store);
  CHECK(out["who"] == "a@b.c");
  CHECK(out["acct"] == 1);
  CHECK(out["note"] == "ref 1 for a@b.c");
  CHECK(out["list"] == Json::array({"w1", 3}));
  CHECK(out["plain"] == 4);
  CHECK(resolve_templates(out, store) == out);
}

TEST_CASE("timestamps", "[integrity]") {
  CHECK(timestamp_seconds(Json("1970-01-02")) == 86400.0);
  CHECK(timestamp_seconds(Json("1970-01-01T01:00:00+01:00")) == 0.0);
  CHECK(timestamp_seconds(Json("1970-01-01T00:00:01.25Z")) == 1.25);
  CHECK_FALSE(timestamp_seconds(Json("yesterday")).has_value());
  CHECK_FALSE(timestamp_seconds(Json("2024-02-30")).has_value());
  CHECK(format_timestamp(0.0) == "1970-01-01T00:00:00Z");
  CHECK(format_timestamp(1.9996) == "1970-01-01T00:00:02Z");
}

TEST_CASE("derived constraints", "[integrity]") {
  const auto c = derive_constraints(Json{{"room", "{{first_room_id}}"}});
  REQUIRE(c.size() == 1);
  CHECK(c[0].to_string() == "EntityExists(rooms, 1)");
  CHECK(derive_constraints(Json{{"a", 1}, {"b", "text"}}).empty());
  CHECK(derive_constraints(Json{{"a", "{{first_room_id}}"}, {"b", "{{first_room_name}}"},
                                {"c", "{{current_user_email}}"}})
            .size() == 1);
  const auto two = derive_constraints(Json{{"x", "{{end_order_time}}"}, {"y", "{{first_address_city}}"}});
  REQUIRE(two.size() == 2);
  CHECK(two[0].table == "addresses");
  CHECK(two[1].table == "orders");
}

TEST_CASE("constraint evaluation", "[integrity]") {
  const auto store = store_of(kStore);
  CHECK(eval_constraint(Constraint::entity_exists("accounts", 1), store));
  CHECK_FALSE(eval_constraint(Constraint::entity_exists("rooms", 1), store));
  CHECK(eval_constraint(Constraint::data_volume("accounts", 2), store));
  CHECK_FALSE(eval_constraint(Constraint::data_volume("accounts", 3), store));
  CHECK_FALSE(eval_constraint(Constraint::max_count("addresses", 2), store));
  CHECK(eval_constraint(Constraint::max_count("addresses", 3), store));

  Literal amount;
  amount.kind = Literal::Kind::param;
  amount.name = "amount";
  const auto bal = Constraint::balance("wallets", "balance", CompareOp::ge, amount);
  CHECK_FALSE(eval_constraint(bal, store, Json{{"amount", 500}}));
  CHECK(eval_constraint(bal, store, Json{{"amount", 300}}));
  CHECK_THROWS_AS(eval_constraint(bal, store, Json::object()), ResolutionError);

  std::vector<std::string> warnings;
  CHECK_FALSE(eval_constraint(Constraint::entity_exists("absent", 1), store, {}, &warnings));
  CHECK(warnings.size() == 1);

  const auto filtered = constraint_from_json(Json::parse(R"({"kind": "EntityExists", "table": "accounts",
                                                             "where": "kind='savings'"})"));
  CHECK(eval_constraint(filtered, store));
  CHECK(filtered.to_string() == "EntityExists(accounts where kind='savings', 1)");
  auto sum = constraint_from_json(Json::parse(
      R"({"kind": "Balance", "table": "accounts", "field": "id", "op": ">=", "threshold": 3, "aggregate": "sum"})"));
  CHECK(eval_constraint(sum, store));
  CHECK_THROWS_AS(constraint_from_json(Json::parse(R"({"kind": "Nope", "table": "x"})")), ParseError);
}

TEST_CASE("predicate grammar", "[integrity]") {
  const auto p = parse_predicate("count(transfers where amount=500) >= 1");
  CHECK(p.kind == Predicate::Kind::count);
  CHECK(p.table == "transfers");
  REQUIRE(p.where.size() == 1);
  CHECK(p.to_string() == "count(transfers where amount=500) >= 1");
  const auto f = parse_predicate("field(addresses.city where city='Paris' and zip>=2) = 'Paris'");
  CHECK(f.kind == Predicate::Kind::field);
  CHECK(f.where.size() == 2);
  try {
    parse_predicate("count(transfers where amount=) >= 1");
    FAIL("no exception");
  } catch (const ParseError& e) {
    CHECK(e.line() == 1);
    CHECK(e.column() > 0);
  }
  CHECK_THROWS_AS(parse_predicate("sum(transfers) >= 1"), ParseError);
  CHECK_THROWS_AS(parse_predicate("count(transfers) >= 1 trailing"), ParseError);
}

TEST_CASE("predicate evaluation and triviality", "[integrity]") {
  const auto solved = store_of(R"({"profile_id": "a", "tables": {"transfers": [{"amount": 500}]}})");
  const auto fresh = store_of(R"({"profile_id": "b", "tables": {"transfers": []}})");
  const auto other = store_of(R"({"profile_id": "c", "tables": {"transfers": [{"amount": 20}]}})");
  const auto pred = parse_predicate("count(transfers where amount=500) >= 1");
  CHECK(eval_predicate(pred, solved));
  CHECK_FALSE(eval_predicate(pred, fresh));

  const std::map<std::string, ProfileStore> stores{{"a", solved}, {"b", fresh}, {"c", other}};
  const auto r = triviality_filter({{"t", "a"}, {"t", "b"}, {"t", "c"}}, pred, stores);
  CHECK(r.survivors.size() == 2);
  REQUIRE(r.excluded.size() == 1);
  CHECK(r.excluded[0].profile_id == "a");
  CHECK(r.log.size() == 1);
}

TEST_CASE("profile loading", "[integrity]") {
  CHECK_THROWS_AS(profile_from_json(Json::parse(R"({"profile_id": "x", "tables": {"t": [{"a": 1}, {"b": 2}]}})")),
                  IntegrityError);
  CHECK_THROWS_AS(profile_from_json(Json::array()), ParseError);
  const auto shop = load_profiles(testing::fixture("integrity/shop/profiles"));
  REQUIRE(shop.size() == 3);
  CHECK(shop[0].profile_id == "full");
  CHECK(shop[2].table("rooms") == nullptr);
}

TEST_CASE("feasibility with no constraints is all true", "[integrity]") {
  TaskInstance inst;
  inst.id = "free";
  const auto m = feasibility_matrix({inst}, {store_of(kStore)}, 1);
  CHECK(m.cells == std::vector<std::vector<bool>>{{true}});
}

TEST_CASE("fixture matrices match brute force", "[integrity]") {
  for (const char* name : {"wallet", "shop", "grid"}) {
    const auto s = load_suite(name);
    const auto m = feasibility_matrix(s.instances, s.profiles, 2);
    const auto& raw = s.raw_instances["instances"];
    REQUIRE(m.cells.size() == raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i)
      for (std::size_t p = 0; p < s.profiles.size(); ++p) {
        INFO(name << " " << m.instances[i] << " x " << m.profiles[p]);
        CHECK(m.at(i, p) == brute::feasible(raw[i], s.raw_profiles[p]));
      }

    const auto report = integrity_check(s.instances, s.profiles, 1);
    std::set<std::pair<std::string, std::string>> got;
    for (const auto& c : report.survivors) got.emplace(c.instance_id, c.profile_id);
    CHECK(got == brute_survivors(s));
    CHECK(report.survivors.size() + report.exclusions.size() == s.instances.size() * s.profiles.size());
  }
}

TEST_CASE("fixture spot checks", "[integrity]") {
  const auto wallet = integrity_check(load_suite("wallet").instances, load_suite("wallet").profiles, 1);
  // poor holds 300, rich holds 1000.
  CHECK(wallet.matrix.compatible_profiles(0) == std::vector<std::string>{"rich"});
  CHECK(wallet.matrix.compatible_profiles(1) == std::vector<std::string>{"poor", "rich"});

  const auto shop = load_suite("shop");
  const auto m = feasibility_matrix(shop.instances, shop.profiles, 1);
  CHECK_FALSE(m.at(0, 2));  // sparse has no rooms table
  CHECK_FALSE(m.warnings.empty());
}

TEST_CASE("more constraints never enlarge the feasible set", "[integrity]") {
  const auto s = load_suite("grid");
  const auto base = feasibility_matrix(s.instances, s.profiles, 1);
  const std::vector<Constraint> extra{Constraint::entity_exists("accounts", 2), Constraint::max_count("items", 1),
                                      Constraint::data_volume("items", 1)};
  for (const auto& c : extra) {
    auto more = s.instances;
    for (auto& inst : more) inst.constraints.push_back(c);
    const auto m = feasibility_matrix(more, s.profiles, 1);
    for (std::size_t i = 0; i < more.size(); ++i)
      for (std::size_t p = 0; p < s.profiles.size(); ++p)
        if (m.at(i, p)) CHECK(base.at(i, p));
  }
}

TEST_CASE("integrity check is idempotent on its survivors", "[integrity]") {
  const auto s = load_suite("grid");
  const auto first = integrity_check(s.instances, s.profiles, 1);
  std::set<std::pair<std::string, std::string>> a;
  for (const auto& c : first.survivors) a.emplace(c.instance_id, c.profile_id);
  for (std::size_t p = 0; p < s.profiles.size(); ++p) {
    std::vector<TaskInstance> keep;
    for (const auto& inst : s.instances)
      if (a.contains({inst.id, s.profiles[p].profile_id})) keep.push_back(inst);
    if (keep.empty()) continue;
    const auto again = integrity_check(keep, {s.profiles[p]}, 1);
    CHECK(again.survivors.size() == keep.size());
  }
  CHECK(integrity_check(s.instances, s.profiles, 3).exclusions == first.exclusions);
}

TEST_CASE("instance loading errors", "[integrity]") {
  CHECK_THROWS_AS(load_instances(Json::parse(R"([{"id": "a"}, {"id": "a"}])")), IntegrityError);
  CHECK_THROWS_AS(load_instances(Json::parse(R"([{"params": {}}])")), ParseError);
  CHECK_THROWS_AS(load_instances(Json::parse(R"([{"id": "a", "predicate": "count(x) >="}])")), ParseError);
}
