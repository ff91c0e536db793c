#include <doctest.h>

#include <random>

#include "naive_oracle.hpp"
#include "nl2sql/errors.hpp"
#include "nl2sql/sql_ast.hpp"
#include "nl2sql/sql_exec.hpp"

using namespace nl2sql;

namespace {

Table shop() {
  Table t{"shop", "shop", {{"city", DType::Text}, {"price", DType::Real}, {"stock", DType::Real}}, {}};
  t.rows = {{std::string("Oslo"), 10.0, 1.0},
            {std::string("Lima"), 20.0, 2.0},
            {std::string("Oslo"), 30.0, 3.0},
            {std::string("Caf\xC3\xA9"), 40.0, 4.0}};
  return t;
}

SqlQuery q_of(std::vector<SelectItem> sel, std::vector<Condition> conds = {},
              Connector conn = Connector::None) {
  return SqlQuery{std::move(sel), conn, std::move(conds)};
}

std::vector<std::string> rows_json(const ResultSet& rs) {
  std::vector<std::string> out;
  const auto j = result_to_json(rs);
  for (const auto& r : j.at("rows")) out.push_back(r.dump());
  return out;
}

}  // namespace

TEST_CASE("sql json uses the integer code contract") {
  const SqlQuery q = q_of({{1, Agg::Avg}, {0, Agg::Count}},
                          {{0, CondOp::Eq, "Oslo"}, {1, CondOp::Gt, "15"}}, Connector::Or);
  const auto j = sql_to_json(q);
  CHECK(j.dump() ==
        R"({"agg":[1,4],"cond_conn_op":2,"conds":[[0,2,"Oslo"],[1,0,"15"]],"sel":[1,0]})");
  CHECK(sql_from_json(j) == q);
  CHECK_THROWS_AS(sql_from_json(nlohmann::json::parse(R"({"sel":[0],"agg":[9]})")), ParseError);
  CHECK_THROWS_AS(sql_from_json(nlohmann::json::parse(R"({"sel":[0]})")), ParseError);
  CHECK(sql_from_json(nlohmann::json::parse(R"({"sel":[1],"agg":[0],"conds":[[1,0,15]]})"))
            .conditions[0]
            .value == "15");
}

TEST_CASE("validation reports every broken rule") {
  const Table t = shop();
  CHECK(validate(q_of({{1, Agg::Max}}), t).empty());
  CHECK_FALSE(validate(q_of({}), t).empty());
  CHECK_FALSE(validate(q_of({{7, Agg::None}}), t).empty());
  CHECK_FALSE(validate(q_of({{1, Agg::None}}, {{1, CondOp::Gt, "cheap"}}), t).empty());
  CHECK_FALSE(validate(q_of({{1, Agg::None}}, {{0, CondOp::Eq, ""}}), t).empty());
  CHECK_FALSE(validate(q_of({{1, Agg::None}}, {{0, CondOp::Eq, "a"}, {0, CondOp::Eq, "b"}}), t).empty());
  CHECK(validate(q_of({{1, Agg::None}}, {{0, CondOp::Eq, "a"}}, Connector::And), t).empty());
}

TEST_CASE("canonicalize sorts, dedupes conditions and normalizes the connector") {
  const SqlQuery q = q_of({{2, Agg::Sum}, {1, Agg::None}, {1, Agg::None}},
                          {{1, CondOp::Gt, "5"}, {0, CondOp::Eq, "x"}}, Connector::And);
  const SqlQuery c = canonicalize(q);
  CHECK(c.select == std::vector<SelectItem>{{1, Agg::None}, {1, Agg::None}, {2, Agg::Sum}});
  CHECK(c.conditions == std::vector<Condition>{{0, CondOp::Eq, "x"}, {1, CondOp::Gt, "5"}});
  CHECK(c.connector == Connector::And);

  const SqlQuery twice = q_of({{1, Agg::None}}, {{0, CondOp::Eq, "x"}, {0, CondOp::Eq, "x"}}, Connector::Or);
  CHECK(canonicalize(twice).conditions.size() == 1);
  CHECK(canonicalize(twice).connector == Connector::None);
  CHECK(canonicalize(q_of({{1, Agg::None}}, {{0, CondOp::Eq, "x"}}, Connector::And)).connector ==
        Connector::None);
  CHECK(canonicalize(canonicalize(q)) == canonicalize(q));
}

TEST_CASE("logic form equality ignores order and numeric spelling") {
  const Table t = shop();
  const SqlQuery a = q_of({{1, Agg::None}, {2, Agg::Sum}},
                          {{1, CondOp::Gt, "5.0"}, {0, CondOp::Eq, "Oslo"}}, Connector::And);
  const SqlQuery b = q_of({{2, Agg::Sum}, {1, Agg::None}},
                          {{0, CondOp::Eq, "Oslo"}, {1, CondOp::Gt, "5"}}, Connector::And);
  CHECK(logic_form_equal(a, b, t));
  CHECK(logic_form_equal(a, b));
  SqlQuery c = b;
  c.connector = Connector::Or;
  CHECK_FALSE(logic_form_equal(a, c, t));
  CHECK(logic_form_equal(Rejection{}, Rejection{}));
  CHECK_FALSE(logic_form_equal(a, Rejection{}));

  // TEXT cells that look numeric keep their spelling under the table-aware form.
  const SqlQuery d = q_of({{1, Agg::None}}, {{0, CondOp::Eq, "007"}});
  const SqlQuery e = q_of({{1, Agg::None}}, {{0, CondOp::Eq, "7"}});
  CHECK_FALSE(logic_form_equal(d, e, t));
  CHECK(canonical_value("5.50") == "5.5");
  CHECK(canonical_value("abc") == "abc");
}

TEST_CASE("to_sql_string renders a readable query") {
  const SqlQuery q = q_of({{1, Agg::Avg}}, {{0, CondOp::Eq, "Oslo"}, {2, CondOp::Lt, "3"}},
                          Connector::And);
  CHECK(to_sql_string(q, shop()) == "SELECT AVG(price) FROM shop WHERE city == \"Oslo\" AND stock < \"3\"");
}

TEST_CASE("executor hand cases") {
  const Table t = shop();
  CHECK(rows_json(execute(q_of({{1, Agg::None}}, {{0, CondOp::Eq, "Oslo"}}), t)) ==
        std::vector<std::string>{"[10]", "[30]"});
  CHECK(rows_json(execute(q_of({{1, Agg::Avg}}, {{0, CondOp::Eq, "Oslo"}}), t)) ==
        std::vector<std::string>{"[20]"});
  CHECK(rows_json(execute(q_of({{1, Agg::Sum}, {2, Agg::Max}}), t)) ==
        std::vector<std::string>{"[100,4]"});
  CHECK(rows_json(execute(q_of({{0, Agg::Count}}, {{1, CondOp::Gt, "15"}, {2, CondOp::Lt, "4"}},
                               Connector::And),
                          t)) == std::vector<std::string>{"[2]"});
  CHECK(rows_json(execute(q_of({{1, Agg::Min}}, {{0, CondOp::Eq, "Lima"}, {2, CondOp::Gt, "3"}},
                               Connector::Or),
                          t)) == std::vector<std::string>{"[20]"});
  CHECK(rows_json(execute(q_of({{0, Agg::None}}, {{0, CondOp::Neq, "Oslo"}}), t)) ==
        std::vector<std::string>{"[\"Lima\"]", "[\"Caf\xC3\xA9\"]"});
}

TEST_CASE("empty matches: COUNT is zero, other aggregates return no rows") {
  const Table t = shop();
  const Condition none{0, CondOp::Eq, "Nowhere"};
  CHECK(rows_json(execute(q_of({{0, Agg::Count}}, {none}), t)) == std::vector<std::string>{"[0]"});
  for (Agg a : {Agg::Avg, Agg::Sum, Agg::Max, Agg::Min}) {
    CHECK(execute(q_of({{1, a}}, {none}), t).empty());
  }
  CHECK(execute(q_of({{1, Agg::None}}, {none}), t).empty());
}

TEST_CASE("text comparison uses NFC and rejects ordering operators") {
  const Table t = shop();
  const auto rs = execute(q_of({{1, Agg::None}}, {{0, CondOp::Eq, "Cafe\xCC\x81"}}), t);
  CHECK(rows_json(rs) == std::vector<std::string>{"[40]"});
  CHECK_THROWS_AS(execute(q_of({{1, Agg::None}}, {{0, CondOp::Gt, "A"}}), t), TypeError);
  CHECK_THROWS_AS(execute(q_of({{0, Agg::Sum}}), t), TypeError);
  CHECK_THROWS_AS(execute(q_of({{9, Agg::None}}), t), ContractViolation);
}

TEST_CASE("numeric literals compare by value") {
  const Table t = shop();
  const auto a = execute(q_of({{0, Agg::None}}, {{1, CondOp::Eq, "20.0"}}), t);
  const auto b = execute(q_of({{0, Agg::None}}, {{1, CondOp::Eq, "2e1"}}), t);
  CHECK(result_equal(a, b));
  CHECK(rows_json(a) == std::vector<std::string>{"[\"Lima\"]"});
}

TEST_CASE("result equality ignores select order") {
  const Table t = shop();
  const auto a = execute(q_of({{0, Agg::None}, {1, Agg::Max}}, {{2, CondOp::Gt, "1"}}), t);
  const auto b = execute(q_of({{1, Agg::Max}, {0, Agg::None}}, {{2, CondOp::Gt, "1"}}), t);
  CHECK(result_equal(a, b));
  const auto c = execute(q_of({{1, Agg::Max}, {0, Agg::None}}, {{2, CondOp::Gt, "2"}}), t);
  CHECK_FALSE(result_equal(a, c));
}

TEST_CASE("result equality is an order-insensitive multiset comparison") {
  ResultSet a{{"x"}, {{1.0}, {2.0}, {2.0}}};
  ResultSet b{{"x"}, {{2.0}, {1.0 + 1e-12}, {2.0}}};
  ResultSet c{{"x"}, {{2.0}, {1.0}, {1.0}}};
  ResultSet d{{"x"}, {{1.0}, {2.0}}};
  CHECK(result_equal(a, b));
  CHECK_FALSE(result_equal(a, c));
  CHECK_FALSE(result_equal(a, d));
  CHECK(result_equal(ResultSet{}, ResultSet{}));
  ResultSet e{{"x"}, {{std::string("1")}}};
  ResultSet f{{"x"}, {{1.0}}};
  CHECK_FALSE(result_equal(e, f));
}

TEST_CASE("executor agrees with the naive oracle on random queries") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 600; ++i) {
    const Table t = oracle::random_table(rng, "r" + std::to_string(i));
    const SqlQuery q = oracle::random_query(rng, t);
    REQUIRE(validate(q, t).empty());
    const ResultSet rs = execute(q, t);
    INFO(to_sql_string(q, t));
    CHECK(oracle::same_rows(rs.rows, oracle::run(q, t)));
  }
}
