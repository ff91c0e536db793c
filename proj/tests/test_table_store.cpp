#include <doctest.h>

#include <sstream>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"
#include "nl2sql/table_store.hpp"
#include "nl2sql/text.hpp"

using namespace nl2sql;

namespace {

Table small_table() {
  Table t{"t1", "prices", {{"city", DType::Text}, {"price", DType::Real}}, {}};
  t.rows = {{std::string("Oslo"), 12.5}, {std::string("Lima"), 3.0}};
  return t;
}

}  // namespace

TEST_CASE("table json round trip preserves cells") {
  const Table t = small_table();
  const Table back = table_from_json(table_to_json(t));
  CHECK(back == t);
  CHECK(table_to_json(t).dump() ==
        R"({"header":["city","price"],"id":"t1","name":"prices","rows":[["Oslo",12.5],["Lima",3]],"types":["text","real"]})");
}

TEST_CASE("serialize then parse is the identity on a table set") {
  TableSet set;
  set.add(small_table());
  Table u = small_table();
  u.id = "t0";
  set.add(u);
  std::istringstream in(serialize_tables(set));
  const TableSet back = parse_tables(in);
  CHECK(back == set);
  CHECK(serialize_tables(back) == serialize_tables(set));
  CHECK(serialize_tables(set).rfind("{\"header\"", 0) == 0);
}

TEST_CASE("table validation rejects broken invariants") {
  Table t = small_table();
  t.rows[1].pop_back();
  CHECK_THROWS_AS(validate_table(t), ValidationError);

  t = small_table();
  t.rows[0][1] = std::string("twelve");
  CHECK_THROWS_AS(validate_table(t), ValidationError);

  t = small_table();
  t.columns[1].name = "";
  CHECK_THROWS_AS(validate_table(t), ValidationError);

  CHECK_NOTHROW(validate_table(small_table()));
}

TEST_CASE("table set lookups and duplicates") {
  TableSet set;
  set.add(small_table());
  CHECK_THROWS_AS(set.add(small_table()), ValidationError);
  CHECK_THROWS_AS(set.at("missing"), BoundsError);
  CHECK(set.at("t1").row_count() == 2);
}

TEST_CASE("malformed table lines raise parse errors") {
  std::istringstream bad_json("{\"id\": \"t\", \"header\": [\n");
  CHECK_THROWS_AS(parse_tables(bad_json), ParseError);
  std::istringstream missing(R"({"id":"t","header":["a"],"rows":[]})");
  CHECK_THROWS_AS(parse_tables(missing), ParseError);
  std::istringstream bad_type(R"({"id":"t","name":"n","header":["a"],"types":["date"],"rows":[]})");
  CHECK_THROWS(parse_tables(bad_type));
}

TEST_CASE("column values and cell rendering") {
  const Table t = small_table();
  const auto col = column_values(t, 1);
  REQUIRE(col.size() == 2);
  CHECK(std::get<double>(col[0]) == 12.5);
  CHECK(cell_to_string(col[1]) == "3");
  CHECK_THROWS_AS(column_values(t, 2), BoundsError);
}

TEST_CASE("numeric helpers") {
  CHECK(parse_number("12") == 12.0);
  CHECK(parse_number("-3.5") == -3.5);
  CHECK(parse_number("1e3") == 1000.0);
  CHECK_FALSE(parse_number(" 12").has_value());
  CHECK_FALSE(parse_number("12k").has_value());
  CHECK_FALSE(parse_number("").has_value());
  CHECK_FALSE(parse_number("nan").has_value());
  CHECK(render_number(5.0) == "5");
  CHECK(render_number(0.1) == "0.1");
  CHECK(render_number(-2.25) == "-2.25");
  CHECK(nfc("Cafe\xCC\x81") == "Caf\xC3\xA9");
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
}

TEST_CASE("tokenizer and character vocabulary") {
  const auto toks = tokenize("  what is  the price ?");
  REQUIRE(toks.size() == 5);
  CHECK(toks[3] == "price");
  CHECK(join_tokens(toks, 1, 3) == "is the");
  CHECK(find_token_run(toks, {"the", "price"}) == 2);
  CHECK(find_token_run(toks, {"price", "the"}) == std::string::npos);

  const CharVocab v = CharVocab::build({"aab", "b\xC3\xA9"}, 3);
  CHECK(v.size() == 3);
  CHECK(v.id(U'a') != CharVocab::kUnk);
  CHECK(v.id(U'b') != CharVocab::kUnk);
  CHECK(v.id(U'é') == CharVocab::kUnk);
  const CharVocab back = CharVocab::from_json(v.to_json());
  CHECK(back.ids("abz") == v.ids("abz"));
}
