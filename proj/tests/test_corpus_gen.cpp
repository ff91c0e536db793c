#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "nl2sql/corpus_gen.hpp"
#include "nl2sql/errors.hpp"
#include "nl2sql/sql_exec.hpp"
#include "nl2sql/text.hpp"

using namespace nl2sql;
namespace fs = std::filesystem;

namespace {

GenConfig small_config(std::uint64_t seed = 5) {
  GenConfig cfg;
  cfg.seed = seed;
  cfg.n_tables = 40;
  cfg.n_questions_per_table = 10;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST_CASE("sampled tables satisfy their invariants") {
  Rng rng(3);
  GenConfig cfg;
  for (int i = 0; i < 50; ++i) {
    const Table t = sample_table(rng, cfg, "t" + std::to_string(i));
    CHECK_NOTHROW(validate_table(t));
    CHECK(t.column_count() >= 4);
    CHECK(t.row_count() >= 20);
    bool has_text = false, has_real = false;
    for (const auto& c : t.columns) (c.dtype == DType::Text ? has_text : has_real) = true;
    CHECK(has_text);
    CHECK(has_real);
  }
}

TEST_CASE("sampled queries are valid and match their witness") {
  Rng rng(4);
  GenConfig cfg;
  for (int i = 0; i < 200; ++i) {
    const Table t = sample_table(rng, cfg);
    const SqlQuery q = sample_query(t, rng, cfg);
    REQUIRE(validate(q, t).empty());
    CHECK_FALSE(q.conditions.empty());
    CHECK_NOTHROW(execute(q, t));
    for (const auto& c : q.conditions) {
      if (t.columns[c.column].dtype == DType::Text) CHECK((c.op == CondOp::Eq || c.op == CondOp::Neq));
    }
  }
}

TEST_CASE("realized questions mention every plain condition value") {
  Rng rng(6);
  GenConfig cfg;
  for (int i = 0; i < 100; ++i) {
    const Table t = sample_table(rng, cfg);
    const SqlQuery q = sample_query(t, rng, cfg);
    const Realization r = realize_question(q, t, rng, cfg);
    REQUIRE(r.value_spans.size() == q.conditions.size());
    CHECK(r.tokens == tokenize(r.question));
    CHECK(r.question.back() == '?');
    for (std::size_t k = 0; k < q.conditions.size(); ++k) {
      const auto [b, e] = r.value_spans[k];
      CHECK(join_tokens(r.tokens, b, e) == q.conditions[k].value);
    }
  }
}

TEST_CASE("perturbation removes the canonical value and records the surface form") {
  Rng rng(8);
  GenConfig cfg;
  int applied = 0;
  for (int i = 0; i < 300; ++i) {
    const Table t = sample_table(rng, cfg);
    Draft d;
    SqlQuery q = sample_query(t, rng, cfg);
    d.realization = realize_question(q, t, rng, cfg);
    d.example.table_id = t.id;
    d.example.question = d.realization.question;
    d.example.tokens = d.realization.tokens;
    d.example.gold = q;
    for (auto cat : {LinkCategory::Abbreviation, LinkCategory::Alias, LinkCategory::NumberFormat,
                     LinkCategory::Adaptation, LinkCategory::Other}) {
      Lexicon lex;
      try {
        const Draft out = perturb(d, t, cat, rng, lex);
        ++applied;
        CHECK(out.example.category == cat);
        REQUIRE(lex.entries().size() == 1);
        const auto& entry = lex.entries().front();
        CHECK(out.example.question.find(entry.canonical) == std::string::npos);
        CHECK(out.example.question.find(entry.surface) != std::string::npos);
        CHECK(out.example.gold == d.example.gold);
        const auto spans = locate_value_spans(out.example, lex);
        bool located = false;
        for (const auto& s : spans) located = located || s.first != std::string::npos;
        CHECK(located);
      } catch (const InapplicableError&) {
      }
    }
  }
  CHECK(applied > 300);
  Lexicon lex;
  Draft unanswerable;
  Rng r2(1);
  const Table t = sample_table(r2, cfg);
  unanswerable.example = make_unanswerable(t, r2, cfg);
  CHECK_THROWS_AS(perturb(unanswerable, t, LinkCategory::Alias, r2, lex), InapplicableError);
}

TEST_CASE("unanswerable questions name an attribute the table lacks") {
  Rng rng(9);
  GenConfig cfg;
  for (int i = 0; i < 100; ++i) {
    const Table t = sample_table(rng, cfg);
    const Example ex = make_unanswerable(t, rng, cfg);
    CHECK_FALSE(ex.answerable());
    CHECK(ex.table_id == t.id);
    CHECK(ex.question.back() == '?');
  }
}

TEST_CASE("corpus statistics and split disjointness") {
  GenConfig cfg = small_config();
  cfg.n_tables = 300;
  const Corpus c = build_corpus(cfg);
  CHECK(c.examples.size() == 3000);
  std::map<Split, std::set<std::string>> ids;
  std::size_t perturbed = 0, unanswerable = 0;
  for (const auto& ex : c.examples) {
    ids[ex.split].insert(ex.table_id);
    perturbed += ex.category != LinkCategory::None ? 1 : 0;
    unanswerable += ex.answerable() ? 0 : 1;
    if (ex.answerable()) CHECK(validate(ex.sql(), c.tables.at(ex.table_id)).empty());
  }
  for (auto a : {Split::Train, Split::Valid, Split::Test}) {
    for (auto b : {Split::Train, Split::Valid, Split::Test}) {
      if (a == b) continue;
      for (const auto& id : ids[a]) CHECK(ids[b].count(id) == 0);
    }
  }
  CHECK(static_cast<double>(perturbed) / 3000.0 == doctest::Approx(0.30).epsilon(0.04 / 0.30));
  CHECK(static_cast<double>(unanswerable) / 3000.0 ==
        doctest::Approx(cfg.unanswerable_rate).epsilon(0.03 / cfg.unanswerable_rate));
  CHECK(c.stats.at("examples") == 3000);
}

TEST_CASE("entity link rate zero yields no perturbations") {
  GenConfig cfg = small_config();
  cfg.entity_link_rate = 0.0;
  for (const auto& ex : build_corpus(cfg).examples) CHECK(ex.category == LinkCategory::None);
}

TEST_CASE("invalid generator configs are rejected") {
  GenConfig cfg = small_config();
  cfg.entity_link_rate = 1.5;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = small_config();
  cfg.unanswerable_rate = 0.8;
  cfg.entity_link_rate = 0.3;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = small_config();
  cfg.split_fractions = {0.5, 0.2, 0.2};
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  cfg = small_config();
  cfg.n_tables = 0;
  CHECK_THROWS_AS(validate_config(cfg), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"entity_link_rate":"high"})")), ConfigError);
  const GenConfig round = config_from_json(config_to_json(small_config(77)));
  CHECK(config_to_json(round) == config_to_json(small_config(77)));
}

TEST_CASE("same seed gives a byte-identical corpus; different seeds differ") {
  const auto base = fs::temp_directory_path() / "nl2sql_corpus_test";
  fs::remove_all(base);
  save_corpus(build_corpus(small_config(21)), base / "a");
  save_corpus(build_corpus(small_config(21)), base / "b");
  save_corpus(build_corpus(small_config(22)), base / "c");
  for (const char* f : {"tables.jsonl", "examples.jsonl", "lexicon.jsonl", "stats.json"}) {
    CHECK(slurp(base / "a" / f) == slurp(base / "b" / f));
  }
  CHECK(slurp(base / "a" / "examples.jsonl") != slurp(base / "c" / "examples.jsonl"));

  const Corpus back = load_corpus(base / "a");
  save_corpus(back, base / "d");
  CHECK(slurp(base / "a" / "examples.jsonl") == slurp(base / "d" / "examples.jsonl"));
  CHECK(slurp(base / "a" / "lexicon.jsonl") == slurp(base / "d" / "lexicon.jsonl"));
  fs::remove_all(base);
}

TEST_CASE("example json round trip") {
  Example ex;
  ex.table_id = "t3";
  ex.question = "how many city where price over 5 ?";
  ex.tokens = tokenize(ex.question);
  ex.gold = SqlQuery{{{0, Agg::Count}}, Connector::None, {{1, CondOp::Gt, "5"}}};
  ex.category = LinkCategory::NumberFormat;
  ex.split = Split::Valid;
  const Example back = example_from_json(example_to_json(ex));
  CHECK(back.gold == ex.gold);
  CHECK(back.tokens == ex.tokens);
  CHECK(back.category == ex.category);
  CHECK(back.split == ex.split);
  CHECK(example_to_json(Example{}).at("sql").is_null());
  CHECK_THROWS_AS(split_from_name("dev"), ParseError);
}
