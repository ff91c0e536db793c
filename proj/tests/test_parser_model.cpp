#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "nl2sql/corpus_gen.hpp"
#include "nl2sql/errors.hpp"
#include "nl2sql/parser_model.hpp"
#include "nl2sql/text.hpp"

using namespace nl2sql;
using ag::Tensor;

namespace {

Table shop() {
  Table t{"s", "shop", {{"city", DType::Text}, {"unit price", DType::Real}, {"stock", DType::Real}}, {}};
  t.rows = {{std::string("Oslo"), 10.0, 1.0},
            {std::string("Lima"), 20.0, 2.0},
            {std::string("Kadu Ren"), 30.0, 3.0}};
  return t;
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.hidden = 8;
  cfg.seed = 3;
  return cfg;
}

ParserModel tiny_model() {
  return ParserModel(tiny_config(),
                     CharVocab::build({"what is the unit price where city is Kadu Ren ? Oslo Lima stock"}, 64));
}

double row_sum(const Tensor& logits, std::size_t r) {
  double total = 0.0;
  const Tensor probs = ag::softmax(ag::slice_rows(logits, r, r + 1));
  for (double p : probs.data()) total += p;
  return total;
}

const std::vector<std::string> kTokens = tokenize("what is the unit price where city is Kadu Ren ?");

GenConfig tiny_corpus_config() {
  GenConfig g;
  g.seed = 17;
  g.n_tables = 120;
  g.n_questions_per_table = 10;
  g.split_fractions = {0.84, 0.08, 0.08};
  return g;
}

}  // namespace

TEST_CASE("encoder output shapes") {
  const ParserModel m = tiny_model();
  const Encoding enc = m.encode(kTokens, shop());
  CHECK(enc.x.shape() == std::vector<std::size_t>{kTokens.size(), 8});
  CHECK(enc.h_q.shape() == std::vector<std::size_t>{kTokens.size(), 8});
  CHECK(enc.h_att_q.shape() == std::vector<std::size_t>{1, 8});
  CHECK(enc.q_vec.shape() == std::vector<std::size_t>{1, 16});
  CHECK(enc.h_col.shape() == std::vector<std::size_t>{3, 8});
  CHECK_THROWS_AS(m.encode({}, shop()), ContractViolation);
}

TEST_CASE("one-column tables and one-character questions") {
  const ParserModel m = tiny_model();
  Table t{"one", "one", {{"x", DType::Real}}, {{1.0}}};
  const Encoding enc = m.encode({"?"}, t);
  CHECK(enc.h_col.shape() == std::vector<std::size_t>{1, 8});
  const HeadOutputs h = m.predict_heads(enc);
  CHECK(h.s_col.shape() == std::vector<std::size_t>{1, 1});
  const SpanOutput s = m.predict_value_span(enc, 0, CondOp::Eq);
  CHECK(s.start == 0);
  CHECK(s.end == 0);
  CHECK_NOTHROW(m.decode("?", t, Resolver::End2End));
}

TEST_CASE("permuting columns permutes column encodings") {
  const ParserModel m = tiny_model();
  Table t = shop();
  Table u = t;
  std::swap(u.columns[0], u.columns[2]);
  for (auto& row : u.rows) std::swap(row[0], row[2]);
  const Tensor a = m.encode(kTokens, t).h_col;
  const Tensor b = m.encode(kTokens, u).h_col;
  for (std::size_t c = 0; c < 8; ++c) {
    CHECK(a.at(0, c) == doctest::Approx(b.at(2, c)).epsilon(1e-12));
    CHECK(a.at(1, c) == doctest::Approx(b.at(1, c)).epsilon(1e-12));
    CHECK(a.at(2, c) == doctest::Approx(b.at(0, c)).epsilon(1e-12));
  }
}

TEST_CASE("zero attention weights give the uniform mean of H_q") {
  ParserModel m = tiny_model();
  for (double& v : m.params().get("w_att").mutable_data()) v = 0.0;
  const Encoding enc = m.encode(kTokens, shop());
  const auto mean = ag::mean_rows(enc.h_q).data();
  for (std::size_t c = 0; c < 8; ++c) CHECK(enc.h_att_q.data()[c] == doctest::Approx(mean[c]).epsilon(1e-12));
}

TEST_CASE("categorical heads are distributions") {
  const ParserModel m = tiny_model();
  const Encoding enc = m.encode(kTokens, shop());
  const HeadOutputs h = m.predict_heads(enc);
  CHECK(h.s_num.cols() == 3);
  CHECK(h.w_num.cols() == 5);
  CHECK(h.w_rel.cols() == 3);
  CHECK(h.reject.cols() == 2);
  CHECK(h.s_agg.shape() == std::vector<std::size_t>{3, 6});
  CHECK(h.w_op.shape() == std::vector<std::size_t>{3, 4});
  for (const Tensor* t : {&h.s_num, &h.w_num, &h.w_rel, &h.reject, &h.s_col, &h.w_col}) {
    CHECK(std::fabs(row_sum(*t, 0) - 1.0) <= 1e-9);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(std::fabs(row_sum(h.s_agg, c) - 1.0) <= 1e-9);
    CHECK(std::fabs(row_sum(h.w_op, c) - 1.0) <= 1e-9);
  }
}

TEST_CASE("span head distributions") {
  ParserModel m = tiny_model();
  const Encoding enc = m.encode(kTokens, shop());
  const SpanOutput s = m.predict_value_span(enc, 0, CondOp::Eq);
  CHECK(s.h_n.shape() == std::vector<std::size_t>{kTokens.size(), 32});
  double a = 0.0, b = 0.0;
  for (double p : s.p_start.data()) a += p;
  for (double p : s.p_end.data()) b += p;
  CHECK(std::fabs(a - 1.0) <= 1e-9);
  CHECK(std::fabs(b - 1.0) <= 1e-9);
  CHECK(s.start <= s.end);
  CHECK_THROWS_AS(m.predict_value_span(enc, 3, CondOp::Eq), BoundsError);

  for (const char* n : {"U_start", "W_start", "U_end", "W_end"}) {
    for (double& v : m.params().get(n).mutable_data()) v = 0.0;
  }
  const SpanOutput z = m.predict_value_span(m.encode(kTokens, shop()), 1, CondOp::Gt);
  for (double p : z.p_start.data()) CHECK(p == doctest::Approx(1.0 / kTokens.size()));
  for (double p : z.p_end.data()) CHECK(p == doctest::Approx(1.0 / kTokens.size()));
}

TEST_CASE("decode respects the answerability head and is deterministic") {
  ParserModel m = tiny_model();
  const Table t = shop();
  const std::string q = "what is the unit price where city is Kadu Ren ?";
  const GoldLabel a = m.decode(q, t, Resolver::SpanOnly);
  CHECK(a == m.decode(q, t, Resolver::SpanOnly));
  Example ex;
  ex.question = q;
  ex.tokens = kTokens;
  ex.table_id = "s";
  ex.gold = SqlQuery{{{1, Agg::None}}, Connector::None, {{0, CondOp::Eq, "Kadu Ren"}}};
  const Prediction p = m.predict(ex, t, Resolver::SpanOnly, 6);
  REQUIRE_FALSE(p.candidates.empty());
  CHECK(p.candidates.size() <= 6);
  CHECK(p.gold_context_values.size() == 1);
  CHECK(q.find(p.gold_context_values[0]) != std::string::npos);
  if (!is_rejection(p.label)) {
    const SqlQuery& s = std::get<SqlQuery>(p.label);
    CHECK(s == p.candidates.front().query);
    for (const auto& c : s.conditions) CHECK(q.find(c.value) != std::string::npos);
  }
  for (std::size_t i = 1; i < p.candidates.size(); ++i) {
    CHECK(canonicalize(p.candidates[i].query, t) != canonicalize(p.candidates[0].query, t));
  }

  // A large positive bias on the rejected class forces a rejection.
  m.params().get("reject_b2").mutable_data() = {-50.0, 50.0};
  CHECK(is_rejection(m.decode(q, t, Resolver::End2End)));
  const Prediction r = m.predict(ex, t, Resolver::End2End, 4);
  CHECK(is_rejection(r.label));
  CHECK(r.reject_prob > 0.5);
}

TEST_CASE("end-to-end values are cells of the predicted column") {
  const ParserModel m = tiny_model();
  const Table t = shop();
  Example ex;
  ex.question = "what is the unit price where city is Kadu Ren ?";
  ex.tokens = kTokens;
  ex.gold = SqlQuery{{{1, Agg::None}}, Connector::None, {{0, CondOp::Eq, "Kadu Ren"}}};
  const Prediction p = m.predict(ex, t, Resolver::End2End, 1);
  const std::string v = p.gold_context_values.at(0);
  CHECK((v == "Oslo" || v == "Lima" || v == "Kadu Ren"));
  const Prediction o = m.predict(ex, t, Resolver::Offline, 1);
  const std::string w = o.gold_context_values.at(0);
  CHECK((w == "Oslo" || w == "Lima" || w == "Kadu Ren"));
}

TEST_CASE("loss is finite for every example of a small corpus and reaches the encoder") {
  const Corpus c = build_corpus(tiny_corpus_config());
  ParserModel m(tiny_config(), build_vocab(c, 128));
  for (std::size_t i = 0; i < 200; ++i) {
    const Example& ex = c.examples[i];
    const double l = m.loss(ex, c.tables.at(ex.table_id), c.lexicon).item();
    CHECK(std::isfinite(l));
    CHECK(l > 0.0);
  }
  const Example* answerable = nullptr;
  for (const auto& ex : c.examples) {
    if (ex.answerable()) {
      answerable = &ex;
      break;
    }
  }
  REQUIRE(answerable != nullptr);
  m.params().zero_grad();
  ag::backward(m.loss(*answerable, c.tables.at(answerable->table_id), c.lexicon));
  double norm = 0.0;
  for (double g : m.params().get("enc_fwd_wx").grad()) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("training lowers the loss and is deterministic") {
  const Corpus c = build_corpus(tiny_corpus_config());
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.max_train_examples = 1000;
  cfg.dev_eval_examples = 20;
  const TrainResult a = train(c, cfg);
  REQUIRE(a.history.size() == 3);
  CHECK(a.history[1].mean_loss < a.history[0].mean_loss);
  CHECK(a.history[2].mean_loss < a.history[1].mean_loss);
  CHECK(a.history[2].has_dev);

  cfg.epochs = 1;
  const TrainResult b = train(c, cfg);
  const TrainResult d = train(c, cfg);
  for (const auto& [name, t] : b.model.params().entries()) {
    CHECK(t.data() == d.model.params().get(name).data());
  }

  const auto path = std::filesystem::temp_directory_path() / "nl2sql_parser_test.ckpt";
  b.model.save(path);
  const ParserModel back = ParserModel::load(path);
  for (std::size_t i = 0; i < 20; ++i) {
    const Example& ex = c.examples[i];
    const Table& t = c.tables.at(ex.table_id);
    CHECK(back.predict(ex, t, Resolver::End2End).label == b.model.predict(ex, t, Resolver::End2End).label);
  }
  std::filesystem::remove(path);
}

TEST_CASE("training configuration errors") {
  Corpus empty;
  CHECK_THROWS_AS(train(empty, tiny_config()), ConfigError);
  TrainConfig cfg = tiny_config();
  cfg.hidden = 7;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  cfg = tiny_config();
  cfg.lr = 0.0;
  CHECK_THROWS_AS(validate_train_config(cfg), ConfigError);
  CHECK_THROWS_AS(resolver_from_name("oracle"), ConfigError);
  CHECK(resolver_from_name(resolver_name(Resolver::Offline)) == Resolver::Offline);
  const TrainConfig back = train_config_from_json(train_config_to_json(tiny_config()));
  CHECK(train_config_to_json(back) == train_config_to_json(tiny_config()));
  const auto path = std::filesystem::temp_directory_path() / "nl2sql_not_a_ckpt.bin";
  std::ofstream(path) << "garbage";
  CHECK_THROWS_AS(ParserModel::load(path), ParseError);
  std::filesystem::remove(path);
}
