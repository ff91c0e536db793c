#pragma once

// Sketch decoder: a character-embedding + bidirectional LSTM encoder feeding
// one head per SQL slot (select number/columns/aggregations, where
// number/columns/operators/value span/relationship) and a rejection head.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nl2sql/corpus_gen.hpp"
#include "nl2sql/entity_link.hpp"
#include "nl2sql/eval_harness.hpp"
#include "nl2sql/optim.hpp"
#include "nl2sql/tensor.hpp"
#include "nl2sql/text.hpp"

namespace nl2sql {

enum class Resolver { SpanOnly, Offline, End2End };

std::string_view resolver_name(Resolver r);  // "span", "offline", "end2end"
Resolver resolver_from_name(std::string_view name);

struct TrainConfig {
  std::size_t hidden = 32;  // d; even
  std::size_t char_vocab = 256;
  int epochs = 8;
  int batch_size = 16;
  double lr = 0.004;
  // Learning rate of epoch e is lr * lr_decay^(e - 1).
  double lr_decay = 1.0;
  std::uint64_t seed = 1;
  Resolver resolver = Resolver::End2End;
  std::size_t max_sel = 3;
  std::size_t max_cond = 4;
  // 0 keeps every training example.
  std::size_t max_train_examples = 0;
  // Dev examples decoded after each epoch for the history; 0 disables.
  std::size_t dev_eval_examples = 500;
  double clip_norm = 5.0;
};

// Throws ConfigError for non-positive or odd sizes and non-positive rates.
void validate_train_config(const TrainConfig& cfg);
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct Encoding {
  std::vector<std::string> tokens;
  ag::Tensor x;        // L x d, mean character embedding per token
  ag::Tensor h_q;      // L x d
  ag::Tensor h_att_q;  // 1 x d
  ag::Tensor q_vec;    // 1 x 2d: h_att_q, last forward and first backward state
  ag::Tensor h_col;    // C x d
  ag::Tensor match;    // C x L, 1 where the question token occurs in the column name
};

struct HeadOutputs {
  ag::Tensor s_num;   // 1 x max_sel, class k means k + 1 columns
  ag::Tensor s_col;   // 1 x C
  ag::Tensor s_agg;   // C x 6
  ag::Tensor w_num;   // 1 x (max_cond + 1)
  ag::Tensor w_col;   // 1 x C
  ag::Tensor w_op;    // C x 4
  ag::Tensor w_rel;   // 1 x 3
  ag::Tensor reject;  // 1 x 2, class 1 = rejected
};

struct SpanOutput {
  ag::Tensor h_n;      // L x 4d
  ag::Tensor s_start;  // 1 x L logits
  ag::Tensor s_end;    // 1 x L logits
  ag::Tensor p_start;  // 1 x L
  ag::Tensor p_end;    // 1 x L
  std::size_t start = 0;
  std::size_t end = 0;  // inclusive
};

class ParserModel {
 public:
  ParserModel(const TrainConfig& cfg, CharVocab vocab);

  const TrainConfig& config() const { return cfg_; }
  const CharVocab& vocab() const { return vocab_; }
  ag::ParameterStore& params() { return params_; }
  const ag::ParameterStore& params() const { return params_; }
  const ag::Tensor& char_embeddings() const { return params_.get("char_emb"); }

  // Throws ContractViolation for an empty question or a table without columns.
  Encoding encode(const std::vector<std::string>& tokens, const Table& t) const;
  HeadOutputs predict_heads(const Encoding& enc) const;
  SpanOutput predict_value_span(const Encoding& enc, std::size_t col, CondOp op) const;
  // Cell attention over the column, queried by the span distributions.
  CellAttention attend_cells(const Encoding& enc, const SpanOutput& span, const Table& t,
                             std::size_t col) const;
  CellEncoder cell_encoder() const;

  std::string resolve_value(const Encoding& enc, const SpanOutput& span, const Table& t,
                            std::size_t col, Resolver resolver) const;

  GoldLabel decode(std::string_view question, const Table& t, Resolver resolver) const;
  // Decode plus gold-context values (when the example is answerable) and up
  // to n_candidates ranked alternatives for execution-guided decoding.
  Prediction predict(const Example& ex, const Table& t, Resolver resolver,
                     std::size_t n_candidates = 10) const;

  // Summed cross-entropy of every head under teacher forcing. The cell head
  // contributes only when the configured resolver is END2END.
  ag::Tensor loss(const Example& ex, const Table& t, const Lexicon& lexicon) const;

  void save(const std::filesystem::path& path) const;
  static ParserModel load(const std::filesystem::path& path);

 private:
  ag::Tensor column_attention(const Encoding& enc, const std::string& prefix) const;
  const ag::Tensor& p(const std::string& name) const { return params_.get(name); }
  ag::LstmWeights lstm(const std::string& prefix) const;

  TrainConfig cfg_;
  CharVocab vocab_;
  ag::ParameterStore params_;
};

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  std::size_t examples = 0;
  bool has_dev = false;
  MetricsReport dev;
};

nlohmann::json epoch_to_json(const EpochRecord& e);

struct TrainResult {
  ParserModel model;
  std::vector<EpochRecord> history;
};

// Builds the character vocabulary from training questions, headers and cells.
CharVocab build_vocab(const Corpus& corpus, std::size_t max_size);

// Throws ConfigError when the train split is empty.
TrainResult train(const Corpus& corpus, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

}  // namespace nl2sql
