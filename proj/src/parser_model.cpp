#include "nl2sql/parser_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "nl2sql/errors.hpp"
#include "nl2sql/numeric.hpp"

namespace nl2sql {

using ag::Tensor;
using nlohmann::json;

namespace {

constexpr std::size_t kMaxSpanTokens = 8;
constexpr const char* kCheckpointKind = "nl2sql-parser";

}  // namespace

std::string_view resolver_name(Resolver r) {
  switch (r) {
    case Resolver::SpanOnly: return "span";
    case Resolver::Offline: return "offline";
    case Resolver::End2End: return "end2end";
  }
  return "span";
}

Resolver resolver_from_name(std::string_view name) {
  if (name == "span") return Resolver::SpanOnly;
  if (name == "offline") return Resolver::Offline;
  if (name == "end2end") return Resolver::End2End;
  throw ConfigError("unknown resolver '" + std::string(name) + "' (span, offline, end2end)");
}

// ---- config ------------------------------------------------------------------

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.hidden < 2 || cfg.hidden % 2 != 0) throw ConfigError("hidden must be even and >= 2");
  if (cfg.char_vocab < 2) throw ConfigError("char_vocab must be at least 2");
  if (cfg.epochs < 1) throw ConfigError("epochs must be positive");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(cfg.lr > 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("lr must be positive");
  if (cfg.max_sel < 1 || cfg.max_cond < 1) throw ConfigError("max_sel and max_cond must be positive");
  if (!(cfg.clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
}

json train_config_to_json(const TrainConfig& cfg) {
  return json{{"hidden", cfg.hidden},
              {"char_vocab", cfg.char_vocab},
              {"epochs", cfg.epochs},
              {"batch_size", cfg.batch_size},
              {"lr", cfg.lr},
              {"lr_decay", cfg.lr_decay},
              {"seed", cfg.seed},
              {"resolver", resolver_name(cfg.resolver)},
              {"max_sel", cfg.max_sel},
              {"max_cond", cfg.max_cond},
              {"max_train_examples", cfg.max_train_examples},
              {"dev_eval_examples", cfg.dev_eval_examples},
              {"clip_norm", cfg.clip_norm}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig cfg;
  try {
    if (!j.is_object()) throw ConfigError("train config must be a JSON object");
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.char_vocab = j.value("char_vocab", cfg.char_vocab);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("resolver")) cfg.resolver = resolver_from_name(j.at("resolver").get<std::string>());
    cfg.max_sel = j.value("max_sel", cfg.max_sel);
    cfg.max_cond = j.value("max_cond", cfg.max_cond);
    cfg.max_train_examples = j.value("max_train_examples", cfg.max_train_examples);
    cfg.dev_eval_examples = j.value("dev_eval_examples", cfg.dev_eval_examples);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return cfg;
}

// ---- parameters ----------------------------------------------------------------

namespace {

void add_lstm(ag::ParameterStore& ps, const std::string& prefix, std::size_t in, std::size_t h) {
  ps.add_uniform(prefix + "_wx", in, 4 * h);
  ps.add_uniform(prefix + "_wh", h, 4 * h);
  Tensor& b = ps.add_constant(prefix + "_b", 1, 4 * h, 0.0);
  for (std::size_t k = h; k < 2 * h; ++k) b.mutable_data()[k] = 1.0;  // forget gate
}

void add_mlp(ag::ParameterStore& ps, const std::string& prefix, std::size_t in, std::size_t hid,
             std::size_t out) {
  ps.add_uniform(prefix + "_w1", in, hid);
  ps.add_constant(prefix + "_b1", 1, hid, 0.0);
  ps.add_uniform(prefix + "_w2", hid, out);
  ps.add_constant(prefix + "_b2", 1, out, 0.0);
}

}  // namespace

ParserModel::ParserModel(const TrainConfig& cfg, CharVocab vocab)
    : cfg_(cfg), vocab_(std::move(vocab)), params_(cfg.seed) {
  validate_train_config(cfg_);
  const std::size_t d = cfg_.hidden, h = d / 2;
  params_.add_uniform("char_emb", vocab_.size(), d);
  add_lstm(params_, "enc_fwd", d, h);
  add_lstm(params_, "enc_bwd", d, h);
  params_.add_uniform("w_att", d, 1);
  for (const std::string prefix : {"sel", "agg", "whr", "op"}) {
    params_.add_uniform(prefix + "_att", d, d);
    params_.add_constant(prefix + "_match", 1, 1, 1.0);
    params_.add_uniform(prefix + "_w", 2 * d, d);
    params_.add_constant(prefix + "_b", 1, d, 0.0);
  }
  params_.add_uniform("s_col_v", d, 1);
  params_.add_uniform("s_agg_u", d, kAggCount);
  params_.add_constant("s_agg_b", 1, kAggCount, 0.0);
  params_.add_uniform("w_col_v", d, 1);
  params_.add_uniform("w_op_u", d, kCondOpCount);
  params_.add_constant("w_op_b", 1, kCondOpCount, 0.0);
  add_mlp(params_, "s_num", 2 * d, d, cfg_.max_sel);
  add_mlp(params_, "w_num", 2 * d, d, cfg_.max_cond + 1);
  add_mlp(params_, "w_rel", 2 * d, d, kConnectorCount);
  add_mlp(params_, "reject", 2 * d + 2, d, 2);
  params_.add_uniform("W_col", d, d);
  params_.add_uniform("W_op", d, d);
  params_.add_uniform("op_emb", kCondOpCount, d);
  params_.add_uniform("W_att_q", d, d);
  params_.add_uniform("U_start", 4 * d, d);
  params_.add_uniform("W_start", d, 1);
  params_.add_uniform("U_end", 4 * d, d);
  params_.add_uniform("W_end", d, 1);
  params_.add_uniform("U_cell", 4 * d, d);
  params_.add_uniform("W_row", d, 1);
  add_lstm(params_, "cell_fwd", d, h);
  add_lstm(params_, "cell_bwd", d, h);
}

ag::LstmWeights ParserModel::lstm(const std::string& prefix) const {
  return {p(prefix + "_wx"), p(prefix + "_wh"), p(prefix + "_b")};
}

CellEncoder ParserModel::cell_encoder() const {
  return {p("char_emb"), lstm("cell_fwd"), lstm("cell_bwd")};
}

// ---- encoder -------------------------------------------------------------------

namespace {

// Mean character embedding of each token, as one (tokens x d) matrix.
Tensor token_means(const std::vector<std::string>& tokens, const CharVocab& vocab,
                   const Tensor& emb) {
  std::vector<std::size_t> ids;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (const auto& tok : tokens) {
    const auto tid = vocab.ids(tok);
    ranges.emplace_back(ids.size(), ids.size() + tid.size());
    ids.insert(ids.end(), tid.begin(), tid.end());
  }
  std::vector<double> avg(tokens.size() * ids.size(), 0.0);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const auto [b, e] = ranges[t];
    for (std::size_t k = b; k < e; ++k) avg[t * ids.size() + k] = 1.0 / static_cast<double>(e - b);
  }
  return ag::matmul(Tensor::from(tokens.size(), ids.size(), std::move(avg)), ag::embed(emb, ids));
}

Tensor mlp(const Tensor& x, const ag::ParameterStore& ps, const std::string& prefix) {
  Tensor hid = ag::tanh(ag::add_row(ag::matmul(x, ps.get(prefix + "_w1")), ps.get(prefix + "_b1")));
  return ag::add_row(ag::matmul(hid, ps.get(prefix + "_w2")), ps.get(prefix + "_b2"));
}

std::vector<double> log_probs(const Tensor& logits_row) {
  return ag::log_softmax(logits_row.detach()).data();
}

}  // namespace

Encoding ParserModel::encode(const std::vector<std::string>& tokens, const Table& t) const {
  if (tokens.empty()) throw ContractViolation("encode: empty question");
  if (t.columns.empty()) throw ContractViolation("encode: table has no columns");
  const std::size_t h = cfg_.hidden / 2;
  const Tensor& emb = p("char_emb");
  const auto fwd = lstm("enc_fwd");
  const auto bwd = lstm("enc_bwd");

  Encoding enc;
  enc.tokens = tokens;
  enc.x = token_means(tokens, vocab_, emb);
  const Tensor states = ag::bilstm_sequence(enc.x, fwd, bwd);
  enc.h_q = ag::add(states, enc.x);
  const Tensor att = ag::softmax(ag::transpose(ag::matmul(enc.h_q, p("w_att"))));
  enc.h_att_q = ag::matmul(att, enc.h_q);
  const std::size_t L = tokens.size();
  enc.q_vec = ag::concat_cols({enc.h_att_q, ag::slice_cols(ag::slice_rows(states, L - 1, L), 0, h),
                               ag::slice_cols(ag::slice_rows(states, 0, 1), h, 2 * h)});

  // Column names: token means, then the shared encoder over each name.
  std::vector<std::string> header_tokens;
  std::vector<std::vector<std::size_t>> token_index;
  for (const auto& col : t.columns) {
    auto toks = tokenize(col.name);
    if (toks.empty()) toks = {col.name.empty() ? std::string("?") : col.name};
    token_index.emplace_back();
    for (auto& tok : toks) {
      token_index.back().push_back(header_tokens.size());
      header_tokens.push_back(std::move(tok));
    }
  }
  const Tensor xh = token_means(header_tokens, vocab_, emb);
  const std::size_t C = t.columns.size();
  std::vector<std::size_t> lengths(C);
  std::size_t steps = 0;
  std::vector<double> avg(C * header_tokens.size(), 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    lengths[c] = token_index[c].size();
    steps = std::max(steps, lengths[c]);
    for (std::size_t k : token_index[c]) {
      avg[c * header_tokens.size() + k] = 1.0 / static_cast<double>(lengths[c]);
    }
  }
  std::vector<Tensor> inputs;
  std::vector<std::size_t> rows(C);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t c = 0; c < C; ++c) rows[c] = token_index[c][std::min(s, lengths[c] - 1)];
    inputs.push_back(ag::embed(xh, rows));
  }
  const Tensor finals = ag::bilstm_final(inputs, lengths, fwd, bwd);
  const Tensor means = ag::matmul(Tensor::from(C, header_tokens.size(), std::move(avg)), xh);
  enc.h_col = ag::add(finals, means);

  std::vector<double> match(C * L, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t k : token_index[c]) {
      for (std::size_t i = 0; i < L; ++i) {
        if (tokens[i] == header_tokens[k]) match[c * L + i] = 1.0;
      }
    }
  }
  enc.match = Tensor::from(C, L, std::move(match));
  return enc;
}

Tensor ParserModel::column_attention(const Encoding& enc, const std::string& prefix) const {
  const std::size_t C = enc.h_col.rows(), L = enc.h_q.rows();
  const Tensor bias = ag::matmul(ag::matmul(Tensor::from(C, 1, std::vector<double>(C, 1.0)), p(prefix + "_match")),
                                 Tensor::from(1, L, std::vector<double>(L, 1.0)));
  const Tensor scores = ag::add(ag::matmul(ag::matmul(enc.h_col, p(prefix + "_att")), ag::transpose(enc.h_q)),
                                ag::mul(enc.match, bias));
  const Tensor ctx = ag::matmul(ag::softmax(scores), enc.h_q);
  return ag::tanh(ag::add_row(ag::matmul(ag::concat_cols({ctx, enc.h_col}), p(prefix + "_w")),
                              p(prefix + "_b")));
}

HeadOutputs ParserModel::predict_heads(const Encoding& enc) const {
  HeadOutputs out;
  const Tensor sel = column_attention(enc, "sel");
  const Tensor agg = column_attention(enc, "agg");
  const Tensor whr = column_attention(enc, "whr");
  const Tensor op = column_attention(enc, "op");
  out.s_col = ag::transpose(ag::matmul(sel, p("s_col_v")));
  out.s_agg = ag::add_row(ag::matmul(agg, p("s_agg_u")), p("s_agg_b"));
  out.w_col = ag::transpose(ag::matmul(whr, p("w_col_v")));
  out.w_op = ag::add_row(ag::matmul(op, p("w_op_u")), p("w_op_b"));
  out.s_num = mlp(enc.q_vec, params_, "s_num");
  out.w_num = mlp(enc.q_vec, params_, "w_num");
  out.w_rel = mlp(enc.q_vec, params_, "w_rel");
  out.reject = mlp(ag::concat_cols({enc.q_vec, ag::max_all(out.s_col), ag::max_all(out.w_col)}),
                   params_, "reject");
  return out;
}

// ---- value heads ---------------------------------------------------------------

namespace {

struct SpanChoice {
  std::size_t start = 0;
  std::size_t end = 0;
  double log_prob = 0.0;
};

// Spans ordered by log p_start + log p_end, best first; ties keep the
// earlier (start, end).
std::vector<SpanChoice> ranked_spans(const SpanOutput& s, std::size_t k) {
  const auto& ps = s.p_start.data();
  const auto& pe = s.p_end.data();
  std::vector<SpanChoice> all;
  for (std::size_t b = 0; b < ps.size(); ++b) {
    for (std::size_t e = b; e < pe.size() && e < b + kMaxSpanTokens; ++e) {
      all.push_back({b, e, std::log(std::max(ps[b], 1e-300)) + std::log(std::max(pe[e], 1e-300))});
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const SpanChoice& a, const SpanChoice& b) { return a.log_prob > b.log_prob; });
  if (all.size() > k) all.resize(k);
  return all;
}

std::string span_text(const Encoding& enc, std::size_t start, std::size_t end) {
  return join_tokens(enc.tokens, start, end + 1);
}


}  // namespace

SpanOutput ParserModel::predict_value_span(const Encoding& enc, std::size_t col, CondOp op) const {
  if (col >= enc.h_col.rows()) {
    throw BoundsError("value span for column " + std::to_string(col) + " of " +
                      std::to_string(enc.h_col.rows()));
  }
  const std::size_t L = enc.h_q.rows();
  const auto op_id = static_cast<std::size_t>(op);
  SpanOutput out;
  out.h_n = ag::concat_cols(
      {ag::repeat_rows(ag::matmul(ag::slice_rows(enc.h_col, col, col + 1), p("W_col")), L),
       ag::repeat_rows(ag::matmul(ag::slice_rows(p("op_emb"), op_id, op_id + 1), p("W_op")), L),
       ag::repeat_rows(ag::matmul(enc.h_att_q, p("W_att_q")), L), enc.h_q});
  out.s_start = ag::transpose(ag::matmul(ag::tanh(ag::matmul(out.h_n, p("U_start"))), p("W_start")));
  out.s_end = ag::transpose(ag::matmul(ag::tanh(ag::matmul(out.h_n, p("U_end"))), p("W_end")));
  out.p_start = ag::softmax(out.s_start);
  out.p_end = ag::softmax(out.s_end);
  const auto best = ranked_spans(out, 1).front();
  out.start = best.start;
  out.end = best.end;
  return out;
}

namespace {

struct ColumnCells {
  std::vector<std::string> unique;
  std::vector<std::size_t> row_to_unique;
  std::vector<std::string> rows;
};

ColumnCells column_cells(const Table& t, std::size_t col) {
  ColumnCells out;
  std::map<std::string, std::size_t> seen;
  for (const auto& cell : column_values(t, col)) {
    std::string s = cell_to_string(cell);
    if (s.empty()) s = " ";
    auto [it, fresh] = seen.emplace(s, out.unique.size());
    if (fresh) out.unique.push_back(s);
    out.row_to_unique.push_back(it->second);
    out.rows.push_back(cell_to_string(cell));
  }
  return out;
}

}  // namespace

CellAttention ParserModel::attend_cells(const Encoding& enc, const SpanOutput& span,
                                        const Table& t, std::size_t col) const {
  (void)enc;
  if (t.row_count() == 0) throw ContractViolation("attend_cells: table has no rows");
  const ColumnCells cells = column_cells(t, col);
  const Tensor a = ag::scale(ag::add(span.p_start, span.p_end), 0.5);
  const Tensor pooled = ag::matmul(a, ag::tanh(ag::matmul(span.h_n, p("U_cell"))));
  const Tensor unique = encode_cells(cells.unique, cell_encoder(), vocab_);
  const Tensor rows = ag::embed(unique, cells.row_to_unique);
  return cell_attention(pooled, rows, p("W_row"));
}

std::string ParserModel::resolve_value(const Encoding& enc, const SpanOutput& span,
                                       const Table& t, std::size_t col, Resolver resolver) const {
  const std::string text = span_text(enc, span.start, span.end);
  const bool is_text = t.columns.at(col).dtype == DType::Text;
  switch (resolver) {
    case Resolver::SpanOnly:
      return text;
    case Resolver::Offline:
      return offline_resolve(text, col, t, vocab_, char_embeddings());
    case Resolver::End2End:
      if (!is_text || t.row_count() == 0) return text;
      return cell_to_string(t.rows[attend_cells(enc, span, t, col).row][col]);
  }
  return text;
}

// ---- decoding ------------------------------------------------------------------

namespace {

struct Alternative {
  double log_prob;
  std::function<void(SqlQuery&)> apply;
};

// Indices sorted by descending score; ties keep the lower index.
std::vector<std::size_t> order_by(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

std::vector<int> allowed_aggs(DType dtype) {
  if (dtype == DType::Text) return {static_cast<int>(Agg::None), static_cast<int>(Agg::Count)};
  return {0, 1, 2, 3, 4, 5};
}

std::vector<int> allowed_ops(DType dtype) {
  if (dtype == DType::Text) return {static_cast<int>(CondOp::Eq), static_cast<int>(CondOp::Neq)};
  return {0, 1, 2, 3};
}

// Allowed codes sorted by descending log-probability.
std::vector<std::pair<int, double>> ranked_codes(const std::vector<double>& lp,
                                                 const std::vector<int>& allowed) {
  std::vector<std::pair<int, double>> out;
  for (int code : allowed) out.emplace_back(code, lp[static_cast<std::size_t>(code)]);
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  return out;
}

}  // namespace

Prediction ParserModel::predict(const Example& ex, const Table& t, Resolver resolver,
                                std::size_t n_candidates) const {
  std::vector<std::string> tokens = ex.tokens.empty() ? tokenize(ex.question) : ex.tokens;
  if (tokens.empty()) tokens = {"?"};
  const Encoding enc = encode(tokens, t);
  const HeadOutputs heads = predict_heads(enc);
  const std::size_t C = t.column_count();

  Prediction pred;
  const auto reject_p = ag::softmax(heads.reject.detach()).data();
  pred.reject_prob = reject_p[1];

  const auto lp_snum = log_probs(heads.s_num);
  const auto lp_wnum = log_probs(heads.w_num);
  const auto lp_wrel = log_probs(heads.w_rel);
  const auto sel_order = order_by(heads.s_col.data());
  const auto whr_order = order_by(heads.w_col.data());
  std::vector<std::vector<double>> lp_agg(C), lp_op(C);
  for (std::size_t c = 0; c < C; ++c) {
    lp_agg[c] = log_probs(ag::slice_rows(heads.s_agg, c, c + 1));
    lp_op[c] = log_probs(ag::slice_rows(heads.w_op, c, c + 1));
  }

  auto exp_all = [](std::vector<double> v) {
    for (double& x : v) x = std::exp(x);
    return v;
  };
  pred.heads = json{{"s_num", exp_all(lp_snum)}, {"w_num", exp_all(lp_wnum)},
                    {"w_rel", exp_all(lp_wrel)}, {"reject", pred.reject_prob}};

  // Value alternatives for (column, op): best first, distinct values.
  auto value_alternatives = [&](std::size_t col, CondOp op, std::size_t k) {
    const SpanOutput span = predict_value_span(enc, col, op);
    std::vector<std::pair<std::string, double>> out;
    auto push = [&](std::string v, double lp) {
      for (const auto& [seen, _] : out) {
        if (seen == v) return;
      }
      out.emplace_back(std::move(v), lp);
    };
    const bool is_text = t.columns[col].dtype == DType::Text;
    if (resolver == Resolver::End2End && is_text && t.row_count() > 0) {
      const CellAttention att = attend_cells(enc, span, t, col);
      const auto lp = log_probs(att.scores);
      for (std::size_t r : order_by(att.scores.data())) {
        push(cell_to_string(t.rows[r][col]), lp[r]);
        if (out.size() >= k) break;
      }
      return out;
    }
    for (const auto& s : ranked_spans(span, 4 * k)) {
      SpanOutput choice = span;
      choice.start = s.start;
      choice.end = s.end;
      push(resolve_value(enc, choice, t, col, resolver), s.log_prob);
      if (out.size() >= k) break;
    }
    return out;
  };

  // Slots for a given (select count, condition count) structure. Every slot
  // lists alternatives best first, so taking the first of each is the
  // greedy decode.
  auto build_slots = [&](std::size_t n_sel, std::size_t n_cond, std::size_t width) {
    std::vector<std::vector<Alternative>> slots;
    for (std::size_t i = 0; i < n_sel; ++i) {
      const std::size_t col = sel_order[i];
      std::vector<Alternative> alts;
      for (const auto& [code, lp] : ranked_codes(lp_agg[col], allowed_aggs(t.columns[col].dtype))) {
        alts.push_back({lp, [col, code = code](SqlQuery& q) {
                          q.select.push_back({static_cast<int>(col), static_cast<Agg>(code)});
                        }});
        if (alts.size() >= width) break;
      }
      slots.push_back(std::move(alts));
    }
    for (std::size_t i = 0; i < n_cond; ++i) {
      const std::size_t col = whr_order[i];
      std::vector<Alternative> alts;
      std::size_t n_ops = 0;
      for (const auto& [code, lp_o] : ranked_codes(lp_op[col], allowed_ops(t.columns[col].dtype))) {
        if (n_ops++ >= width) break;
        for (const auto& [value, lp_v] : value_alternatives(col, static_cast<CondOp>(code), width)) {
          alts.push_back({lp_o + lp_v, [col, code = code, value = value](SqlQuery& q) {
                            q.conditions.push_back(
                                {static_cast<int>(col), static_cast<CondOp>(code), value});
                          }});
        }
      }
      std::stable_sort(alts.begin(), alts.end(), [](const Alternative& a, const Alternative& b) {
        return a.log_prob > b.log_prob;
      });
      slots.push_back(std::move(alts));
    }
    if (n_cond >= 2) {
      std::vector<Alternative> alts;
      for (const auto& [code, lp] : ranked_codes(lp_wrel, {1, 2})) {
        alts.push_back({lp, [code = code](SqlQuery& q) { q.connector = static_cast<Connector>(code); }});
        if (alts.size() >= width) break;
      }
      slots.push_back(std::move(alts));
    }
    return slots;
  };

  auto valid_counts = [](const std::vector<double>& lp, std::size_t offset, std::size_t limit) {
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t k : order_by(lp)) {
      if (k + offset <= limit) out.emplace_back(k + offset, lp[k]);
    }
    return out;
  };
  const auto snum_opts = valid_counts(lp_snum, 1, C);
  const auto wnum_opts = valid_counts(lp_wnum, 0, C);

  auto assemble = [](const std::vector<std::vector<Alternative>>& slots,
                     const std::vector<std::size_t>& choice) {
    SqlQuery q;
    double lp = 0.0;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      slots[s][choice[s]].apply(q);
      lp += slots[s][choice[s]].log_prob;
    }
    return std::make_pair(q, lp);
  };

  // Greedy decode.
  const std::size_t best_sel = snum_opts.front().first;
  const std::size_t best_cond = wnum_opts.front().first;
  {
    const auto slots = build_slots(best_sel, best_cond, 1);
    auto [q, lp] = assemble(slots, std::vector<std::size_t>(slots.size(), 0));
    if (best_cond < 2) q.connector = Connector::None;
    lp += snum_opts.front().second + wnum_opts.front().second;
    pred.candidates.push_back({q, lp});
  }
  if (pred.reject_prob > 0.5) {
    pred.label = Rejection{};
  } else {
    pred.label = pred.candidates.front().query;
  }

  if (n_candidates > 1) {
    std::vector<Candidate> pool;
    for (std::size_t a = 0; a < std::min<std::size_t>(2, snum_opts.size()); ++a) {
      for (std::size_t b = 0; b < std::min<std::size_t>(2, wnum_opts.size()); ++b) {
        const auto slots = build_slots(snum_opts[a].first, wnum_opts[b].first, 2);
        const double base = snum_opts[a].second + wnum_opts[b].second;
        // Beam over slots.
        std::vector<std::pair<std::vector<std::size_t>, double>> beam = {{{}, base}};
        for (const auto& slot : slots) {
          std::vector<std::pair<std::vector<std::size_t>, double>> next;
          for (const auto& [choice, lp] : beam) {
            for (std::size_t k = 0; k < slot.size(); ++k) {
              auto c = choice;
              c.push_back(k);
              next.emplace_back(std::move(c), lp + slot[k].log_prob);
            }
          }
          std::stable_sort(next.begin(), next.end(),
                           [](const auto& x, const auto& y) { return x.second > y.second; });
          if (next.size() > n_candidates) next.resize(n_candidates);
          beam = std::move(next);
        }
        for (const auto& [choice, lp] : beam) {
          auto [q, slot_lp] = assemble(slots, choice);
          (void)slot_lp;
          pool.push_back({q, lp});
        }
      }
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Candidate& x, const Candidate& y) {
      return x.log_prob > y.log_prob;
    });
    std::vector<SqlQuery> seen = {canonicalize(pred.candidates.front().query, t)};
    for (const auto& c : pool) {
      if (pred.candidates.size() >= n_candidates) break;
      SqlQuery key = canonicalize(c.query, t);
      if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
      seen.push_back(key);
      pred.candidates.push_back(c);
    }
  }

  if (ex.answerable()) {
    for (const auto& cond : ex.sql().conditions) {
      if (cond.column < 0 || static_cast<std::size_t>(cond.column) >= C) {
        pred.gold_context_values.emplace_back();
        continue;
      }
      const auto col = static_cast<std::size_t>(cond.column);
      const SpanOutput span = predict_value_span(enc, col, cond.op);
      pred.gold_context_values.push_back(resolve_value(enc, span, t, col, resolver));
    }
  }
  return pred;
}

GoldLabel ParserModel::decode(std::string_view question, const Table& t, Resolver resolver) const {
  Example ex;
  ex.question = std::string(question);
  ex.tokens = tokenize(question);
  ex.gold = Rejection{};
  return predict(ex, t, resolver, 0).label;
}

// ---- training loss -------------------------------------------------------------

Tensor ParserModel::loss(const Example& ex, const Table& t, const Lexicon& lexicon) const {
  const Encoding enc = encode(ex.tokens.empty() ? tokenize(ex.question) : ex.tokens, t);
  const HeadOutputs heads = predict_heads(enc);
  if (!ex.answerable()) return ag::cross_entropy(heads.reject, 1);

  const SqlQuery& g = ex.sql();
  const std::size_t C = t.column_count();
  std::vector<Tensor> terms = {ag::cross_entropy(heads.reject, 0)};
  if (g.select.size() >= 1 && g.select.size() <= cfg_.max_sel) {
    terms.push_back(ag::cross_entropy(heads.s_num, g.select.size() - 1));
  }
  std::vector<double> target(C, 0.0);
  for (const auto& s : g.select) target[static_cast<std::size_t>(s.column)] += 1.0;
  for (double& v : target) v /= static_cast<double>(g.select.size());
  terms.push_back(ag::soft_cross_entropy(heads.s_col, target));
  for (const auto& s : g.select) {
    const auto c = static_cast<std::size_t>(s.column);
    terms.push_back(ag::cross_entropy(ag::slice_rows(heads.s_agg, c, c + 1),
                                      static_cast<std::size_t>(s.agg)));
  }
  if (g.conditions.size() <= cfg_.max_cond) {
    terms.push_back(ag::cross_entropy(heads.w_num, g.conditions.size()));
  }
  terms.push_back(ag::cross_entropy(heads.w_rel, static_cast<std::size_t>(g.conditions.size() <= 1
                                                                              ? Connector::None
                                                                              : g.connector)));
  if (!g.conditions.empty()) {
    std::fill(target.begin(), target.end(), 0.0);
    for (const auto& c : g.conditions) target[static_cast<std::size_t>(c.column)] += 1.0;
    for (double& v : target) v /= static_cast<double>(g.conditions.size());
    terms.push_back(ag::soft_cross_entropy(heads.w_col, target));
  }
  const auto spans = locate_value_spans(ex, lexicon);
  for (std::size_t k = 0; k < g.conditions.size(); ++k) {
    const auto& cond = g.conditions[k];
    const auto c = static_cast<std::size_t>(cond.column);
    terms.push_back(ag::cross_entropy(ag::slice_rows(heads.w_op, c, c + 1),
                                      static_cast<std::size_t>(cond.op)));
    if (spans[k].first == std::string::npos) continue;
    const SpanOutput span = predict_value_span(enc, c, cond.op);
    terms.push_back(ag::cross_entropy(span.s_start, spans[k].first));
    terms.push_back(ag::cross_entropy(span.s_end, spans[k].second - 1));
    if (cfg_.resolver == Resolver::End2End && t.columns[c].dtype == DType::Text) {
      std::vector<double> rows(t.row_count(), 0.0);
      double hits = 0.0;
      for (std::size_t r = 0; r < t.row_count(); ++r) {
        if (cell_to_string(t.rows[r][c]) == cond.value) {
          rows[r] = 1.0;
          hits += 1.0;
        }
      }
      if (hits > 0.0) {
        for (double& v : rows) v /= hits;
        terms.push_back(ag::soft_cross_entropy(attend_cells(enc, span, t, c).scores, rows));
      }
    }
  }
  Tensor total = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) total = ag::add(total, terms[i]);
  return total;
}

// ---- persistence ---------------------------------------------------------------

void ParserModel::save(const std::filesystem::path& path) const {
  json meta{{"kind", kCheckpointKind},
            {"train_config", train_config_to_json(cfg_)},
            {"vocab", vocab_.to_json()}};
  ag::save_checkpoint(params_, meta, path);
}

ParserModel ParserModel::load(const std::filesystem::path& path) {
  const ag::Checkpoint ck = ag::read_checkpoint(path);
  if (ck.meta.value("kind", std::string()) != kCheckpointKind) {
    throw ParseError(path.string() + " is not a parser checkpoint");
  }
  ParserModel model(train_config_from_json(ck.meta.at("train_config")),
                    CharVocab::from_json(ck.meta.at("vocab")));
  ag::load_into(model.params_, ck);
  return model;
}

// ---- training ------------------------------------------------------------------

json epoch_to_json(const EpochRecord& e) {
  json j{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}, {"examples", e.examples}};
  if (e.has_dev) j["dev"] = report_to_json(e.dev);
  return j;
}

CharVocab build_vocab(const Corpus& corpus, std::size_t max_size) {
  std::vector<std::string> texts;
  std::set<std::string> tables;
  for (const Example* ex : corpus.split(Split::Train)) {
    texts.push_back(ex->question);
    tables.insert(ex->table_id);
  }
  for (const auto& id : tables) {
    const Table& t = corpus.tables.at(id);
    for (const auto& c : t.columns) texts.push_back(c.name);
    for (const auto& row : t.rows) {
      for (const auto& cell : row) {
        if (std::holds_alternative<std::string>(cell)) texts.push_back(std::get<std::string>(cell));
      }
    }
  }
  return CharVocab::build(texts, max_size);
}

TrainResult train(const Corpus& corpus, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  validate_train_config(cfg);
  std::vector<const Example*> train_set = corpus.split(Split::Train);
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (cfg.max_train_examples > 0 && train_set.size() > cfg.max_train_examples) {
    train_set.resize(cfg.max_train_examples);
  }
  std::vector<Example> dev;
  for (const Example* ex : corpus.split(Split::Valid)) {
    if (dev.size() >= cfg.dev_eval_examples) break;
    dev.push_back(*ex);
  }

  TrainResult result{ParserModel(cfg, build_vocab(corpus, cfg.char_vocab)), {}};
  ParserModel& model = result.model;
  ag::Adam adam(cfg.lr);
  auto tensors = model.params().tensors();
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    adam.set_lr(cfg.lr * std::pow(cfg.lr_decay, epoch - 1));
    double total = 0.0;
    const auto B = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t stop = std::min(order.size(), start + B);
      model.params().zero_grad();
      for (std::size_t k = start; k < stop; ++k) {
        const Example& ex = *train_set[order[k]];
        Tensor l = model.loss(ex, corpus.tables.at(ex.table_id), corpus.lexicon);
        total += l.item();
        ag::backward(ag::scale(l, 1.0 / static_cast<double>(stop - start)));
      }
      double norm2 = 0.0;
      for (const auto& t : tensors) {
        for (double g : t.node()->grad) norm2 += g * g;
      }
      const double norm = std::sqrt(norm2);
      if (norm > cfg.clip_norm) {
        const double f = cfg.clip_norm / norm;
        for (auto& t : tensors) {
          for (double& g : t.mutable_grad()) g *= f;
        }
      }
      adam.step(tensors);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.examples = train_set.size();
    rec.mean_loss = total / static_cast<double>(train_set.size());
    if (!dev.empty()) {
      std::vector<Prediction> preds;
      for (const auto& ex : dev) {
        preds.push_back(model.predict(ex, corpus.tables.at(ex.table_id), cfg.resolver, 0));
      }
      rec.has_dev = true;
      rec.dev = score(preds, dev, corpus.tables);
    }
    if (on_epoch) on_epoch(rec);
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace nl2sql
