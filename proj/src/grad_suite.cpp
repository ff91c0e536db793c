#include "nl2sql/grad_suite.hpp"

#include <functional>
#include <random>

#include "nl2sql/entity_link.hpp"
#include "nl2sql/parser_model.hpp"
#include "nl2sql/tensor.hpp"

namespace nl2sql {

using ag::Tensor;

namespace {

class Inputs {
 public:
  explicit Inputs(std::uint64_t seed) : rng_(seed) {}

  Tensor param(std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(r * c);
    for (double& x : v) x = dist(rng_);
    return Tensor::from(r, c, std::move(v), true);
  }

  Tensor weights(std::size_t r, std::size_t c) { return param(r, c).detach(); }

 private:
  std::mt19937_64 rng_;
};

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(std::uint64_t seed) {
  Inputs in(seed);
  std::vector<GradCheckResult> out;
  auto check = [&](const std::string& name, std::vector<Tensor> params,
                   const std::function<Tensor()>& fn) {
    out.push_back({name, ag::grad_check(fn, std::move(params))});
  };
  auto unary = [&](const std::string& name, std::size_t r, std::size_t c,
                   const std::function<Tensor(const Tensor&)>& op) {
    Tensor a = in.param(r, c);
    Tensor w = in.weights(op(a).rows(), op(a).cols());
    check(name, {a}, [=] { return ag::sum(ag::mul(op(a), w)); });
  };
  auto binary = [&](const std::string& name, std::size_t ar, std::size_t ac, std::size_t br,
                    std::size_t bc, const std::function<Tensor(const Tensor&, const Tensor&)>& op) {
    Tensor a = in.param(ar, ac);
    Tensor b = in.param(br, bc);
    Tensor y = op(a, b);
    Tensor w = in.weights(y.rows(), y.cols());
    check(name, {a, b}, [=] { return ag::sum(ag::mul(op(a, b), w)); });
  };

  binary("matmul", 3, 4, 4, 2, ag::matmul);
  binary("add", 3, 4, 3, 4, ag::add);
  binary("sub", 3, 4, 3, 4, ag::sub);
  binary("mul", 3, 4, 3, 4, ag::mul);
  unary("scale", 3, 4, [](const Tensor& a) { return ag::scale(a, -1.7); });
  binary("add_row", 3, 4, 1, 4, ag::add_row);
  binary("scale_rows", 3, 4, 3, 1, ag::scale_rows);
  unary("tanh", 3, 4, ag::tanh);
  unary("sigmoid", 3, 4, ag::sigmoid);
  unary("softmax", 3, 5, ag::softmax);
  unary("log_softmax", 3, 5, ag::log_softmax);
  binary("concat_cols", 3, 2, 3, 4,
         [](const Tensor& a, const Tensor& b) { return ag::concat_cols({a, b}); });
  binary("concat_rows", 2, 4, 3, 4,
         [](const Tensor& a, const Tensor& b) { return ag::concat_rows({a, b}); });
  unary("slice_cols", 3, 5, [](const Tensor& a) { return ag::slice_cols(a, 1, 4); });
  unary("slice_rows", 4, 3, [](const Tensor& a) { return ag::slice_rows(a, 1, 3); });
  unary("repeat_rows", 1, 4, [](const Tensor& a) { return ag::repeat_rows(a, 3); });
  unary("transpose", 3, 4, ag::transpose);
  unary("embed", 5, 3, [](const Tensor& a) {
    const std::vector<std::size_t> ids = {4, 0, 4, 2};
    return ag::embed(a, ids);
  });
  unary("mean_rows", 3, 4, ag::mean_rows);
  unary("sum", 3, 4, ag::sum);
  unary("max_all", 3, 4, ag::max_all);
  binary("blend_rows", 3, 4, 3, 4, [](const Tensor& a, const Tensor& b) {
    const std::vector<double> mask = {1.0, 0.0, 1.0};
    return ag::blend_rows(a, b, mask);
  });
  unary("cross_entropy", 1, 6, [](const Tensor& a) { return ag::cross_entropy(a, 2); });
  unary("soft_cross_entropy", 1, 6, [](const Tensor& a) {
    const std::vector<double> t = {0.0, 0.5, 0.0, 0.25, 0.25, 0.0};
    return ag::soft_cross_entropy(a, t);
  });
  unary("softmax+cross_entropy", 1, 6, [](const Tensor& a) {
    return ag::cross_entropy(ag::log_softmax(a), 4);
  });

  {
    const std::size_t h = 3, din = 4;
    ag::LstmWeights w{in.param(din, 4 * h), in.param(h, 4 * h), in.param(1, 4 * h)};
    Tensor x = in.param(2, din);
    ag::LstmState s{in.param(2, h), in.param(2, h)};
    Tensor wh = in.weights(2, h), wc = in.weights(2, h);
    check("lstm_step", {w.input, w.recurrent, w.bias, x, s.h, s.c}, [=] {
      const auto n = ag::lstm_step(x, s, w);
      return ag::add(ag::sum(ag::mul(n.h, wh)), ag::sum(ag::mul(n.c, wc)));
    });
    ag::LstmWeights wb{in.param(din, 4 * h), in.param(h, 4 * h), in.param(1, 4 * h)};
    std::vector<Tensor> steps = {in.param(3, din), in.param(3, din), in.param(3, din)};
    const std::vector<std::size_t> lengths = {3, 1, 2};
    Tensor wf = in.weights(3, 2 * h);
    check("bilstm_final", {w.input, w.recurrent, wb.input, steps[0], steps[1], steps[2]}, [=] {
      return ag::sum(ag::mul(ag::bilstm_final(steps, lengths, w, wb), wf));
    });
    Tensor seq = in.param(4, din);
    Tensor ws = in.weights(4, 2 * h);
    check("bilstm_sequence", {w.input, wb.recurrent, seq}, [=] {
      return ag::sum(ag::mul(ag::bilstm_sequence(seq, w, wb), ws));
    });
  }

  // Column and value heads on a tiny model with random parameters large
  // enough that every path carries a well-conditioned gradient.
  {
    Table t{"g0", "grad fixture", {{"city", DType::Text}, {"price", DType::Real}}, {}};
    t.rows = {{std::string("Bilo"), 12.0}, {std::string("Kadu Ren"), 7.0},
              {std::string("Bilo"), 3.5}, {std::string("Mosa"), 9.0}};
    const std::vector<std::string> tokens = {"price", "where", "city", "is", "Kadu", "Ren", "?"};
    TrainConfig cfg;
    cfg.hidden = 4;
    cfg.seed = seed;
    ParserModel model(cfg, CharVocab::build({"price where city is Kadu Ren ? Bilo Mosa"}, 64));
    std::mt19937_64 rng(seed + 1);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto& ps = model.params();
    for (const auto& entry : ps.entries()) {
      for (double& v : ps.get(entry.first).mutable_data()) v = dist(rng);
    }
    auto span_loss = [&model, &t, tokens] {
      const Encoding enc = model.encode(tokens, t);
      const SpanOutput s = model.predict_value_span(enc, 0, CondOp::Eq);
      return ag::add(ag::cross_entropy(s.s_start, 4), ag::cross_entropy(s.s_end, 5));
    };
    check("span_head", {ps.get("U_start"), ps.get("W_start"), ps.get("U_end"), ps.get("W_end"),
                        ps.get("W_col"), ps.get("W_op"), ps.get("op_emb"), ps.get("W_att_q")},
          span_loss);
    check("span_head_encoder", {ps.get("char_emb"), ps.get("enc_fwd_wx"), ps.get("enc_bwd_wh")},
          span_loss);
    auto cell_loss = [&model, &t, tokens] {
      const Encoding enc = model.encode(tokens, t);
      const SpanOutput s = model.predict_value_span(enc, 0, CondOp::Eq);
      return ag::cross_entropy(model.attend_cells(enc, s, t, 0).scores, 1);
    };
    for (const char* n : {"W_row", "U_cell", "U_start", "cell_fwd_wx", "cell_bwd_wh", "cell_fwd_b"})
      check(std::string("cell_attention_head:") + n, {ps.get(n)}, cell_loss);
    auto heads_loss = [&model, &t, tokens] {
      const HeadOutputs h = model.predict_heads(model.encode(tokens, t));
      return ag::add(ag::add(ag::cross_entropy(h.s_col, 1), ag::cross_entropy(ag::slice_rows(h.s_agg, 1, 2), 4)),
                     ag::add(ag::cross_entropy(h.w_col, 0), ag::cross_entropy(ag::slice_rows(h.w_op, 0, 1), 2)));
    };
    check("column_heads", {ps.get("sel_att"), ps.get("sel_match"), ps.get("agg_w"), ps.get("whr_att"),
                           ps.get("op_match"), ps.get("w_op_u"), ps.get("s_col_v")},
          heads_loss);
    Tensor pooled = in.param(1, 4);
    Tensor cells = in.param(5, 4);
    Tensor w_row = in.param(4, 1);
    check("cell_attention", {pooled, cells, w_row},
          [=] { return ag::cross_entropy(cell_attention(pooled, cells, w_row).scores, 3); });
  }
  return out;
}

}  // namespace nl2sql
