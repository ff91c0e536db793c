#pragma once

// Dense rank-2 tensors with tape-free reverse-mode differentiation.
//
// Every tensor is a rows x cols matrix of doubles; vectors are 1 x n rows.
// An op whose inputs require gradients records a closure that pushes its
// output gradient into its parents. backward() walks the graph reachable
// from a scalar loss in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nl2sql::ag {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;  // lazily sized; empty until first touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor constant(std::size_t rows, std::size_t cols, double fill);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> data,
                     bool requires_grad = false);
  static Tensor row(std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const { return {node_->rows, node_->cols}; }
  std::string shape_string() const;

  const std::vector<double>& data() const { return node_->value; }
  std::vector<double>& mutable_data() { return node_->value; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * node_->cols + c]; }
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  // Zero-filled when no gradient has been accumulated yet.
  std::vector<double> grad() const;
  std::vector<double>& mutable_grad() { return node_->ensure_grad(); }
  void zero_grad();

  // Same values, no graph history.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend Tensor make_result(std::size_t, std::size_t, std::vector<double>,
                            std::vector<Tensor>, const char*);
};

// Builds an op output; attaches parents only when one of them needs grads.
// Throws NumericError when any value is not finite.
Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                   std::vector<Tensor> inputs, const char* op_name);

// ---- forward ops -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double s);
// a (m x n) + bias (1 x n) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& bias);
// Each row of a (m x n) scaled by the matching entry of weights (m x 1).
Tensor scale_rows(const Tensor& a, const Tensor& weights);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// Row-wise.
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor repeat_rows(const Tensor& row, std::size_t n);
Tensor transpose(const Tensor& a);
// Gathers rows of table (V x d) into a (ids.size() x d) matrix.
Tensor embed(const Tensor& table, std::span<const std::size_t> ids);
// Column means: (m x n) -> (1 x n).
Tensor mean_rows(const Tensor& a);
Tensor sum(const Tensor& a);
// Largest entry as a 1 x 1 tensor; the gradient goes to the first maximum.
Tensor max_all(const Tensor& a);
// mask (m x 1, constant 0/1): row i = mask_i ? next_i : prev_i.
Tensor blend_rows(const Tensor& next, const Tensor& prev, std::span<const double> mask);

// -log softmax(logits)[target] for a 1 x n logit row.
Tensor cross_entropy(const Tensor& logits, std::size_t target);
// -sum_k target_k log softmax(logits)_k for a 1 x n logit row.
Tensor soft_cross_entropy(const Tensor& logits, std::span<const double> target);

struct LstmWeights {
  Tensor input;      // in x 4h, gate order i f o g
  Tensor recurrent;  // h x 4h
  Tensor bias;       // 1 x 4h
  std::size_t hidden() const { return recurrent.rows(); }
};

struct LstmState {
  Tensor h;
  Tensor c;
};

// One step of the standard 4-gate LSTM for a batch of B rows.
LstmState lstm_step(const Tensor& x, const LstmState& prev, const LstmWeights& w);

// Bidirectional LSTM over a padded batch: inputs[t] is B x in, and row b is
// read only while t < lengths[b] (every length >= 1). Returns the final
// forward and backward states side by side (B x 2h).
Tensor bilstm_final(const std::vector<Tensor>& inputs, std::span<const std::size_t> lengths,
                    const LstmWeights& fwd, const LstmWeights& bwd);

// Bidirectional LSTM over one sequence given as the rows of x (L x in);
// row t of the result is [forward h_t, backward h_t] (L x 2h).
Tensor bilstm_sequence(const Tensor& x, const LstmWeights& fwd, const LstmWeights& bwd);

// ---- differentiation -------------------------------------------------------

// Accumulates d loss / d t into every reachable tensor that requires grad.
// Throws ContractViolation when loss is not 1 x 1.
void backward(const Tensor& loss);

// Max over all entries of |analytic - numeric| / max(|analytic|, |numeric|, floor),
// numeric by central differences with step eps. The floor is 1e-6 * max(1, |f|),
// below which the difference quotient is dominated by roundoff. fn must
// rebuild its graph from the given tensors on every call.
double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                  double eps = 1e-5);

}  // namespace nl2sql::ag
