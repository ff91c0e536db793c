#include "nl2sql/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "nl2sql/errors.hpp"

namespace nl2sql::ag {

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::constant(std::size_t rows, std::size_t cols, double fill) {
  return from(rows, cols, std::vector<double>(rows * cols, fill));
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> data,
                    bool requires_grad) {
  if (data.size() != rows * cols) {
    throw ShapeError("tensor data of length " + std::to_string(data.size()) +
                     " does not fill shape [" + std::to_string(rows) + ", " +
                     std::to_string(cols) + "]");
  }
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::row(std::vector<double> data, bool requires_grad) {
  std::size_t n = data.size();
  return from(1, n, std::move(data), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from(1, 1, {v}, requires_grad);
}

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows()) + ", " + std::to_string(cols()) + "]";
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string());
  return node_->value[0];
}

std::vector<double> Tensor::grad() const {
  if (has_grad()) return node_->grad;
  return std::vector<double>(size(), 0.0);
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

Tensor Tensor::detach() const { return from(rows(), cols(), data(), false); }

Tensor make_result(std::size_t rows, std::size_t cols, std::vector<double> value,
                   std::vector<Tensor> inputs, const char* op_name) {
  for (double v : value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite output from ") + op_name);
    }
  }
  auto node = std::make_shared<Node>();
  node->rows = rows;
  node->cols = cols;
  node->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_);
  }
  return Tensor(std::move(node));
}

namespace {

[[noreturn]] void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() +
                   " and " + b.shape_string());
}

bool tracked(const Tensor& t) { return t.requires_grad(); }

// Gradient buffer of parent i, or nullptr when that parent is a constant.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p->requires_grad) return nullptr;
  return &p->ensure_grad();
}

template <class F>
Tensor unary_map(const Tensor& a, const char* name, F f) {
  std::vector<double> out(a.size());
  const auto& x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(a.rows(), a.cols(), std::move(out), {a}, name);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(m * n, 0.0);
  const double* A = a.data().data();
  const double* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  Tensor r = make_result(m, n, std::move(out), {a, b}, "matmul");
  if (tracked(r)) {
    r.node()->backward_fn = [m, k, n](Node& self) {
      const auto& g = self.grad;
      const auto& A = self.parents[0]->value;
      const auto& B = self.parents[1]->value;
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            const double* grow = g.data() + i * n;
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            (*ga)[i * k + p] += acc;
          }
        }
      }
      if (auto* gb = parent_grad(self, 1)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            double* gbrow = gb->data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    };
  }
  return r;
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  Tensor r = make_result(a.rows(), a.cols(), std::move(out), {a, b}, "add");
  if (tracked(r)) {
    r.node()->backward_fn = [](Node& self) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (auto* gp = parent_grad(self, p)) {
          for (std::size_t i = 0; i < self.grad.size(); ++i) (*gp)[i] += self.grad[i];
        }
      }
    };
  }
  return r;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  Tensor r = make_result(a.rows(), a.cols(), std::move(out), {a, b}, "sub");
  if (tracked(r)) {
    r.node()->backward_fn = [](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
      }
      if (auto* gb = parent_grad(self, 1)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] -= self.grad[i];
      }
    };
  }
  return r;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_mismatch("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  Tensor r = make_result(a.rows(), a.cols(), std::move(out), {a, b}, "mul");
  if (tracked(r)) {
    r.node()->backward_fn = [](Node& self) {
      const auto& x = self.parents[0]->value;
      const auto& y = self.parents[1]->value;
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * y[i];
      }
      if (auto* gb = parent_grad(self, 1)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*gb)[i] += self.grad[i] * x[i];
      }
    };
  }
  return r;
}

Tensor scale(const Tensor& a, double s) {
  Tensor r = unary_map(a, "scale", [s](double x) { return x * s; });
  if (tracked(r)) {
    r.node()->backward_fn = [s](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i] * s;
      }
    };
  }
  return r;
}

Tensor add_row(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) shape_mismatch("add_row", a, bias);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.data());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bias.data()[j];
  }
  Tensor r = make_result(m, n, std::move(out), {a, bias}, "add_row");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[i] += self.grad[i];
      }
      if (auto* gb = parent_grad(self, 1)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) (*gb)[j] += self.grad[i * n + j];
        }
      }
    };
  }
  return r;
}

Tensor scale_rows(const Tensor& a, const Tensor& weights) {
  if (weights.rows() != a.rows() || weights.cols() != 1) shape_mismatch("scale_rows", a, weights);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a.data()[i * n + j] * weights.data()[i];
  }
  Tensor r = make_result(m, n, std::move(out), {a, weights}, "scale_rows");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n](Node& self) {
      const auto& x = self.parents[0]->value;
      const auto& w = self.parents[1]->value;
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[i * n + j] * w[i];
        }
      }
      if (auto* gw = parent_grad(self, 1)) {
        for (std::size_t i = 0; i < m; ++i) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += self.grad[i * n + j] * x[i * n + j];
          (*gw)[i] += acc;
        }
      }
    };
  }
  return r;
}

Tensor tanh(const Tensor& a) {
  Tensor r = unary_map(a, "tanh", [](double x) { return std::tanh(x); });
  if (tracked(r)) {
    r.node()->backward_fn = [](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double y = self.value[i];
          (*ga)[i] += self.grad[i] * (1.0 - y * y);
        }
      }
    };
  }
  return r;
}

Tensor sigmoid(const Tensor& a) {
  Tensor r = unary_map(a, "sigmoid", [](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  if (tracked(r)) {
    r.node()->backward_fn = [](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double y = self.value[i];
          (*ga)[i] += self.grad[i] * y * (1.0 - y);
        }
      }
    };
  }
  return r;
}

namespace {

void softmax_row(const double* x, double* out, std::size_t n) {
  double mx = x[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(x[j] - mx);
    z += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= z;
}

}  // namespace

Tensor softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw ShapeError("softmax over an empty axis");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) softmax_row(a.data().data() + i * n, out.data() + i * n, n);
  Tensor r = make_result(m, n, std::move(out), {a}, "softmax");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* y = self.value.data() + i * n;
          const double* g = self.grad.data() + i * n;
          double dot = 0.0;
          for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
          for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += y[j] * (g[j] - dot);
        }
      }
    };
  }
  return r;
}

Tensor log_softmax(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (n == 0) throw ShapeError("log_softmax over an empty axis");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < m; ++i) {
    const double* x = a.data().data() + i * n;
    double mx = x[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = x[j] - lz;
  }
  Tensor r = make_result(m, n, std::move(out), {a}, "log_softmax");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* y = self.value.data() + i * n;
          const double* g = self.grad.data() + i * n;
          double gs = 0.0;
          for (std::size_t j = 0; j < n; ++j) gs += g[j];
          for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += g[j] - std::exp(y[j]) * gs;
        }
      }
    };
  }
  return r;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.rows() != m) shape_mismatch("concat_cols", parts[0], p);
    offsets.push_back(n);
    n += p.cols();
  }
  std::vector<double> out(m * n);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const std::size_t pc = parts[k].cols();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(parts[k].data().data() + i * pc, pc, out.data() + i * n + offsets[k]);
    }
  }
  Tensor r = make_result(m, n, std::move(out), parts, "concat_cols");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n, offsets](Node& self) {
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        if (auto* gp = parent_grad(self, k)) {
          const std::size_t pc = self.parents[k]->cols;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < pc; ++j) {
              (*gp)[i * pc + j] += self.grad[i * n + offsets[k] + j];
            }
          }
        }
      }
    };
  }
  return r;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) shape_mismatch("concat_rows", parts[0], p);
    m += p.rows();
  }
  std::vector<double> out;
  out.reserve(m * n);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor r = make_result(m, n, std::move(out), parts, "concat_rows");
  if (tracked(r)) {
    r.node()->backward_fn = [](Node& self) {
      std::size_t offset = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        const std::size_t len = self.parents[k]->value.size();
        if (auto* gp = parent_grad(self, k)) {
          for (std::size_t i = 0; i < len; ++i) (*gp)[i] += self.grad[offset + i];
        }
        offset += len;
      }
    };
  }
  return r;
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.cols()) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + a.shape_string());
  }
  const std::size_t m = a.rows(), n = a.cols(), w = end - begin;
  std::vector<double> out(m * w);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().data() + i * n + begin, w, out.data() + i * w);
  }
  Tensor r = make_result(m, w, std::move(out), {a}, "slice_cols");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n, w, begin](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) (*ga)[i * n + begin + j] += self.grad[i * w + j];
        }
      }
    };
  }
  return r;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (begin > end || end > a.rows()) {
    throw ShapeError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + a.shape_string());
  }
  const std::size_t n = a.cols();
  std::vector<double> out(a.data().begin() + begin * n, a.data().begin() + end * n);
  Tensor r = make_result(end - begin, n, std::move(out), {a}, "slice_rows");
  if (tracked(r)) {
    r.node()->backward_fn = [n, begin](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < self.grad.size(); ++i) (*ga)[begin * n + i] += self.grad[i];
      }
    };
  }
  return r;
}

Tensor repeat_rows(const Tensor& row, std::size_t n) {
  if (row.rows() != 1) throw ShapeError("repeat_rows expects a row, got " + row.shape_string());
  const std::size_t c = row.cols();
  std::vector<double> out;
  out.reserve(n * c);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), row.data().begin(), row.data().end());
  Tensor r = make_result(n, c, std::move(out), {row}, "repeat_rows");
  if (tracked(r)) {
    r.node()->backward_fn = [n, c](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t j = 0; j < c; ++j) (*ga)[j] += self.grad[i * c + j];
        }
      }
    };
  }
  return r;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  }
  Tensor r = make_result(n, m, std::move(out), {a}, "transpose");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j * m + i];
        }
      }
    };
  }
  return r;
}

Tensor embed(const Tensor& table, std::span<const std::size_t> ids) {
  const std::size_t d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= table.rows()) {
      throw ShapeError("embed: id " + std::to_string(ids[i]) + " outside table " +
                       table.shape_string());
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  Tensor r = make_result(ids.size(), d, std::move(out), {table}, "embed");
  if (tracked(r)) {
    std::vector<std::size_t> idx(ids.begin(), ids.end());
    r.node()->backward_fn = [idx = std::move(idx), d](Node& self) {
      if (auto* gt = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t j = 0; j < d; ++j) (*gt)[idx[i] * d + j] += self.grad[i * d + j];
        }
      }
    };
  }
  return r;
}

Tensor mean_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw ShapeError("mean_rows of an empty tensor");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
  }
  for (double& v : out) v /= static_cast<double>(m);
  Tensor r = make_result(1, n, std::move(out), {a}, "mean_rows");
  if (tracked(r)) {
    r.node()->backward_fn = [m, n](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        const double inv = 1.0 / static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < n; ++j) (*ga)[i * n + j] += self.grad[j] * inv;
        }
      }
    };
  }
  return r;
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  Tensor r = make_result(1, 1, {acc}, {a}, "sum");
  if (tracked(r)) {
    r.node()->backward_fn = [](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (double& g : *ga) g += self.grad[0];
      }
    };
  }
  return r;
}

Tensor max_all(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("max_all of an empty tensor");
  std::size_t best = 0;
  for (std::size_t i = 1; i < a.size(); ++i) {
    if (a.data()[i] > a.data()[best]) best = i;
  }
  Tensor r = make_result(1, 1, {a.data()[best]}, {a}, "max_all");
  if (tracked(r)) {
    r.node()->backward_fn = [best](Node& self) {
      if (auto* ga = parent_grad(self, 0)) (*ga)[best] += self.grad[0];
    };
  }
  return r;
}

Tensor blend_rows(const Tensor& next, const Tensor& prev, std::span<const double> mask) {
  if (next.shape() != prev.shape()) shape_mismatch("blend_rows", next, prev);
  if (mask.size() != next.rows()) {
    throw ShapeError("blend_rows: mask of length " + std::to_string(mask.size()) +
                     " for " + next.shape_string());
  }
  const std::size_t m = next.rows(), n = next.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const auto& src = mask[i] != 0.0 ? next.data() : prev.data();
    std::copy_n(src.data() + i * n, n, out.data() + i * n);
  }
  Tensor r = make_result(m, n, std::move(out), {next, prev}, "blend_rows");
  if (tracked(r)) {
    std::vector<double> keep(mask.begin(), mask.end());
    r.node()->backward_fn = [keep = std::move(keep), n](Node& self) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (auto* gp = parent_grad(self, p)) {
          for (std::size_t i = 0; i < keep.size(); ++i) {
            if ((keep[i] != 0.0) != (p == 0)) continue;
            for (std::size_t j = 0; j < n; ++j) (*gp)[i * n + j] += self.grad[i * n + j];
          }
        }
      }
    };
  }
  return r;
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  if (logits.rows() != 1 || target >= logits.cols()) {
    throw ShapeError("cross_entropy: target " + std::to_string(target) + " for logits " +
                     logits.shape_string());
  }
  std::vector<double> onehot(logits.cols(), 0.0);
  onehot[target] = 1.0;
  return soft_cross_entropy(logits, onehot);
}

Tensor soft_cross_entropy(const Tensor& logits, std::span<const double> target) {
  if (logits.rows() != 1 || target.size() != logits.cols()) {
    throw ShapeError("soft_cross_entropy: target of length " + std::to_string(target.size()) +
                     " for logits " + logits.shape_string());
  }
  const std::size_t n = logits.cols();
  std::vector<double> p(n);
  softmax_row(logits.data().data(), p.data(), n);
  const double* x = logits.data().data();
  double mx = *std::max_element(x, x + n);
  double z = 0.0;
  for (std::size_t j = 0; j < n; ++j) z += std::exp(x[j] - mx);
  const double lz = mx + std::log(z);
  double loss = 0.0;
  double mass = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    if (target[j] != 0.0) loss -= target[j] * (x[j] - lz);
    mass += target[j];
  }
  Tensor r = make_result(1, 1, {loss}, {logits}, "cross_entropy");
  if (tracked(r)) {
    std::vector<double> t(target.begin(), target.end());
    r.node()->backward_fn = [p = std::move(p), t = std::move(t), mass](Node& self) {
      if (auto* ga = parent_grad(self, 0)) {
        for (std::size_t j = 0; j < p.size(); ++j) {
          (*ga)[j] += self.grad[0] * (mass * p[j] - t[j]);
        }
      }
    };
  }
  return r;
}

LstmState lstm_step(const Tensor& x, const LstmState& prev, const LstmWeights& w) {
  const std::size_t h = w.hidden();
  if (w.input.cols() != 4 * h || w.bias.cols() != 4 * h) {
    throw ShapeError("lstm_step: gate width mismatch, input " + w.input.shape_string() +
                     " recurrent " + w.recurrent.shape_string());
  }
  Tensor gates = add_row(add(matmul(x, w.input), matmul(prev.h, w.recurrent)), w.bias);
  Tensor i = sigmoid(slice_cols(gates, 0, h));
  Tensor f = sigmoid(slice_cols(gates, h, 2 * h));
  Tensor o = sigmoid(slice_cols(gates, 2 * h, 3 * h));
  Tensor g = tanh(slice_cols(gates, 3 * h, 4 * h));
  Tensor c = add(mul(f, prev.c), mul(i, g));
  Tensor hn = mul(o, tanh(c));
  return {hn, c};
}

namespace {

LstmState zero_state(std::size_t batch, std::size_t hidden) {
  return {Tensor::zeros(batch, hidden), Tensor::zeros(batch, hidden)};
}

}  // namespace

Tensor bilstm_final(const std::vector<Tensor>& inputs, std::span<const std::size_t> lengths,
                    const LstmWeights& fwd, const LstmWeights& bwd) {
  if (inputs.empty()) throw ShapeError("bilstm_final: empty input sequence");
  const std::size_t batch = lengths.size();
  for (const auto& x : inputs) {
    if (x.rows() != batch) {
      throw ShapeError("bilstm_final: step of shape " + x.shape_string() + " for batch of " +
                       std::to_string(batch));
    }
  }
  const std::size_t steps = inputs.size();
  std::vector<double> mask(batch);
  auto run = [&](const LstmWeights& w, bool reverse) {
    LstmState s = zero_state(batch, w.hidden());
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = reverse ? steps - 1 - k : k;
      bool all = true;
      for (std::size_t b = 0; b < batch; ++b) {
        mask[b] = t < lengths[b] ? 1.0 : 0.0;
        all = all && mask[b] == 1.0;
      }
      LstmState next = lstm_step(inputs[t], s, w);
      if (all) {
        s = next;
      } else {
        s = {blend_rows(next.h, s.h, mask), blend_rows(next.c, s.c, mask)};
      }
    }
    return s.h;
  };
  return concat_cols({run(fwd, false), run(bwd, true)});
}

Tensor bilstm_sequence(const Tensor& x, const LstmWeights& fwd, const LstmWeights& bwd) {
  const std::size_t len = x.rows();
  std::vector<Tensor> f(len), b(len);
  LstmState s = zero_state(1, fwd.hidden());
  for (std::size_t t = 0; t < len; ++t) {
    s = lstm_step(slice_rows(x, t, t + 1), s, fwd);
    f[t] = s.h;
  }
  s = zero_state(1, bwd.hidden());
  for (std::size_t t = len; t-- > 0;) {
    s = lstm_step(slice_rows(x, t, t + 1), s, bwd);
    b[t] = s.h;
  }
  return concat_cols({concat_rows(f), concat_rows(b)});
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractViolation("backward() needs a scalar loss, got " +
                            (loss.defined() ? loss.shape_string() : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

double grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params, double eps) {
  for (auto& p : params) p.zero_grad();
  const Tensor y = fn();
  backward(y);
  const double floor = 1e-6 * std::max(1.0, std::fabs(y.item()));
  double worst = 0.0;
  for (auto& p : params) {
    const auto analytic = p.grad();
    auto& data = p.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = fn().item();
      data[i] = saved - eps;
      const double down = fn().item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
      worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace nl2sql::ag
