#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "nl2sql/tensor.hpp"

namespace nl2sql::ag {

// Owns every trainable tensor under a unique name, in registration order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed = 0) : rng_(seed) {}

  // uniform(-range, range) initialization from the store's seeded stream.
  Tensor& add_uniform(const std::string& name, std::size_t rows, std::size_t cols,
                      double range = 0.08);
  Tensor& add_constant(const std::string& name, std::size_t rows, std::size_t cols,
                       double fill);

  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::size_t scalar_count() const;

  void zero_grad();

 private:
  Tensor& insert(const std::string& name, Tensor t);

  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

// In-place w -= lr * grad. Throws ContractViolation for a tensor with no grad.
void sgd_step(std::vector<Tensor>& params, double lr);

class Adam {
 public:
  Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const ParameterStore& params);
  void step(std::vector<Tensor>& params);
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::map<const Node*, Moments> state_;
};

// Binary checkpoint: "NL2SQLCK", u32 version, u64 header length, JSON header
// ({"meta": ..., "params": [{"name", "shape"}]}), then little-endian doubles.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ParameterStore& params, const nlohmann::json& meta,
                     const std::filesystem::path& path);

struct Checkpoint {
  nlohmann::json meta;
  std::vector<std::pair<std::string, std::vector<double>>> tensors;
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into an already-built store; names and shapes must match.
void load_into(ParameterStore& params, const Checkpoint& ckpt);

}  // namespace nl2sql::ag
