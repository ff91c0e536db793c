#include "nl2sql/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "nl2sql/errors.hpp"

namespace nl2sql::ag {

Tensor& ParameterStore::insert(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ContractViolation("parameter registered twice: " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

Tensor& ParameterStore::add_uniform(const std::string& name, std::size_t rows,
                                    std::size_t cols, double range) {
  std::uniform_real_distribution<double> dist(-range, range);
  std::vector<double> data(rows * cols);
  for (double& v : data) v = dist(rng_);
  return insert(name, Tensor::from(rows, cols, std::move(data), true));
}

Tensor& ParameterStore::add_constant(const std::string& name, std::size_t rows,
                                     std::size_t cols, double fill) {
  return insert(name, Tensor::from(rows, cols, std::vector<double>(rows * cols, fill), true));
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter " + name);
  return entries_[it->second].second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("unknown parameter " + name);
  return entries_[it->second].second;
}

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void sgd_step(std::vector<Tensor>& params, double lr) {
  for (auto& p : params) {
    if (!p.has_grad()) throw ContractViolation("sgd_step on a tensor without gradient");
    auto& data = p.mutable_data();
    const auto& g = p.node()->grad;
    for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr * g[i];
  }
}

void Adam::step(const ParameterStore& params) {
  auto tensors = params.tensors();
  step(tensors);
}

void Adam::step(std::vector<Tensor>& params) {
  for (const auto& p : params) {
    if (!p.has_grad()) throw ContractViolation("adam step on a tensor without gradient");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& p : params) {
    auto& st = state_[p.node().get()];
    auto& data = p.mutable_data();
    const auto& g = p.node()->grad;
    if (st.m.size() != data.size()) {
      st.m.assign(data.size(), 0.0);
      st.v.assign(data.size(), 0.0);
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g[i];
      st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = st.m[i] / c1;
      const double vhat = st.v[i] / c2;
      data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

namespace {

constexpr char kMagic[8] = {'N', 'L', '2', 'S', 'Q', 'L', 'C', 'K'};

template <class T>
void write_le(std::ostream& out, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host expected");
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw ParseError("checkpoint truncated");
  return value;
}

}  // namespace

void save_checkpoint(const ParameterStore& params, const nlohmann::json& meta,
                     const std::filesystem::path& path) {
  nlohmann::json header;
  header["meta"] = meta;
  header["params"] = nlohmann::json::array();
  for (const auto& [name, t] : params.entries()) {
    header["params"].push_back({{"name", name}, {"shape", {t.rows(), t.cols()}}});
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  write_le<std::uint32_t>(out, kCheckpointVersion);
  write_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, t] : params.entries()) {
    for (double v : t.data()) write_le<double>(out, v);
  }
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(path.string() + " is not a checkpoint");
  }
  const auto version = read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = read_le<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError("checkpoint header truncated");
  Checkpoint ck;
  nlohmann::json header = nlohmann::json::parse(text);
  ck.meta = header.at("meta");
  for (const auto& p : header.at("params")) {
    const std::size_t r = p.at("shape")[0].get<std::size_t>();
    const std::size_t c = p.at("shape")[1].get<std::size_t>();
    std::vector<double> data(r * c);
    for (double& v : data) v = read_le<double>(in);
    ck.tensors.emplace_back(p.at("name").get<std::string>(), std::move(data));
    ck.shapes.emplace_back(r, c);
  }
  return ck;
}

void load_into(ParameterStore& params, const Checkpoint& ckpt) {
  if (ckpt.tensors.size() != params.entries().size()) {
    throw ParseError("checkpoint has " + std::to_string(ckpt.tensors.size()) +
                     " tensors, model expects " + std::to_string(params.entries().size()));
  }
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    const auto& [name, data] = ckpt.tensors[i];
    Tensor& t = params.get(name);
    if (t.rows() != ckpt.shapes[i].first || t.cols() != ckpt.shapes[i].second) {
      throw ParseError("checkpoint tensor " + name + " has the wrong shape");
    }
    t.mutable_data() = data;
  }
}

}  // namespace nl2sql::ag
