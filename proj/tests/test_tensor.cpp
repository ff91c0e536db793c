#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "nl2sql/errors.hpp"
#include "nl2sql/grad_suite.hpp"
#include "nl2sql/optim.hpp"
#include "nl2sql/tensor.hpp"

using namespace nl2sql;
using ag::Tensor;

TEST_CASE("forward ops produce standard values") {
  const Tensor a = Tensor::from(2, 2, {1, 2, 3, 4});
  const Tensor b = Tensor::from(2, 2, {5, 6, 7, 8});
  CHECK(ag::matmul(a, b).data() == std::vector<double>{19, 22, 43, 50});
  CHECK(ag::transpose(a).data() == std::vector<double>{1, 3, 2, 4});
  CHECK(ag::mean_rows(a).data() == std::vector<double>{2, 3});
  CHECK(ag::sum(a).item() == 10.0);
  CHECK(ag::max_all(b).item() == 8.0);
  const auto sm = ag::softmax(Tensor::row({0.0, std::log(3.0)})).data();
  CHECK(sm[0] == doctest::Approx(0.25));
  CHECK(sm[1] == doctest::Approx(0.75));
  CHECK(ag::cross_entropy(Tensor::row({0.0, std::log(3.0)}), 1).item() ==
        doctest::Approx(-std::log(0.75)));
  const std::vector<std::size_t> ids = {1, 1, 0};
  CHECK(ag::embed(a, ids).data() == std::vector<double>{3, 4, 3, 4, 1, 2});
  CHECK_THROWS_AS(ag::matmul(a, Tensor::row({1, 2, 3})), ShapeError);
  CHECK_THROWS_AS(ag::add(a, Tensor::row({1, 2})), ShapeError);
}

TEST_CASE("softmax is stable for large logits") {
  const auto p = ag::softmax(Tensor::row({1000.0, 1000.0})).data();
  CHECK(p[0] == doctest::Approx(0.5));
  CHECK(std::isfinite(ag::log_softmax(Tensor::row({-1e4, 0.0})).data()[0]));
}

TEST_CASE("non-finite results raise a numeric error") {
  const Tensor a = Tensor::row({1e300});
  CHECK_THROWS_AS(ag::mul(a, a), NumericError);
}

TEST_CASE("gradient of sum(W x) replicates x") {
  const Tensor w = Tensor::from(2, 3, {1, 2, 3, 4, 5, 6}, true);
  const Tensor x = Tensor::from(3, 1, {0.5, -1.0, 2.0});
  ag::backward(ag::sum(ag::matmul(w, x)));
  CHECK(w.grad() == std::vector<double>{0.5, -1.0, 2.0, 0.5, -1.0, 2.0});
}

TEST_CASE("parameters outside the graph keep a zero gradient") {
  const Tensor used = Tensor::row({1.0, 2.0}, true);
  const Tensor unused = Tensor::row({3.0, 4.0}, true);
  ag::backward(ag::sum(ag::mul(used, used)));
  CHECK(used.grad() == std::vector<double>{2.0, 4.0});
  CHECK(unused.grad() == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(ag::backward(used), ContractViolation);
}

TEST_CASE("gradients accumulate across shared uses") {
  const Tensor x = Tensor::row({3.0}, true);
  ag::backward(ag::add(ag::mul(x, x), ag::scale(x, 2.0)));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("grad_check flags a wrong gradient") {
  const Tensor x = Tensor::row({0.3, -0.7}, true);
  CHECK(ag::grad_check([&] { return ag::sum(ag::tanh(x)); }, {x}) < 1e-6);
  // Detaching hides the dependence from backward but not from the function.
  CHECK(ag::grad_check([&] { return ag::sum(ag::mul(x, x.detach())); }, {x}) > 0.1);
}

TEST_CASE("every op and both value heads pass finite differences") {
  for (const auto& r : run_gradient_suite(7)) {
    INFO(r.name);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("lstm shapes") {
  ag::ParameterStore ps(3);
  ag::LstmWeights w{ps.add_uniform("wx", 5, 8), ps.add_uniform("wh", 2, 8), ps.add_constant("b", 1, 8, 0)};
  ag::LstmWeights v{ps.add_uniform("vx", 5, 8), ps.add_uniform("vh", 2, 8), ps.add_constant("c", 1, 8, 0)};
  const Tensor seq = Tensor::from(4, 5, std::vector<double>(20, 0.1));
  CHECK(ag::bilstm_sequence(seq, w, v).shape() == std::vector<std::size_t>{4, 4});
  const std::vector<Tensor> steps = {Tensor::from(3, 5, std::vector<double>(15, 0.2)),
                                     Tensor::from(3, 5, std::vector<double>(15, -0.2))};
  const std::vector<std::size_t> lengths = {2, 1, 2};
  const Tensor fin = ag::bilstm_final(steps, lengths, w, v);
  CHECK(fin.shape() == std::vector<std::size_t>{3, 4});
  // Rows with equal inputs and lengths produce equal states.
  for (std::size_t c = 0; c < 4; ++c) CHECK(fin.at(0, c) == fin.at(2, c));
}

TEST_CASE("adam and sgd move parameters against the gradient") {
  ag::ParameterStore ps(1);
  Tensor& w = ps.add_constant("w", 1, 2, 1.0);
  ag::Adam adam(0.1);
  for (int i = 0; i < 200; ++i) {
    ps.zero_grad();
    ag::backward(ag::sum(ag::mul(w, w)));
    adam.step(ps);
  }
  CHECK(std::fabs(w.data()[0]) < 0.05);

  ps.zero_grad();
  const auto before = w.data();
  ag::Adam fresh(0.1);
  fresh.step(ps);
  CHECK(w.data() == before);

  Tensor v = Tensor::row({2.0}, true);
  std::vector<Tensor> params = {v};
  CHECK_THROWS_AS(ag::sgd_step(params, 0.1), ContractViolation);
  ag::backward(ag::mul(v, v));
  ag::sgd_step(params, 0.25);
  CHECK(v.data()[0] == doctest::Approx(1.0));
}

TEST_CASE("parameter store initialization is seeded and checkpoints round trip") {
  ag::ParameterStore a(42), b(42), c(43);
  a.add_uniform("w", 3, 3);
  b.add_uniform("w", 3, 3);
  c.add_uniform("w", 3, 3);
  CHECK(a.get("w").data() == b.get("w").data());
  CHECK(a.get("w").data() != c.get("w").data());
  for (double v : a.get("w").data()) CHECK(std::fabs(v) <= 0.08);
  CHECK_THROWS(a.add_uniform("w", 1, 1));

  const auto path = std::filesystem::temp_directory_path() / "nl2sql_test_ckpt.bin";
  ag::save_checkpoint(a, {{"kind", "test"}}, path);
  const auto ck = ag::read_checkpoint(path);
  CHECK(ck.meta.at("kind") == "test");
  ag::load_into(c, ck);
  CHECK(c.get("w").data() == a.get("w").data());
  ag::ParameterStore wrong(1);
  wrong.add_uniform("w", 2, 3);
  CHECK_THROWS(ag::load_into(wrong, ck));
  std::filesystem::remove(path);
}
