#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "labeldiff/autograd.hpp"
#include "labeldiff/errors.hpp"

using namespace labeldiff;
using ag::Var;

namespace {

Var random_param(ag::Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(ag::shape_size(shape));
  for (double& x : v) x = scale * standard_normal(rng);
  return Var::parameter(std::move(shape), std::move(v));
}

Var random_const(ag::Shape shape, Rng& rng) {
  std::vector<double> v(ag::shape_size(shape));
  for (double& x : v) x = standard_normal(rng);
  return Var::constant(std::move(shape), std::move(v));
}

// Scalar probe of an op output: mse against a fixed random target.
std::function<Var()> probe(std::function<Var()> op, Rng& rng) {
  const Var out = op();
  const Var target = random_const(out.shape(), rng);
  return [op, target] { return ag::mse(op(), target); };
}

void expect_gradients(const std::vector<testing::NamedVar>& params, const std::function<Var()>& loss) {
  for (const auto& e : testing::gradient_check(params, loss)) {
    INFO(e.name);
    CHECK(e.relative <= 1e-6);
  }
}

}  // namespace

TEST_CASE("row_gemm matches a naive product and is row-independent") {
  Rng rng(1);
  for (auto [m, n, k] : {std::tuple{1, 1, 1}, std::tuple{5, 7, 3}, std::tuple{9, 33, 70}, std::tuple{16, 64, 288}}) {
    std::vector<double> a(m * k), b(k * n), c(m * n);
    for (double& x : a) x = standard_normal(rng);
    for (double& x : b) x = standard_normal(rng);
    ag::row_gemm(m, n, k, a.data(), b.data(), c.data());
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int q = 0; q < k; ++q) s += a[i * k + q] * b[q * n + j];
        CHECK(c[i * n + j] == doctest::Approx(s).epsilon(1e-12));
      }
      std::vector<double> single(n);
      ag::row_gemm(1, n, k, a.data() + i * k, b.data(), single.data());
      for (int j = 0; j < n; ++j) CHECK(single[j] == c[i * n + j]);
    }
  }
}

TEST_CASE("elementwise and matrix op gradients") {
  Rng rng(2);
  const Var x = random_param({3, 4}, rng);
  const Var y = random_param({3, 4}, rng);
  const Var w = random_param({4, 5}, rng);
  const Var b = random_param({5}, rng);
  expect_gradients({{"x", x}, {"y", y}}, probe([=] { return ag::add(ag::scale(x, 0.7), y); }, rng));
  expect_gradients({{"x", x}}, probe([=] { return ag::silu(x); }, rng));
  expect_gradients({{"x", x}, {"w", w}, {"b", b}}, probe([=] { return ag::linear(x, w, b); }, rng));
  expect_gradients({{"x", x}, {"w", w}}, probe([=] { return ag::matmul(x, w); }, rng));
  expect_gradients({{"x", x}}, probe([=] { return ag::softmax_last(x); }, rng));
}

TEST_CASE("convolution gradients") {
  Rng rng(3);
  const Var x = random_param({2, 5, 6, 3}, rng);
  const Var w3 = random_param({27, 4}, rng, 0.3);
  const Var b = random_param({4}, rng);
  const Var w1 = random_param({3, 4}, rng, 0.3);
  expect_gradients({{"x", x}, {"w", w3}, {"b", b}}, probe([=] { return ag::conv2d(x, w3, b, 3, 1, 1); }, rng));
  expect_gradients({{"x", x}, {"w", w3}, {"b", b}}, probe([=] { return ag::conv2d(x, w3, b, 3, 2, 1); }, rng));
  expect_gradients({{"x", x}, {"w", w1}, {"b", b}}, probe([=] { return ag::conv2d(x, w1, b, 1, 1, 0); }, rng));
  CHECK(ag::conv2d(x, w3, b, 3, 2, 1).shape() == ag::Shape{2, 3, 3, 4});
  CHECK_THROWS_AS(ag::conv2d(x, w1, b, 3, 1, 1), ShapeError);
}

TEST_CASE("normalization gradients") {
  Rng rng(4);
  const Var x = random_param({2, 3, 3, 8}, rng);
  const Var gamma = random_param({8}, rng);
  const Var beta = random_param({8}, rng);
  expect_gradients({{"x", x}, {"gamma", gamma}, {"beta", beta}},
                   probe([=] { return ag::group_norm(x, gamma, beta, 4); }, rng));
  const Var t = random_param({2, 5, 8}, rng);
  expect_gradients({{"x", t}, {"gamma", gamma}, {"beta", beta}},
                   probe([=] { return ag::layer_norm(t, gamma, beta); }, rng));
}

TEST_CASE("shape op gradients") {
  Rng rng(5);
  const Var a = random_param({2, 3, 4}, rng);
  const Var b = random_param({2, 2, 4}, rng);
  const Var c = random_param({2, 3, 5}, rng);
  const Var v = random_param({2, 4}, rng);
  expect_gradients({{"a", a}, {"b", b}}, probe([=] { return ag::concat_tokens(a, b); }, rng));
  expect_gradients({{"a", a}}, probe([=] { return ag::slice_tokens(a, 1, 2); }, rng));
  expect_gradients({{"a", a}, {"c", c}}, probe([=] { return ag::concat_last(a, c); }, rng));
  expect_gradients({{"c", c}}, probe([=] { return ag::slice_last(c, 2, 3); }, rng));
  expect_gradients({{"a", a}, {"v", v}}, probe([=] { return ag::add_per_sample(a, v); }, rng));
  const Var a2 = random_param({1, 3, 4}, rng);
  expect_gradients({{"a", a}, {"a2", a2}}, probe([=] { return ag::stack({a, a2}); }, rng));
  CHECK_THROWS_AS(ag::stack({a, b}), ShapeError);
  expect_gradients({{"a", a}}, probe([=] { return ag::reshape(a, {6, 4}); }, rng));
  const Var img = random_param({1, 2, 3, 2}, rng);
  expect_gradients({{"img", img}}, probe([=] { return ag::upsample_nearest2(img); }, rng));
  CHECK(ag::upsample_nearest2(img).shape() == ag::Shape{1, 4, 6, 2});
}

TEST_CASE("batched products, embedding and losses") {
  Rng rng(6);
  const Var a = random_param({2, 3, 4}, rng);
  const Var b = random_param({2, 4, 5}, rng);
  const Var bt = random_param({2, 5, 4}, rng);
  expect_gradients({{"a", a}, {"b", b}}, probe([=] { return ag::bmm(a, b); }, rng));
  expect_gradients({{"a", a}, {"bt", bt}}, probe([=] { return ag::bmm_nt(a, bt); }, rng));
  const Var table = random_param({6, 3}, rng);
  const std::vector<int> ids{1, 4, 4};
  expect_gradients({{"table", table}}, probe([=] { return ag::embedding_mean(table, ids); }, rng));
  const Var logits = random_param({2, 4, 4, 1}, rng);
  std::vector<double> bits(32);
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = i % 3 == 0 ? 1.0 : 0.0;
  const Var target = Var::constant({2, 4, 4, 1}, bits);
  expect_gradients({{"logits", logits}}, [=] { return ag::bce_with_logits(logits, target); });
}

TEST_CASE("softmax over one element is identically one") {
  Rng rng(7);
  const Var x = random_param({4, 1}, rng, 10.0);
  const Var y = ag::softmax_last(x);
  for (double v : y.value()) CHECK(v == 1.0);
}

TEST_CASE("no-grad guard records nothing") {
  Rng rng(8);
  const Var x = random_param({2, 2}, rng);
  {
    ag::NoGradGuard guard;
    CHECK_FALSE(ag::grad_enabled());
    const Var y = ag::silu(x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(ag::grad_enabled());
  CHECK(ag::silu(x).requires_grad());
}

TEST_CASE("gradients accumulate across backward calls until cleared") {
  Var x = Var::parameter({1}, {2.0});
  ag::backward(ag::mse(x, Var::constant({1}, {0.0})));
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  ag::backward(ag::mse(x, Var::constant({1}, {0.0})));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK((x.grad().empty() || x.grad()[0] == 0.0));
}
