#include <doctest.h>

#include <cmath>
#include <cstring>

#include "repro/autodiff/adam.hpp"
#include "repro/autodiff/ops.hpp"
#include "repro/autodiff/parameter.hpp"
#include "repro/util/errors.hpp"
#include "support/grad_suite.hpp"

using namespace repro;
using namespace repro::ad;
using repro::testing::random_tensor;

namespace {

// Naive 6-loop cross-correlation in double.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                               std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t k = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  std::vector<double> out(n * k * oh * ow);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < k; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t z = 0; z < ow; ++z) {
          double acc = b.data()[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long yy = static_cast<long>(y * stride + u) - static_cast<long>(pad);
                const long zz = static_cast<long>(z * stride + v) - static_cast<long>(pad);
                if (yy < 0 || zz < 0 || yy >= static_cast<long>(h) || zz >= static_cast<long>(wd)) continue;
                acc += static_cast<double>(x.data()[((i * c + ch) * h + yy) * wd + zz]) *
                       w.data()[((o * c + ch) * kh + u) * kw + v];
              }
          out[((i * k + o) * oh + y) * ow + z] = acc;
        }
  return out;
}

Tensor random_float(Shape s, Rng& rng) {
  std::vector<float> v(numel(s));
  for (float& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  return Tensor(std::move(s), std::move(v));
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("conv2d of ones is the window sum") {
  auto x = Tensor::full({1, 1, 3, 3}, 1.0f);
  auto w = Tensor::full({1, 1, 3, 3}, 1.0f);
  auto y = conv2d(x, w, Tensor::zeros({1}), 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 9.0f);
}

TEST_CASE("1x1 identity kernel returns the input") {
  Rng rng(1);
  auto x = random_float({2, 1, 5, 4}, rng);
  auto y = conv2d(x, Tensor::full({1, 1, 1, 1}, 1.0f), Tensor::zeros({1}), 1, 0);
  CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
}

TEST_CASE("conv2d matches the naive nested-loop oracle") {
  Rng rng(2);
  auto x = random_float({2, 3, 8, 8}, rng);
  auto w = random_float({4, 3, 3, 3}, rng);
  auto b = random_float({4}, rng);
  for (std::size_t stride : {1u, 2u}) {
    auto y = conv2d(x, w, b, stride, 1);
    auto ref = naive_conv(x, w, b, stride, 1);
    REQUIRE(y.size() == ref.size());
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y.data()[i] - ref[i]));
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("conv2d shape errors name the axes") {
  auto x = Tensor::zeros({1, 2, 4, 4});
  auto w = Tensor::zeros({3, 1, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, Tensor::zeros({3}), 1, 0), DimensionError);
  auto big = Tensor::zeros({1, 2, 5, 5});
  CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 2, 5, 5}), Tensor(), 1, 0),
                  DimensionError);
  (void)big;
}

TEST_CASE("softmax examples") {
  auto u = softmax(Tensor({1, 3}, {0, 0, 0}));
  for (float p : u.data()) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
  auto s = softmax(Tensor({1, 3}, {1000, 0, -1000}));
  CHECK(s.data()[0] == doctest::Approx(1.0));
  CHECK(s.data()[1] < 1e-30);
  CHECK(std::isfinite(s.data()[2]));
  CHECK_THROWS_AS(softmax(Tensor({1, 2}, {NAN, 0})), NumericError);
}

TEST_CASE("softmax matches an extended-precision oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(5);
    for (double& v : z) v = rng.uniform(-5, 5);
    auto p = softmax(Tensor64({1, 5}, z));
    long double m = *std::max_element(z.begin(), z.end()), sum = 0;
    for (double v : z) sum += std::exp(static_cast<long double>(v) - m);
    for (std::size_t i = 0; i < 5; ++i) {
      const long double ref = std::exp(static_cast<long double>(z[i]) - m) / sum;
      CHECK(std::abs(static_cast<long double>(p.data()[i]) - ref) < 1e-9L);
    }
  }
}

TEST_CASE("softmax rows sum to one for large logits") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    auto x = random_float({3, 7}, rng);
    for (float& v : x.data()) v *= 1000.0f;
    auto p = softmax(x);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(p.data()[r * 7 + j] >= 0.0f);
        s += p.data()[r * 7 + j];
      }
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
  }
}

TEST_CASE("cross entropy examples") {
  const std::vector<int> y0 = {0};
  CHECK(cross_entropy_probs(Tensor({1, 2}, {1, 0}), y0).item() == 0.0f);
  std::vector<float> uniform(10, 0.1f);
  const std::vector<int> y3 = {3};
  CHECK(cross_entropy_probs(Tensor({1, 10}, uniform), y3).item() == doctest::Approx(2.302585).epsilon(1e-6));
  CHECK(cross_entropy(Tensor::zeros({1, 10}), y3).item() == doctest::Approx(2.302585).epsilon(1e-6));

  Rng rng(5);
  auto logits = random_tensor({6, 4}, rng, -2, 2, false);
  std::vector<int> y = {0, 3, 1, 2, 2, 0};
  auto p = softmax(logits);
  double ref = 0;
  for (std::size_t i = 0; i < 6; ++i) ref -= std::log(p.data()[i * 4 + static_cast<std::size_t>(y[i])]);
  ref /= 6;
  CHECK(std::abs(cross_entropy_probs(p, y).item() - ref) < 1e-7);
  CHECK(std::abs(cross_entropy(logits, y).item() - ref) < 1e-7);

  const std::vector<int> bad = {4};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 4}), bad), IndexError);
  const std::vector<int> neg = {-1};
  CHECK_THROWS_AS(cross_entropy_probs(Tensor::full({1, 4}, 0.25f), neg), IndexError);
}

TEST_CASE("backward examples") {
  auto w = Tensor::from({1, 2, 3}, true);
  auto stats = backward(sum_all(mul(w, w)));
  CHECK(stats.nodes_visited > 0);
  CHECK(std::vector<float>(w.grad().begin(), w.grad().end()) == std::vector<float>{2, 4, 6});

  auto c = Tensor::from({1, 2});
  auto loss = sum_all(mul(c, c));
  backward(loss);
  CHECK_FALSE(c.has_grad());

  CHECK_THROWS_AS(backward(mul(w, w)), UsageError);
}

TEST_CASE("gradients accumulate until zeroed and graphs are released") {
  auto w = Tensor::from({1, -2}, true);
  auto loss = sum_all(mul(w, w));
  backward(loss);
  backward(sum_all(mul(w, w)));
  CHECK(w.grad()[0] == 4.0f);
  CHECK(w.grad()[1] == -8.0f);
  CHECK_FALSE(loss.has_node());
  w.zero_grad();
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("tensors without requires_grad never receive gradient") {
  auto a = Tensor::from({1, 2}, true);
  auto b = Tensor::from({3, 4});
  backward(sum_all(mul(a, b)));
  CHECK(a.has_grad());
  CHECK_FALSE(b.has_grad());
}

TEST_CASE("no-grad mode records no graph") {
  auto a = Tensor::from({1, 2}, true);
  NoGradGuard guard;
  auto y = mul(a, a);
  CHECK_FALSE(y.has_node());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("zero-sized axes are rejected") {
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
  CHECK_THROWS_AS(Tensor({2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST_CASE("adam hand-computed first step") {
  ParameterStore store;
  auto p = store.add("p", {1});
  p.data()[0] = 1.0f;
  p.impl().accumulate_grad(std::vector<float>{1.0f});
  Adam adam(AdamOptions{.lr = 0.1});
  auto params = store.trainable();
  adam.step(params);
  // m = 0.1, v = 0.001, mhat = 1, vhat = 1 -> p -= 0.1 * 1 / (1 + 1e-8)
  CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-7));
  CHECK(adam.step_count() == 1);
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("adam with zero gradient leaves the parameter in place") {
  ParameterStore store;
  auto p = store.add("p", {3});
  p.data()[0] = 0.5f;
  Adam adam(AdamOptions{.lr = 0.1});
  auto params = store.trainable();
  for (int i = 0; i < 5; ++i) {
    p.impl().accumulate_grad(std::vector<float>{0, 0, 0});
    adam.step(params);
  }
  CHECK(std::abs(p.data()[0] - 0.5f) < 1e-12);
  CHECK(adam.step_count() == 5);
}

TEST_CASE("adam skips frozen parameters and rejects missing gradients") {
  ParameterStore store;
  auto a = store.add("a", {2});
  auto b = store.add("b", {2});
  a.data()[0] = 1.0f;
  b.data()[0] = 2.0f;
  store.at("b").freeze();
  auto before = std::vector<float>(b.data().begin(), b.data().end());
  b.impl().grad = {1.0f, 1.0f};  // populated despite the freeze
  std::vector<Parameter*> all = {&store.at("a"), &store.at("b")};
  a.impl().accumulate_grad(std::vector<float>{1, 1});
  Adam adam(AdamOptions{.lr = 0.1});
  adam.step(all);
  CHECK(std::memcmp(before.data(), b.data().data(), sizeof(float) * 2) == 0);
  CHECK_THROWS_AS(adam.step(all), ContractViolation);
}

TEST_CASE("freeze totality under repeated steps") {
  Rng rng(6);
  ParameterStore store;
  auto w = store.add_normal("w", {4, 3}, 1.0, rng);
  auto v = store.add_normal("v", {3}, 1.0, rng);
  store.at("w").freeze();
  auto frozen_bytes = ParameterSnapshot::capture({&store.at("w")}).bytes();
  Adam adam(AdamOptions{.lr = 0.05});
  for (int step = 0; step < 20; ++step) {
    auto x = random_float({2, 3}, rng);
    backward(sum_all(linear(x, w, Tensor())) );
    backward(sum_all(mul(v, v)));
    auto params = store.trainable();
    adam.step(params);
  }
  CHECK(ParameterSnapshot::capture({&store.at("w")}).bytes() == frozen_bytes);
}

TEST_CASE("identical seeds and op sequences give bit-identical tensors") {
  auto run = [] {
    Rng rng(7);
    auto x = random_float({3, 5}, rng);
    auto w = random_float({4, 5}, rng);
    auto y = softmax(layer_norm(linear(x, w, Tensor()), Tensor::full({4}, 1.0f), Tensor::zeros({4})));
    return std::vector<float>(y.data().begin(), y.data().end());
  };
  auto a = run(), b = run();
  CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

TEST_CASE("parameter store contracts") {
  Rng rng(8);
  ParameterStore store;
  store.add("x", {2});
  CHECK_THROWS_AS(store.add("x", {2}), UsageError);
  store.add_uniform_fan_in("y", {3, 2}, 2, rng);
  CHECK(store.count_scalars(false) == 8);
  store.at("x").freeze();
  CHECK(store.count_scalars(true) == 6);
  CHECK_FALSE(store.at("x").tensor.requires_grad());
  store.remove("x");
  CHECK_FALSE(store.contains("x"));
  CHECK_THROWS_AS(store.remove("x"), UsageError);
}

TEST_CASE("layout ops") {
  auto x = Tensor({2, 3}, {0, 1, 2, 3, 4, 5});
  auto t = permute(x, {1, 0});
  CHECK(std::vector<float>(t.data().begin(), t.data().end()) == std::vector<float>{0, 3, 1, 4, 2, 5});
  auto s = slice(x, 1, 1, 2);
  CHECK(std::vector<float>(s.data().begin(), s.data().end()) == std::vector<float>{1, 2, 4, 5});
  auto r = resize_end(x, {3, 2});
  CHECK(std::vector<float>(r.data().begin(), r.data().end()) == std::vector<float>{0, 1, 3, 4, 0, 0});
  auto c = concat(std::vector<Tensor>{x, x}, 0);
  CHECK(c.shape() == Shape{4, 3});
  CHECK(argmax_rows(Tensor({2, 3}, {1, 5, 5, 9, 0, 0})) == std::vector<int>{1, 0});
  CHECK_THROWS_AS(reshape(x, {4, 2}), DimensionError);
}

TEST_CASE("finite-difference check of every op (quick pass)") {
  Rng rng(9);
  for (const auto& op : repro::testing::gradient_suite()) {
    CAPTURE(op.op);
    double worst = 0;
    for (int trial = 0; trial < 10; ++trial) worst = std::max(worst, op.run(rng).max_rel_error);
    CHECK(worst < 1e-4);
  }
}

}  // TEST_SUITE
