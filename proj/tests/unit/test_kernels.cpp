#include <doctest.h>

#include <cmath>
#include <vector>

#include "repro/kernels/gemm.hpp"
#include "repro/kernels/im2col.hpp"
#include "repro/util/rng.hpp"

using namespace repro;
using namespace repro::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1, 1);
  return v;
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("parallel gemm agrees with the serial reference") {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.index(40), n = 1 + rng.index(700), k = 1 + rng.index(40);
    const bool ta = rng.uniform() < 0.5, tb = rng.uniform() < 0.5, acc = rng.uniform() < 0.5;
    auto a = random_vec(m * k, rng), b = random_vec(k * n, rng), c0 = random_vec(m * n, rng);
    auto c1 = c0, c2 = c0;
    gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
    gemm_reference(ta, tb, m, n, k, a.data(), b.data(), c2.data(), acc);
    double worst = 0;
    for (std::size_t i = 0; i < c1.size(); ++i) worst = std::max(worst, std::abs(c1[i] - c2[i]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("gemm handles a known product") {
  const std::vector<float> a = {1, 2, 3, 4, 5, 6};   // 2x3
  const std::vector<float> b = {7, 8, 9, 10, 11, 12};  // 3x2
  std::vector<float> c(4, -1.0f);
  gemm(false, false, 2, 2, 3, a.data(), b.data(), c.data(), false);
  CHECK(c == std::vector<float>{58, 64, 139, 154});
}

TEST_CASE("im2col agrees with the serial reference") {
  Rng rng(12);
  for (int trial = 0; trial < 40; ++trial) {
    ConvGeometry g;
    g.channels = 1 + rng.index(4);
    g.kernel_h = 1 + rng.index(3);
    g.kernel_w = 1 + rng.index(3);
    g.height = g.kernel_h + rng.index(6);
    g.width = g.kernel_w + rng.index(6);
    g.stride = 1 + rng.index(2);
    g.padding = rng.index(2);
    auto img = random_vec(g.channels * g.height * g.width, rng);
    std::vector<double> c1(g.col_rows() * g.col_cols()), c2(c1.size());
    im2col(g, img.data(), c1.data());
    im2col_reference(g, img.data(), c2.data());
    CHECK(c1 == c2);
  }
}

TEST_CASE("col2im is the adjoint of im2col") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    ConvGeometry g{2, 5 + rng.index(3), 4 + rng.index(3), 3, 3, 1 + rng.index(2), rng.index(2)};
    auto x = random_vec(g.channels * g.height * g.width, rng);
    auto y = random_vec(g.col_rows() * g.col_cols(), rng);
    std::vector<double> ax(y.size()), aty(x.size(), 0.0);
    im2col(g, x.data(), ax.data());
    col2im(g, y.data(), aty.data());
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += ax[i] * y[i];
    for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * aty[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
  }
}

}  // TEST_SUITE
