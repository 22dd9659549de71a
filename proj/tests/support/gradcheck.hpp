#pragma once

// Test-only finite-difference oracle. Runs entirely in double precision and
// never touches the reverse-mode path it is checking.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "repro/autodiff/ops.hpp"
#include "repro/autodiff/tensor.hpp"
#include "repro/util/rng.hpp"

namespace repro::testing {

using ad::Tensor64;

/// Norm-wise relative error |a-b| / max(|a|, |b|, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-8) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked_tensors = 0;
};

/// Compares reverse-mode gradients of `loss(inputs)` with central differences
/// (step h) for every input tensor that requires grad.
inline GradCheckResult grad_check(const std::function<Tensor64(std::vector<Tensor64>&)>& loss,
                                  std::vector<Tensor64> inputs, double h = 1e-4) {
  for (auto& t : inputs) t.zero_grad();
  ad::backward(loss(inputs));
  GradCheckResult result;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.size(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    std::vector<double> numeric(t.size());
    ad::NoGradGuard guard;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t.data()[i];
      t.data()[i] = saved + h;
      const double fp = loss(inputs).item();
      t.data()[i] = saved - h;
      const double fm = loss(inputs).item();
      t.data()[i] = saved;
      numeric[i] = (fp - fm) / (2 * h);
    }
    result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic, numeric));
    ++result.checked_tensors;
  }
  return result;
}

inline Tensor64 random_tensor(ad::Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                              bool requires_grad = true) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor64(std::move(shape), std::move(v), requires_grad);
}

/// Values bounded away from zero, for ops with a kink there.
inline Tensor64 random_away_from_zero(ad::Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<double> v(ad::numel(shape));
  for (double& x : v) {
    const double m = rng.uniform(0.05, 1.0);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor64(std::move(shape), std::move(v), requires_grad);
}

/// Projects an op output onto a fixed random direction: sum(out * w).
inline Tensor64 project(const Tensor64& out, const Tensor64& weights) {
  return ad::sum_all(ad::mul(out, weights));
}

}  // namespace repro::testing
