#include "repro/autodiff/adam.hpp"

#include <cmath>

#include "repro/util/errors.hpp"

namespace repro::ad {

Adam::Adam(AdamOptions options) : options_(options) {
  if (!(options_.beta1 > 0.0 && options_.beta1 < 1.0 && options_.beta2 > 0.0 &&
        options_.beta2 < 1.0 && options_.eps > 0.0)) {
    throw UsageError("adam: betas must lie in (0,1) and eps must be positive");
  }
}

void Adam::step(std::span<Parameter* const> params) {
  if (first_.empty()) {
    first_.resize(params.size());
    second_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i].assign(params[i]->tensor.size(), 0.0);
      second_[i].assign(params[i]->tensor.size(), 0.0);
    }
  }
  if (params.size() != first_.size()) {
    throw ContractViolation("adam: parameter list changed between steps");
  }
  for (Parameter* p : params) {
    if (!p->frozen && !p->tensor.has_grad()) {
      throw ContractViolation("adam: trainable parameter '" + p->name + "' has no gradient");
    }
  }
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double c1 = 1.0 - std::pow(options_.beta1, t);
  const double c2 = 1.0 - std::pow(options_.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    if (p.frozen) continue;
    auto values = p.tensor.data();
    auto grad = p.tensor.grad();
    auto& m = first_[i];
    auto& v = second_[i];
    if (m.size() != values.size()) throw ContractViolation("adam: moment/parameter shape mismatch");
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j];
      m[j] = options_.beta1 * m[j] + (1.0 - options_.beta1) * g;
      v[j] = options_.beta2 * v[j] + (1.0 - options_.beta2) * g * g;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      values[j] = static_cast<float>(values[j] - options_.lr * mhat / (std::sqrt(vhat) + options_.eps));
    }
    p.tensor.zero_grad();
  }
}

}  // namespace repro::ad
