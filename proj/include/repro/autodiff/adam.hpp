#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "repro/autodiff/parameter.hpp"

namespace repro::ad {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are bound to parameters by
/// position in the list passed to the first step.
class Adam {
 public:
  explicit Adam(AdamOptions options);

  /// One update over `params`. Frozen entries are ignored; a non-frozen entry
  /// without a gradient raises ContractViolation. Gradients are cleared after
  /// the update.
  void step(std::span<Parameter* const> params);

  std::uint64_t step_count() const { return step_count_; }
  const AdamOptions& options() const { return options_; }
  void set_lr(double lr) { options_.lr = lr; }

 private:
  AdamOptions options_;
  std::uint64_t step_count_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

}  // namespace repro::ad
