#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "repro/autodiff/tensor.hpp"
#include "repro/util/rng.hpp"

namespace repro::ad {

/// A named trainable tensor. Frozen parameters have requires_grad == false and
/// are skipped by every optimizer step.
struct Parameter {
  std::string name;
  Tensor tensor;
  bool frozen = false;

  void freeze();
  void unfreeze();
};

/// Ordered set of uniquely named parameters. Element addresses are stable.
class ParameterStore {
 public:
  /// Registers a zero-initialized parameter; throws UsageError on duplicate names.
  Tensor add(const std::string& name, Shape shape);
  /// Registers a parameter with N(0, stddev^2) entries.
  Tensor add_normal(const std::string& name, Shape shape, double stddev, Rng& rng);
  /// Kaiming-uniform style init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  Tensor add_uniform_fan_in(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);

  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  /// Drops a parameter; invalidates pointers from trainable().
  void remove(const std::string& name);

  std::deque<Parameter>& all() { return params_; }
  const std::deque<Parameter>& all() const { return params_; }

  void freeze_all();
  void unfreeze_all();
  void zero_grad();

  std::vector<Parameter*> trainable();
  std::size_t count_scalars(bool trainable_only) const;

  /// Appends every parameter of `other` under `prefix` (handles are shared).
  void adopt(const ParameterStore& other, const std::string& prefix);

 private:
  std::deque<Parameter> params_;
};

/// Copies of parameter values keyed by position; used for best-epoch snapshots.
struct ParameterSnapshot {
  std::vector<std::vector<float>> values;

  static ParameterSnapshot capture(const std::vector<Parameter*>& params);
  void restore(const std::vector<Parameter*>& params) const;
  std::vector<std::uint8_t> bytes() const;
};

}  // namespace repro::ad
