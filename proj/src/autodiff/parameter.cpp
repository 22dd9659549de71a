#include "repro/autodiff/parameter.hpp"

#include <cmath>
#include <cstring>

#include "repro/util/errors.hpp"

namespace repro::ad {

void Parameter::freeze() {
  frozen = true;
  tensor.set_requires_grad(false);
}

void Parameter::unfreeze() {
  frozen = false;
  tensor.set_requires_grad(true);
}

Tensor ParameterStore::add(const std::string& name, Shape shape) {
  if (contains(name)) throw UsageError("parameter name '" + name + "' already registered");
  params_.push_back(Parameter{name, Tensor(std::move(shape), true), false});
  return params_.back().tensor;
}

Tensor ParameterStore::add_normal(const std::string& name, Shape shape, double stddev, Rng& rng) {
  Tensor t = add(name, std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

Tensor ParameterStore::add_uniform_fan_in(const std::string& name, Shape shape,
                                          std::size_t fan_in, Rng& rng) {
  Tensor t = add(name, std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
  return t;
}

Parameter& ParameterStore::at(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p;
  }
  throw UsageError("no parameter named '" + name + "'");
}

const Parameter& ParameterStore::at(const std::string& name) const {
  return const_cast<ParameterStore*>(this)->at(name);
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return true;
  }
  return false;
}

void ParameterStore::remove(const std::string& name) {
  for (auto it = params_.begin(); it != params_.end(); ++it) {
    if (it->name == name) {
      params_.erase(it);
      return;
    }
  }
  throw UsageError("no parameter named '" + name + "'");
}

void ParameterStore::freeze_all() {
  for (auto& p : params_) p.freeze();
}

void ParameterStore::unfreeze_all() {
  for (auto& p : params_) p.unfreeze();
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<Parameter*> ParameterStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (!p.frozen) out.push_back(&p);
  }
  return out;
}

std::size_t ParameterStore::count_scalars(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : params_) {
    if (!trainable_only || !p.frozen) n += p.tensor.size();
  }
  return n;
}

void ParameterStore::adopt(const ParameterStore& other, const std::string& prefix) {
  for (const auto& p : other.params_) {
    const std::string name = prefix + p.name;
    if (contains(name)) throw UsageError("parameter name '" + name + "' already registered");
    params_.push_back(Parameter{name, p.tensor, p.frozen});
  }
}

ParameterSnapshot ParameterSnapshot::capture(const std::vector<Parameter*>& params) {
  ParameterSnapshot s;
  for (const Parameter* p : params) {
    s.values.emplace_back(p->tensor.data().begin(), p->tensor.data().end());
  }
  return s;
}

void ParameterSnapshot::restore(const std::vector<Parameter*>& params) const {
  if (params.size() != values.size()) throw UsageError("snapshot: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i]->tensor.data();
    if (dst.size() != values[i].size()) throw UsageError("snapshot: parameter shape changed");
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

std::vector<std::uint8_t> ParameterSnapshot::bytes() const {
  std::vector<std::uint8_t> out;
  for (const auto& v : values) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out.insert(out.end(), p, p + v.size() * sizeof(float));
  }
  return out;
}

}  // namespace repro::ad
