#include "repro/autodiff/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "repro/util/errors.hpp"

namespace repro::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
void TensorImpl<T>::accumulate_grad(std::span<const T> g) {
  if (!requires_grad) return;
  T* dst = grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

template <typename T>
T* TensorImpl<T>::grad_buffer() {
  if (grad.empty()) grad.assign(data.size(), T(0));
  return grad.data();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, bool requires_grad)
    : BasicTensor(shape, std::vector<T>(numel(shape), T(0)), requires_grad) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl<T>>()) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor: zero-sized axis in shape " + shape_str(shape));
  }
  if (numel(shape) != data.size()) {
    throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                         std::to_string(numel(shape)) + " values, got " +
                         std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return BasicTensor(std::move(shape), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return BasicTensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(std::initializer_list<T> values, bool requires_grad) {
  return BasicTensor(Shape{values.size()}, std::vector<T>(values), requires_grad);
}

template <typename T>
const Shape& BasicTensor<T>::shape() const {
  return impl_->shape;
}

template <typename T>
std::size_t BasicTensor<T>::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw DimensionError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

template <typename T>
std::size_t BasicTensor<T>::size() const {
  return impl_->data.size();
}

template <typename T>
std::span<T> BasicTensor<T>::data() {
  return impl_->data;
}

template <typename T>
std::span<const T> BasicTensor<T>::data() const {
  return impl_->data;
}

template <typename T>
T BasicTensor<T>::item() const {
  if (impl_->data.size() != 1) {
    throw UsageError("tensor: item() on tensor of shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

template <typename T>
bool BasicTensor<T>::requires_grad() const {
  return impl_->requires_grad;
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  if (!value) impl_->grad.clear();
}

template <typename T>
bool BasicTensor<T>::has_grad() const {
  return !impl_->grad.empty();
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  return impl_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  impl_->grad.clear();
}

template <typename T>
bool BasicTensor<T>::has_node() const {
  return impl_->node != nullptr;
}

template <typename T>
const std::shared_ptr<Node<T>>& BasicTensor<T>::node() const {
  return impl_->node;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(impl_->shape, impl_->data, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  return BasicTensor(impl_->shape, impl_->data, impl_->requires_grad);
}

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
bool needs_graph(std::initializer_list<const BasicTensor<T>*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const BasicTensor<T>* t) { return t->requires_grad(); });
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::string op,
                           std::vector<BasicTensor<T>> inputs,
                           std::function<void(TensorImpl<T>&)> backward) {
  bool track = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) track = track || in.requires_grad();
  }
  BasicTensor<T> out(std::move(shape), std::move(data), track);
  if (track) {
    auto node = std::make_shared<Node<T>>();
    node->op = std::move(op);
    node->backward = std::move(backward);
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.impl_ptr());
    out.impl().node = std::move(node);
  }
  return out;
}

template <typename T>
BackwardStats backward(const BasicTensor<T>& loss) {
  if (loss.size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  BackwardStats stats;
  if (!loss.requires_grad()) return stats;

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> seen;
  std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
  stack.emplace_back(&loss.impl(), 0);
  seen.insert(&loss.impl());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const auto* node = impl->node.get();
    if (node != nullptr && next < node->inputs.size()) {
      TensorImpl<T>* child = node->inputs[next++].get();
      if (child->node != nullptr && seen.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  loss.impl().grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl<T>* impl = *it;
    if (impl->node == nullptr) continue;
    ++stats.nodes_visited;
    if (!impl->grad.empty()) impl->node->backward(*impl);
  }
  for (TensorImpl<T>* impl : order) impl->node.reset();
  return stats;
}

template struct TensorImpl<float>;
template struct TensorImpl<double>;
template class BasicTensor<float>;
template class BasicTensor<double>;
template bool needs_graph<float>(std::initializer_list<const BasicTensor<float>*>);
template bool needs_graph<double>(std::initializer_list<const BasicTensor<double>*>);
template BasicTensor<float> make_result(Shape, std::vector<float>, std::string,
                                        std::vector<BasicTensor<float>>,
                                        std::function<void(TensorImpl<float>&)>);
template BasicTensor<double> make_result(Shape, std::vector<double>, std::string,
                                         std::vector<BasicTensor<double>>,
                                         std::function<void(TensorImpl<double>&)>);
template BackwardStats backward(const BasicTensor<float>&);
template BackwardStats backward(const BasicTensor<double>&);

}  // namespace repro::ad
