#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A tensor is a shared handle; copies alias the same storage. Every op that
// sees at least one input with requires_grad (while grad mode is enabled)
// records a Node on its output. backward() walks those nodes once in reverse
// topological order and then drops them, so the tape lives for exactly one
// forward/backward pass.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace repro::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  std::string op;
  // Reads out.grad and accumulates into the captured inputs.
  std::function<void(TensorImpl<T>& out)> backward;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty when absent
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  void accumulate_grad(std::span<const T> g);
  T* grad_buffer();  // allocates zeros on first use
};

template <typename T>
class BasicTensor {
 public:
  using Scalar = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);
  explicit BasicTensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static BasicTensor scalar(T value, bool requires_grad = false);
  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(std::initializer_list<T> values, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;

  std::span<T> data();
  std::span<const T> data() const;
  T item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();  // drops the gradient buffer entirely
  bool has_node() const;
  const std::shared_ptr<Node<T>>& node() const;

  /// Copy of the values with no graph attached.
  BasicTensor detach() const;
  BasicTensor clone() const;

  TensorImpl<T>& impl() const { return *impl_; }
  const std::shared_ptr<TensorImpl<T>>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// --- grad mode -----------------------------------------------------------

bool grad_enabled();

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// --- graph construction helpers for ops ----------------------------------

/// True when an op over these inputs must record a node.
template <typename T>
bool needs_graph(std::initializer_list<const BasicTensor<T>*> inputs);

/// Builds an op result; attaches a node when needs_graph(inputs).
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::string op,
                           std::vector<BasicTensor<T>> inputs,
                           std::function<void(TensorImpl<T>&)> backward);

// --- backward ------------------------------------------------------------

struct BackwardStats {
  std::size_t nodes_visited = 0;
};

/// Accumulates d loss / d t into every reachable tensor t with requires_grad,
/// then discards the graph. loss must hold exactly one element.
template <typename T>
BackwardStats backward(const BasicTensor<T>& loss);

}  // namespace repro::ad
