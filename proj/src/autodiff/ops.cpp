#include "repro/autodiff/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "repro/kernels/gemm.hpp"
#include "repro/kernels/im2col.hpp"
#include "repro/util/errors.hpp"

namespace repro::ad {

namespace {

template <typename T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() == b.shape()) return;
  std::string axes;
  if (a.rank() != b.rank()) {
    axes = "rank " + std::to_string(a.rank()) + " vs " + std::to_string(b.rank());
  } else {
    for (std::size_t i = 0; i < a.rank(); ++i) {
      if (a.shape()[i] != b.shape()[i]) {
        if (!axes.empty()) axes += ", ";
        axes += "axis " + std::to_string(i);
      }
    }
  }
  throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()) + " (" + axes + ")");
}

std::vector<std::size_t> strides_of(const Shape& shape) {
  std::vector<std::size_t> s(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

// Splits a shape around `axis` into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  ImplPtr<T> ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result<T>(a.shape(), std::move(out), "add", {a, b}, [ai, bi](TensorImpl<T>& o) {
    ai->accumulate_grad(o.grad);
    bi->accumulate_grad(o.grad);
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  ImplPtr<T> ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result<T>(a.shape(), std::move(out), "sub", {a, b}, [ai, bi](TensorImpl<T>& o) {
    ai->accumulate_grad(o.grad);
    if (bi->requires_grad) {
      T* gb = bi->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] -= o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  ImplPtr<T> ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result<T>(a.shape(), std::move(out), "mul", {a, b}, [ai, bi](TensorImpl<T>& o) {
    if (ai->requires_grad) {
      T* ga = ai->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      T* gb = bi->grad_buffer();
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * ai->data[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  ImplPtr<T> ai = a.impl_ptr();
  return make_result<T>(a.shape(), std::move(out), "scale", {a}, [ai, factor](TensorImpl<T>& o) {
    T* ga = ai->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.data()[i], T(0));
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>(x.shape(), std::move(out), "relu", {x}, [xi](TensorImpl<T>& o) {
    T* gx = xi->grad_buffer();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if (xi->data[i] > T(0)) gx[i] += o.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> add_trailing(const BasicTensor<T>& x, const BasicTensor<T>& b) {
  require(b.rank() <= x.rank() &&
              std::equal(b.shape().begin(), b.shape().end(), x.shape().end() - b.rank()),
          "add_trailing: " + shape_str(b.shape()) + " is not a suffix of " +
              shape_str(x.shape()));
  const std::size_t inner = b.size();
  const std::size_t outer = x.size() / inner;
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = x.data()[o * inner + i] + b.data()[i];
  }
  ImplPtr<T> xi = x.impl_ptr(), bi = b.impl_ptr();
  return make_result<T>(x.shape(), std::move(out), "add_trailing", {x, b},
                        [xi, bi, inner, outer](TensorImpl<T>& o) {
                          xi->accumulate_grad(o.grad);
                          if (bi->requires_grad) {
                            T* gb = bi->grad_buffer();
                            for (std::size_t r = 0; r < outer; ++r) {
                              for (std::size_t i = 0; i < inner; ++i) gb[i] += o.grad[r * inner + i];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> bmm(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_a, bool trans_b) {
  require(a.rank() == 3 && b.rank() == 3, "bmm: expected rank-3 operands, got " +
                                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t batch = a.dim(0);
  require(b.dim(0) == batch, "bmm: batch axis 0 differs: " + shape_str(a.shape()) + " vs " +
                                 shape_str(b.shape()));
  const std::size_t m = trans_a ? a.dim(2) : a.dim(1);
  const std::size_t k = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  require(k == kb, "bmm: contraction axes differ (" + std::to_string(k) + " vs " +
                       std::to_string(kb) + ") for " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
  std::vector<T> out(batch * m * n);
  for (std::size_t s = 0; s < batch; ++s) {
    kernels::gemm(trans_a, trans_b, m, n, k, a.data().data() + s * m * k,
                  b.data().data() + s * k * n, out.data() + s * m * n, false);
  }
  ImplPtr<T> ai = a.impl_ptr(), bi = b.impl_ptr();
  return make_result<T>(
      {batch, m, n}, std::move(out), "bmm", {a, b},
      [ai, bi, batch, m, n, k, trans_a, trans_b](TensorImpl<T>& o) {
        for (std::size_t s = 0; s < batch; ++s) {
          const T* g = o.grad.data() + s * m * n;
          const T* av = ai->data.data() + s * m * k;
          const T* bv = bi->data.data() + s * k * n;
          if (ai->requires_grad) {
            T* ga = ai->grad_buffer() + s * m * k;
            if (!trans_a) {
              kernels::gemm(false, !trans_b, m, k, n, g, bv, ga, true);
            } else {
              kernels::gemm(trans_b, true, k, m, n, bv, g, ga, true);
            }
          }
          if (bi->requires_grad) {
            T* gb = bi->grad_buffer() + s * k * n;
            if (!trans_b) {
              kernels::gemm(!trans_a, false, k, n, m, av, g, gb, true);
            } else {
              kernels::gemm(true, trans_a, n, k, m, g, av, gb, true);
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2, "matmul: expected rank-2 operands, got " +
                                              shape_str(a.shape()) + " and " + shape_str(b.shape()));
  auto out = bmm(reshape(a, {1, a.dim(0), a.dim(1)}), reshape(b, {1, b.dim(0), b.dim(1)}));
  return reshape(out, {a.dim(0), b.dim(1)});
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  require(weight.rank() == 2, "linear: weight must be [out,in], got " + shape_str(weight.shape()));
  const std::size_t out_dim = weight.dim(0), in_dim = weight.dim(1);
  require(x.rank() >= 1 && x.shape().back() == in_dim,
          "linear: input last axis " + std::to_string(x.shape().back()) + " != weight axis 1 (" +
              std::to_string(in_dim) + ")");
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == out_dim,
            "linear: bias " + shape_str(bias.shape()) + " does not match weight axis 0");
  }
  const std::size_t rows = x.size() / in_dim;
  std::vector<T> out(rows * out_dim);
  kernels::gemm(false, true, rows, out_dim, in_dim, x.data().data(), weight.data().data(),
                out.data(), false);
  if (bias.defined()) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < out_dim; ++j) out[r * out_dim + j] += bias.data()[j];
    }
  }
  Shape shape = x.shape();
  shape.back() = out_dim;
  ImplPtr<T> xi = x.impl_ptr(), wi = weight.impl_ptr();
  ImplPtr<T> bi = bias.defined() ? bias.impl_ptr() : nullptr;
  std::vector<BasicTensor<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_result<T>(std::move(shape), std::move(out), "linear", std::move(inputs),
                        [xi, wi, bi, rows, in_dim, out_dim](TensorImpl<T>& o) {
                          const T* g = o.grad.data();
                          if (xi->requires_grad) {
                            kernels::gemm(false, false, rows, in_dim, out_dim, g, wi->data.data(),
                                          xi->grad_buffer(), true);
                          }
                          if (wi->requires_grad) {
                            kernels::gemm(true, false, out_dim, in_dim, rows, g, xi->data.data(),
                                          wi->grad_buffer(), true);
                          }
                          if (bi && bi->requires_grad) {
                            T* gb = bi->grad_buffer();
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t j = 0; j < out_dim; ++j) gb[j] += g[r * out_dim + j];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, std::size_t stride, std::size_t padding) {
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  require(weight.rank() == 4,
          "conv2d: weight must be [K,C,kh,kw], got " + shape_str(weight.shape()));
  if (stride < 1) throw DimensionError("conv2d: stride must be >= 1");
  require(weight.dim(1) == input.dim(1),
          "conv2d: channel axis mismatch: input axis 1 = " + std::to_string(input.dim(1)) +
              ", weight axis 1 = " + std::to_string(weight.dim(1)));
  require(input.dim(2) + 2 * padding >= weight.dim(2),
          "conv2d: kernel axis 2 (" + std::to_string(weight.dim(2)) +
              ") exceeds padded input axis 2 (" + std::to_string(input.dim(2) + 2 * padding) + ")");
  require(input.dim(3) + 2 * padding >= weight.dim(3),
          "conv2d: kernel axis 3 (" + std::to_string(weight.dim(3)) +
              ") exceeds padded input axis 3 (" + std::to_string(input.dim(3) + 2 * padding) + ")");
  const std::size_t batch = input.dim(0), out_ch = weight.dim(0);
  if (bias.defined()) {
    require(bias.rank() == 1 && bias.dim(0) == out_ch,
            "conv2d: bias " + shape_str(bias.shape()) + " does not match weight axis 0");
  }
  kernels::ConvGeometry geo{input.dim(1), input.dim(2), input.dim(3), weight.dim(2),
                            weight.dim(3), stride,        padding};
  const std::size_t rows = geo.col_rows(), cols = geo.col_cols();
  const std::size_t in_plane = geo.channels * geo.height * geo.width;
  std::vector<T> col(rows * cols);
  std::vector<T> out(batch * out_ch * cols);
  for (std::size_t n = 0; n < batch; ++n) {
    kernels::im2col(geo, input.data().data() + n * in_plane, col.data());
    T* dst = out.data() + n * out_ch * cols;
    kernels::gemm(false, false, out_ch, cols, rows, weight.data().data(), col.data(), dst, false);
    if (bias.defined()) {
      for (std::size_t k = 0; k < out_ch; ++k) {
        const T bk = bias.data()[k];
        for (std::size_t q = 0; q < cols; ++q) dst[k * cols + q] += bk;
      }
    }
  }
  ImplPtr<T> xi = input.impl_ptr(), wi = weight.impl_ptr();
  ImplPtr<T> bi = bias.defined() ? bias.impl_ptr() : nullptr;
  std::vector<BasicTensor<T>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  // Columns are recomputed in backward instead of being kept alive on the
  // tape; they dominate memory for wide feature maps.
  return make_result<T>(
      {batch, out_ch, geo.out_h(), geo.out_w()}, std::move(out), "conv2d", std::move(inputs),
      [xi, wi, bi, geo, batch, out_ch, rows, cols, in_plane](TensorImpl<T>& o) {
        std::vector<T> buf(rows * cols);
        for (std::size_t n = 0; n < batch; ++n) {
          const T* g = o.grad.data() + n * out_ch * cols;
          if (wi->requires_grad) {
            kernels::im2col(geo, xi->data.data() + n * in_plane, buf.data());
            kernels::gemm(false, true, out_ch, rows, cols, g, buf.data(), wi->grad_buffer(), true);
          }
          if (xi->requires_grad) {
            kernels::gemm(true, false, rows, cols, out_ch, wi->data.data(), g, buf.data(), false);
            kernels::col2im(geo, buf.data(), xi->grad_buffer() + n * in_plane);
          }
          if (bi && bi->requires_grad) {
            T* gb = bi->grad_buffer();
            for (std::size_t k = 0; k < out_ch; ++k) {
              T s = T(0);
              for (std::size_t q = 0; q < cols; ++q) s += g[k * cols + q];
              gb[k] += s;
            }
          }
        }
      });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  std::vector<T> out(logits.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = logits.data().data() + r * k;
    T* y = out.data() + r * k;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      if (std::isnan(x[j])) throw NumericError("softmax: NaN in input row " + std::to_string(r));
      mx = std::max(mx, x[j]);
    }
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < k; ++j) y[j] /= sum;
  }
  ImplPtr<T> xi = logits.impl_ptr();
  return make_result<T>(logits.shape(), std::move(out), "softmax", {logits},
                        [xi, rows, k](TensorImpl<T>& o) {
                          T* gx = xi->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* y = o.data.data() + r * k;
                            const T* g = o.grad.data() + r * k;
                            T dot = T(0);
                            for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
                            for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += y[j] * (g[j] - dot);
                          }
                        });
}

template <typename T>
BasicTensor<T> row_normalize(const BasicTensor<T>& x) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / k;
  std::vector<T> out(x.size());
  std::vector<T> sums(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::size_t j = 0; j < k; ++j) s += x.data()[r * k + j];
    if (!(s > T(0))) {
      throw NumericError("row_normalize: row " + std::to_string(r) + " has non-positive sum");
    }
    sums[r] = s;
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = x.data()[r * k + j] / s;
  }
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>(x.shape(), std::move(out), "row_normalize", {x},
                        [xi, rows, k, sums = std::move(sums)](TensorImpl<T>& o) {
                          T* gx = xi->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* g = o.grad.data() + r * k;
                            const T* y = o.data.data() + r * k;
                            T dot = T(0);
                            for (std::size_t j = 0; j < k; ++j) dot += g[j] * y[j];
                            for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += (g[j] - dot) / sums[r];
                          }
                        });
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps) {
  const std::size_t d = x.shape().back();
  require(gamma.rank() == 1 && gamma.dim(0) == d && beta.rank() == 1 && beta.dim(0) == d,
          "layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
              shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  const std::size_t rows = x.size() / d;
  std::vector<T> out(x.size()), xhat(x.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data().data() + r * d;
    T mean = T(0);
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mean) * rstd[r];
      out[r * d + j] = xhat[r * d + j] * gamma.data()[j] + beta.data()[j];
    }
  }
  ImplPtr<T> xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr();
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [xi, gi, bi, rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](TensorImpl<T>& o) {
        const T* g = o.grad.data();
        if (bi->requires_grad) {
          T* gb = bi->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (gi->requires_grad) {
          T* gg = gi->grad_buffer();
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (xi->requires_grad) {
          T* gx = xi->grad_buffer();
          std::vector<T> dxhat(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_d = T(0), mean_dx = T(0);
            for (std::size_t j = 0; j < d; ++j) {
              dxhat[j] = g[r * d + j] * gi->data[j];
              mean_d += dxhat[j];
              mean_dx += dxhat[j] * xhat[r * d + j];
            }
            mean_d /= static_cast<T>(d);
            mean_dx /= static_cast<T>(d);
            for (std::size_t j = 0; j < d; ++j) {
              gx[r * d + j] += rstd[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
            }
          }
        }
      });
}

namespace {
template <typename T>
void check_targets(const char* op, const BasicTensor<T>& x, std::span<const int> targets) {
  require(x.rank() == 2, std::string(op) + ": expected [N,K], got " + shape_str(x.shape()));
  require(targets.size() == x.dim(0), std::string(op) + ": " + std::to_string(targets.size()) +
                                          " targets for " + std::to_string(x.dim(0)) + " rows");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= x.dim(1)) {
      throw IndexError(std::string(op) + ": target " + std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " outside [0," + std::to_string(x.dim(1)) + ")");
    }
  }
}
}  // namespace

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, std::span<const int> targets) {
  check_targets("cross_entropy", logits, targets);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<T> probs(logits.size());
  T total = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* x = logits.data().data() + r * k;
    const T mx = *std::max_element(x, x + k);
    T sum = T(0);
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(x[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(x[j] - lse);
    total += lse - x[targets[r]];
  }
  std::vector<int> tg(targets.begin(), targets.end());
  ImplPtr<T> xi = logits.impl_ptr();
  return make_result<T>({1}, {total / static_cast<T>(n)}, "cross_entropy", {logits},
                        [xi, n, k, tg = std::move(tg), probs = std::move(probs)](TensorImpl<T>& o) {
                          const T g = o.grad[0] / static_cast<T>(n);
                          T* gx = xi->grad_buffer();
                          for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t j = 0; j < k; ++j) {
                              const T onehot = static_cast<int>(j) == tg[r] ? T(1) : T(0);
                              gx[r * k + j] += g * (probs[r * k + j] - onehot);
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> cross_entropy_probs(const BasicTensor<T>& probs, std::span<const int> targets) {
  check_targets("cross_entropy_probs", probs, targets);
  const std::size_t n = probs.dim(0), k = probs.dim(1);
  constexpr T kTiny = std::numeric_limits<T>::min();
  T total = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    total -= std::log(std::max(probs.data()[r * k + targets[r]], kTiny));
  }
  std::vector<int> tg(targets.begin(), targets.end());
  ImplPtr<T> pi = probs.impl_ptr();
  return make_result<T>({1}, {total / static_cast<T>(n)}, "cross_entropy_probs", {probs},
                        [pi, n, k, tg = std::move(tg)](TensorImpl<T>& o) {
                          const T g = o.grad[0] / static_cast<T>(n);
                          T* gp = pi->grad_buffer();
                          for (std::size_t r = 0; r < n; ++r) {
                            const std::size_t idx = r * k + static_cast<std::size_t>(tg[r]);
                            gp[idx] -= g / std::max(pi->data[idx], std::numeric_limits<T>::min());
                          }
                        });
}

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
  T s = T(0);
  for (T v : x.data()) s += v;
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>({1}, {s}, "sum_all", {x}, [xi](TensorImpl<T>& o) {
    T* gx = xi->grad_buffer();
    for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += o.grad[0];
  });
}

template <typename T>
BasicTensor<T> mean_all(const BasicTensor<T>& x) {
  return scale(sum_all(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
BasicTensor<T> mean_axis(const BasicTensor<T>& x, std::size_t axis) {
  require(axis < x.rank(), "mean_axis: axis " + std::to_string(axis) + " out of range for " +
                               shape_str(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  std::vector<T> out(s.outer * s.inner, T(0));
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t a = 0; a < s.len; ++a) {
      const T* src = x.data().data() + (o * s.len + a) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += src[i];
    }
  }
  for (T& v : out) v /= static_cast<T>(s.len);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape.push_back(1);
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>(std::move(shape), std::move(out), "mean_axis", {x},
                        [xi, s](TensorImpl<T>& o) {
                          T* gx = xi->grad_buffer();
                          const T inv = T(1) / static_cast<T>(s.len);
                          for (std::size_t ou = 0; ou < s.outer; ++ou)
                            for (std::size_t a = 0; a < s.len; ++a)
                              for (std::size_t i = 0; i < s.inner; ++i)
                                gx[(ou * s.len + a) * s.inner + i] += o.grad[ou * s.inner + i] * inv;
                        });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: cannot view " + shape_str(x.shape()) + " as " +
                                        shape_str(shape));
  std::vector<T> out(x.data().begin(), x.data().end());
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>(std::move(shape), std::move(out), "reshape", {x},
                        [xi](TensorImpl<T>& o) { xi->accumulate_grad(o.grad); });
}

template <typename T>
BasicTensor<T> permute(const BasicTensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  require(perm.size() == r, "permute: permutation length " + std::to_string(perm.size()) +
                                " != rank " + std::to_string(r));
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    require(p < r && !used[p], "permute: invalid permutation");
    used[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  const auto in_strides = strides_of(x.shape());
  // src_index[j] = input offset of output element j
  std::vector<std::size_t> src_index(x.size());
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t j = 0; j < x.size(); ++j) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < r; ++a) off += idx[a] * in_strides[perm[a]];
    src_index[j] = off;
    for (std::size_t a = r; a-- > 0;) {
      if (++idx[a] < out_shape[a]) break;
      idx[a] = 0;
    }
  }
  std::vector<T> out(x.size());
  for (std::size_t j = 0; j < out.size(); ++j) out[j] = x.data()[src_index[j]];
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>(std::move(out_shape), std::move(out), "permute", {x},
                        [xi, src_index = std::move(src_index)](TensorImpl<T>& o) {
                          T* gx = xi->grad_buffer();
                          for (std::size_t j = 0; j < src_index.size(); ++j) gx[src_index[j]] += o.grad[j];
                        });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw EmptyInputError("concat: no tensors given");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    require(p.rank() == first.size(), "concat: rank mismatch");
    for (std::size_t a = 0; a < first.size(); ++a) {
      require(a == axis || p.shape()[a] == first[a],
              "concat: axis " + std::to_string(a) + " differs: " + shape_str(first) + " vs " +
                  shape_str(p.shape()));
    }
    out_shape[axis] += p.shape()[axis];
  }
  const AxisSplit s = split_at(out_shape, axis);
  std::vector<T> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t at = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.shape()[axis];
    offsets.push_back(at);
    for (std::size_t o = 0; o < s.outer; ++o) {
      std::copy_n(p.data().data() + o * len * s.inner, len * s.inner,
                  out.data() + (o * s.len + at) * s.inner);
    }
    at += len;
  }
  std::vector<ImplPtr<T>> impls;
  for (const auto& p : parts) impls.push_back(p.impl_ptr());
  return make_result<T>(std::move(out_shape), std::move(out), "concat", parts,
                        [impls, offsets, s, axis](TensorImpl<T>& o) {
                          for (std::size_t pi = 0; pi < impls.size(); ++pi) {
                            auto& in = *impls[pi];
                            if (!in.requires_grad) continue;
                            const std::size_t len = in.shape[axis];
                            T* g = in.grad_buffer();
                            for (std::size_t ou = 0; ou < s.outer; ++ou) {
                              const T* src = o.grad.data() + (ou * s.len + offsets[pi]) * s.inner;
                              T* dst = g + ou * len * s.inner;
                              for (std::size_t i = 0; i < len * s.inner; ++i) dst[i] += src[i];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::size_t axis, std::size_t start,
                     std::size_t length) {
  require(axis < x.rank() && length > 0 && start + length <= x.shape()[axis],
          "slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
              ") out of range on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  const AxisSplit s = split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  std::vector<T> out(numel(out_shape));
  for (std::size_t o = 0; o < s.outer; ++o) {
    std::copy_n(x.data().data() + (o * s.len + start) * s.inner, length * s.inner,
                out.data() + o * length * s.inner);
  }
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>(std::move(out_shape), std::move(out), "slice", {x},
                        [xi, s, start, length](TensorImpl<T>& o) {
                          T* gx = xi->grad_buffer();
                          for (std::size_t ou = 0; ou < s.outer; ++ou) {
                            const T* src = o.grad.data() + ou * length * s.inner;
                            T* dst = gx + (ou * s.len + start) * s.inner;
                            for (std::size_t i = 0; i < length * s.inner; ++i) dst[i] += src[i];
                          }
                        });
}

template <typename T>
BasicTensor<T> resize_end(const BasicTensor<T>& x, Shape shape) {
  require(shape.size() == x.rank(), "resize_end: rank mismatch " + shape_str(x.shape()) +
                                        " -> " + shape_str(shape));
  const std::size_t r = shape.size();
  const auto in_strides = strides_of(x.shape());
  // For each output element, the input offset or SIZE_MAX when padded.
  constexpr std::size_t kPad = static_cast<std::size_t>(-1);
  std::vector<std::size_t> src_index(numel(shape));
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t j = 0; j < src_index.size(); ++j) {
    std::size_t off = 0;
    bool inside = true;
    for (std::size_t a = 0; a < r; ++a) {
      inside = inside && idx[a] < x.shape()[a];
      off += idx[a] * in_strides[a];
    }
    src_index[j] = inside ? off : kPad;
    for (std::size_t a = r; a-- > 0;) {
      if (++idx[a] < shape[a]) break;
      idx[a] = 0;
    }
  }
  std::vector<T> out(src_index.size(), T(0));
  for (std::size_t j = 0; j < out.size(); ++j) {
    if (src_index[j] != kPad) out[j] = x.data()[src_index[j]];
  }
  ImplPtr<T> xi = x.impl_ptr();
  return make_result<T>(std::move(shape), std::move(out), "resize_end", {x},
                        [xi, src_index = std::move(src_index)](TensorImpl<T>& o) {
                          T* gx = xi->grad_buffer();
                          for (std::size_t j = 0; j < src_index.size(); ++j) {
                            if (src_index[j] != kPad) gx[src_index[j]] += o.grad[j];
                          }
                        });
}

template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& x) {
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.size() / k;
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = x.data().data() + r * k;
    out[r] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

#define REPRO_INSTANTIATE_OPS(T)                                                              \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                    \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                        \
  template BasicTensor<T> add_trailing(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> bmm(const BasicTensor<T>&, const BasicTensor<T>&, bool, bool);      \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                 const BasicTensor<T>&);                                      \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                 const BasicTensor<T>&, std::size_t, std::size_t);            \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                     \
  template BasicTensor<T> row_normalize(const BasicTensor<T>&);                               \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                     const BasicTensor<T>&, T);                               \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, std::span<const int>);         \
  template BasicTensor<T> cross_entropy_probs(const BasicTensor<T>&, std::span<const int>);   \
  template BasicTensor<T> sum_all(const BasicTensor<T>&);                                     \
  template BasicTensor<T> mean_all(const BasicTensor<T>&);                                    \
  template BasicTensor<T> mean_axis(const BasicTensor<T>&, std::size_t);                      \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                              \
  template BasicTensor<T> permute(const BasicTensor<T>&, const std::vector<std::size_t>&);    \
  template BasicTensor<T> concat(const std::vector<BasicTensor<T>>&, std::size_t);            \
  template BasicTensor<T> slice(const BasicTensor<T>&, std::size_t, std::size_t, std::size_t); \
  template BasicTensor<T> resize_end(const BasicTensor<T>&, Shape);                           \
  template std::vector<int> argmax_rows(const BasicTensor<T>&);

REPRO_INSTANTIATE_OPS(float)
REPRO_INSTANTIATE_OPS(double)

#undef REPRO_INSTANTIATE_OPS

}  // namespace repro::ad
