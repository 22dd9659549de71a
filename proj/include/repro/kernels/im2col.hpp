#pragma once

#include <cstddef>

namespace repro::kernels {

struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
  std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
  std::size_t col_rows() const { return channels * kernel_h * kernel_w; }
  std::size_t col_cols() const { return out_h() * out_w(); }
};

/// Unfolds one [C,H,W] image into a [C*kh*kw, Ho*Wo] column matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto channels = static_cast<long long>(g.channels);
#pragma omp parallel for schedule(static)
  for (long long cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    const T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* dst = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long long iy = static_cast<long long>(y * g.stride + ki) -
                               static_cast<long long>(g.padding);
          T* drow = dst + y * ow;
          if (iy < 0 || iy >= static_cast<long long>(g.height)) {
            for (std::size_t x = 0; x < ow; ++x) drow[x] = T(0);
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t x = 0; x < ow; ++x) {
            const long long ix = static_cast<long long>(x * g.stride + kj) -
                                 static_cast<long long>(g.padding);
            drow[x] = (ix < 0 || ix >= static_cast<long long>(g.width))
                          ? T(0)
                          : srow[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters a column matrix back onto an image, adding
/// into the existing image contents.
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* image) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const auto channels = static_cast<long long>(g.channels);
#pragma omp parallel for schedule(static)
  for (long long cc = 0; cc < channels; ++cc) {
    const auto c = static_cast<std::size_t>(cc);
    T* plane = image + c * g.height * g.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* src = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const long long iy = static_cast<long long>(y * g.stride + ki) -
                               static_cast<long long>(g.padding);
          if (iy < 0 || iy >= static_cast<long long>(g.height)) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * g.width;
          for (std::size_t x = 0; x < ow; ++x) {
            const long long ix = static_cast<long long>(x * g.stride + kj) -
                                 static_cast<long long>(g.padding);
            if (ix >= 0 && ix < static_cast<long long>(g.width)) {
              drow[static_cast<std::size_t>(ix)] += src[y * ow + x];
            }
          }
        }
      }
    }
  }
}

/// Serial element-by-element reference for im2col.
template <typename T>
void im2col_reference(const ConvGeometry& g, const T* image, T* col) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t r = 0; r < g.col_rows(); ++r) {
    const std::size_t c = r / (g.kernel_h * g.kernel_w);
    const std::size_t ki = (r / g.kernel_w) % g.kernel_h;
    const std::size_t kj = r % g.kernel_w;
    for (std::size_t q = 0; q < oh * ow; ++q) {
      const long long iy = static_cast<long long>((q / ow) * g.stride + ki) -
                           static_cast<long long>(g.padding);
      const long long ix = static_cast<long long>((q % ow) * g.stride + kj) -
                           static_cast<long long>(g.padding);
      const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long long>(g.height) &&
                          ix < static_cast<long long>(g.width);
      col[r * oh * ow + q] =
          inside ? image[(c * g.height + static_cast<std::size_t>(iy)) * g.width +
                         static_cast<std::size_t>(ix)]
                 : T(0);
    }
  }
}

}  // namespace repro::kernels
