#include "repro/dsp/fft.hpp"

#include <cmath>
#include <numbers>

#include "repro/util/errors.hpp"

namespace repro::dsp {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

template <typename T>
void fft_inplace(std::span<std::complex<T>> data, bool inverse) {
  const std::size_t n = data.size();
  if (!is_power_of_two(n)) throw UsageError("fft: size " + std::to_string(n) + " is not a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  // Twiddles e^{-2 pi i k / n}, k < n/2, evaluated directly so round-off does
  // not accumulate; cached per size on each thread.
  thread_local std::vector<std::complex<T>> table;
  if (table.size() != n / 2) {
    table.resize(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
      const T angle = T(-2) * std::numbers::pi_v<T> * static_cast<T>(k) / static_cast<T>(n);
      table[k] = {std::cos(angle), std::sin(angle)};
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const std::complex<T> w = inverse ? std::conj(table[k * step]) : table[k * step];
        const std::complex<T> u = data[start + k];
        const std::complex<T> v = data[start + k + half] * w;
        data[start + k] = u + v;
        data[start + k + half] = u - v;
      }
    }
  }
}

template <typename T>
std::vector<std::complex<T>> ifft(std::vector<std::complex<T>> spectrum) {
  fft_inplace<T>(spectrum, true);
  const T inv = T(1) / static_cast<T>(spectrum.size());
  for (auto& v : spectrum) v *= inv;
  return spectrum;
}

template <typename T>
std::vector<std::complex<T>> fft(std::span<const T> real_signal, std::size_t n) {
  std::vector<std::complex<T>> buf(n);
  for (std::size_t i = 0; i < std::min(n, real_signal.size()); ++i) buf[i] = real_signal[i];
  fft_inplace<T>(buf, false);
  return buf;
}

template void fft_inplace<float>(std::span<std::complex<float>>, bool);
template void fft_inplace<double>(std::span<std::complex<double>>, bool);
template std::vector<std::complex<float>> ifft(std::vector<std::complex<float>>);
template std::vector<std::complex<double>> ifft(std::vector<std::complex<double>>);
template std::vector<std::complex<float>> fft(std::span<const float>, std::size_t);
template std::vector<std::complex<double>> fft(std::span<const double>, std::size_t);

}  // namespace repro::dsp
