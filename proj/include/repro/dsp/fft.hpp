#pragma once

#include <complex>
#include <span>
#include <vector>

namespace repro::dsp {

/// In-place iterative radix-2 FFT. Size must be a power of two.
/// inverse == false computes sum x_n e^{-2 pi i k n / N}; inverse == true uses
/// the + sign and does not normalize.
template <typename T>
void fft_inplace(std::span<std::complex<T>> data, bool inverse);

/// Normalized inverse (divides by N).
template <typename T>
std::vector<std::complex<T>> ifft(std::vector<std::complex<T>> spectrum);

template <typename T>
std::vector<std::complex<T>> fft(std::span<const T> real_signal, std::size_t n);

bool is_power_of_two(std::size_t n);

}  // namespace repro::dsp
