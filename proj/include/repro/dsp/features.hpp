#pragma once

#include <cstddef>
#include <vector>

#include "repro/autodiff/tensor.hpp"
#include "repro/dsp/waveform.hpp"

namespace repro::dsp {

/// Log-mel analysis parameters. Defaults follow common speech front-ends.
struct MelConfig {
  std::size_t window = 400;
  std::size_t hop = 160;
  std::size_t fft = 512;
  std::size_t mel_bins = 64;
  double floor = 1e-6;
  int sample_rate = kCanonicalSampleRate;

  std::size_t frames_for(std::size_t samples) const;
  void validate() const;
  bool operator==(const MelConfig&) const = default;
};

/// Triangular HTK-spaced filters over [0, sample_rate / 2]; row-major
/// [mel_bins, fft / 2 + 1].
class MelFilterbank {
 public:
  explicit MelFilterbank(const MelConfig& cfg);

  std::size_t bins() const { return bins_; }
  std::size_t fft_bins() const { return fft_bins_; }
  double weight(std::size_t mel, std::size_t k) const { return weights_[mel * fft_bins_ + k]; }
  const std::vector<double>& weights() const { return weights_; }
  /// Center frequency (Hz) of each filter.
  const std::vector<double>& centers() const { return centers_; }

 private:
  std::size_t bins_;
  std::size_t fft_bins_;
  std::vector<double> weights_;
  std::vector<double> centers_;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Log-mel energies of one waveform.
struct FeatureMap {
  ad::Tensor values;  // [mel_bins, frames]
  MelConfig config;

  std::size_t mel_bins() const { return values.dim(0); }
  std::size_t frames() const { return values.dim(1); }
};

/// Magnitude STFT (periodic Hann window, radix-2 FFT, no centering) ->
/// mel filterbank -> log(x + floor). Throws DimensionError when the window is
/// longer than the signal.
FeatureMap log_mel(const Waveform& w, const MelConfig& cfg = {});

/// Differentiable batched version over waveforms [N, L] -> [N, mel_bins, frames].
/// log_mel() runs this exact code path, so results are bit-identical.
template <typename T>
ad::BasicTensor<T> log_mel_op(const ad::BasicTensor<T>& waves, const MelConfig& cfg);

}  // namespace repro::dsp
