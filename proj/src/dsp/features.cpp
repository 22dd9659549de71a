#include "repro/dsp/features.hpp"

#include <cmath>
#include <complex>
#include <numbers>

#include "repro/autodiff/ops.hpp"
#include "repro/dsp/fft.hpp"
#include "repro/util/errors.hpp"

namespace repro::dsp {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::size_t MelConfig::frames_for(std::size_t samples) const {
  if (samples < window) return 0;
  return (samples - window) / hop + 1;
}

void MelConfig::validate() const {
  if (window == 0 || hop == 0 || mel_bins == 0 || sample_rate <= 0) {
    throw ConfigError("mel: window, hop, mel_bins and sample_rate must be positive");
  }
  if (!is_power_of_two(fft)) throw ConfigError("mel: fft must be a power of two");
  if (window > fft) throw ConfigError("mel: window must not exceed fft");
  if (!(floor > 0.0)) throw ConfigError("mel: floor must be positive");
}

MelFilterbank::MelFilterbank(const MelConfig& cfg)
    : bins_(cfg.mel_bins), fft_bins_(cfg.fft / 2 + 1), weights_(bins_ * fft_bins_, 0.0) {
  const double top = hz_to_mel(cfg.sample_rate / 2.0);
  std::vector<double> edges(bins_ + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(top * static_cast<double>(i) / static_cast<double>(bins_ + 1));
  }
  centers_.assign(edges.begin() + 1, edges.end() - 1);
  for (std::size_t m = 0; m < bins_; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < fft_bins_; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.fft);
      const double rise = (f - lo) / (mid - lo);
      const double fall = (hi - f) / (hi - mid);
      weights_[m * fft_bins_ + k] = std::max(0.0, std::min(rise, fall));
    }
  }
}

namespace {

struct SparseRow {
  std::size_t begin = 0, end = 0;
};

std::vector<SparseRow> sparse_rows(const MelFilterbank& fb) {
  std::vector<SparseRow> rows(fb.bins());
  for (std::size_t m = 0; m < fb.bins(); ++m) {
    std::size_t b = fb.fft_bins(), e = 0;
    for (std::size_t k = 0; k < fb.fft_bins(); ++k) {
      if (fb.weight(m, k) > 0.0) {
        b = std::min(b, k);
        e = k + 1;
      }
    }
    rows[m] = b < e ? SparseRow{b, e} : SparseRow{0, 0};
  }
  return rows;
}

}  // namespace

template <typename T>
ad::BasicTensor<T> log_mel_op(const ad::BasicTensor<T>& waves, const MelConfig& cfg) {
  cfg.validate();
  if (waves.rank() != 2) {
    throw DimensionError("log_mel: expected waveforms [N,L], got " + ad::shape_str(waves.shape()));
  }
  const std::size_t batch = waves.dim(0), len = waves.dim(1);
  if (cfg.window > len) {
    throw DimensionError("log_mel: input too short (" + std::to_string(len) +
                         " samples) for window " + std::to_string(cfg.window));
  }
  const std::size_t frames = cfg.frames_for(len);
  const std::size_t nfft = cfg.fft, nbins = nfft / 2 + 1, nmel = cfg.mel_bins;

  MelFilterbank fb(cfg);
  auto rows = sparse_rows(fb);
  std::vector<T> weights(fb.weights().begin(), fb.weights().end());
  std::vector<T> hann(cfg.window);
  for (std::size_t i = 0; i < cfg.window; ++i) {
    hann[i] = static_cast<T>(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                  static_cast<double>(cfg.window)));
  }
  const T floor = static_cast<T>(cfg.floor);

  std::vector<T> out(batch * nmel * frames);
  // Saved for backward: one-sided spectrum and mel energies per frame.
  std::vector<std::complex<T>> spectra(batch * frames * nbins);
  std::vector<T> mel(batch * frames * nmel);

  const auto total = static_cast<long long>(batch * frames);
#pragma omp parallel for schedule(static)
  for (long long job = 0; job < total; ++job) {
    const auto n = static_cast<std::size_t>(job) / frames;
    const auto f = static_cast<std::size_t>(job) % frames;
    std::vector<std::complex<T>> buf(nfft);
    const T* src = waves.data().data() + n * len + f * cfg.hop;
    for (std::size_t i = 0; i < cfg.window; ++i) buf[i] = src[i] * hann[i];
    fft_inplace<T>(buf, false);
    std::complex<T>* spec = spectra.data() + (n * frames + f) * nbins;
    std::copy_n(buf.begin(), nbins, spec);
    T* energies = mel.data() + (n * frames + f) * nmel;
    for (std::size_t m = 0; m < nmel; ++m) {
      T e = T(0);
      for (std::size_t k = rows[m].begin; k < rows[m].end; ++k) e += weights[m * nbins + k] * std::abs(spec[k]);
      energies[m] = e;
      out[(n * nmel + m) * frames + f] = std::log(e + floor);
    }
  }

  auto wi = waves.impl_ptr();
  MelConfig c = cfg;
  return ad::make_result<T>(
      {batch, nmel, frames}, std::move(out), "log_mel", {waves},
      [wi, c, batch, len, frames, nfft, nbins, nmel, rows = std::move(rows),
       weights = std::move(weights), hann = std::move(hann), spectra = std::move(spectra),
       mel = std::move(mel), floor](ad::TensorImpl<T>& o) {
        T* gx = wi->grad_buffer();
        std::vector<std::complex<T>> buf(nfft);
        std::vector<T> dmag(nbins);
        // Frames overlap, so frame contributions are accumulated serially.
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t f = 0; f < frames; ++f) {
            const std::complex<T>* spec = spectra.data() + (n * frames + f) * nbins;
            const T* energies = mel.data() + (n * frames + f) * nmel;
            std::fill(dmag.begin(), dmag.end(), T(0));
            for (std::size_t m = 0; m < nmel; ++m) {
              const T dm = o.grad[(n * nmel + m) * frames + f] / (energies[m] + floor);
              for (std::size_t k = rows[m].begin; k < rows[m].end; ++k) dmag[k] += weights[m * nbins + k] * dm;
            }
            // d|X_k| -> (dRe, dIm); the signal gradient is Re(sum_k G_k e^{+i...}).
            std::fill(buf.begin(), buf.end(), std::complex<T>(0));
            for (std::size_t k = 0; k < nbins; ++k) {
              const T mag = std::abs(spec[k]);
              if (mag > T(0)) buf[k] = dmag[k] * spec[k] / mag;
            }
            fft_inplace<T>(buf, true);
            T* dst = gx + n * len + f * c.hop;
            for (std::size_t i = 0; i < c.window; ++i) dst[i] += buf[i].real() * hann[i];
          }
        }
      });
}

FeatureMap log_mel(const Waveform& w, const MelConfig& cfg) {
  if (w.sample_rate != cfg.sample_rate) {
    throw UsageError("log_mel: waveform rate " + std::to_string(w.sample_rate) +
                     " differs from configured " + std::to_string(cfg.sample_rate));
  }
  if (w.samples.empty()) throw EmptyInputError("log_mel: empty waveform");
  ad::NoGradGuard guard;
  ad::Tensor wave({1, w.samples.size()}, w.samples);
  auto values = log_mel_op(wave, cfg);
  return FeatureMap{ad::reshape(values, {cfg.mel_bins, values.dim(2)}), cfg};
}

template ad::BasicTensor<float> log_mel_op(const ad::BasicTensor<float>&, const MelConfig&);
template ad::BasicTensor<double> log_mel_op(const ad::BasicTensor<double>&, const MelConfig&);

}  // namespace repro::dsp
