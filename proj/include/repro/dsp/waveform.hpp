#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace repro::dsp {

inline constexpr int kCanonicalSampleRate = 16000;

/// Mono PCM signal with samples nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = kCanonicalSampleRate;

  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
};

enum class WavEncoding { Pcm16, Float32 };

/// Reads RIFF/WAVE (PCM16 or IEEE float32, mono or stereo). Channels are
/// averaged to mono, PCM16 is scaled by 1/32768 and the result is resampled to
/// `target_rate` by linear interpolation when the file rate differs.
/// Malformed or unsupported files raise FormatError naming the field.
Waveform load_wav(const std::filesystem::path& path, int target_rate = kCanonicalSampleRate);

/// Writes a mono (or interleaved multi-channel) WAV file.
void save_wav(const std::filesystem::path& path, const std::vector<float>& interleaved,
              int sample_rate, int channels = 1, WavEncoding encoding = WavEncoding::Pcm16);

/// Linear-interpolation resampler.
Waveform resample_linear(const Waveform& in, int target_rate);

}  // namespace repro::dsp
