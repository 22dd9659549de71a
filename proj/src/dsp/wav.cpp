#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "repro/dsp/waveform.hpp"
#include "repro/util/errors.hpp"

namespace repro::dsp {

namespace {

static_assert(std::endian::native == std::endian::little, "WAV I/O assumes a little-endian host");

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

template <typename U>
U read_le(const std::vector<char>& buf, std::size_t offset) {
  U v{};
  std::memcpy(&v, buf.data() + offset, sizeof(U));
  return v;
}

template <typename U>
void write_le(std::ofstream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path, int target_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav: cannot open '" + path.string() + "'");
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = "wav '" + path.string() + "': ";
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0) {
    throw FormatError(where + "missing RIFF magic");
  }
  if (std::memcmp(buf.data() + 8, "WAVE", 4) != 0) throw FormatError(where + "RIFF form type is not WAVE");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const char* data_ptr = nullptr;
  std::size_t data_len = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const std::string id(buf.data() + pos, 4);
    const auto len = static_cast<std::size_t>(read_le<std::uint32_t>(buf, pos + 4));
    const std::size_t body = pos + 8;
    if (body + len > buf.size() && id != "data") {
      throw FormatError(where + "chunk '" + id + "' size exceeds file");
    }
    if (id == "fmt ") {
      if (len < 16) throw FormatError(where + "fmt chunk shorter than 16 bytes");
      format = read_le<std::uint16_t>(buf, body);
      channels = read_le<std::uint16_t>(buf, body + 2);
      rate = read_le<std::uint32_t>(buf, body + 4);
      bits = read_le<std::uint16_t>(buf, body + 14);
      if (format == kFormatExtensible) {
        if (len < 40) throw FormatError(where + "extensible fmt chunk shorter than 40 bytes");
        format = read_le<std::uint16_t>(buf, body + 24);  // sub-format GUID prefix
      }
      have_fmt = true;
    } else if (id == "data") {
      data_ptr = buf.data() + body;
      data_len = std::min(len, buf.size() - body);  // tolerate truncated streams
    }
    pos = body + len + (len & 1);
  }
  if (!have_fmt) throw FormatError(where + "missing fmt chunk");
  if (data_ptr == nullptr) throw FormatError(where + "missing data chunk");
  if (channels == 0) throw FormatError(where + "num_channels is 0");
  if (rate == 0) throw FormatError(where + "sample_rate is 0");
  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw FormatError(where + "unsupported audio_format " + std::to_string(format) +
                      " with bits_per_sample " + std::to_string(bits) +
                      " (need PCM16 or float32)");
  }
  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frames = data_len / (bytes_per_sample * channels);
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const char* p = data_ptr + (f * channels + c) * bytes_per_sample;
      if (pcm16) {
        std::int16_t s;
        std::memcpy(&s, p, 2);
        acc += static_cast<double>(s) / 32768.0;
      } else {
        float s;
        std::memcpy(&s, p, 4);
        acc += s;
      }
    }
    const double mono = acc / channels;
    if (!std::isfinite(mono)) throw FormatError(where + "non-finite sample at frame " + std::to_string(f));
    w.samples[f] = static_cast<float>(mono);
  }
  if (target_rate > 0 && w.sample_rate != target_rate) w = resample_linear(w, target_rate);
  return w;
}

void save_wav(const std::filesystem::path& path, const std::vector<float>& interleaved,
              int sample_rate, int channels, WavEncoding encoding) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("wav: cannot write '" + path.string() + "'");
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint16_t format = encoding == WavEncoding::Pcm16 ? kFormatPcm : kFormatFloat;
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * (bits / 8));
  out.write("RIFF", 4);
  write_le<std::uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<std::uint32_t>(out, 16);
  write_le<std::uint16_t>(out, format);
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate));
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(sample_rate * channels * (bits / 8)));
  write_le<std::uint16_t>(out, static_cast<std::uint16_t>(channels * (bits / 8)));
  write_le<std::uint16_t>(out, bits);
  out.write("data", 4);
  write_le<std::uint32_t>(out, data_bytes);
  for (float v : interleaved) {
    if (encoding == WavEncoding::Pcm16) {
      const double scaled = std::clamp(static_cast<double>(v) * 32768.0, -32768.0, 32767.0);
      write_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(scaled)));
    } else {
      write_le<float>(out, v);
    }
  }
  if (!out) throw IoError("wav: write failed for '" + path.string() + "'");
}

Waveform resample_linear(const Waveform& in, int target_rate) {
  if (target_rate <= 0) throw UsageError("resample: target rate must be positive");
  Waveform out;
  out.sample_rate = target_rate;
  if (in.samples.empty() || in.sample_rate == target_rate) {
    out.samples = in.samples;
    return out;
  }
  const double ratio = static_cast<double>(in.sample_rate) / target_rate;
  const auto n = static_cast<std::size_t>(static_cast<double>(in.samples.size()) / ratio);
  out.samples.resize(n);
  const std::size_t last = in.samples.size() - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * ratio;
    const auto i0 = std::min(static_cast<std::size_t>(t), last);
    const std::size_t i1 = std::min(i0 + 1, last);
    const double frac = t - static_cast<double>(i0);
    out.samples[i] = static_cast<float>((1.0 - frac) * in.samples[i0] + frac * in.samples[i1]);
  }
  return out;
}

}  // namespace repro::dsp
