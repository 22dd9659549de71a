#include "repro/dsp/chunk.hpp"

#include <algorithm>
#include <cmath>

#include "repro/util/errors.hpp"

namespace repro::dsp {

std::size_t chunk_length(double chunk_seconds, int sample_rate) {
  if (!(chunk_seconds > 0.0)) throw UsageError("chunk: chunk_seconds must be positive");
  return static_cast<std::size_t>(std::llround(chunk_seconds * sample_rate));
}

Chunking chunk(const Waveform& w, const ChunkOptions& options) {
  if (w.samples.empty()) throw EmptyInputError("chunk: empty waveform");
  const std::size_t len = chunk_length(options.chunk_seconds, w.sample_rate);
  const std::size_t full = w.samples.size() / len;
  const std::size_t rem = w.samples.size() % len;
  const bool keep_partial =
      rem > 0 && (static_cast<double>(rem) >= options.min_partial_fraction * static_cast<double>(len) ||
                  full == 0);
  Chunking out;
  const std::size_t count = full + (keep_partial ? 1 : 0);
  for (std::size_t c = 0; c < count; ++c) {
    Waveform piece;
    piece.sample_rate = w.sample_rate;
    piece.samples.assign(len, 0.0f);
    const std::size_t begin = c * len;
    const std::size_t n = std::min(len, w.samples.size() - begin);
    std::copy_n(w.samples.begin() + static_cast<std::ptrdiff_t>(begin), n, piece.samples.begin());
    out.chunks.push_back(std::move(piece));
    out.valid.push_back(n);
  }
  return out;
}

Waveform concat_chunks(const Chunking& c) {
  Waveform out;
  if (!c.chunks.empty()) out.sample_rate = c.chunks.front().sample_rate;
  for (std::size_t i = 0; i < c.chunks.size(); ++i) {
    out.samples.insert(out.samples.end(), c.chunks[i].samples.begin(),
                       c.chunks[i].samples.begin() + static_cast<std::ptrdiff_t>(c.valid[i]));
  }
  return out;
}

}  // namespace repro::dsp
