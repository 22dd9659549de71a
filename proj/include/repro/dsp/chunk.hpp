#pragma once

#include <vector>

#include "repro/dsp/waveform.hpp"

namespace repro::dsp {

struct ChunkOptions {
  double chunk_seconds = 1.0;
  /// A trailing partial chunk is zero-padded and kept iff it holds at least
  /// this fraction of a chunk.
  double min_partial_fraction = 0.5;
};

/// Non-overlapping fixed-length pieces of a clip.
struct Chunking {
  std::vector<Waveform> chunks;  // each exactly chunk_seconds * sample_rate samples
  std::vector<std::size_t> valid;  // real (non-padding) samples per chunk
};

/// Splits `w` into floor(duration / chunk_seconds) full chunks plus an
/// optional padded partial chunk. A clip shorter than the partial threshold
/// still yields one padded chunk so every clip has a prediction.
Chunking chunk(const Waveform& w, const ChunkOptions& options);

/// Concatenates the valid part of every chunk.
Waveform concat_chunks(const Chunking& c);

std::size_t chunk_length(double chunk_seconds, int sample_rate);

}  // namespace repro::dsp
