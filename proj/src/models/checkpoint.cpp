#include "repro/models/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "repro/util/errors.hpp"
#include "repro/util/sha256.hpp"

namespace repro::models {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename U>
  void put(U v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}
  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  const std::uint8_t* take(std::size_t n, const char* field) {
    need(n, field);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* field) const {
    if (pos_ + n > bytes_.size()) {
      throw FormatError(std::string("checkpoint: truncated while reading ") + field);
    }
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

void write_entries(Writer& w, const std::vector<CheckpointEntry>& entries) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.put<std::uint16_t>(static_cast<std::uint16_t>(e.name.size()));
    w.put_bytes(e.name.data(), e.name.size());
    w.put<std::uint8_t>(kDtypeFloat32);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.put_bytes(e.values.data(), e.values.size() * sizeof(float));
  }
}

}  // namespace

Checkpoint Checkpoint::from_store(const ad::ParameterStore& store, nlohmann::json metadata) {
  Checkpoint ck;
  ck.metadata = std::move(metadata);
  for (const auto& p : store.all()) {
    ck.entries.push_back({p.name, p.tensor.shape(),
                          std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  }
  return ck;
}

const CheckpointEntry& Checkpoint::entry(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e;
  }
  throw FormatError("checkpoint: no entry named '" + name + "'");
}

void Checkpoint::load_into(ad::ParameterStore& store) const {
  if (entries.size() != store.all().size()) {
    throw FormatError("checkpoint: " + std::to_string(entries.size()) + " entries for a model with " +
                      std::to_string(store.all().size()) + " parameters");
  }
  for (auto& p : store.all()) {
    const CheckpointEntry& e = entry(p.name);
    if (e.shape != p.tensor.shape()) {
      throw FormatError("checkpoint: entry '" + e.name + "' has shape " + ad::shape_str(e.shape) +
                        ", model expects " + ad::shape_str(p.tensor.shape()));
    }
    std::copy(e.values.begin(), e.values.end(), p.tensor.data().begin());
  }
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
  Writer w;
  w.put_bytes(kCheckpointMagic, 4);
  w.put<std::uint16_t>(kCheckpointVersion);
  const std::string meta = metadata.dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
  w.put_bytes(meta.data(), meta.size());
  write_entries(w, entries);
  return std::move(w.bytes);
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError("checkpoint: bad magic (expected RPKT)");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto meta_len = r.get<std::uint32_t>("metadata length");
  const auto* meta = reinterpret_cast<const char*>(r.take(meta_len, "metadata"));
  Checkpoint ck;
  try {
    ck.metadata = nlohmann::json::parse(meta, meta + meta_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: metadata is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto name_len = r.get<std::uint16_t>("entry name length");
    const auto* name = reinterpret_cast<const char*>(r.take(name_len, "entry name"));
    e.name.assign(name, name_len);
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeFloat32) {
      throw FormatError("checkpoint: entry '" + e.name + "' has unsupported dtype code " +
                        std::to_string(dtype));
    }
    const auto rank = r.get<std::uint8_t>("rank");
    for (std::uint8_t d = 0; d < rank; ++d) e.shape.push_back(r.get<std::uint32_t>("dim"));
    e.values.resize(ad::numel(e.shape));
    const std::uint8_t* raw = r.take(e.values.size() * sizeof(float), "entry data");
    std::memcpy(e.values.data(), raw, e.values.size() * sizeof(float));
    ck.entries.push_back(std::move(e));
  }
  if (!r.done()) throw FormatError("checkpoint: trailing bytes after last entry");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("checkpoint: write failed for '" + path.string() + "'");
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string parameter_checksum(const ad::ParameterStore& store) {
  Writer w;
  write_entries(w, Checkpoint::from_store(store, {}).entries);
  return sha256_hex(w.bytes);
}

}  // namespace repro::models
