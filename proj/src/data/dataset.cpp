#include "repro/data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include "repro/util/errors.hpp"
#include "repro/util/rng.hpp"

namespace repro::data {

namespace fs = std::filesystem;

void DatasetSplit::validate() const {
  std::set<std::string> ids;
  for (const auto* part : {&train, &val, &test}) {
    for (const auto& c : *part) {
      if (c.label < 0 || static_cast<std::size_t>(c.label) >= num_classes) {
        throw FormatError("dataset: clip " + c.id + " has label " + std::to_string(c.label) +
                          " outside [0," + std::to_string(num_classes) + ")");
      }
      if (!ids.insert(c.id).second) throw FormatError("dataset: clip " + c.id + " appears twice");
    }
  }
}

std::string to_string(TaskKind kind) {
  return kind == TaskKind::Source12Tone ? "source_12tone" : "target_4texture";
}

TaskKind task_from_string(const std::string& name) {
  if (name == "source_12tone") return TaskKind::Source12Tone;
  if (name == "target_4texture") return TaskKind::Target4Texture;
  throw ConfigError("unknown task '" + name + "' (expected source_12tone | target_4texture)");
}

SyntheticTask SyntheticTask::source_defaults() { return SyntheticTask{}; }

SyntheticTask SyntheticTask::target_defaults() {
  SyntheticTask t;
  t.kind = TaskKind::Target4Texture;
  t.num_classes = 4;
  t.clip_seconds = 2.0;
  t.seed = 1;
  t.base_hz = 340.0;
  t.ratio = 1.5874010519681994;  // 2^(2/3)
  return t;
}

double SyntheticTask::fundamental(std::size_t label) const {
  return base_hz * std::pow(ratio, static_cast<double>(label));
}

double SyntheticTask::modulation_rate(std::size_t label) const {
  return kind == TaskKind::Target4Texture ? 2.0 + 3.0 * static_cast<double>(label) : 0.0;
}

dsp::Waveform synth_clip(const SyntheticTask& task, std::size_t label, std::size_t index) {
  Rng rng(derive_seed(task.seed, to_string(task.kind) + ":" + std::to_string(label) + ":" +
                                     std::to_string(index)));
  const auto len = static_cast<std::size_t>(std::llround(task.clip_seconds * task.sample_rate));
  const double nyquist = task.sample_rate / 2.0;
  const double f0 = task.fundamental(label) * (1.0 + rng.uniform(-task.jitter, task.jitter));
  const double amp = rng.uniform(0.3, 0.6);
  const bool target = task.kind == TaskKind::Target4Texture;

  struct Partial {
    double freq, gain, phase;
  };
  std::vector<Partial> partials;
  const std::vector<std::pair<int, double>> profile =
      target ? std::vector<std::pair<int, double>>{{1, 1.0}, {3, 1.0 / 3.0}, {5, 1.0 / 5.0}}
             : std::vector<std::pair<int, double>>{{1, 1.0}, {2, 0.5}, {3, 0.25}};
  for (auto [h, g] : profile) {
    const double f = f0 * h;
    if (f < nyquist * 0.95) partials.push_back({f, g, rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }
  const double am_rate = task.modulation_rate(label);
  const double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  dsp::Waveform w;
  w.sample_rate = task.sample_rate;
  w.samples.resize(len);
  const double two_pi = 2.0 * std::numbers::pi;
  const double ramp = 0.01 * task.sample_rate;
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / task.sample_rate;
    double s = 0.0;
    for (const auto& p : partials) s += p.gain * std::sin(two_pi * p.freq * t + p.phase);
    double env = std::min({1.0, static_cast<double>(i) / ramp, static_cast<double>(len - i) / ramp});
    if (am_rate > 0.0) env *= 0.6 + 0.4 * std::sin(two_pi * am_rate * t + am_phase);
    w.samples[i] = static_cast<float>(amp * env * s / 1.6 + rng.normal(0.0, task.noise));
  }
  return w;
}

std::array<std::size_t, 3> split_sizes(std::size_t n) {
  const std::size_t held = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(0.15 * n)));
  return {n - 2 * held, held, held};
}

namespace {

std::string class_name(const SyntheticTask& task, std::size_t label) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02zu", task.kind == TaskKind::Source12Tone ? "tone" : "texture",
                label);
  return buf;
}

std::string clip_id(const std::string& cls, std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%05zu", index);
  return cls + "/" + cls + "." + buf + ".wav";
}

}  // namespace

DatasetSplit gen_synthetic(const SyntheticTask& task, std::size_t n_per_class) {
  if (n_per_class < 3) throw ConfigError("gen_synthetic: n_per_class must be >= 3");
  if (task.num_classes < 2) throw ConfigError("gen_synthetic: need at least 2 classes");
  if (!(task.clip_seconds > 0.0) || task.sample_rate <= 0) {
    throw ConfigError("gen_synthetic: clip_seconds and sample_rate must be positive");
  }
  DatasetSplit split;
  split.num_classes = task.num_classes;
  const auto [n_train, n_val, n_test] = split_sizes(n_per_class);
  Rng order(derive_seed(task.seed, "split:" + to_string(task.kind)));
  for (std::size_t c = 0; c < task.num_classes; ++c) {
    const std::string cls = class_name(task, c);
    split.class_names.push_back(cls);
    std::vector<std::size_t> idx(n_per_class);
    for (std::size_t i = 0; i < n_per_class; ++i) idx[i] = i;
    order.shuffle(idx.begin(), idx.end());
    for (std::size_t j = 0; j < n_per_class; ++j) {
      Clip clip{clip_id(cls, idx[j]), synth_clip(task, c, idx[j]), static_cast<int>(c)};
      auto& part = j < n_train ? split.train : (j < n_train + n_val ? split.val : split.test);
      part.push_back(std::move(clip));
    }
  }
  return split;
}

void export_wav_tree(const DatasetSplit& split, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  const std::pair<const char*, const std::vector<Clip>*> parts[] = {
      {"train.txt", &split.train}, {"val.txt", &split.val}, {"test.txt", &split.test}};
  for (auto [file, clips] : parts) {
    std::ofstream list(root / file);
    if (!list) throw IoError("cannot write " + (root / file).string());
    for (const auto& c : *clips) {
      const fs::path path = root / c.id;
      fs::create_directories(path.parent_path(), ec);
      if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
      dsp::save_wav(path, c.wave.samples, c.wave.sample_rate);
      list << c.id << '\n';
    }
  }
}

namespace {

std::vector<std::string> read_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.pop_back();
    }
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw FormatError("split file " + path.string() + " is empty");
  return lines;
}

int genre_label(const std::string& rel) {
  const auto slash = rel.find('/');
  const std::string genre = slash == std::string::npos ? rel.substr(0, rel.find('.')) : rel.substr(0, slash);
  for (std::size_t i = 0; i < kGtzanGenres.size(); ++i) {
    if (kGtzanGenres[i] == genre) return static_cast<int>(i);
  }
  throw FormatError("gtzan: unknown genre directory '" + genre + "' in entry " + rel);
}

}  // namespace

DatasetSplit load_gtzan(const fs::path& root, const fs::path& train_list, const fs::path& val_list,
                        const fs::path& test_list, const GtzanOptions& options) {
  if (!fs::is_directory(root)) throw IoError("gtzan root " + root.string() + " is not a directory");
  DatasetSplit split;
  split.num_classes = kGtzanGenres.size();
  split.class_names.assign(kGtzanGenres.begin(), kGtzanGenres.end());

  const std::pair<const fs::path*, std::vector<Clip>*> parts[] = {
      {&train_list, &split.train}, {&val_list, &split.val}, {&test_list, &split.test}};
  std::map<std::string, std::string> owner;  // clip -> split file
  std::vector<std::string> missing;
  std::vector<std::pair<std::vector<Clip>*, std::vector<std::string>>> resolved;
  for (auto [list, part] : parts) {
    auto entries = read_list(*list);
    for (const auto& rel : entries) {
      auto [it, fresh] = owner.emplace(rel, list->string());
      if (!fresh) {
        throw FormatError("gtzan: clip " + rel + " listed in both " + it->second + " and " +
                          list->string());
      }
      genre_label(rel);
      if (!fs::is_regular_file(root / rel)) missing.push_back(rel);
    }
    resolved.emplace_back(part, std::move(entries));
  }
  if (!missing.empty()) {
    std::string msg = "gtzan: " + std::to_string(missing.size()) + " listed file(s) missing under " +
                      root.string() + ":";
    for (const auto& m : missing) msg += "\n  " + m;
    throw IoError(msg);
  }
  for (auto& [part, entries] : resolved) {
    for (const auto& rel : entries) {
      Clip c;
      c.id = rel;
      c.label = genre_label(rel);
      if (options.load_audio) c.wave = dsp::load_wav(root / rel, options.sample_rate);
      part->push_back(std::move(c));
    }
  }
  return split;
}

}  // namespace repro::data
