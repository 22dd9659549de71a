#include "repro/harness/experiment.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "repro/util/errors.hpp"

namespace repro::harness {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(Preset p) { return p == Preset::Reference ? "reference" : "desk"; }

Preset preset_from_string(const std::string& name) {
  if (name == "reference") return Preset::Reference;
  if (name == "desk") return Preset::Desk;
  throw ConfigError("preset: unknown value '" + name + "' (expected reference | desk)");
}

ExperimentConfig ExperimentConfig::reference(models::Arch arch) {
  ExperimentConfig c;
  c.preset = Preset::Reference;
  c.model = arch == models::Arch::Attention ? models::SourceConfig::attention_defaults()
                                            : models::SourceConfig::patch_defaults();
  c.source_task = data::SyntheticTask::source_defaults();
  // a finer grid keeps 35 or 50 fundamentals (and their harmonics) below Nyquist
  c.source_task.ratio = arch == models::Arch::Attention ? std::pow(2.0, 1.0 / 12.0)
                                                        : std::pow(2.0, 1.0 / 16.0);
  c.source_per_class = 20;
  c.target_task = data::SyntheticTask::target_defaults();
  c.pretrain.max_epochs = 30;
  return c;
}

ExperimentConfig ExperimentConfig::desk(models::Arch arch) {
  ExperimentConfig c = reference(arch);
  c.preset = Preset::Desk;
  c.model.mel.mel_bins = 32;
  c.model.num_classes = 12;
  if (arch == models::Arch::PatchTransformer) {
    c.model.chunk_seconds = 2.0;
    c.model.model_dim = 32;
    c.model.heads = 2;
    c.model.mlp_dim = 64;
  }
  c.source_task = data::SyntheticTask::source_defaults();
  c.source_per_class = 30;
  c.pretrain.max_epochs = 40;
  c.run.epochs = 30;
  c.run.lr = 1e-3;
  c.run.adapter.id_channels = 8;
  c.run.label_fan_in = 2;
  return c;
}

ExperimentConfig ExperimentConfig::preset_config(Preset preset, models::Arch arch) {
  return preset == Preset::Reference ? reference(arch) : desk(arch);
}

// ---- field registry ----------------------------------------------------------

namespace {

struct Field {
  std::string path;
  std::string doc;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <typename T>
T as(const json& v, const std::string& path) {
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (v.is_number_integer() && v.get<long long>() < 0) throw ConfigError(path + ": must be >= 0");
      if (!v.is_number_integer()) throw ConfigError(path + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
    }
    return v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

#define REPRO_FIELD(PATH, DOC, EXPR, TYPE)                                               \
  Field {                                                                                 \
    PATH, DOC, [](const ExperimentConfig& c) { return json(c.EXPR); },                   \
        [](ExperimentConfig& c, const json& v) { c.EXPR = as<TYPE>(v, PATH); }           \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      REPRO_FIELD("run.method", "ii | id | ids | bl_cnn | bl_ft | bl_rep", run.method, std::string),
      REPRO_FIELD("run.epochs", "training epochs per seed", run.epochs, std::size_t),
      REPRO_FIELD("run.lr", "Adam learning rate", run.lr, double),
      Field{"run.seeds", "seeds run by train (one report row each)",
            [](const ExperimentConfig& c) { return json(c.run.seeds); },
            [](ExperimentConfig& c, const json& v) {
              if (!v.is_array()) throw ConfigError("run.seeds: expected a list of integers");
              c.run.seeds.clear();
              for (std::size_t i = 0; i < v.size(); ++i) {
                c.run.seeds.push_back(as<std::uint64_t>(v[i], "run.seeds[" + std::to_string(i) + "]"));
              }
            }},
      REPRO_FIELD("run.batch_size", "clips per minibatch", run.batch_size, std::size_t),
      REPRO_FIELD("run.n", "label-map fan-in (source classes per target class)", run.label_fan_in,
                  std::size_t),
      REPRO_FIELD("run.adapter.id_channels", "hidden channels of the ID conv stack",
                  run.adapter.id_channels, std::size_t),
      REPRO_FIELD("run.adapter.id_kernel", "kernel size of the ID convs", run.adapter.id_kernel,
                  std::size_t),
      REPRO_FIELD("run.adapter.skip_hidden", "hidden width of the IDS skip transform",
                  run.adapter.skip_hidden, std::size_t),
      REPRO_FIELD("run.bl_cnn_channels", "channels of the from-scratch CNN baseline",
                  run.bl_cnn_channels, std::size_t),
      REPRO_FIELD("run.probe_hidden", "hidden width of the representation probe",
                  run.probe_hidden, std::size_t),
      REPRO_FIELD("mel.window", "STFT window (samples)", model.mel.window, std::size_t),
      REPRO_FIELD("mel.hop", "STFT hop (samples)", model.mel.hop, std::size_t),
      REPRO_FIELD("mel.fft", "FFT size (power of two, >= window)", model.mel.fft, std::size_t),
      REPRO_FIELD("mel.mel_bins", "mel filters", model.mel.mel_bins, std::size_t),
      REPRO_FIELD("mel.floor", "added before the log", model.mel.floor, double),
      Field{"model.arch", "attention_rnnless | patch_transformer; selects the arch defaults",
            [](const ExperimentConfig& c) { return json(models::to_string(c.model.arch)); },
            [](ExperimentConfig& c, const json& v) {
              c.model.arch = models::arch_from_string(as<std::string>(v, "model.arch"));
            }},
      REPRO_FIELD("model.num_classes", "source classes K_S", model.num_classes, std::size_t),
      REPRO_FIELD("model.chunk_seconds", "model input length; clips are chunked to it",
                  model.chunk_seconds, double),
      REPRO_FIELD("model.tap_layer",
                  "IDS tap: attention_pool | head_hidden | class_token | class_token_prenorm",
                  model.tap_layer, std::string),
      REPRO_FIELD("model.conv1_channels", "attention arch: first conv width", model.conv1_channels,
                  std::size_t),
      REPRO_FIELD("model.conv2_channels", "attention arch: second conv width", model.conv2_channels,
                  std::size_t),
      REPRO_FIELD("model.attention_dim", "attention arch: pooled width", model.attention_dim,
                  std::size_t),
      REPRO_FIELD("model.patch", "patch transformer: square patch size", model.patch, std::size_t),
      REPRO_FIELD("model.model_dim", "patch transformer: width D", model.model_dim, std::size_t),
      REPRO_FIELD("model.heads", "patch transformer: attention heads", model.heads, std::size_t),
      REPRO_FIELD("model.mlp_dim", "patch transformer: MLP width", model.mlp_dim, std::size_t),
      REPRO_FIELD("model.blocks", "patch transformer: encoder blocks", model.blocks, std::size_t),
      REPRO_FIELD("model.seed", "source weight initialization seed", model.seed, std::uint64_t),
      REPRO_FIELD("chunk.min_partial_fraction",
                  "keep a padded trailing chunk iff it holds at least this fraction",
                  min_partial_fraction, double),
      REPRO_FIELD("source.seed", "source generator seed", source_task.seed, std::uint64_t),
      REPRO_FIELD("source.n_per_class", "source clips per class", source_per_class, std::size_t),
      REPRO_FIELD("source.base_hz", "lowest source fundamental", source_task.base_hz, double),
      REPRO_FIELD("source.ratio", "ratio between adjacent source fundamentals", source_task.ratio,
                  double),
      REPRO_FIELD("source.jitter", "relative per-clip pitch jitter", source_task.jitter, double),
      REPRO_FIELD("source.noise", "white-noise standard deviation", source_task.noise, double),
      REPRO_FIELD("pretrain.max_epochs", "pre-training epoch cap", pretrain.max_epochs, std::size_t),
      REPRO_FIELD("pretrain.lr", "pre-training learning rate", pretrain.lr, double),
      REPRO_FIELD("pretrain.batch_size", "pre-training batch size", pretrain.batch_size, std::size_t),
      REPRO_FIELD("pretrain.seed", "pre-training shuffle seed", pretrain.seed, std::uint64_t),
      REPRO_FIELD("pretrain.target_accuracy", "stop once source validation accuracy reaches this",
                  pretrain.target_accuracy, double),
      REPRO_FIELD("pretrain.failure_accuracy", "below this the run fails (exit 2)",
                  pretrain.failure_accuracy, double),
      REPRO_FIELD("target.kind", "synthetic | gtzan", target_kind, std::string),
      REPRO_FIELD("target.num_classes", "synthetic target classes K_T", target_task.num_classes,
                  std::size_t),
      REPRO_FIELD("target.n_per_class", "synthetic target clips per class", target_per_class,
                  std::size_t),
      REPRO_FIELD("target.clip_seconds", "synthetic target clip length", target_task.clip_seconds,
                  double),
      REPRO_FIELD("target.seed", "synthetic target generator seed", target_task.seed, std::uint64_t),
      REPRO_FIELD("target.base_hz", "lowest target fundamental", target_task.base_hz, double),
      REPRO_FIELD("target.ratio", "ratio between adjacent target fundamentals", target_task.ratio,
                  double),
      REPRO_FIELD("target.jitter", "relative per-clip pitch jitter", target_task.jitter, double),
      REPRO_FIELD("target.noise", "white-noise standard deviation", target_task.noise, double),
      Field{"target.gtzan.root", "GTZAN root (<genre>/<genre>.<idx>.wav)",
            [](const ExperimentConfig& c) { return json(c.gtzan.root.string()); },
            [](ExperimentConfig& c, const json& v) { c.gtzan.root = as<std::string>(v, "target.gtzan.root"); }},
      Field{"target.gtzan.train_list", "train split list (one relative path per line)",
            [](const ExperimentConfig& c) { return json(c.gtzan.train_list.string()); },
            [](ExperimentConfig& c, const json& v) {
              c.gtzan.train_list = as<std::string>(v, "target.gtzan.train_list");
            }},
      Field{"target.gtzan.val_list", "validation split list",
            [](const ExperimentConfig& c) { return json(c.gtzan.val_list.string()); },
            [](ExperimentConfig& c, const json& v) {
              c.gtzan.val_list = as<std::string>(v, "target.gtzan.val_list");
            }},
      Field{"target.gtzan.test_list", "test split list",
            [](const ExperimentConfig& c) { return json(c.gtzan.test_list.string()); },
            [](ExperimentConfig& c, const json& v) {
              c.gtzan.test_list = as<std::string>(v, "target.gtzan.test_list");
            }},
  };
  return all;
}

#undef REPRO_FIELD

void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else {
    out[prefix] = j;
  }
}

json nest(const std::string& path, json value) {
  json root = json::object();
  json* cur = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    if (dot == std::string::npos) {
      (*cur)[path.substr(start)] = std::move(value);
      return root;
    }
    cur = &(*cur)[path.substr(start, dot - start)];
    start = dot + 1;
  }
}

}  // namespace

json ExperimentConfig::to_json() const {
  json j = {{"preset", to_string(preset)}};
  for (const auto& f : fields()) j.merge_patch(nest(f.path, f.get(*this)));
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  std::map<std::string, json> flat;
  flatten(j, "", flat);

  Preset preset = Preset::Reference;
  if (auto it = flat.find("preset"); it != flat.end()) {
    preset = preset_from_string(as<std::string>(it->second, "preset"));
    flat.erase(it);
  }
  models::Arch arch = models::Arch::Attention;
  if (auto it = flat.find("model.arch"); it != flat.end()) {
    arch = models::arch_from_string(as<std::string>(it->second, "model.arch"));
  }
  ExperimentConfig c = preset_config(preset, arch);

  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.path] = &f;
  for (const auto& [path, value] : flat) {
    auto it = index.find(path);
    if (it == index.end()) throw ConfigError(path + ": unknown key");
    it->second->set(c, value);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

void ExperimentConfig::validate() const {
  run.validate();
  model.validate();
  if (!(min_partial_fraction >= 0.0 && min_partial_fraction <= 1.0)) {
    throw ConfigError("chunk.min_partial_fraction must be in [0, 1]");
  }
  if (source_per_class < 3) throw ConfigError("source.n_per_class must be >= 3");
  if (!(source_task.base_hz > 0.0) || !(source_task.ratio > 1.0)) {
    throw ConfigError("source.base_hz must be > 0 and source.ratio > 1");
  }
  const double nyquist = model.mel.sample_rate / 2.0;
  data::SyntheticTask src = source_task;
  src.num_classes = model.num_classes;
  if (src.fundamental(src.num_classes - 1) * (1.0 + src.jitter) >= 0.95 * nyquist) {
    throw ConfigError("source.ratio: highest source fundamental exceeds Nyquist for " +
                      std::to_string(model.num_classes) + " classes");
  }
  if (pretrain.max_epochs < 1) throw ConfigError("pretrain.max_epochs must be >= 1");
  if (pretrain.batch_size < 1) throw ConfigError("pretrain.batch_size must be >= 1");
  if (!(pretrain.failure_accuracy <= pretrain.target_accuracy)) {
    throw ConfigError("pretrain.failure_accuracy must not exceed pretrain.target_accuracy");
  }
  std::size_t k_t = 0;
  if (target_kind == "synthetic") {
    if (target_per_class < 3) throw ConfigError("target.n_per_class must be >= 3");
    if (target_task.num_classes < 2) throw ConfigError("target.num_classes must be >= 2");
    if (!(target_task.clip_seconds > 0.0)) throw ConfigError("target.clip_seconds must be > 0");
    if (target_task.fundamental(target_task.num_classes - 1) >= 0.95 * nyquist) {
      throw ConfigError("target.ratio: highest target fundamental exceeds Nyquist");
    }
    k_t = target_task.num_classes;
  } else if (target_kind == "gtzan") {
    if (gtzan.root.empty()) throw ConfigError("target.gtzan.root must be set for target.kind gtzan");
    k_t = data::kGtzanGenres.size();
  } else {
    throw ConfigError("target.kind: unknown value '" + target_kind + "' (expected synthetic | gtzan)");
  }
  const auto kind = method_kind_from_string(run.method);
  if (is_nmr(kind) && run.label_fan_in * k_t > model.num_classes) {
    throw ConfigError("run.n: n * K_T = " + std::to_string(run.label_fan_in * k_t) +
                      " exceeds model.num_classes = " + std::to_string(model.num_classes));
  }
}

std::string defaults_reference() {
  std::ostringstream os;
  os << "| key | reference (attention) | reference (patch) | desk (attention) | desk (patch) | meaning |\n";
  os << "|---|---|---|---|---|---|\n";
  const ExperimentConfig presets[] = {ExperimentConfig::reference(models::Arch::Attention),
                                      ExperimentConfig::reference(models::Arch::PatchTransformer),
                                      ExperimentConfig::desk(models::Arch::Attention),
                                      ExperimentConfig::desk(models::Arch::PatchTransformer)};
  os << "| `preset` | reference | reference | desk | desk | starting point that other keys override |\n";
  for (const auto& f : fields()) {
    os << "| `" << f.path << "` |";
    for (const auto& p : presets) os << " " << f.get(p).dump() << " |";
    os << " " << f.doc << " |\n";
  }
  return os.str();
}

// ---- pipeline ----------------------------------------------------------------

data::DatasetSplit source_split(const ExperimentConfig& cfg) {
  data::SyntheticTask task = cfg.source_task;
  task.kind = data::TaskKind::Source12Tone;
  task.num_classes = cfg.model.num_classes;
  task.clip_seconds = cfg.model.chunk_seconds;
  task.sample_rate = cfg.model.mel.sample_rate;
  return data::gen_synthetic(task, cfg.source_per_class);
}

data::DatasetSplit target_split(const ExperimentConfig& cfg) {
  if (cfg.target_kind == "gtzan") {
    data::GtzanOptions opts;
    opts.sample_rate = cfg.model.mel.sample_rate;
    return data::load_gtzan(cfg.gtzan.root, cfg.gtzan.train_list, cfg.gtzan.val_list,
                            cfg.gtzan.test_list, opts);
  }
  data::SyntheticTask task = cfg.target_task;
  task.kind = data::TaskKind::Target4Texture;
  task.sample_rate = cfg.model.mel.sample_rate;
  return data::gen_synthetic(task, cfg.target_per_class);
}

EncodedSplit encode_split(const data::DatasetSplit& split, const ExperimentConfig& cfg) {
  EncodedSplit e;
  e.train = encode(split.train, "train", cfg.chunking(), cfg.model.mel);
  e.val = encode(split.val, "val", cfg.chunking(), cfg.model.mel);
  e.test = encode(split.test, "test", cfg.chunking(), cfg.model.mel);
  e.num_classes = split.num_classes;
  return e;
}

PretrainedSource pretrain_from_config(const ExperimentConfig& cfg) {
  PretrainedSource out;
  out.model = models::build_source_model(cfg.model);
  const auto enc = encode_split(source_split(cfg), cfg);
  out.result = pretrain_source(out.model, enc.train, enc.val, cfg.pretrain);
  return out;
}

}  // namespace repro::harness
