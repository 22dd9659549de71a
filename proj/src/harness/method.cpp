#include "repro/harness/method.hpp"

#include <algorithm>

#include "repro/util/errors.hpp"

namespace repro::harness {

using namespace repro::ad;

EncodedSet encode(const std::vector<data::Clip>& clips, const std::string& name,
                  const dsp::ChunkOptions& chunking, const dsp::MelConfig& mel) {
  EncodedSet set;
  set.name = name;
  set.mel_bins = mel.mel_bins;
  for (const auto& clip : clips) {
    if (clip.wave.sample_rate != mel.sample_rate) {
      throw UsageError("encode: clip " + clip.id + " has rate " + std::to_string(clip.wave.sample_rate));
    }
    const auto pieces = dsp::chunk(clip.wave, chunking);
    const std::size_t c = pieces.chunks.size();
    const std::size_t len = pieces.chunks.front().samples.size();
    set.chunk_samples = len;
    EncodedClip e;
    e.id = clip.id;
    e.label = clip.label;
    e.chunks = c;
    e.waves.reserve(c * len);
    for (const auto& p : pieces.chunks) e.waves.insert(e.waves.end(), p.samples.begin(), p.samples.end());
    NoGradGuard guard;
    Tensor feats = dsp::log_mel_op(Tensor({c, len}, e.waves), mel);
    set.frames = feats.dim(2);
    e.features.assign(feats.data().begin(), feats.data().end());
    set.clips.push_back(std::move(e));
  }
  return set;
}

Tensor TargetMethod::representation(const EncodedSet&, std::size_t) const {
  throw UsageError(name() + ": method does not consume clip representations");
}

Batch make_batch(const TargetMethod& method, const EncodedSet& set,
                 std::span<const std::size_t> clips) {
  Batch b;
  std::vector<float> data;
  std::size_t rows = 0;
  const InputKind kind = method.input_kind();
  std::size_t rep_dim = 0;
  for (std::size_t i : clips) {
    const auto& c = set.clips.at(i);
    b.labels.push_back(c.label);
    switch (kind) {
      case InputKind::Waveforms:
        data.insert(data.end(), c.waves.begin(), c.waves.end());
        b.counts.push_back(c.chunks);
        rows += c.chunks;
        break;
      case InputKind::Features:
        data.insert(data.end(), c.features.begin(), c.features.end());
        b.counts.push_back(c.chunks);
        rows += c.chunks;
        break;
      case InputKind::Representation: {
        Tensor r = method.representation(set, i);
        rep_dim = r.size();
        data.insert(data.end(), r.data().begin(), r.data().end());
        b.counts.push_back(1);
        rows += 1;
        break;
      }
    }
  }
  switch (kind) {
    case InputKind::Waveforms: b.input = Tensor({rows, set.chunk_samples}, std::move(data)); break;
    case InputKind::Features: b.input = Tensor({rows, set.mel_bins, set.frames}, std::move(data)); break;
    case InputKind::Representation: b.input = Tensor({rows, rep_dim}, std::move(data)); break;
  }
  return b;
}

Tensor clip_scores(const TargetMethod& method, const Batch& batch) {
  return reprog::segment_average<float>(method.chunk_scores(batch.input), batch.counts);
}

Tensor batch_loss(const TargetMethod& method, const Batch& batch) {
  return cross_entropy_probs(row_normalize(clip_scores(method, batch)), batch.labels);
}

double accuracy(const TargetMethod& method, const EncodedSet& set, std::size_t batch_size) {
  if (set.clips.empty()) throw EmptyInputError("accuracy: empty set " + set.name);
  NoGradGuard guard;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.clips.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.clips.size(), start + batch_size); ++i) idx.push_back(i);
    Batch b = make_batch(method, set, idx);
    auto pred = argmax_rows(clip_scores(method, b));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.clips.size());
}

std::string to_string(MethodKind kind) {
  switch (kind) {
    case MethodKind::II: return "ii";
    case MethodKind::ID: return "id";
    case MethodKind::IDS: return "ids";
    case MethodKind::BlCnn: return "bl_cnn";
    case MethodKind::BlFt: return "bl_ft";
    case MethodKind::BlRep: return "bl_rep";
    case MethodKind::Source: return "source";
  }
  return "?";
}

MethodKind method_kind_from_string(const std::string& name) {
  for (auto k : {MethodKind::II, MethodKind::ID, MethodKind::IDS, MethodKind::BlCnn, MethodKind::BlFt,
                 MethodKind::BlRep, MethodKind::Source}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("unknown method '" + name + "' (expected ii | id | ids | bl_cnn | bl_ft | bl_rep)");
}

bool is_nmr(MethodKind kind) {
  return kind == MethodKind::II || kind == MethodKind::ID || kind == MethodKind::IDS;
}

namespace {

nlohmann::json method_meta(const std::string& method) {
  nlohmann::json meta;
  meta["kind"] = "method";
  meta["method"] = method;
  return meta;
}

class NmrMethod final : public TargetMethod {
 public:
  explicit NmrMethod(std::unique_ptr<reprog::Reprogrammer> r) : r_(std::move(r)) {}

  std::string name() const override { return reprog::to_string(r_->method()); }
  InputKind input_kind() const override {
    return r_->needs_waveforms() ? InputKind::Waveforms : InputKind::Features;
  }
  Tensor chunk_scores(const Tensor& input) const override { return r_->chunk_scores(input); }
  ParameterStore& trainable_store() override { return r_->params(); }
  const ParameterStore& trainable_store() const override { return r_->params(); }
  std::size_t total_count() const override {
    return r_->params().count_scalars(false) + r_->model().parameter_count();
  }
  const models::SourceModel* frozen_source() const override { return &r_->model(); }
  models::Checkpoint to_checkpoint() const override { return r_->to_checkpoint(); }

  const reprog::Reprogrammer& reprogrammer() const { return *r_; }

 private:
  std::unique_ptr<reprog::Reprogrammer> r_;
};

// Trains a whole source model: pre-training (own classes) or fine-tuning.
class WholeModelMethod final : public TargetMethod {
 public:
  WholeModelMethod(std::string name, std::unique_ptr<models::SourceModel> model)
      : name_(std::move(name)), model_(std::move(model)) {}
  WholeModelMethod(std::string name, std::shared_ptr<models::SourceModel> model)
      : name_(std::move(name)), model_(std::move(model)) {}

  std::string name() const override { return name_; }
  InputKind input_kind() const override { return InputKind::Features; }
  Tensor chunk_scores(const Tensor& input) const override { return model_->forward(input); }
  ParameterStore& trainable_store() override { return model_->params(); }
  const ParameterStore& trainable_store() const override { return model_->params(); }
  models::Checkpoint to_checkpoint() const override {
    auto ck = model_->to_checkpoint();
    ck.metadata["method"] = name_;
    return ck;
  }

 private:
  std::string name_;
  std::shared_ptr<models::SourceModel> model_;
};

class BlCnnMethod final : public TargetMethod {
 public:
  BlCnnMethod(const baselines::BlCnnConfig& cfg, std::uint64_t seed) : net_(cfg, seed) {}

  std::string name() const override { return "bl_cnn"; }
  InputKind input_kind() const override { return InputKind::Features; }
  Tensor chunk_scores(const Tensor& input) const override { return softmax(net_.forward(input)); }
  ParameterStore& trainable_store() override { return net_.params(); }
  const ParameterStore& trainable_store() const override { return net_.params(); }
  models::Checkpoint to_checkpoint() const override {
    auto meta = method_meta("bl_cnn");
    meta["channels"] = net_.config().channels;
    meta["blocks"] = net_.config().blocks;
    meta["num_classes"] = net_.config().num_classes;
    return models::Checkpoint::from_store(net_.params(), meta);
  }

 private:
  baselines::BlCnn net_;
};

class ProbeMethod final : public TargetMethod {
 public:
  ProbeMethod(std::shared_ptr<const models::SourceModel> source, std::size_t num_classes,
              std::size_t hidden, std::uint64_t seed)
      : source_(std::move(source)), probe_(source_->tap_dim(), num_classes, seed, hidden) {}

  std::string name() const override { return "bl_rep"; }
  InputKind input_kind() const override { return InputKind::Representation; }
  Tensor chunk_scores(const Tensor& input) const override { return softmax(probe_.forward(input)); }
  ParameterStore& trainable_store() override { return probe_.params(); }
  const ParameterStore& trainable_store() const override { return probe_.params(); }
  std::size_t total_count() const override {
    return probe_.params().count_scalars(false) + source_->parameter_count();
  }
  const models::SourceModel* frozen_source() const override { return source_.get(); }

  Tensor representation(const EncodedSet& set, std::size_t clip) const override {
    auto& cache = cache_[&set];
    if (cache.empty()) cache.resize(set.clips.size());
    if (!cache.at(clip).defined()) {
      const auto& c = set.clips[clip];
      cache[clip] = baselines::clip_representation(*source_, Tensor({c.chunks, set.mel_bins, set.frames}, c.features));
    }
    return cache[clip];
  }

  models::Checkpoint to_checkpoint() const override {
    auto meta = method_meta("bl_rep");
    meta["source_checksum"] = source_->checksum();
    meta["hidden"] = probe_.hidden_size();
    meta["num_classes"] = probe_.num_classes();
    return models::Checkpoint::from_store(probe_.params(), meta);
  }

 private:
  std::shared_ptr<const models::SourceModel> source_;
  baselines::RepresentationProbe probe_;
  mutable std::map<const EncodedSet*, std::vector<Tensor>> cache_;
};

}  // namespace

std::unique_ptr<TargetMethod> make_method(MethodKind kind, std::shared_ptr<models::SourceModel> source,
                                          const MethodOptions& options, std::uint64_t seed) {
  if (kind != MethodKind::BlCnn && !source) throw UsageError("make_method: source model required");
  switch (kind) {
    case MethodKind::II:
    case MethodKind::ID:
    case MethodKind::IDS: {
      const auto m = kind == MethodKind::II ? reprog::Method::II
                     : kind == MethodKind::ID ? reprog::Method::ID
                                              : reprog::Method::IDS;
      auto lm = reprog::LabelMap::blocks(source->num_classes(), options.num_classes, options.label_fan_in);
      return std::make_unique<NmrMethod>(
          std::make_unique<reprog::Reprogrammer>(m, source, std::move(lm), options.adapter, seed));
    }
    case MethodKind::BlCnn: {
      auto cfg = options.bl_cnn;
      cfg.num_classes = options.num_classes;
      return std::make_unique<BlCnnMethod>(cfg, seed);
    }
    case MethodKind::BlFt:
      return std::make_unique<WholeModelMethod>(
          "bl_ft", baselines::fine_tune_model(*source, options.num_classes, seed));
    case MethodKind::BlRep:
      if (!source->frozen()) throw ContractViolation("bl_rep: source model must be frozen");
      return std::make_unique<ProbeMethod>(source, options.num_classes, options.probe_hidden, seed);
    case MethodKind::Source:
      if (source->frozen()) throw ContractViolation("pretraining: source model is frozen");
      return std::make_unique<WholeModelMethod>("source", source);
  }
  throw UsageError("make_method: bad kind");
}

std::unique_ptr<TargetMethod> load_method(const models::Checkpoint& ck,
                                          std::shared_ptr<models::SourceModel> source) {
  const auto& meta = ck.metadata;
  const std::string kind = meta.value("kind", "");
  const std::string method = meta.value("method", "");
  try {
    if (kind == "adapter") {
      if (!source) throw UsageError("load_method: adapter checkpoints need the source model");
      return std::make_unique<NmrMethod>(reprog::Reprogrammer::from_checkpoint(ck, source));
    }
    if (kind == "source" && method == "bl_ft") {
      auto model = models::load_source_model(ck);
      model->unfreeze();
      return std::make_unique<WholeModelMethod>("bl_ft", std::move(model));
    }
    if (kind == "method" && method == "bl_cnn") {
      baselines::BlCnnConfig cfg;
      cfg.channels = meta.at("channels").get<std::size_t>();
      cfg.blocks = meta.at("blocks").get<std::size_t>();
      cfg.num_classes = meta.at("num_classes").get<std::size_t>();
      auto m = std::make_unique<BlCnnMethod>(cfg, 0);
      ck.load_into(m->trainable_store());
      return m;
    }
    if (kind == "method" && method == "bl_rep") {
      if (!source) throw UsageError("load_method: bl_rep checkpoints need the source model");
      if (meta.at("source_checksum").get<std::string>() != source->checksum()) {
        throw FormatError("load_method: bl_rep checkpoint was trained on a different source model");
      }
      auto m = std::make_unique<ProbeMethod>(source, meta.at("num_classes").get<std::size_t>(),
                                             meta.at("hidden").get<std::size_t>(), 0);
      ck.load_into(m->trainable_store());
      return m;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("method checkpoint metadata: ") + e.what());
  }
  throw FormatError("checkpoint is not a trained method (kind '" + kind + "', method '" + method + "')");
}

const reprog::Reprogrammer* as_reprogrammer(const TargetMethod& method) {
  const auto* nmr = dynamic_cast<const NmrMethod*>(&method);
  return nmr ? &nmr->reprogrammer() : nullptr;
}

}  // namespace repro::harness
