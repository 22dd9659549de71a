#include "repro/reprogram/reprogram.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "repro/util/errors.hpp"

namespace repro::reprog {

using namespace repro::ad;

std::string to_string(Method m) {
  switch (m) {
    case Method::II: return "ii";
    case Method::ID: return "id";
    case Method::IDS: return "ids";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  if (name == "ii") return Method::II;
  if (name == "id") return Method::ID;
  if (name == "ids") return Method::IDS;
  throw ConfigError("unknown reprogramming method '" + name + "' (expected ii | id | ids)");
}

// ---- label mapping ---------------------------------------------------------

LabelMap LabelMap::blocks(std::size_t num_source, std::size_t num_target, std::size_t n) {
  if (n == 0 || num_target == 0) throw ConfigError("label map: n and K_T must be positive");
  std::vector<std::vector<std::size_t>> a(num_target);
  for (std::size_t t = 0; t < num_target; ++t) {
    for (std::size_t j = 0; j < n; ++j) a[t].push_back(t * n + j);
  }
  return explicit_map(num_source, std::move(a));
}

LabelMap LabelMap::explicit_map(std::size_t num_source,
                                std::vector<std::vector<std::size_t>> assignment) {
  LabelMap lm;
  lm.num_source_ = num_source;
  lm.assignment_ = std::move(assignment);
  lm.validate();
  lm.build_matrix();
  return lm;
}

void LabelMap::validate() const {
  if (assignment_.empty()) throw ConfigError("label map: no target classes");
  const std::size_t n = assignment_.front().size();
  if (n == 0) throw ConfigError("label map: empty source set for target 0");
  if (n * assignment_.size() > num_source_) {
    throw ConfigError("label map: n * K_T = " + std::to_string(n * assignment_.size()) +
                      " exceeds K_S = " + std::to_string(num_source_));
  }
  std::set<std::size_t> seen;
  for (std::size_t t = 0; t < assignment_.size(); ++t) {
    if (assignment_[t].size() != n) {
      throw ConfigError("label map: target " + std::to_string(t) + " has " +
                        std::to_string(assignment_[t].size()) + " sources, expected " +
                        std::to_string(n));
    }
    for (std::size_t s : assignment_[t]) {
      if (s >= num_source_) {
        throw ConfigError("label map: source index " + std::to_string(s) + " >= K_S = " +
                          std::to_string(num_source_));
      }
      if (!seen.insert(s).second) {
        throw ConfigError("label map: source index " + std::to_string(s) + " assigned twice");
      }
    }
  }
}

void LabelMap::build_matrix() {
  const std::size_t kt = assignment_.size();
  std::vector<float> w(kt * num_source_, 0.0f);
  const float inv = 1.0f / static_cast<float>(fan_in());
  for (std::size_t t = 0; t < kt; ++t) {
    for (std::size_t s : assignment_[t]) w[t * num_source_ + s] = inv;
  }
  matrix_ = Tensor({kt, num_source_}, std::move(w));
}

nlohmann::json LabelMap::to_json() const {
  return {{"num_source", num_source_}, {"n", fan_in()}, {"assignment", assignment_}};
}

LabelMap LabelMap::from_json(const nlohmann::json& j) {
  try {
    return explicit_map(j.at("num_source").get<std::size_t>(),
                        j.at("assignment").get<std::vector<std::vector<std::size_t>>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("label map: ") + e.what());
  }
}

Tensor map_labels(const LabelMap& lm, const Tensor& source_probs) {
  if (source_probs.rank() != 2 || source_probs.dim(1) != lm.num_source()) {
    throw DimensionError("map_labels: expected [N," + std::to_string(lm.num_source()) +
                         "], got " + shape_str(source_probs.shape()));
  }
  return linear(source_probs, lm.matrix(), Tensor());
}

template <typename T>
BasicTensor<T> segment_average(const BasicTensor<T>& rows, std::span<const std::size_t> counts) {
  if (rows.rank() != 2) {
    throw DimensionError("segment_average: expected [R,K], got " + shape_str(rows.shape()));
  }
  if (counts.empty()) throw EmptyInputError("segment_average: no segments");
  const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (total != rows.dim(0)) {
    throw DimensionError("segment_average: counts sum to " + std::to_string(total) + ", rows " +
                         std::to_string(rows.dim(0)));
  }
  const std::size_t k = rows.dim(1), b = counts.size();
  std::vector<std::size_t> offsets(b + 1, 0);
  for (std::size_t i = 0; i < b; ++i) {
    if (counts[i] == 0) throw EmptyInputError("segment_average: empty segment " + std::to_string(i));
    offsets[i + 1] = offsets[i] + counts[i];
  }
  std::vector<T> out(b * k);
  std::vector<T> column;
  const auto& x = rows.data();
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      column.clear();
      for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) column.push_back(x[r * k + j]);
      std::sort(column.begin(), column.end());
      double acc = 0.0;
      for (T v : column) acc += static_cast<double>(v);
      out[s * k + j] = static_cast<T>(acc / static_cast<double>(counts[s]));
    }
  }
  auto ri = rows.impl_ptr();
  return make_result<T>({b, k}, std::move(out), "segment_average", {rows},
                            [ri, offsets, k, b](TensorImpl<T>& o) {
                              T* g = ri->grad_buffer();
                              for (std::size_t s = 0; s < b; ++s) {
                                const T inv = T(1) / static_cast<T>(offsets[s + 1] - offsets[s]);
                                for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) {
                                  for (std::size_t j = 0; j < k; ++j) g[r * k + j] += o.grad[s * k + j] * inv;
                                }
                              }
                            });
}

template BasicTensor<float> segment_average(const BasicTensor<float>&, std::span<const std::size_t>);
template BasicTensor<double> segment_average(const BasicTensor<double>&, std::span<const std::size_t>);

Tensor chunk_average(const Tensor& per_chunk) {
  if (per_chunk.rank() != 2) {
    throw DimensionError("chunk_average: expected [C,K], got " + shape_str(per_chunk.shape()));
  }
  const std::size_t counts[1] = {per_chunk.dim(0)};
  return reshape(segment_average<float>(per_chunk, counts), {per_chunk.dim(1)});
}

// ---- adapters --------------------------------------------------------------

nlohmann::json AdapterConfig::to_json() const {
  return {{"id_channels", id_channels}, {"id_kernel", id_kernel}, {"skip_hidden", skip_hidden}};
}

AdapterConfig AdapterConfig::from_json(const nlohmann::json& j) {
  AdapterConfig c;
  c.id_channels = j.value("id_channels", c.id_channels);
  c.id_kernel = j.value("id_kernel", c.id_kernel);
  c.skip_hidden = j.value("skip_hidden", c.skip_hidden);
  return c;
}

IINoise IINoise::create(ParameterStore& store, std::size_t length) {
  return IINoise{store.add("adapter.ii.theta", {length})};
}

Tensor apply_ii(const IINoise& noise, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != noise.length()) {
    throw DimensionError("apply_ii: chunk length " +
                         (x.rank() == 2 ? std::to_string(x.dim(1)) : shape_str(x.shape())) +
                         " != theta length " + std::to_string(noise.length()));
  }
  return add_trailing(x, noise.theta);
}

FeatureTransform FeatureTransform::create(ParameterStore& store, std::size_t channels,
                                          std::size_t kernel, Rng& rng) {
  if (channels == 0 || kernel % 2 == 0) {
    throw ConfigError("adapter: id_channels must be positive and id_kernel odd");
  }
  const std::size_t pad = kernel / 2;
  FeatureTransform t;
  t.conv1 = nn::make_conv(store, "adapter.T.conv1", 1, channels, kernel, 1, pad, rng);
  t.conv2 = nn::make_conv(store, "adapter.T.conv2", channels, channels, kernel, 1, pad, rng);
  t.conv3 = nn::make_conv(store, "adapter.T.conv3", channels, 1, kernel, 1, pad, rng, nn::Init::Zero);
  return t;
}

Tensor apply_id(const FeatureTransform& t, const Tensor& features) {
  if (features.rank() != 3) {
    throw DimensionError("apply_id: expected [N,M,F], got " + shape_str(features.shape()));
  }
  const std::size_t n = features.dim(0), m = features.dim(1), f = features.dim(2);
  Tensor x = reshape(features, {n, 1, m, f});
  Tensor h = relu(t.conv1(x));
  h = relu(t.conv2(h));
  return add(features, reshape(t.conv3(h), {n, m, f}));
}

SkipAdapter SkipAdapter::create(ParameterStore& store, std::size_t dim, std::size_t hidden, Rng& rng) {
  if (dim == 0 || hidden == 0) throw ConfigError("adapter: skip_hidden must be positive");
  SkipAdapter s;
  s.in = nn::make_linear(store, "adapter.S.in", dim, hidden, rng);
  s.out = nn::make_linear(store, "adapter.S.out", hidden, dim, rng, nn::Init::Zero);
  return s;
}

Tensor apply_ids(const SkipAdapter& s, const models::SourceModel& model, const Tensor& features) {
  Tensor v = model.forward_with_tap(features).tap;
  if (v.rank() != 2 || v.dim(1) != s.dim()) {
    throw DimensionError("apply_ids: tap " + shape_str(v.shape()) + " vs adapter dim " +
                         std::to_string(s.dim()));
  }
  Tensor shifted = add(v, s.out(relu(s.in(v))));
  return softmax(model.head(shifted));
}

std::size_t ii_parameter_count(std::size_t chunk_samples) { return chunk_samples; }

std::size_t id_parameter_count(std::size_t c, std::size_t k) {
  return (k * k * c + c) + (k * k * c * c + c) + (k * k * c + 1);
}

std::size_t ids_parameter_count(std::size_t d, std::size_t h) { return d * h + h + h * d + d; }

Reprogrammer::Reprogrammer(Method method, std::shared_ptr<const models::SourceModel> model,
                           LabelMap labels, AdapterConfig config, std::uint64_t seed)
    : method_(method), model_(std::move(model)), labels_(std::move(labels)), config_(config) {
  if (!model_) throw UsageError("reprogrammer: null source model");
  if (!model_->frozen()) throw ContractViolation("reprogrammer: source model must be frozen");
  if (labels_.num_source() != model_->num_classes()) {
    throw ConfigError("label map: K_S = " + std::to_string(labels_.num_source()) +
                      " but the source model has " + std::to_string(model_->num_classes()) +
                      " classes");
  }
  Rng rng(derive_seed(seed, "adapter_init:" + to_string(method)));
  switch (method_) {
    case Method::II:
      ii_ = IINoise::create(params_, model_->config().chunk_samples());
      break;
    case Method::ID:
      id_ = FeatureTransform::create(params_, config_.id_channels, config_.id_kernel, rng);
      break;
    case Method::IDS: {
      ids_ = SkipAdapter::create(params_, model_->tap_dim(), config_.skip_hidden, rng);
      NoGradGuard guard;
      try {
        Tensor probe = model_->head(Tensor::zeros(model_->tap_shape(1)));
        if (probe.rank() != 2 || probe.dim(1) != model_->num_classes()) throw DimensionError("head");
      } catch (const DimensionError& e) {
        throw ConfigError(std::string("adapter: tap/classifier dimension mismatch: ") + e.what());
      }
      break;
    }
  }
}

Tensor Reprogrammer::source_probs(const Tensor& input) const {
  switch (method_) {
    case Method::II:
      return model_->forward(dsp::log_mel_op(apply_ii(ii_, input), model_->config().mel));
    case Method::ID:
      return model_->forward(apply_id(id_, input));
    case Method::IDS:
      return apply_ids(ids_, *model_, input);
  }
  throw UsageError("reprogrammer: bad method");
}

Tensor Reprogrammer::chunk_scores(const Tensor& input) const {
  return map_labels(labels_, source_probs(input));
}

models::Checkpoint Reprogrammer::to_checkpoint() const {
  nlohmann::json meta;
  meta["kind"] = "adapter";
  meta["method"] = to_string(method_);
  meta["label_map"] = labels_.to_json();
  meta["adapter"] = config_.to_json();
  meta["source_checksum"] = model_->checksum();
  return models::Checkpoint::from_store(params_, meta);
}

std::unique_ptr<Reprogrammer> Reprogrammer::from_checkpoint(
    const models::Checkpoint& ck, std::shared_ptr<const models::SourceModel> model) {
  if (ck.metadata.value("kind", std::string()) != "adapter") {
    throw FormatError("checkpoint: metadata kind is not 'adapter'");
  }
  const std::string saved = ck.metadata.value("source_checksum", std::string());
  if (!saved.empty() && saved != model->checksum()) {
    throw ConfigError("adapter checkpoint was trained against a different source model");
  }
  auto r = std::make_unique<Reprogrammer>(method_from_string(ck.metadata.at("method").get<std::string>()),
                                          std::move(model), LabelMap::from_json(ck.metadata.at("label_map")),
                                          AdapterConfig::from_json(ck.metadata.at("adapter")), 0);
  ck.load_into(r->params());
  return r;
}

}  // namespace repro::reprog
