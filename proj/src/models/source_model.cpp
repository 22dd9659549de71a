#include "repro/models/source_model.hpp"

#include <cmath>

#include "repro/dsp/chunk.hpp"
#include "repro/util/errors.hpp"

namespace repro::models {

using namespace repro::ad;
using nn::Conv2d;
using nn::conv_out;
using nn::LayerNorm;
using nn::Linear;

std::string to_string(Arch arch) {
  return arch == Arch::Attention ? "attention_rnnless" : "patch_transformer";
}

Arch arch_from_string(const std::string& name) {
  if (name == "attention_rnnless" || name == "attention") return Arch::Attention;
  if (name == "patch_transformer") return Arch::PatchTransformer;
  throw ConfigError("unknown arch '" + name + "' (expected attention_rnnless | patch_transformer)");
}

SourceConfig SourceConfig::attention_defaults() {
  SourceConfig c;
  c.arch = Arch::Attention;
  c.num_classes = 35;
  c.chunk_seconds = 1.0;
  c.tap_layer = "attention_pool";
  return c;
}

SourceConfig SourceConfig::patch_defaults() {
  SourceConfig c;
  c.arch = Arch::PatchTransformer;
  c.num_classes = 50;
  c.chunk_seconds = 10.0;
  c.tap_layer = "class_token";
  return c;
}

std::size_t SourceConfig::chunk_samples() const {
  return dsp::chunk_length(chunk_seconds, mel.sample_rate);
}

std::size_t SourceConfig::chunk_frames() const { return mel.frames_for(chunk_samples()); }

void SourceConfig::validate() const {
  mel.validate();
  if (num_classes < 2) throw ConfigError("model.num_classes must be >= 2");
  if (chunk_frames() == 0) throw ConfigError("model.chunk_seconds shorter than one analysis window");
  if (arch == Arch::Attention) {
    if (tap_layer != "attention_pool" && tap_layer != "head_hidden") {
      throw ConfigError("model.tap_layer '" + tap_layer +
                        "' invalid for attention arch (attention_pool | head_hidden)");
    }
    if (conv1_channels == 0 || conv2_channels == 0 || attention_dim == 0) {
      throw ConfigError("model: attention widths must be positive");
    }
  } else {
    if (tap_layer != "class_token" && tap_layer != "class_token_prenorm") {
      throw ConfigError("model.tap_layer '" + tap_layer +
                        "' invalid for patch_transformer (class_token | class_token_prenorm)");
    }
    if (patch == 0 || model_dim == 0 || heads == 0 || blocks == 0 || mlp_dim == 0) {
      throw ConfigError("model: transformer sizes must be positive");
    }
    if (model_dim % heads != 0) throw ConfigError("model.model_dim must be divisible by model.heads");
  }
}

nlohmann::json SourceConfig::to_json() const {
  nlohmann::json j;
  j["arch"] = to_string(arch);
  j["num_classes"] = num_classes;
  j["chunk_seconds"] = chunk_seconds;
  j["tap_layer"] = tap_layer;
  j["mel"] = {{"window", mel.window}, {"hop", mel.hop},           {"fft", mel.fft},
              {"mel_bins", mel.mel_bins}, {"floor", mel.floor}, {"sample_rate", mel.sample_rate}};
  if (arch == Arch::Attention) {
    j["conv1_channels"] = conv1_channels;
    j["conv2_channels"] = conv2_channels;
    j["attention_dim"] = attention_dim;
  } else {
    j["patch"] = patch;
    j["model_dim"] = model_dim;
    j["heads"] = heads;
    j["mlp_dim"] = mlp_dim;
    j["blocks"] = blocks;
  }
  j["seed"] = seed;
  return j;
}

SourceConfig SourceConfig::from_json(const nlohmann::json& j) {
  try {
    const Arch arch = arch_from_string(j.at("arch").get<std::string>());
    SourceConfig c = arch == Arch::Attention ? attention_defaults() : patch_defaults();
    c.num_classes = j.at("num_classes").get<std::size_t>();
    c.chunk_seconds = j.at("chunk_seconds").get<double>();
    c.tap_layer = j.at("tap_layer").get<std::string>();
    const auto& m = j.at("mel");
    c.mel.window = m.at("window").get<std::size_t>();
    c.mel.hop = m.at("hop").get<std::size_t>();
    c.mel.fft = m.at("fft").get<std::size_t>();
    c.mel.mel_bins = m.at("mel_bins").get<std::size_t>();
    c.mel.floor = m.at("floor").get<double>();
    c.mel.sample_rate = m.at("sample_rate").get<int>();
    if (arch == Arch::Attention) {
      c.conv1_channels = j.at("conv1_channels").get<std::size_t>();
      c.conv2_channels = j.at("conv2_channels").get<std::size_t>();
      c.attention_dim = j.at("attention_dim").get<std::size_t>();
    } else {
      c.patch = j.at("patch").get<std::size_t>();
      c.model_dim = j.at("model_dim").get<std::size_t>();
      c.heads = j.at("heads").get<std::size_t>();
      c.mlp_dim = j.at("mlp_dim").get<std::size_t>();
      c.blocks = j.at("blocks").get<std::size_t>();
    }
    c.seed = j.value("seed", std::uint64_t{0});
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model metadata: ") + e.what());
  }
}

TapOutput SourceModel::forward_with_tap(const Tensor& features) const {
  check_features(features);
  TapOutput out;
  out.tap = trunk(features);
  out.logits = head(out.tap);
  out.probs = softmax(out.logits);
  return out;
}

Tensor SourceModel::forward(const Tensor& features) const { return forward_with_tap(features).probs; }

bool SourceModel::frozen() const {
  for (const auto& p : params_.all()) {
    if (!p.frozen) return false;
  }
  return true;
}

std::string SourceModel::checksum() const { return parameter_checksum(params_); }

Checkpoint SourceModel::to_checkpoint() const {
  nlohmann::json meta;
  meta["kind"] = "source";
  meta["model"] = config_.to_json();
  meta["frozen"] = frozen();
  return Checkpoint::from_store(params_, meta);
}

void SourceModel::check_features(const Tensor& features) const {
  if (features.rank() != 3 || features.dim(1) != config_.mel.mel_bins) {
    throw DimensionError("source model: features must be [N," + std::to_string(config_.mel.mel_bins) +
                         ",frames], got " + shape_str(features.shape()));
  }
}

std::pair<std::size_t, std::size_t> patch_grid(std::size_t mel_bins, std::size_t frames,
                                               std::size_t patch) {
  auto count = [patch](std::size_t n) {
    std::size_t c = n / patch;
    if (n % patch >= (patch + 1) / 2 || c == 0) ++c;
    return c;
  };
  return {count(mel_bins), count(frames)};
}

namespace {

// log-mel -> 2 strided conv blocks -> per-frame projection -> attention pooling
// with a sequence-derived query -> two-layer head.
class AttentionModel final : public SourceModel {
 public:
  explicit AttentionModel(const SourceConfig& cfg) : SourceModel(cfg) {
    Rng rng(derive_seed(cfg.seed, "source_init"));
    const std::size_t mel2 = conv_out(conv_out(cfg.mel.mel_bins, 3, 2, 1), 3, 2, 1);
    conv1_ = nn::make_conv(params_, "trunk.conv1", 1, cfg.conv1_channels, 3, 2, 1, rng);
    conv2_ = nn::make_conv(params_, "trunk.conv2", cfg.conv1_channels, cfg.conv2_channels, 3, 2, 1, rng);
    proj_ = nn::make_linear(params_, "trunk.proj", cfg.conv2_channels * mel2, cfg.attention_dim, rng);
    query_ = nn::make_linear(params_, "trunk.query", cfg.attention_dim, cfg.attention_dim, rng);
    hidden_ = nn::make_linear(params_, "head.hidden", cfg.attention_dim, cfg.attention_dim, rng);
    out_ = nn::make_linear(params_, "head.out", cfg.attention_dim, cfg.num_classes, rng);
  }

  std::size_t tap_dim() const override { return config_.attention_dim; }

  Tensor trunk(const Tensor& features) const override {
    const std::size_t n = features.dim(0);
    Tensor x = reshape(features, {n, 1, features.dim(1), features.dim(2)});
    x = relu(conv1_(x));
    x = relu(conv2_(x));
    const std::size_t ch = x.dim(1), mel = x.dim(2), frames = x.dim(3);
    x = reshape(permute(x, {0, 3, 1, 2}), {n, frames, ch * mel});
    Tensor h = relu(proj_(x));  // [n, frames, d]
    const std::size_t d = h.dim(2);
    Tensor q = reshape(query_(mean_axis(h, 1)), {n, d, 1});
    Tensor scores = scale(reshape(bmm(h, q), {n, frames}), 1.0f / std::sqrt(static_cast<float>(d)));
    Tensor weights = reshape(softmax(scores), {n, 1, frames});
    Tensor pooled = reshape(bmm(weights, h), {n, d});
    if (config_.tap_layer == "attention_pool") return pooled;
    return relu(hidden_(pooled));
  }

  Tensor head(const Tensor& tap) const override {
    if (config_.tap_layer == "attention_pool") return out_(relu(hidden_(tap)));
    return out_(tap);
  }

  void replace_classifier(std::size_t num_classes, Rng& rng) override {
    params_.remove("head.out.weight");
    params_.remove("head.out.bias");
    out_ = nn::make_linear(params_, "head.out", config_.attention_dim, num_classes, rng);
    config_.num_classes = num_classes;
  }

 private:
  Conv2d conv1_, conv2_;
  Linear proj_, query_, hidden_, out_;
};

struct EncoderBlock {
  LayerNorm norm1, norm2;
  Linear qkv, attn_out, mlp_in, mlp_out;
};

// log-mel -> 16x16 patches -> linear embedding + class token + learned
// positions -> pre-norm encoder blocks -> final norm on the class token ->
// linear classifier.
class PatchTransformer final : public SourceModel {
 public:
  explicit PatchTransformer(const SourceConfig& cfg) : SourceModel(cfg) {
    Rng rng(derive_seed(cfg.seed, "source_init"));
    const auto [rows, cols] = patch_grid(cfg.mel.mel_bins, cfg.chunk_frames(), cfg.patch);
    grid_rows_ = rows;
    grid_cols_ = cols;
    const std::size_t d = cfg.model_dim;
    embed_ = nn::make_linear(params_, "trunk.patch_embed", cfg.patch * cfg.patch, d, rng);
    cls_ = params_.add_normal("trunk.cls_token", {1, 1, d}, 0.02, rng);
    pos_ = params_.add_normal("trunk.pos_embed", {rows * cols + 1, d}, 0.02, rng);
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      const std::string p = "trunk.block" + std::to_string(b);
      EncoderBlock blk;
      blk.norm1 = nn::make_layer_norm(params_, p + ".norm1", d);
      blk.qkv = nn::make_linear(params_, p + ".qkv", d, 3 * d, rng);
      blk.attn_out = nn::make_linear(params_, p + ".attn_out", d, d, rng);
      blk.norm2 = nn::make_layer_norm(params_, p + ".norm2", d);
      blk.mlp_in = nn::make_linear(params_, p + ".mlp_in", d, cfg.mlp_dim, rng);
      blk.mlp_out = nn::make_linear(params_, p + ".mlp_out", cfg.mlp_dim, d, rng);
      blocks_.push_back(blk);
    }
    final_norm_ = nn::make_layer_norm(params_, "trunk.final_norm", d);
    out_ = nn::make_linear(params_, "head.out", d, cfg.num_classes, rng);
  }

  std::size_t tap_dim() const override { return config_.model_dim; }
  std::size_t sequence_length() const { return grid_rows_ * grid_cols_ + 1; }

  Tensor trunk(const Tensor& features) const override {
    const std::size_t n = features.dim(0), p = config_.patch, d = config_.model_dim;
    const auto [rows, cols] = patch_grid(features.dim(1), features.dim(2), p);
    if (rows != grid_rows_ || cols != grid_cols_) {
      throw DimensionError("patch transformer: feature map " + shape_str(features.shape()) +
                           " gives a " + std::to_string(rows) + "x" + std::to_string(cols) +
                           " patch grid, model expects " + std::to_string(grid_rows_) + "x" +
                           std::to_string(grid_cols_));
    }
    Tensor x = resize_end(features, {n, rows * p, cols * p});
    x = reshape(x, {n, rows, p, cols, p});
    x = reshape(permute(x, {0, 1, 3, 2, 4}), {n, rows * cols, p * p});
    x = embed_(x);
    std::vector<Tensor> cls(n, cls_);
    x = concat(std::vector<Tensor>{concat(cls, std::size_t{0}), x}, std::size_t{1});
    x = add_trailing(x, pos_);
    for (const auto& blk : blocks_) x = block(blk, x);
    Tensor token = reshape(slice(x, 1, 0, 1), {n, d});
    if (config_.tap_layer == "class_token") return final_norm_(token);
    return token;
  }

  Tensor head(const Tensor& tap) const override {
    if (config_.tap_layer == "class_token") return out_(tap);
    return out_(final_norm_(tap));
  }

  void replace_classifier(std::size_t num_classes, Rng& rng) override {
    params_.remove("head.out.weight");
    params_.remove("head.out.bias");
    out_ = nn::make_linear(params_, "head.out", config_.model_dim, num_classes, rng);
    config_.num_classes = num_classes;
  }

 private:
  Tensor block(const EncoderBlock& blk, const Tensor& x) const {
    const std::size_t n = x.dim(0), s = x.dim(1), d = x.dim(2);
    const std::size_t h = config_.heads, dh = d / h;
    Tensor qkv = blk.qkv(blk.norm1(x));  // [n, s, 3d]
    auto split_heads = [&](std::size_t which) {
      Tensor t = reshape(slice(qkv, 2, which * d, d), {n, s, h, dh});
      return reshape(permute(t, {0, 2, 1, 3}), {n * h, s, dh});
    };
    Tensor q = split_heads(0), k = split_heads(1), v = split_heads(2);
    Tensor att = softmax(scale(bmm(q, k, false, true), 1.0f / std::sqrt(static_cast<float>(dh))));
    Tensor ctx = reshape(bmm(att, v), {n, h, s, dh});
    ctx = reshape(permute(ctx, {0, 2, 1, 3}), {n, s, d});
    Tensor y = add(x, blk.attn_out(ctx));
    return add(y, blk.mlp_out(relu(blk.mlp_in(blk.norm2(y)))));
  }

  std::size_t grid_rows_ = 0, grid_cols_ = 0;
  Linear embed_;
  Tensor cls_, pos_;
  std::vector<EncoderBlock> blocks_;
  LayerNorm final_norm_;
  Linear out_;
};

}  // namespace

std::unique_ptr<SourceModel> build_attention_model(const SourceConfig& config) {
  if (config.arch != Arch::Attention) throw ConfigError("build_attention_model: arch must be attention");
  config.validate();
  return std::make_unique<AttentionModel>(config);
}

std::unique_ptr<SourceModel> build_patch_transformer(const SourceConfig& config) {
  if (config.arch != Arch::PatchTransformer) {
    throw ConfigError("build_patch_transformer: arch must be patch_transformer");
  }
  config.validate();
  return std::make_unique<PatchTransformer>(config);
}

std::unique_ptr<SourceModel> build_source_model(const SourceConfig& config) {
  return config.arch == Arch::Attention ? build_attention_model(config)
                                        : build_patch_transformer(config);
}

std::size_t analytic_parameter_count(const SourceConfig& c) {
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto conv = [](std::size_t in, std::size_t out, std::size_t k) { return out * in * k * k + out; };
  if (c.arch == Arch::Attention) {
    const std::size_t mel2 = conv_out(conv_out(c.mel.mel_bins, 3, 2, 1), 3, 2, 1);
    const std::size_t d = c.attention_dim;
    return conv(1, c.conv1_channels, 3) + conv(c.conv1_channels, c.conv2_channels, 3) +
           linear(c.conv2_channels * mel2, d) + 2 * linear(d, d) + linear(d, c.num_classes);
  }
  const auto [rows, cols] = patch_grid(c.mel.mel_bins, c.chunk_frames(), c.patch);
  const std::size_t d = c.model_dim;
  const std::size_t block = 4 * d + linear(d, 3 * d) + linear(d, d) + linear(d, c.mlp_dim) +
                            linear(c.mlp_dim, d);
  return linear(c.patch * c.patch, d) + d + (rows * cols + 1) * d + c.blocks * block + 2 * d +
         linear(d, c.num_classes);
}

std::unique_ptr<SourceModel> clone_model(const SourceModel& model) {
  return load_source_model(model.to_checkpoint());
}

void save_source_model(const SourceModel& model, const std::filesystem::path& path) {
  model.to_checkpoint().save(path);
}

std::unique_ptr<SourceModel> load_source_model(const Checkpoint& ck) {
  if (ck.metadata.value("kind", std::string()) != "source") {
    throw FormatError("checkpoint: metadata kind is not 'source'");
  }
  auto model = build_source_model(SourceConfig::from_json(ck.metadata.at("model")));
  ck.load_into(model->params());
  if (ck.metadata.value("frozen", false)) model->freeze();
  return model;
}

std::unique_ptr<SourceModel> load_source_model(const std::filesystem::path& path) {
  return load_source_model(Checkpoint::load(path));
}

}  // namespace repro::models
