#include "repro/harness/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "repro/autodiff/adam.hpp"
#include "repro/util/errors.hpp"

namespace repro::harness {

using namespace repro::ad;

void RunConfig::validate() const {
  method_kind_from_string(method);
  if (epochs < 1) throw ConfigError("run.epochs must be >= 1");
  if (seeds.empty()) throw ConfigError("run.seeds must not be empty");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("run.lr must be a finite non-negative number");
  if (batch_size < 1) throw ConfigError("run.batch_size must be >= 1");
  if (label_fan_in < 1) throw ConfigError("run.n must be >= 1");
}

MethodOptions RunConfig::method_options(std::size_t num_classes) const {
  MethodOptions o;
  o.num_classes = num_classes;
  o.label_fan_in = label_fan_in;
  o.adapter = adapter;
  o.bl_cnn.channels = bl_cnn_channels;
  o.probe_hidden = probe_hidden;
  return o;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string grad_report(const std::vector<Parameter*>& params) {
  std::ostringstream os;
  for (const auto* p : params) {
    double sq = 0.0;
    if (p->tensor.has_grad()) {
      for (float g : p->tensor.grad()) sq += static_cast<double>(g) * g;
    }
    os << "\n  " << p->name << " |grad| = " << std::sqrt(sq);
  }
  return os.str();
}

void assert_trainable_set(const TargetMethod& method, const std::vector<Parameter*>& params) {
  const models::SourceModel* src = method.frozen_source();
  for (const auto* p : params) {
    if (p->frozen) throw ContractViolation("optimizer received frozen parameter " + p->name);
    if (src) {
      for (const auto& q : src->params().all()) {
        if (q.tensor.impl_ptr() == p->tensor.impl_ptr()) {
          throw ContractViolation("optimizer received source parameter " + q.name);
        }
      }
    }
  }
}

}  // namespace

FitResult fit(TargetMethod& method, const EncodedSet& train, const EncodedSet& val,
              const FitOptions& options) {
  if (train.clips.empty()) throw EmptyInputError("fit: empty training set");
  if (options.epochs < 1) throw ConfigError("fit: epochs must be >= 1");
  std::vector<Parameter*> params = method.trainable_store().trainable();
  assert_trainable_set(method, params);

  Adam adam(AdamOptions{.lr = options.lr});
  Rng shuffle(derive_seed(options.seed, "shuffle"));
  std::vector<std::size_t> order(train.clips.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  FitResult result;
  ParameterSnapshot best;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= options.epochs; ++epoch) {
    const auto t0 = Clock::now();
    shuffle.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto where = [&] {
        return " at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches + 1);
      };
      Batch batch = make_batch(method, train, idx);
      double value = 0.0;
      BackwardStats stats;
      try {
        Tensor loss = batch_loss(method, batch);
        value = loss.item();
        stats = backward(loss);
      } catch (const NumericError& e) {
        // NaN caught inside an op; the gradients are those of the last step.
        throw NumericError(std::string(e.what()) + where() + grad_report(params));
      }
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss " + std::to_string(value) + where() + grad_report(params));
      }
      if (result.backward_nodes == 0) result.backward_nodes = stats.nodes_visited;
      adam.step(params);
      loss_sum += value;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.mean_loss = loss_sum / static_cast<double>(batches);
    log.val_acc = accuracy(method, val, options.batch_size);
    log.seconds = seconds_since(t0);
    result.history.push_back(log);
    if (!have_best || log.val_acc > result.best_val) {
      result.best_val = log.val_acc;
      result.best_epoch = epoch;
      best = ParameterSnapshot::capture(params);
      have_best = true;
    }
    if (options.on_epoch) options.on_epoch(log);
    if (options.stop_at && log.val_acc >= *options.stop_at) break;
  }
  best.restore(params);
  return result;
}

TrainOutcome train(const RunConfig& cfg, const TrainContext& ctx, std::uint64_t seed,
                   std::function<void(const EpochLog&)> on_epoch) {
  cfg.validate();
  if (!ctx.train || !ctx.val || !ctx.test) throw UsageError("train: context is missing a split");
  const MethodKind kind = method_kind_from_string(cfg.method);
  TrainOutcome out;
  out.method = make_method(kind, ctx.source, cfg.method_options(ctx.num_classes), seed);
  FitOptions fo;
  fo.epochs = cfg.epochs;
  fo.lr = cfg.lr;
  fo.batch_size = cfg.batch_size;
  fo.seed = seed;
  fo.on_epoch = std::move(on_epoch);
  out.fit = fit(*out.method, *ctx.train, *ctx.val, fo);
  out.row.seed = seed;
  out.row.best_epoch = out.fit.best_epoch;
  out.row.val_acc = out.fit.best_val;
  out.row.test_acc = accuracy(*out.method, *ctx.test, cfg.batch_size);
  out.trainable = out.method->trainable_count();
  out.total = out.method->total_count();
  return out;
}

Aggregate aggregate(const std::vector<double>& acc) {
  if (acc.empty()) throw EmptyInputError("aggregate: no accuracies");
  Aggregate a;
  a.mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
  if (acc.size() >= 2) {
    double ss = 0.0;
    for (double x : acc) ss += (x - a.mean) * (x - a.mean);
    a.std = std::sqrt(ss / static_cast<double>(acc.size() - 1));
  }
  return a;
}

nlohmann::json RunReport::to_json() const {
  nlohmann::json j;
  j["schema"] = kReportSchema;
  j["method"] = method;
  j["arch"] = arch;
  j["dataset"] = dataset;
  j["num_classes"] = num_classes;
  j["n"] = label_fan_in;
  j["epochs"] = epochs;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["chunk_seconds"] = chunk_seconds;
  j["seeds"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["seeds"].push_back({{"seed", r.seed}, {"best_epoch", r.best_epoch}, {"val_acc", r.val_acc},
                          {"test_acc", r.test_acc}});
  }
  j["test_acc_mean"] = test.mean;
  j["test_acc_std"] = test.std ? nlohmann::json(*test.std) : nlohmann::json(nullptr);
  j["trainable_params"] = trainable;
  j["total_params"] = total;
  j["seconds_per_epoch"] = seconds_per_epoch ? nlohmann::json(*seconds_per_epoch) : nlohmann::json(nullptr);
  j["source_checksum_before"] = source_checksum_before;
  j["source_checksum_after"] = source_checksum_after;
  return j;
}

RunReport RunReport::from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema").get<std::string>() != kReportSchema) {
      throw FormatError("report: schema '" + j.at("schema").get<std::string>() + "', expected " +
                        kReportSchema);
    }
    RunReport r;
    r.method = j.at("method").get<std::string>();
    method_kind_from_string(r.method);
    r.arch = j.at("arch").get<std::string>();
    r.dataset = j.at("dataset").get<std::string>();
    r.num_classes = j.at("num_classes").get<std::size_t>();
    r.label_fan_in = j.at("n").get<std::size_t>();
    r.epochs = j.at("epochs").get<std::size_t>();
    r.lr = j.at("lr").get<double>();
    r.batch_size = j.at("batch_size").get<std::size_t>();
    r.chunk_seconds = j.at("chunk_seconds").get<double>();
    for (const auto& s : j.at("seeds")) {
      r.rows.push_back({s.at("seed").get<std::uint64_t>(), s.at("best_epoch").get<std::size_t>(),
                        s.at("val_acc").get<double>(), s.at("test_acc").get<double>()});
    }
    r.test.mean = j.at("test_acc_mean").get<double>();
    if (!j.at("test_acc_std").is_null()) r.test.std = j.at("test_acc_std").get<double>();
    r.trainable = j.at("trainable_params").get<std::size_t>();
    r.total = j.at("total_params").get<std::size_t>();
    if (!j.at("seconds_per_epoch").is_null()) r.seconds_per_epoch = j.at("seconds_per_epoch").get<double>();
    r.source_checksum_before = j.at("source_checksum_before").get<std::string>();
    r.source_checksum_after = j.at("source_checksum_after").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

RunReport multi_seed(const RunConfig& cfg, const TrainContext& ctx,
                     std::function<void(const TrainOutcome&)> on_seed) {
  cfg.validate();
  RunReport rep;
  rep.method = cfg.method;
  rep.arch = ctx.source ? models::to_string(ctx.source->config().arch) : "none";
  rep.dataset = ctx.dataset;
  rep.num_classes = ctx.num_classes;
  rep.label_fan_in = cfg.label_fan_in;
  rep.epochs = cfg.epochs;
  rep.lr = cfg.lr;
  rep.batch_size = cfg.batch_size;
  rep.chunk_seconds = ctx.source ? ctx.source->config().chunk_seconds : 0.0;
  if (ctx.source) rep.source_checksum_before = ctx.source->checksum();
  std::vector<double> acc;
  for (std::uint64_t seed : cfg.seeds) {
    TrainOutcome o = train(cfg, ctx, seed);
    rep.rows.push_back(o.row);
    acc.push_back(o.row.test_acc);
    rep.trainable = o.trainable;
    rep.total = o.total;
    if (on_seed) on_seed(o);
  }
  rep.test = aggregate(acc);
  if (ctx.source) rep.source_checksum_after = ctx.source->checksum();
  return rep;
}

BenchResult bench_epoch(const RunConfig& cfg, const TrainContext& ctx, std::uint64_t seed,
                        std::size_t measured) {
  cfg.validate();
  if (measured < 1) throw ConfigError("bench: at least one measured epoch");
  auto method = make_method(method_kind_from_string(cfg.method), ctx.source,
                            cfg.method_options(ctx.num_classes), seed);
  // Validation is excluded: an epoch is one pass over the training clips.
  BenchResult r;
  std::vector<Parameter*> params = method->trainable_store().trainable();
  assert_trainable_set(*method, params);
  Adam adam(AdamOptions{.lr = cfg.lr});
  std::vector<std::size_t> order(ctx.train->clips.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e <= measured; ++e) {
    const auto t0 = Clock::now();
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Batch batch = make_batch(*method, *ctx.train, std::span<const std::size_t>(order.data() + start, end - start));
      Tensor loss = batch_loss(*method, batch);
      auto stats = backward(loss);
      if (r.backward_nodes == 0) r.backward_nodes = stats.nodes_visited;
      adam.step(params);
    }
    if (e > 0) r.samples.push_back(seconds_since(t0));
  }
  auto sorted = r.samples;
  std::sort(sorted.begin(), sorted.end());
  r.median_seconds = sorted.size() % 2 ? sorted[sorted.size() / 2]
                                       : 0.5 * (sorted[sorted.size() / 2 - 1] + sorted[sorted.size() / 2]);
  return r;
}

PretrainResult pretrain_source(std::shared_ptr<models::SourceModel> model, const EncodedSet& train,
                               const EncodedSet& val, const PretrainOptions& options) {
  model->unfreeze();
  MethodOptions mo;
  mo.num_classes = model->num_classes();
  auto method = make_method(MethodKind::Source, model, mo, options.seed);
  FitOptions fo;
  fo.epochs = options.max_epochs;
  fo.lr = options.lr;
  fo.batch_size = options.batch_size;
  fo.seed = options.seed;
  fo.stop_at = options.target_accuracy;
  fo.on_epoch = options.on_epoch;
  FitResult fr = fit(*method, train, val, fo);
  PretrainResult r;
  r.val_acc = fr.best_val;
  r.epochs_run = fr.history.size();
  if (r.val_acc < options.failure_accuracy) {
    throw PretrainingFailed("pretraining reached only " + std::to_string(r.val_acc) +
                            " validation accuracy after " + std::to_string(r.epochs_run) +
                            " epochs (need >= " + std::to_string(options.failure_accuracy) + ")");
  }
  model->freeze();
  r.checksum = model->checksum();
  return r;
}

}  // namespace repro::harness
