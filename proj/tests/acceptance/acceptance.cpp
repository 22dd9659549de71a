// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criterion 10 needs the real GTZAN audio (GTZAN_ROOT plus
// optional GTZAN_TRAIN/GTZAN_VAL/GTZAN_TEST list paths) and reports SKIP
// without it.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "repro/autodiff/ops.hpp"
#include "repro/baselines/baselines.hpp"
#include "repro/data/dataset.hpp"
#include "repro/dsp/chunk.hpp"
#include "repro/harness/experiment.hpp"
#include "repro/harness/train.hpp"
#include "repro/reprogram/reprogram.hpp"
#include "repro/util/sha256.hpp"
#include "support/grad_suite.hpp"
#include "support/temp_dir.hpp"

using namespace repro;
namespace fs = std::filesystem;
using ad::Tensor;
using harness::ExperimentConfig;

namespace {

// ---- tolerances ---------------------------------------------------------------

constexpr double kGradTolerance = 1e-4;
constexpr int kGradTrialsPerOp = 100;
constexpr double kGradSeconds = 60.0;
constexpr double kFreezeSeconds = 600.0;
constexpr double kNeutralityTolerance = 1e-6;  // ID and IDS; II is compared bit for bit
constexpr int kLabelMapVectors = 1000;
constexpr double kLabelMapTolerance = 1e-7;
constexpr double kChunkAverageTolerance = 1e-7;
constexpr double kOrderingMargin = 0.10;
constexpr double kChance = 0.25;
constexpr double kOrderingSeconds = 1800.0;
constexpr double kTrainableFraction = 0.05;
constexpr double kStdExpected = 0.1414;
constexpr double kStdTolerance = 1e-4;

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status = Status::Pass;
  std::string detail;
};

Outcome verdict(bool ok, std::string detail) {
  return {ok ? Status::Pass : Status::Fail, std::move(detail)};
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string checkpoint_sha(const models::SourceModel& m) {
  const auto bytes = m.to_checkpoint().serialize();
  return sha256_hex(bytes);
}

// ---- desk worlds: a pre-trained frozen source plus the encoded target task ----

struct World {
  ExperimentConfig cfg;
  std::shared_ptr<models::SourceModel> source;
  harness::EncodedSplit target;
  double pretrain_val = 0.0;

  harness::TrainContext context() const {
    return {source, &target.train, &target.val, &target.test, target.num_classes, "synthetic"};
  }
};

World& desk_world(models::Arch arch) {
  static std::map<models::Arch, World> cache;
  auto it = cache.find(arch);
  if (it != cache.end()) return it->second;
  World w;
  w.cfg = ExperimentConfig::desk(arch);
  w.cfg.validate();
  auto pre = harness::pretrain_from_config(w.cfg);
  w.source = pre.model;
  w.pretrain_val = pre.result.val_acc;
  w.target = harness::encode_split(harness::target_split(w.cfg), w.cfg);
  return cache.emplace(arch, std::move(w)).first->second;
}

Tensor random_probs(std::size_t rows, std::size_t k, Rng& rng) {
  Tensor t({rows, k});
  auto d = t.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < k; ++c) s += (d[r * k + c] = static_cast<float>(rng.uniform(0.01, 1.0)));
    for (std::size_t c = 0; c < k; ++c) d[r * k + c] = static_cast<float>(d[r * k + c] / s);
  }
  return t;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - b.data()[i]));
  return m;
}

// ---- criteria -----------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  double worst = 0;
  std::string worst_op, failing;
  const auto ops = testing::gradient_suite();
  for (const auto& op : ops) {
    double op_worst = 0;
    for (int trial = 0; trial < kGradTrialsPerOp; ++trial)
      op_worst = std::max(op_worst, op.run(rng).max_rel_error);
    if (op_worst > worst) worst = op_worst, worst_op = op.op;
    if (!(op_worst < kGradTolerance)) failing += " " + op.op;
  }
  const double secs = seconds_since(t0);
  std::string d = fmt("%zu ops x %d trials, worst rel err %.2e (%s), %.1fs", ops.size(),
                      kGradTrialsPerOp, worst, worst_op.c_str(), secs);
  if (!failing.empty()) d += "; over tolerance:" + failing;
  return verdict(failing.empty() && secs < kGradSeconds, d);
}

Outcome freeze_invariance() {
  const auto t0 = std::chrono::steady_clock::now();
  auto& w = desk_world(models::Arch::Attention);
  testing::TempDir dir;
  const auto path = dir.path() / "source.ckpt";
  bool ok = true;
  std::string d;
  for (const char* m : {"ii", "id", "ids", "bl_rep"}) {
    w.source->to_checkpoint().save(path);
    std::ifstream in(path, std::ios::binary);
    const std::vector<std::uint8_t> before_bytes((std::istreambuf_iterator<char>(in)), {});
    const auto before = sha256_hex(before_bytes);
    auto rc = w.cfg.run;
    rc.method = m;
    rc.seeds = {0};
    auto report = harness::multi_seed(rc, w.context());
    const auto after = checkpoint_sha(*w.source);
    const bool same = before == after && report.source_checksum_before == report.source_checksum_after;
    ok = ok && same && w.source->frozen();
    d += fmt("%s %s..%s ", m, before.substr(0, 8).c_str(), same ? "same" : after.substr(0, 8).c_str());
  }
  const double secs = seconds_since(t0);
  d += fmt("(%zu epochs each, %.0fs incl. pre-training)", w.cfg.run.epochs, secs);
  return verdict(ok && secs < kFreezeSeconds, d);
}

Outcome init_neutrality() {
  bool ok = true;
  double worst = 0;
  std::string d;
  for (auto arch : {models::Arch::Attention, models::Arch::PatchTransformer}) {
    auto& w = desk_world(arch);
    const auto& mc = w.cfg.model;
    const auto lm = reprog::LabelMap::blocks(mc.num_classes, 4, w.cfg.run.label_fan_in);
    Rng rng(7);
    Tensor waves({3, mc.chunk_samples()});
    for (float& v : waves.data()) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    ad::NoGradGuard guard;
    const Tensor feats = dsp::log_mel_op(waves, mc.mel);
    const Tensor base = reprog::map_labels(lm, w.source->forward(feats));
    for (auto m : {reprog::Method::II, reprog::Method::ID, reprog::Method::IDS}) {
      reprog::Reprogrammer r(m, w.source, lm, w.cfg.run.adapter, 0);
      const Tensor out = r.chunk_scores(m == reprog::Method::II ? waves : feats);
      if (m == reprog::Method::II) {
        ok = ok && same_bits(out, base);
      } else {
        const double diff = max_abs_diff(out, base);
        worst = std::max(worst, diff);
        ok = ok && diff <= kNeutralityTolerance;
      }
    }
  }
  d = fmt("II bit-identical, ID/IDS max |diff| %.1e on both archs", worst);
  return verdict(ok, ok ? d : "mismatch: " + d);
}

Outcome label_map_oracle() {
  Rng rng(11);
  double worst = 0;
  bool argmax_ok = true;
  int done = 0;
  while (done < kLabelMapVectors) {
    const std::size_t kt = 2 + rng.index(9), n = 1 + rng.index(4);
    const std::size_t ks = kt * n + rng.index(8);
    std::vector<std::size_t> perm(ks);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    std::vector<std::vector<std::size_t>> a(kt);
    for (std::size_t t = 0; t < kt; ++t) a[t].assign(perm.begin() + t * n, perm.begin() + (t + 1) * n);
    const auto lm = reprog::LabelMap::explicit_map(ks, a);
    const std::size_t rows = 50;
    const auto p = random_probs(rows, ks, rng);
    const auto out = reprog::map_labels(lm, p);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t t = 0; t < kt; ++t) {
        long double acc = 0;
        for (std::size_t s : a[t]) acc += p.data()[r * ks + s];
        worst = std::max(worst, std::abs(static_cast<double>(acc / n) - out.data()[r * kt + t]));
      }
    }
    const float c = static_cast<float>(rng.uniform(0.05, 20.0));
    argmax_ok = argmax_ok && ad::argmax_rows(reprog::map_labels(lm, ad::scale(p, c))) == ad::argmax_rows(out);
    done += static_cast<int>(rows);
  }
  return verdict(worst <= kLabelMapTolerance && argmax_ok,
                 fmt("%d vectors, max |err| %.2e, argmax under scaling %s", done, worst,
                     argmax_ok ? "kept" : "CHANGED"));
}

Outcome chunk_identities() {
  Rng rng(5);
  bool concat_ok = true, perm_ok = true;
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    dsp::Waveform w;
    w.samples.resize(1 + rng.index(6 * 16000));
    for (float& s : w.samples) s = static_cast<float>(rng.uniform(-1, 1));
    const double secs = 0.25 + rng.uniform(0, 1.5);
    // With every partial chunk kept the concatenation is the input; with the
    // default rule it is the input up to the dropped short tail.
    concat_ok = concat_ok && dsp::concat_chunks(dsp::chunk(w, {secs, 0.0})).samples == w.samples;
    const auto covered = dsp::concat_chunks(dsp::chunk(w, {secs, 0.5})).samples;
    concat_ok = concat_ok && covered.size() <= w.samples.size() &&
                std::equal(covered.begin(), covered.end(), w.samples.begin());

    const std::size_t rows = 1 + rng.index(40), k = 2 + rng.index(10);
    const auto p = random_probs(rows, k, rng);
    const auto avg = reprog::chunk_average(p);
    for (std::size_t c = 0; c < k; ++c) {
      long double s = 0;
      for (std::size_t r = 0; r < rows; ++r) s += p.data()[r * k + c];
      worst = std::max(worst, std::abs(static_cast<double>(s / rows) - avg.data()[c]));
    }
    std::vector<std::size_t> order(rows);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    Tensor shuffled({rows, k});
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(p.data().begin() + order[r] * k, k, shuffled.data().begin() + r * k);
    perm_ok = perm_ok && same_bits(reprog::chunk_average(shuffled), avg);
  }
  return verdict(concat_ok && perm_ok && worst <= kChunkAverageTolerance,
                 fmt("concat %s, chunk_average max |err| %.2e, permutation %s",
                     concat_ok ? "exact" : "BROKEN", worst, perm_ok ? "bit-exact" : "CHANGED"));
}

Outcome ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string d;
  for (auto arch : {models::Arch::Attention, models::Arch::PatchTransformer}) {
    auto& w = desk_world(arch);
    std::map<std::string, harness::RunReport> r;
    for (const char* m : {"ii", "id", "ids"}) {
      auto rc = w.cfg.run;
      rc.method = m;
      r[m] = harness::multi_seed(rc, w.context());
    }
    const double ii = r["ii"].test.mean, id = r["id"].test.mean, ids = r["ids"].test.mean;
    const bool arch_ok = ids >= id && id >= ii && id - ii >= kOrderingMargin && ii > kChance &&
                         id > kChance && ids > kChance;
    ok = ok && arch_ok;
    d += fmt("%s: II %.3f ID %.3f IDS %.3f%s; ", models::to_string(arch).c_str(), ii, id, ids,
             arch_ok ? "" : " (ordering not met)");
  }
  const double secs = seconds_since(t0);
  d += fmt("5 seeds, %.0fs", secs);
  return verdict(ok && secs <= kOrderingSeconds, d);
}

Outcome parameter_accounting() {
  auto cfg = ExperimentConfig::reference(models::Arch::PatchTransformer);
  std::shared_ptr<models::SourceModel> source = models::build_source_model(cfg.model);
  source->freeze();
  const std::size_t frozen = source->parameter_count();
  const std::size_t k_t = 10;
  const auto opts = cfg.run.method_options(k_t);
  auto ft_cfg = cfg.model;
  ft_cfg.num_classes = k_t;
  baselines::BlCnnConfig cnn = opts.bl_cnn;

  const std::vector<std::pair<harness::MethodKind, std::size_t>> expect = {
      {harness::MethodKind::II, reprog::ii_parameter_count(cfg.model.chunk_samples())},
      {harness::MethodKind::ID, reprog::id_parameter_count(opts.adapter.id_channels, opts.adapter.id_kernel)},
      {harness::MethodKind::IDS, reprog::ids_parameter_count(source->tap_dim(), opts.adapter.skip_hidden)},
      {harness::MethodKind::BlCnn, baselines::bl_cnn_parameter_count(cnn)},
      {harness::MethodKind::BlFt, models::analytic_parameter_count(ft_cfg)},
      {harness::MethodKind::BlRep, baselines::probe_parameter_count(source->tap_dim(), k_t, opts.probe_hidden)},
  };
  bool ok = analytic_parameter_count(cfg.model) == frozen;
  std::string d = fmt("frozen %zu;", frozen);
  for (const auto& [kind, analytic] : expect) {
    auto m = harness::make_method(kind, source, opts, 0);
    const std::size_t got = m->trainable_count();
    ok = ok && got == analytic;
    d += fmt(" %s %zu", harness::to_string(kind).c_str(), got);
    if (got != analytic) d += fmt(" (analytic %zu)", analytic);
    if (harness::is_nmr(kind)) {
      const double frac = static_cast<double>(got) / static_cast<double>(frozen);
      ok = ok && frac < kTrainableFraction;
      d += fmt(" = %.2f%%", 100.0 * frac);
    }
  }
  const bool ii_exact = reprog::ii_parameter_count(cfg.model.chunk_samples()) == 160000;
  return verdict(ok && ii_exact, d + (ii_exact ? "; II at 10 s = 160000" : "; II at 10 s != 160000"));
}

Outcome speed_ordering() {
  bool ok = true;
  std::string d;
  for (auto arch : {models::Arch::Attention, models::Arch::PatchTransformer}) {
    auto& w = desk_world(arch);
    auto rc = w.cfg.run;
    rc.method = "id";
    const auto id = harness::bench_epoch(rc, w.context(), 0, 3);
    rc.method = "ids";
    const auto ids = harness::bench_epoch(rc, w.context(), 0, 3);
    const bool arch_ok = ids.median_seconds < id.median_seconds && ids.backward_nodes < id.backward_nodes;
    ok = ok && arch_ok;
    d += fmt("%s: ID %.2fs/%zu nodes, IDS %.2fs/%zu nodes; ", models::to_string(arch).c_str(),
             id.median_seconds, id.backward_nodes, ids.median_seconds, ids.backward_nodes);
  }
  return verdict(ok, d.substr(0, d.size() - 2));
}

Outcome determinism() {
  auto& w = desk_world(models::Arch::Attention);
  bool ok = true;
  for (const char* m : {"ii", "id", "ids", "bl_rep"}) {
    auto rc = w.cfg.run;
    rc.method = m;
    rc.seeds = {3};
    rc.epochs = 3;
    const auto a = harness::multi_seed(rc, w.context()).to_json().dump();
    const auto b = harness::multi_seed(rc, w.context()).to_json().dump();
    ok = ok && a == b;
  }
  const auto agg = harness::aggregate({0.5, 0.7});
  const bool std_ok = agg.std && std::abs(*agg.std - kStdExpected) <= kStdTolerance;
  return verdict(ok && std_ok, fmt("reports %s across reruns; std{0.5,0.7} = %.6f",
                                   ok ? "identical" : "DIFFER", agg.std.value_or(NAN)));
}

Outcome gtzan_loader() {
  const char* root_env = std::getenv("GTZAN_ROOT");
  if (root_env == nullptr || !fs::is_directory(root_env)) {
    return {Status::Skip, "GTZAN_ROOT not set or not a directory"};
  }
  const fs::path root = root_env;
  auto list = [&](const char* var, const char* name) {
    const char* v = std::getenv(var);
    return v ? fs::path(v) : root / name;
  };
  const auto split = data::load_gtzan(root, list("GTZAN_TRAIN", "train.txt"),
                                      list("GTZAN_VAL", "val.txt"), list("GTZAN_TEST", "test.txt"),
                                      {false, 16000});
  split.validate();
  const bool ok = split.train.size() == 443 && split.val.size() == 197 && split.test.size() == 290 &&
                  split.num_classes == 10;
  return verdict(ok, fmt("%zu/%zu/%zu clips, %zu genres", split.train.size(), split.val.size(),
                         split.test.size(), split.num_classes));
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"freeze invariance", freeze_invariance},
      {"initialization neutrality", init_neutrality},
      {"label-map oracle", label_map_oracle},
      {"chunking identities", chunk_identities},
      {"ordering IDS >= ID >= II", ordering},
      {"parameter accounting", parameter_accounting},
      {"speed ordering", speed_ordering},
      {"protocol determinism", determinism},
      {"GTZAN loader", gtzan_loader},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.status == Status::Pass ? "PASS" : o.status == Status::Fail ? "FAIL" : "SKIP";
    failures += o.status == Status::Fail;
    std::printf("[%s] %2zu %s: %s [%.1fs]\n", tag, i + 1, criteria[i].first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
