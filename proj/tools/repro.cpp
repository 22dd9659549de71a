// repro: pretrain, train, evaluate, bench and report from the command line.
//
// Exit codes: 0 success, 2 numeric failure (including failed pre-training),
// 3 I/O failure, 4 config or schema failure.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "repro/data/dataset.hpp"
#include "repro/harness/experiment.hpp"
#include "repro/models/source_model.hpp"
#include "repro/util/errors.hpp"

using namespace repro;
using harness::ExperimentConfig;
namespace fs = std::filesystem;

namespace {

constexpr int kExitNumeric = 2;
constexpr int kExitIo = 3;
constexpr int kExitConfig = 4;

struct CommonOptions {
  std::string config;
  std::string preset;
  std::string arch;
};

ExperimentConfig resolve_config(const CommonOptions& o) {
  nlohmann::json doc = nlohmann::json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw IoError("cannot read config file " + o.config);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(o.config + ": " + e.what());
    }
    if (!doc.is_object()) throw ConfigError(o.config + ": top level must be an object");
  }
  if (!o.preset.empty()) doc["preset"] = o.preset;
  if (!o.arch.empty()) doc["model"]["arch"] = o.arch;
  return ExperimentConfig::from_json(doc);
}

/// "3", "0,2,5" or "0..4".
std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  auto number = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + s + "' is not a seed");
    }
  };
  if (auto dots = text.find(".."); dots != std::string::npos) {
    const auto lo = number(text.substr(0, dots)), hi = number(text.substr(dots + 2));
    if (hi < lo) throw ConfigError("--seeds: empty range " + text);
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
    return out;
  }
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(number(item));
  if (out.empty()) throw ConfigError("--seeds: no seeds given");
  return out;
}

void ensure_parent(const fs::path& p) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
}

void write_text(const fs::path& p, const std::string& text) {
  ensure_parent(p);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

/// Source model from --ckpt, or pre-trained in process from the config.
std::shared_ptr<models::SourceModel> obtain_source(ExperimentConfig& cfg, const std::string& ckpt) {
  std::shared_ptr<models::SourceModel> model;
  if (!ckpt.empty()) {
    model = models::load_source_model(fs::path(ckpt));
    if (!model->frozen()) throw ConfigError(ckpt + ": source checkpoint is not frozen");
    if (!(model->config().to_json() == cfg.model.to_json())) {
      std::fprintf(stderr, "note: model and mel settings taken from %s\n", ckpt.c_str());
    }
    cfg.model = model->config();
    cfg.validate();
  } else {
    std::fprintf(stderr, "no --ckpt given; pre-training a source model from the config\n");
    auto pre = harness::pretrain_from_config(cfg);
    std::fprintf(stderr, "source val accuracy %.4f after %zu epochs\n", pre.result.val_acc,
                 pre.result.epochs_run);
    model = pre.model;
  }
  return model;
}

std::string dataset_name(const ExperimentConfig& cfg) {
  return cfg.target_kind == "gtzan" ? "gtzan" : "synthetic";
}

// ---- report rendering --------------------------------------------------------

int method_rank(const std::string& m) {
  static const std::vector<std::string> order = {"ii", "id", "ids", "bl_cnn", "bl_ft", "bl_rep", "source"};
  auto it = std::find(order.begin(), order.end(), m);
  return static_cast<int>(it - order.begin());
}

std::string display_name(const std::string& m) {
  static const std::map<std::string, std::string> names = {
      {"ii", "II-NMR"}, {"id", "ID-NMR"}, {"ids", "IDS-NMR"}, {"bl_cnn", "BL-CNN"},
      {"bl_ft", "BL-FT"}, {"bl_rep", "BL-Rep"}, {"source", "source"}};
  auto it = names.find(m);
  return it == names.end() ? m : it->second;
}

std::string accuracy_cell(const harness::RunReport& r) {
  char buf[64];
  if (r.test.std) {
    std::snprintf(buf, sizeof buf, "%.2f ± %.2f", 100.0 * r.test.mean, 100.0 * *r.test.std);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * r.test.mean);
  }
  return buf;
}

std::string pad(const std::string& s, std::size_t w) {
  // display width: count UTF-8 code points
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return s + std::string(w > cps ? w - cps : 0, ' ');
}

std::string render_tables(std::vector<harness::RunReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    if (method_rank(a.method) != method_rank(b.method)) return method_rank(a.method) < method_rank(b.method);
    return a.arch < b.arch;
  });
  std::ostringstream os;

  // Accuracy: NMR method x source model.
  std::vector<std::string> archs;
  for (const auto& r : reports)
    if (std::find(archs.begin(), archs.end(), r.arch) == archs.end()) archs.push_back(r.arch);
  os << "Accuracy (%) by method and source model\n";
  os << pad("method", 10);
  for (const auto& a : archs) os << " | " << pad(a, 20);
  os << "\n";
  std::vector<std::string> methods;
  for (const auto& r : reports)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  for (const auto& m : methods) {
    os << pad(display_name(m), 10);
    for (const auto& a : archs) {
      std::string cell = "-";
      for (const auto& r : reports)
        if (r.method == m && r.arch == a) cell = accuracy_cell(r);
      os << " | " << pad(cell, 20);
    }
    os << "\n";
  }

  // Comparison: one row per report.
  os << "\nComparison\n";
  os << pad("method", 10) << " | " << pad("source model", 18) << " | " << pad("dataset", 10) << " | "
     << pad("seeds", 5) << " | accuracy (%)\n";
  for (const auto& r : reports) {
    os << pad(display_name(r.method), 10) << " | " << pad(r.arch, 18) << " | " << pad(r.dataset, 10)
       << " | " << pad(std::to_string(r.rows.size()), 5) << " | " << accuracy_cell(r) << "\n";
  }

  // Parameters and speed.
  os << "\nParameters and speed\n";
  os << pad("method", 10) << " | " << pad("source model", 18) << " | " << pad("trainable", 10) << " | "
     << pad("total", 10) << " | s/epoch\n";
  for (const auto& r : reports) {
    char speed[32] = "-";
    if (r.seconds_per_epoch) std::snprintf(speed, sizeof speed, "%.3f", *r.seconds_per_epoch);
    os << pad(display_name(r.method), 10) << " | " << pad(r.arch, 18) << " | "
       << pad(std::to_string(r.trainable), 10) << " | " << pad(std::to_string(r.total), 10) << " | "
       << speed << "\n";
  }
  return os.str();
}

std::vector<harness::RunReport> read_reports(const std::vector<std::string>& files) {
  std::vector<harness::RunReport> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    if (!in) throw IoError("cannot read report " + f);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(f + ":" + std::to_string(lineno) + ": " + e.what());
      }
      try {
        out.push_back(harness::RunReport::from_json(j));
      } catch (const FormatError& e) {
        throw FormatError(f + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  if (out.empty()) throw FormatError("no reports found in the given inputs");
  return out;
}

// ---- commands ----------------------------------------------------------------

int cmd_pretrain(const CommonOptions& common, const std::string& task, std::optional<std::uint64_t> seed,
                 const std::string& out) {
  if (task != "source_12tone") throw ConfigError("--task: pre-training uses source_12tone");
  ExperimentConfig cfg = resolve_config(common);
  if (seed) {
    cfg.model.seed = *seed;
    cfg.pretrain.seed = *seed;
  }
  // fail on an unwritable destination before spending time on training
  ensure_parent(out);
  {
    std::ofstream probe(out, std::ios::binary | std::ios::app);
    if (!probe) throw IoError("cannot write checkpoint " + out);
  }
  cfg.pretrain.on_epoch = [](const harness::EpochLog& l) {
    std::fprintf(stderr, "epoch %zu loss %.4f val %.4f (%.1fs)\n", l.epoch, l.mean_loss, l.val_acc, l.seconds);
  };
  auto pre = harness::pretrain_from_config(cfg);
  models::save_source_model(*pre.model, out);
  std::printf("source val accuracy %.4f\n", pre.result.val_acc);
  std::printf("epochs %zu\n", pre.result.epochs_run);
  std::printf("checksum %s\n", pre.result.checksum.c_str());
  std::printf("checkpoint %s\n", out.c_str());
  return 0;
}

int cmd_train(const CommonOptions& common, const std::string& method, const std::string& seeds,
              const std::string& ckpt, const std::string& out_dir, bool quiet) {
  ExperimentConfig cfg = resolve_config(common);
  if (!method.empty()) cfg.run.method = method;
  if (!seeds.empty()) cfg.run.seeds = parse_seeds(seeds);
  cfg.validate();
  auto source = obtain_source(cfg, ckpt);
  const auto enc = harness::encode_split(harness::target_split(cfg), cfg);
  harness::TrainContext ctx{source, &enc.train, &enc.val, &enc.test, enc.num_classes, dataset_name(cfg)};

  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  auto rep = harness::multi_seed(cfg.run, ctx, [&](const harness::TrainOutcome& o) {
    const auto path = dir / (cfg.run.method + ".seed" + std::to_string(o.row.seed) + ".ckpt");
    o.method->to_checkpoint().save(path);
    if (!quiet) {
      std::fprintf(stderr, "seed %llu: best epoch %zu val %.4f test %.4f\n",
                   static_cast<unsigned long long>(o.row.seed), o.row.best_epoch, o.row.val_acc,
                   o.row.test_acc);
    }
  });
  const auto report_path = dir / (cfg.run.method + ".report.jsonl");
  write_text(report_path, rep.to_json().dump() + "\n");
  std::cout << render_tables({rep});
  std::printf("report %s\n", report_path.c_str());
  return 0;
}

int cmd_evaluate(const CommonOptions& common, const std::string& ckpt, const std::string& adapter) {
  ExperimentConfig cfg = resolve_config(common);
  std::shared_ptr<models::SourceModel> source;
  if (!ckpt.empty()) source = obtain_source(cfg, ckpt);
  auto ck = models::Checkpoint::load(adapter);
  auto method = harness::load_method(ck, source);
  const auto enc = harness::encode_split(harness::target_split(cfg), cfg);
  if (method->name() != "bl_cnn" && source == nullptr) {
    throw ConfigError("--ckpt: the source model is required for " + method->name());
  }
  std::printf("method %s\n", method->name().c_str());
  std::printf("val accuracy %.4f\n", harness::accuracy(*method, enc.val, cfg.run.batch_size));
  std::printf("test accuracy %.4f\n", harness::accuracy(*method, enc.test, cfg.run.batch_size));
  return 0;
}

int cmd_bench(const CommonOptions& common, const std::string& method, const std::string& ckpt,
              std::size_t measured, std::uint64_t seed, const std::string& out) {
  ExperimentConfig cfg = resolve_config(common);
  if (!method.empty()) cfg.run.method = method;
  cfg.validate();
  auto source = obtain_source(cfg, ckpt);
  const auto enc = harness::encode_split(harness::target_split(cfg), cfg);
  harness::TrainContext ctx{source, &enc.train, &enc.val, &enc.test, enc.num_classes, dataset_name(cfg)};
  auto b = harness::bench_epoch(cfg.run, ctx, seed, measured);
  std::printf("method %s\n", cfg.run.method.c_str());
  std::printf("seconds per epoch (median of %zu) %.4f\n", b.samples.size(), b.median_seconds);
  std::printf("backward nodes %zu\n", b.backward_nodes);
  if (!out.empty()) {
    auto m = harness::make_method(harness::method_kind_from_string(cfg.run.method), source,
                                  cfg.run.method_options(enc.num_classes), seed);
    harness::RunReport rep;
    rep.method = cfg.run.method;
    rep.arch = models::to_string(source->config().arch);
    rep.dataset = dataset_name(cfg);
    rep.num_classes = enc.num_classes;
    rep.label_fan_in = cfg.run.label_fan_in;
    rep.epochs = measured;
    rep.lr = cfg.run.lr;
    rep.batch_size = cfg.run.batch_size;
    rep.chunk_seconds = source->config().chunk_seconds;
    rep.trainable = m->trainable_count();
    rep.total = m->total_count();
    rep.seconds_per_epoch = b.median_seconds;
    rep.source_checksum_before = rep.source_checksum_after = source->checksum();
    write_text(out, rep.to_json().dump() + "\n");
  }
  return 0;
}

int cmd_export(const CommonOptions& common, const std::string& which, const std::string& out) {
  ExperimentConfig cfg = resolve_config(common);
  auto split = which == "source" ? harness::source_split(cfg) : harness::target_split(cfg);
  data::export_wav_tree(split, out);
  std::printf("wrote %zu/%zu/%zu clips to %s\n", split.train.size(), split.val.size(), split.test.size(),
              out.c_str());
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Neural model reprogramming toolkit"};
  app.require_subcommand(1);

  CommonOptions common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "experiment config (JSON)");
    sub->add_option("--preset", common.preset, "reference | desk (overrides the config's preset)");
    sub->add_option("--arch", common.arch, "attention_rnnless | patch_transformer");
  };

  std::string out, ckpt, method, seeds, adapter, task = "source_12tone", which = "target";
  std::optional<std::uint64_t> pre_seed;
  std::uint64_t seed = 0;
  std::size_t measured = 3;
  bool quiet = false, markdown = false;
  std::vector<std::string> inputs;

  auto* pre = app.add_subcommand("pretrain", "pre-train and freeze a source model");
  add_common(pre);
  pre->add_option("--task", task, "source task")->check(CLI::IsMember({"source_12tone"}));
  pre->add_option("--seed", pre_seed, "initialization and shuffle seed");
  pre->add_option("--out", out, "checkpoint path")->required();

  auto* tr = app.add_subcommand("train", "train a method on the target task over one or more seeds");
  add_common(tr);
  tr->add_option("--method", method, "ii | id | ids | bl_cnn | bl_ft | bl_rep");
  auto* seed_opt = tr->add_option("--seed", seeds, "single seed");
  tr->add_option("--seeds", seeds, "seed list: 0,1,2 or 0..4")->excludes(seed_opt);
  tr->add_option("--ckpt", ckpt, "frozen source checkpoint (pre-trains from the config if omitted)");
  tr->add_option("--out", out, "output directory")->required();
  tr->add_flag("--quiet", quiet, "no per-seed progress");

  auto* ev = app.add_subcommand("evaluate", "accuracy of a saved method checkpoint");
  add_common(ev);
  ev->add_option("--ckpt", ckpt, "frozen source checkpoint");
  ev->add_option("--adapter", adapter, "method checkpoint written by train")->required();

  auto* be = app.add_subcommand("bench", "median seconds per training epoch");
  add_common(be);
  be->add_option("--method", method, "method to time");
  be->add_option("--ckpt", ckpt, "frozen source checkpoint");
  be->add_option("--epochs", measured, "measured epochs after one warm-up")->check(CLI::PositiveNumber);
  be->add_option("--seed", seed, "initialization seed");
  be->add_option("--out", out, "optional report (JSON lines) with seconds_per_epoch");

  auto* re = app.add_subcommand("report", "render tables from report files");
  re->add_option("--inputs", inputs, "report files (JSON lines)")->required();

  auto* de = app.add_subcommand("defaults", "print the config reference");
  de->add_flag("--markdown", markdown, "markdown table of every key (default: JSON of the chosen preset)");
  add_common(de);

  auto* ex = app.add_subcommand("export", "write a synthetic split as a WAV tree with split lists");
  add_common(ex);
  ex->add_option("--which", which, "source | target")->check(CLI::IsMember({"source", "target"}));
  ex->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (pre->parsed()) return cmd_pretrain(common, task, pre_seed, out);
  if (tr->parsed()) return cmd_train(common, method, seeds, ckpt, out, quiet);
  if (ev->parsed()) return cmd_evaluate(common, ckpt, adapter);
  if (be->parsed()) return cmd_bench(common, method, ckpt, measured, seed, out);
  if (re->parsed()) {
    std::cout << render_tables(read_reports(inputs));
    return 0;
  }
  if (de->parsed()) {
    if (markdown) {
      std::cout << harness::defaults_reference();
    } else {
      std::cout << resolve_config(common).to_json().dump(2) << "\n";
    }
    return 0;
  }
  if (ex->parsed()) return cmd_export(common, which, out);
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "schema error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
