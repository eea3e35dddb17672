// SPDX-License-Identifier: Apache-2.0
// urkle <pretrain|probe|attack|audit|report> --config PATH [--checkpoint PATH] [--out DIR] [--seed N]

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "config.hpp"
#include "report.hpp"

namespace fs = std::filesystem;
using namespace urkle;
using cli::RunConfig;

namespace {

enum Exit { Ok = 0, Failure = 1, BadConfig = 2, BadIo = 3, NumericAbort = 4 };

struct Args {
  std::string config;
  std::string checkpoint;
  std::string probe;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string metrics_dir;
};

RunConfig resolve(const Args& a) {
  RunConfig cfg = cli::load_run_config(a.config);
  if (a.seed) cfg.set_seed(*a.seed);
  if (!a.out.empty()) cfg.out = a.out;
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + tmp.string() + "'");
    f << text;
    if (!f.flush()) throw IoError("write to '" + tmp.string() + "' failed");
  }
  fs::rename(tmp, path);
}

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path dir(cfg.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory '" + dir.string() + "'");
  return dir;
}

/// Key facts of the run in config syntax, read back by `report`.
std::string run_summary(const RunConfig& cfg, const std::string& stage) {
  std::ostringstream os;
  os << "# " << stage << "\n";
  os << "method = " << to_string(cfg.train.method) << "\n";
  os << "beta_robust = " << csv_number(cfg.train.objective.beta_robust) << "\n";
  os << "epsilon = " << csv_number(cfg.train.attack.epsilon) << "\n";
  os << "epochs = " << cfg.train.epochs << "\n";
  os << "seed = " << cfg.seed << "\n";
  return os.str();
}

ModelBundle<float> require_bundle(const std::string& path) {
  if (path.empty()) throw ConfigError("--checkpoint is required");
  return load_bundle<float>(path);
}

/// The classifier to evaluate: --probe if given, else probe.bin next to the
/// checkpoint, else the checkpoint's own end-to-end head.
nn::Sequential<float> pick_classifier(const Args& a, ModelBundle<float>& bundle) {
  std::string probe = a.probe;
  if (probe.empty()) {
    const fs::path sibling = fs::path(a.checkpoint).parent_path() / "probe.bin";
    if (fs::exists(sibling)) probe = sibling.string();
  }
  if (!probe.empty()) {
    ModelBundle<float> p = load_bundle<float>(probe);
    if (!p.classifier) throw FormatError("'" + probe + "' holds no classifier");
    if (p.spec.encoder.d_z != bundle.spec.encoder.d_z) {
      throw ConsistencyError("probe expects d_z " + std::to_string(p.spec.encoder.d_z) + ", encoder has " +
                             std::to_string(bundle.spec.encoder.d_z));
    }
    return std::move(*p.classifier);
  }
  if (bundle.classifier) return std::move(*bundle.classifier);
  throw ConfigError("no probe found: pass --probe or run `urkle probe` first");
}

// ------------------------------------------------------------- commands

int cmd_pretrain(const Args& a) {
  RunConfig cfg = resolve(a);
  cli::Splits data = cli::load_splits(cfg);
  const fs::path dir = prepare_out(cfg);
  write_text(dir / "run.txt", run_summary(cfg, "pretrain"));

  const fs::path csv = dir / "metrics.csv";
  {
    std::ofstream f(csv, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + csv.string() + "'");
    f << "epoch,lr,task_term,prior_term,robust_term,total," << MetricsRecord::csv_header() << "\n";
  }
  const std::string ckpt = (dir / "checkpoint.bin").string();
  std::size_t steps_done = 0;
  auto on_epoch = [&](const EpochReport& r, ModelBundle<float>& bundle) {
    save_bundle(bundle, ckpt);
    std::ofstream f(csv, std::ios::binary | std::ios::app);
    f << r.epoch << "," << csv_number(r.lr) << "," << csv_number(r.loss.task_term) << ","
      << csv_number(r.loss.prior_term) << "," << csv_number(r.loss.robust_term) << "," << csv_number(r.loss.total)
      << "," << r.metrics.csv_row() << "\n";
    if (!f.flush()) throw IoError("append to '" + csv.string() + "' failed");
    std::cerr << "epoch " << r.epoch << "/" << cfg.train.epochs << "  loss " << r.loss.total << "  kl "
              << r.metrics.mean_max_kl << "  (" << static_cast<long>(r.seconds) << " s)\n";
  };
  auto on_step = [&](std::size_t step, const LossBreakdown& l) {
    steps_done = step;
    if (step % 50 == 0) {
      std::cerr << "  step " << step << "  task " << l.task_term << "  prior " << l.prior_term << "  robust "
                << l.robust_term << "\n";
    }
  };
  train(cfg.train, data.train, &data.test, on_epoch, on_step);
  std::cerr << "done: " << steps_done << " steps, checkpoint " << ckpt << "\n";
  return Ok;
}

int cmd_probe(const Args& a) {
  RunConfig cfg = resolve(a);
  ModelBundle<float> bundle = require_bundle(a.checkpoint);
  cli::Splits data = cli::load_splits(cfg);
  if (!data.train.labels) throw ConfigError("probe training needs labelled data");
  const fs::path dir = prepare_out(cfg);

  Dataset labelled = data.train;
  if (cfg.labels_per_run > 0 && cfg.labels_per_run < labelled.size()) {
    // A seeded subset stands in for a limited label budget.
    std::vector<std::size_t> idx(labelled.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng pick(cfg.seed, {0x1abe1});
    std::shuffle(idx.begin(), idx.end(), pick.engine());
    idx.resize(cfg.labels_per_run);
    labelled = labelled.subset(idx);
  }
  nn::Sequential<float> head = train_probe(bundle.encoder, labelled, cfg.probe);

  ModelBundle<float> out;
  out.spec = bundle.spec;
  out.spec.heads = HeadSpecs{};
  out.spec.heads.num_classes = labelled.num_classes;
  out.spec.heads.classifier_width = cfg.probe.width;
  out.seed = cfg.seed;
  out.encoder = std::move(bundle.encoder);
  out.classifier = std::move(head);
  save_bundle(out, (dir / "probe.bin").string());

  EvalConfig ec = cfg.eval;
  ec.attack.epsilon = 0.0;
  ec.with_kl = false;
  const MetricsRecord m = evaluate(out.encoder, *out.classifier, data.test, ec, cfg.train.objective);
  write_text(dir / "probe_metrics.csv", MetricsRecord::csv_header() + "\n" + m.csv_row() + "\n");
  std::cerr << "probe clean accuracy " << m.clean_accuracy << " on " << data.test.size() << " inputs\n";
  return Ok;
}

int cmd_evaluate(const Args& a, bool audit) {
  RunConfig cfg = resolve(a);
  ModelBundle<float> bundle = require_bundle(a.checkpoint);
  nn::Sequential<float> classifier = pick_classifier(a, bundle);
  cli::Splits data = cli::load_splits(cfg);
  const fs::path dir = prepare_out(cfg);

  std::string csv = MetricsRecord::csv_header() + (audit ? ",status\n" : "\n");
  std::size_t violations = 0;
  for (double eps : cfg.eval_epsilons) {
    EvalConfig ec = cfg.eval;
    ec.attack.epsilon = eps;
    ec.audit_attack.epsilon = eps;
    ec.with_kl = audit;
    const MetricsRecord m = evaluate(bundle.encoder, classifier, data.test, ec, cfg.train.objective);
    csv += m.csv_row();
    if (audit) {
      const bool ok = m.slack >= 0.0;
      if (!ok) ++violations;
      csv += ok ? ",ok" : ",VIOLATED";
    }
    csv += "\n";
    std::cerr << "epsilon " << eps << ": clean " << m.clean_accuracy << "  adversarial " << m.adversarial_accuracy;
    if (audit) std::cerr << "  adv_loss " << m.adv_loss << "  rhs " << m.bound_rhs << "  slack " << m.slack;
    std::cerr << "\n";
  }
  write_text(dir / (audit ? "audit.csv" : "attack.csv"), csv);
  if (violations > 0) std::cerr << "warning: negative slack in " << violations << " audit row(s)\n";
  return Ok;
}

int cmd_report(const Args& a) {
  const std::string out = a.out.empty() ? a.metrics_dir : a.out;
  const auto runs = cli::write_report(a.metrics_dir, out);
  std::cerr << runs << " run(s) summarized in " << (fs::path(out) / "summary.txt").string() << "\n";
  return Ok;
}

void apply_thread_limit() {
  const char* env = std::getenv("URKLE_THREADS");
  if (!env || !*env) return;
  char* end = nullptr;
  const long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("URKLE_THREADS must be a positive integer, got '") + env + "'");
  nn::set_num_threads(static_cast<int>(n));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust Gaussian representation learning"};
  app.require_subcommand(1);
  Args args;

  auto add_common = [&](CLI::App* sub, bool needs_checkpoint) {
    sub->add_option("--config", args.config, "run configuration (key = value lines)")->required();
    auto* ck = sub->add_option("--checkpoint", args.checkpoint, "encoder checkpoint");
    if (needs_checkpoint) ck->required();
    sub->add_option("--out", args.out, "output directory (overrides the config's out key)");
    sub->add_option("--seed", args.seed, "seed (overrides the config's seed key)");
  };
  auto* pretrain = app.add_subcommand("pretrain", "train an encoder and write checkpoints and metrics.csv");
  add_common(pretrain, false);
  auto* probe = app.add_subcommand("probe", "train a classifier head on a frozen encoder");
  add_common(probe, true);
  auto* attack = app.add_subcommand("attack", "clean and adversarial accuracy per eval_epsilon");
  add_common(attack, true);
  attack->add_option("--probe", args.probe, "probe checkpoint");
  auto* audit = app.add_subcommand("audit", "adversarial loss against its KL upper bound per eval_epsilon");
  add_common(audit, true);
  audit->add_option("--probe", args.probe, "probe checkpoint");
  auto* report = app.add_subcommand("report", "summary table and plots over run directories");
  report->add_option("metrics_dir", args.metrics_dir, "directory of runs")->required();
  report->add_option("--config", args.config, "ignored; accepted for a uniform command line");
  report->add_option("--out", args.out, "where to write summary.txt and the plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Ok : BadConfig;
  }

  try {
    apply_thread_limit();
    if (pretrain->parsed()) return cmd_pretrain(args);
    if (probe->parsed()) return cmd_probe(args);
    if (attack->parsed()) return cmd_evaluate(args, false);
    if (audit->parsed()) return cmd_evaluate(args, true);
    if (report->parsed()) return cmd_report(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return BadConfig;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return BadConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return BadIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return BadIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n";
    return NumericAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Failure;
  }
  return Failure;
}
