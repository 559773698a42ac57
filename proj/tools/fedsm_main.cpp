#include "fedsm/experiment.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

namespace {

using namespace fedsm;
namespace fs = std::filesystem;

int worker_threads() {
  const char* env = std::getenv("FEDSM_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n >= 1 ? n : 1;
}

struct CommonOpts {
  std::string config_path;
  std::string preset = "paper";
  std::string out_dir;
  std::int64_t seed_override = -1;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "path to a key = value config file");
  cmd->add_option("--preset", opts.preset, "base preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--out", opts.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", opts.seed_override, "seed override");
}

ExperimentConfig resolve_config(const CommonOpts& opts) {
  ExperimentConfig cfg = preset_config(opts.preset);
  if (!opts.config_path.empty()) cfg = load_config(opts.config_path, cfg);
  if (opts.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(opts.seed_override);
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  cfg.validate();
  return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

int cmd_run(const CommonOpts& opts) {
  const ExperimentConfig cfg = resolve_config(opts);
  const RunSummary s = run_experiment(cfg, cfg.out_dir, worker_threads());
  std::cout << "run " << s.run_id << " done in " << s.wall_seconds << "s\n"
            << "  overall_acc = " << s.final_report.overall_acc << "\n";
  if (s.final_report.many_acc) std::cout << "  many_acc    = " << *s.final_report.many_acc << "\n";
  if (s.final_report.medium_acc) {
    std::cout << "  medium_acc  = " << *s.final_report.medium_acc << "\n";
  }
  if (s.final_report.few_acc) std::cout << "  few_acc     = " << *s.final_report.few_acc << "\n";
  std::cout << "  metrics     = " << s.metrics_path << "\n";
  return 0;
}

int cmd_sweep(const CommonOpts& opts, const std::string& axis, const std::string& values) {
  const ExperimentConfig cfg = resolve_config(opts);
  const auto rows = run_sweep(cfg, axis, split_csv(values), cfg.out_dir, worker_threads());
  std::cout << "sweep over " << axis << ": " << rows.size() << " runs\n";
  for (const SweepRow& row : rows) {
    std::cout << "  " << axis << "=" << row.value
              << " overall_acc=" << row.summary.final_report.overall_acc << "\n";
  }
  std::cout << "combined csv: " << (fs::path(cfg.out_dir) / "sweep.csv").string() << "\n";
  return 0;
}

int cmd_gen(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  if (cfg.data_source != "synthetic") throw ConfigError("gen: data.source must be synthetic");
  const ExperimentSetup setup = build_setup(cfg);
  fs::create_directories(cfg.out_dir);
  const std::string train_path = (fs::path(cfg.out_dir) / "train.tsv").string();
  const std::string test_path = (fs::path(cfg.out_dir) / "test.tsv").string();
  const std::string part_path = (fs::path(cfg.out_dir) / "partition.tsv").string();
  const std::string emb_path = (fs::path(cfg.out_dir) / "label_embeddings.tsv").string();
  save_dataset(train_path, setup.train);
  save_dataset(test_path, setup.test);
  save_partition(part_path, setup.partition);
  save_embeddings(emb_path, setup.emb);

  std::cout << "class counts (train):\n";
  for (int c = 0; c < setup.train.num_classes; ++c) {
    std::cout << "  class " << c << ": " << setup.train.class_counts[c] << "\n";
  }
  std::cout << "wrote " << train_path << ", " << test_path << ", " << part_path << ", "
            << emb_path << "\n";
  return 0;
}

int cmd_gradcheck(const CommonOpts& opts) {
  ExperimentConfig cfg = resolve_config(opts);
  RngStream rng(cfg.seed, stream_id(StreamKind::kInit), 0);
  StudentModel model =
      make_student(cfg.input_dim, cfg.hidden_dims, cfg.feature_dim, cfg.classes, rng);

  // Finite differences are only a valid oracle away from the ReLU kink:
  // redraw the batch until every hidden pre-activation clears the
  // perturbation radius.
  auto min_abs_pre = [&](const MatD& x) {
    double mn = 1e9;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      Vec h = x.row(i).cast<float>();
      for (const LinearLayer& l : model.hidden) {
        const Vec pre = l.weight * h + l.bias;
        mn = std::min(mn, static_cast<double>(pre.cwiseAbs().minCoeff()));
        h = pre.cwiseMax(0.0f);
      }
    }
    return mn;
  };
  Batch batch;
  const int b = 5;
  batch.x.resize(b, cfg.input_dim);
  batch.labels.resize(b);
  for (int attempt = 0; attempt < 200; ++attempt) {
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < cfg.input_dim; ++j) batch.x(i, j) = rng.gaussian();
    }
    if (min_abs_pre(batch.x) >= 5e-3) break;
  }
  for (int i = 0; i < b; ++i) batch.labels[i] = static_cast<int>(rng.below(cfg.classes));
  bool ok = true;
  for (const std::string mode : {"kl", "mse", "none"}) {
    TrainConfig tc;
    tc.distill_mode = distill_mode_from_string(mode);
    tc.teacher_logit_scale = cfg.teacher_scale;
    if (tc.distill_mode == DistillMode::kKl) {
      batch.teacher.resize(b, cfg.classes);
      for (int i = 0; i < b; ++i) {
        for (int c = 0; c < cfg.classes; ++c) batch.teacher(i, c) = rng.gaussian();
      }
    } else if (tc.distill_mode == DistillMode::kMse) {
      batch.teacher.resize(b, cfg.feature_dim);
      for (int i = 0; i < b; ++i) {
        for (int c = 0; c < cfg.feature_dim; ++c) batch.teacher(i, c) = rng.gaussian();
      }
    } else {
      batch.teacher.resize(0, 0);
    }
    const double err = grad_check(model, batch, tc, 1e-3);
    const bool pass = err < 1e-3;
    ok = ok && pass;
    std::cout << "mode=" << mode << " max_rel_error=" << err << (pass ? " PASS" : " FAIL")
              << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FedSM federated long-tail simulator"};
  app.require_subcommand(1);

  CommonOpts run_opts, sweep_opts, gen_opts, grad_opts;
  std::string axis, values;

  CLI::App* run = app.add_subcommand("run", "execute one experiment");
  add_common(run, run_opts);
  CLI::App* sweep = app.add_subcommand("sweep", "run an ablation sweep over one axis");
  add_common(sweep, sweep_opts);
  sweep->add_option("--axis", axis, "lambda|S|tau|similarity|mode|IF")->required();
  sweep->add_option("--values", values, "comma-separated axis values")->required();
  CLI::App* gen = app.add_subcommand("gen", "generate dataset/partition/embedding files");
  add_common(gen, gen_opts);
  CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
  add_common(grad, grad_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(run_opts);
    if (sweep->parsed()) return cmd_sweep(sweep_opts, axis, values);
    if (gen->parsed()) return cmd_gen(gen_opts);
    if (grad->parsed()) return cmd_gradcheck(grad_opts);
  } catch (const fedsm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const fedsm::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
