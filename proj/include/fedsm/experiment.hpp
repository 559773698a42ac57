#pragma once

#include "fedsm/config.hpp"
#include "fedsm/eval.hpp"

#include <string>
#include <vector>

namespace fedsm {

// Everything a run needs, materialized from an ExperimentConfig.
struct ExperimentSetup {
  Dataset train;
  Dataset test;
  Partition partition;
  EmbeddingTable emb;
  RelevanceMatrix rel;
};

ExperimentSetup build_setup(const ExperimentConfig& cfg);

FedContext make_context(const ExperimentConfig& cfg, const ExperimentSetup& setup, int threads);

struct RunSummary {
  std::string run_id;
  std::string config_echo;
  EvalReport final_report;
  std::string metrics_path;
  std::string checkpoint_path;
  double wall_seconds = 0.0;
};

// Executes all rounds; writes config.txt, metrics.jsonl, summary.json and
// model.bin under out_dir.
RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir,
                          int threads = 1);

struct SweepRow {
  std::string value;
  RunSummary summary;
};

// Sequential runs sharing the base seed; writes sweep.csv under out_dir.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::string& out_dir, int threads = 1);

}  // namespace fedsm
