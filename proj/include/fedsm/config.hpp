#pragma once

#include "fedsm/fedcore.hpp"

#include <map>
#include <string>
#include <vector>

namespace fedsm {

// Flat `key = value` text with '#' comments and dotted section prefixes.
using KvMap = std::map<std::string, std::string>;

KvMap parse_kv_text(const std::string& text);
KvMap parse_kv_file(const std::string& path);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string method = "fedsm";  // fedsm | fedavg
  std::string out_dir = "runs";

  // data
  std::string data_source = "synthetic";  // synthetic | file
  std::string data_path;
  std::string data_test_path;
  int classes = 10;
  int input_dim = 16;
  std::int64_t head_count = 1000;  // N_1
  double imbalance_factor = 100.0;
  bool anchored = true;  // class means from the label embeddings
  double spread = 3.0;
  double noise = 1.75;
  std::int64_t test_per_class = 100;

  // partition
  int num_clients = 20;
  double dirichlet_alpha = 0.5;
  std::int64_t min_per_client = 2;
  std::string partition_path;

  // embeddings
  std::string emb_source = "synthetic";  // synthetic | file
  int emb_dim = 16;
  std::string emb_path;
  std::string emb_samples_path;

  // semantics
  std::string similarity = "cosine";
  std::string relevance_transform = "softmax";  // softmax | identity
  double tau = 0.5;

  // mixup
  double lambda_lo = 0.65;
  double lambda_hi = 0.90;
  int pseudo_per_class = 100;  // S
  std::string selection_mode = "probabilistic";
  std::string mixup_source = "sample";  // sample | prototype

  // model
  std::vector<int> hidden_dims = {64};
  int feature_dim = 16;

  // train
  double lr_local = 0.1;
  double lr_retrain = 0.01;
  int batch_size = 32;
  int epochs_per_round = 10;
  std::string distill = "kl";  // kl | mse | none
  double teacher_scale = 10.0;

  // schedule
  int rounds = 200;            // T
  int retrain_rounds = 50;     // R
  double participation = 0.4;
  int retrain_epochs = 50;

  // eval
  std::int64_t many_min = 100;
  std::int64_t few_max = 20;

  void validate() const;
};

// Paper-scale defaults are the struct defaults; "desk" shrinks the schedule.
ExperimentConfig preset_config(const std::string& name);

ExperimentConfig config_from_kv(const KvMap& kv, const ExperimentConfig& base = {});
KvMap config_to_kv(const ExperimentConfig& cfg);

// Normalized form: sorted `key = value` lines.
std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path, const ExperimentConfig& base = {});

}  // namespace fedsm
