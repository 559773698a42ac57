#pragma once

#include "fedsm/data.hpp"
#include "fedsm/model.hpp"
#include "fedsm/semantics.hpp"

#include <optional>
#include <vector>

namespace fedsm {

enum class MixupSource { kSample, kPrototype };

struct MixupConfig {
  double lambda_lo = 0.65;
  double lambda_hi = 0.90;
  int pseudo_per_class = 100;  // S
  SelectionPolicy policy;
  MixupSource source = MixupSource::kSample;
};

struct RoundSchedule {
  int total_rounds = 200;       // T
  int retraining_rounds = 50;   // R; retraining active for t >= T - R
  double participation_fraction = 0.4;
  int retrain_epochs = 50;
};

struct ClientState {
  int client_id = 0;
  std::vector<std::int64_t> shard;
  StudentModel model;
};

struct ServerState {
  StudentModel global_model;
  int round = 0;
  std::vector<Vec> global_prototypes;   // z_c^global, valid where present
  std::vector<bool> prototype_present;
};

struct PrototypeReport {
  int cls = 0;
  Vec prototype;       // f_c^k
  std::int64_t count = 0;  // n_c^k
};

// Per-sample extractor features of one client's shard, grouped by class,
// plus the class prototypes (means).
struct ClientFeatures {
  std::vector<std::vector<Vec>> by_class;
  std::vector<Vec> prototypes;
  std::vector<std::int64_t> counts;
};

struct RoundMetrics {
  int round = 0;
  std::vector<int> participants;
  std::vector<int> dropped;
  double mean_local_loss = 0.0;
  bool retraining_active = false;
  int prototype_uploads = 0;    // instrumentation for the schedule gate
  int retrain_invocations = 0;
};

struct FedContext {
  const Dataset* train = nullptr;
  const EmbeddingTable* emb = nullptr;
  const RelevanceMatrix* rel = nullptr;
  TeacherView teacher;
  TrainConfig train_cfg;
  MixupConfig mixup;
  RoundSchedule schedule;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Uniform without replacement, ceil(fraction * K) clients, ascending ids.
std::vector<int> sample_clients(int num_clients, double fraction, RngStream& rng);

ClientFeatures extract_features(const StudentModel& model, const Dataset& ds,
                                const std::vector<std::int64_t>& shard);

// Classes with zero local samples are omitted.
std::vector<PrototypeReport> local_prototypes(const StudentModel& model, const Dataset& ds,
                                              const std::vector<std::int64_t>& shard);

// Count-weighted mean over clients, fixed client order; classes reported by
// no client come back absent.
void aggregate_prototypes(const std::vector<std::vector<PrototypeReport>>& reports,
                          int num_classes, std::vector<Vec>& prototypes,
                          std::vector<bool>& present);

StudentModel aggregate_models(const std::vector<const StudentModel*>& models,
                              const std::vector<std::int64_t>& shard_sizes);

// Exactly S entries per class for all C classes; each entry is the convex
// combination (1-lambda) * z_v + lambda * z_c_global.
std::vector<LabeledFeature> generate_pseudo_features(
    const ClientFeatures& local, const std::vector<Vec>& global_prototypes,
    const std::vector<bool>& prototype_present, const RelevanceMatrix& rel,
    const MixupConfig& cfg, RngStream& rng);

RoundMetrics run_round(ServerState& server, std::vector<ClientState>& clients,
                       const FedContext& ctx);

// Plain FedAvg loop, kept independent of the retraining machinery; used both
// as the fedavg method and as the reduction reference.
RoundMetrics run_fedavg_round(ServerState& server, std::vector<ClientState>& clients,
                              const FedContext& ctx);

}  // namespace fedsm
