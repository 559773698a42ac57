#include "fedsm/experiment.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fedsm {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string hex_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json report_to_json(const EvalReport& rep) {
  json j;
  j["overall_acc"] = rep.overall_acc;
  j["many_acc"] = rep.many_acc ? json(*rep.many_acc) : json(nullptr);
  j["medium_acc"] = rep.medium_acc ? json(*rep.medium_acc) : json(nullptr);
  j["few_acc"] = rep.few_acc ? json(*rep.few_acc) : json(nullptr);
  j["correct"] = rep.correct;
  j["total"] = rep.total;
  j["per_class_acc"] = rep.per_class_acc;
  return j;
}

}  // namespace

ExperimentSetup build_setup(const ExperimentConfig& cfg) {
  ExperimentSetup s;

  if (cfg.emb_source == "synthetic") {
    RngStream rng(cfg.seed, stream_id(StreamKind::kEmbedding), 0);
    s.emb = synthetic_embeddings(cfg.classes, cfg.emb_dim, rng);
  } else {
    s.emb = load_embeddings(cfg.emb_path, cfg.classes);
    if (s.emb.dim != cfg.emb_dim) {
      throw ConfigError("emb.dim does not match embedding file dimension");
    }
    if (!cfg.emb_samples_path.empty()) load_sample_embeddings(cfg.emb_samples_path, s.emb);
  }

  if (cfg.data_source == "synthetic") {
    if (cfg.anchored && cfg.emb_dim != cfg.input_dim) {
      throw ConfigError("anchored synthetic data requires emb.dim == data.dim");
    }
    const std::vector<Vec>* anchors = cfg.anchored ? &s.emb.label_vectors : nullptr;
    RngStream gen_rng(cfg.seed, stream_id(StreamKind::kDataGen), 0);
    Dataset full = generate_synthetic(cfg.classes, cfg.input_dim, cfg.head_count, anchors,
                                      cfg.spread, cfg.noise, gen_rng);
    RngStream tail_rng(cfg.seed, stream_id(StreamKind::kLongTail), 0);
    s.train = apply_long_tail(full, {cfg.imbalance_factor, cfg.head_count}, tail_rng);
    RngStream test_rng(cfg.seed, stream_id(StreamKind::kTestGen), 0);
    s.test = generate_synthetic(cfg.classes, cfg.input_dim, cfg.test_per_class, anchors,
                                cfg.spread, cfg.noise, test_rng);
  } else {
    s.train = load_dataset(cfg.data_path);
    if (cfg.data_test_path.empty()) throw ConfigError("data.test_path: required for file data");
    s.test = load_dataset(cfg.data_test_path);
    if (s.train.num_classes != cfg.classes || s.train.dim != cfg.input_dim) {
      throw ConfigError("dataset file header does not match data.classes/data.dim");
    }
  }

  if (!cfg.partition_path.empty()) {
    s.partition = load_partition(cfg.partition_path);
    if (static_cast<int>(s.partition.assignment.size()) != cfg.num_clients) {
      throw ConfigError("partition file client count does not match partition.clients");
    }
    recount_partition(s.train, s.partition);
  } else {
    RngStream rng(cfg.seed, stream_id(StreamKind::kPartition), 0);
    s.partition = dirichlet_partition(s.train, cfg.num_clients, cfg.dirichlet_alpha,
                                      cfg.min_per_client, rng);
  }

  s.rel = build_relevance(s.emb, similarity_kind_from_string(cfg.similarity),
                          cfg.relevance_transform == "softmax" ? RelevanceTransform::kSoftmax
                                                               : RelevanceTransform::kIdentity,
                          cfg.tau);
  return s;
}

FedContext make_context(const ExperimentConfig& cfg, const ExperimentSetup& setup, int threads) {
  FedContext ctx;
  ctx.train = &setup.train;
  ctx.emb = &setup.emb;
  ctx.rel = &setup.rel;
  ctx.teacher.emb = &setup.emb;
  ctx.teacher.use_input_as_hv = cfg.data_source == "synthetic";
  ctx.train_cfg.lr_local = cfg.lr_local;
  ctx.train_cfg.lr_retrain = cfg.lr_retrain;
  ctx.train_cfg.batch_size = cfg.batch_size;
  ctx.train_cfg.epochs_per_round = cfg.epochs_per_round;
  ctx.train_cfg.distill_mode = distill_mode_from_string(cfg.distill);
  ctx.train_cfg.teacher_logit_scale = cfg.teacher_scale;
  ctx.mixup.lambda_lo = cfg.lambda_lo;
  ctx.mixup.lambda_hi = cfg.lambda_hi;
  ctx.mixup.pseudo_per_class = cfg.pseudo_per_class;
  ctx.mixup.policy.mode = selection_mode_from_string(cfg.selection_mode);
  ctx.mixup.policy.temperature = cfg.tau;
  ctx.mixup.source = cfg.mixup_source == "sample" ? MixupSource::kSample : MixupSource::kPrototype;
  ctx.schedule.total_rounds = cfg.rounds;
  ctx.schedule.retraining_rounds = cfg.method == "fedavg" ? 0 : cfg.retrain_rounds;
  ctx.schedule.participation_fraction = cfg.participation;
  ctx.schedule.retrain_epochs = cfg.retrain_epochs;
  ctx.seed = cfg.seed;
  ctx.threads = threads;
  return ctx;
}

RunSummary run_experiment(const ExperimentConfig& cfg, const std::string& out_dir, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const ExperimentSetup setup = build_setup(cfg);
  const FedContext ctx = make_context(cfg, setup, threads);

  fs::create_directories(out_dir);

  RunSummary summary;
  summary.config_echo = serialize_config(cfg);
  summary.run_id = hex_hash(summary.config_echo);
  summary.metrics_path = (fs::path(out_dir) / "metrics.jsonl").string();
  summary.checkpoint_path = (fs::path(out_dir) / "model.bin").string();

  {
    std::ofstream cf(fs::path(out_dir) / "config.txt");
    cf << summary.config_echo;
  }

  RngStream init_rng(cfg.seed, stream_id(StreamKind::kInit), 0);
  ServerState server;
  server.global_model =
      make_student(cfg.input_dim, cfg.hidden_dims, cfg.feature_dim, cfg.classes, init_rng);

  std::vector<ClientState> clients(cfg.num_clients);
  for (int k = 0; k < cfg.num_clients; ++k) {
    clients[k].client_id = k;
    clients[k].shard = setup.partition.assignment[k];
    clients[k].model = server.global_model;
  }

  const GroupThresholds thresholds{cfg.many_min, cfg.few_max};
  std::ofstream metrics(summary.metrics_path, std::ios::binary);
  if (!metrics) throw DataError("cannot write metrics file: " + summary.metrics_path);

  EvalReport report;
  for (int t = 0; t < cfg.rounds; ++t) {
    const RoundMetrics rm = cfg.method == "fedavg" ? run_fedavg_round(server, clients, ctx)
                                                   : run_round(server, clients, ctx);
    report = evaluate(server.global_model, setup.test, setup.train.class_counts, thresholds);

    json line;
    line["round"] = rm.round;
    line["participants"] = rm.participants;
    line["dropped"] = rm.dropped;
    line["mean_local_loss"] = rm.mean_local_loss;
    line["retraining"] = rm.retraining_active;
    line["prototype_uploads"] = rm.prototype_uploads;
    line["retrain_invocations"] = rm.retrain_invocations;
    line["overall_acc"] = report.overall_acc;
    line["many_acc"] = report.many_acc ? json(*report.many_acc) : json(nullptr);
    line["medium_acc"] = report.medium_acc ? json(*report.medium_acc) : json(nullptr);
    line["few_acc"] = report.few_acc ? json(*report.few_acc) : json(nullptr);
    metrics << line.dump() << "\n";
  }
  metrics.close();

  summary.final_report = report;
  save_model(summary.checkpoint_path, server.global_model);

  summary.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json sj;
  sj["run_id"] = summary.run_id;
  sj["method"] = cfg.method;
  sj["seed"] = cfg.seed;
  sj["final"] = report_to_json(report);
  sj["metrics_path"] = summary.metrics_path;
  sj["checkpoint_path"] = summary.checkpoint_path;
  sj["wall_seconds"] = summary.wall_seconds;
  std::ofstream sf(fs::path(out_dir) / "summary.json");
  sf << sj.dump(2) << "\n";
  return summary;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::string& out_dir, int threads) {
  if (values.empty()) throw ConfigError("sweep: no values given");
  fs::create_directories(out_dir);

  std::vector<SweepRow> rows;
  for (const std::string& value : values) {
    ExperimentConfig cfg = base;
    if (axis == "lambda") {
      cfg.lambda_lo = cfg.lambda_hi = std::stod(value);
    } else if (axis == "S") {
      cfg.pseudo_per_class = std::stoi(value);
    } else if (axis == "tau") {
      cfg.tau = std::stod(value);
    } else if (axis == "similarity") {
      cfg.similarity = value;
    } else if (axis == "mode") {
      cfg.selection_mode = value;
    } else if (axis == "IF") {
      cfg.imbalance_factor = std::stod(value);
    } else {
      throw ConfigError("unknown sweep axis: " + axis);
    }
    cfg.validate();
    const std::string run_dir = (fs::path(out_dir) / (axis + "_" + value)).string();
    rows.push_back({value, run_experiment(cfg, run_dir, threads)});
  }

  std::ofstream csv(fs::path(out_dir) / "sweep.csv");
  csv << "axis,value,overall_acc,many_acc,medium_acc,few_acc\n";
  auto cell = [](const std::optional<double>& v) {
    return v ? std::to_string(*v) : std::string("");
  };
  for (const SweepRow& row : rows) {
    const EvalReport& r = row.summary.final_report;
    csv << axis << ',' << row.value << ',' << r.overall_acc << ',' << cell(r.many_acc) << ','
        << cell(r.medium_acc) << ',' << cell(r.few_acc) << "\n";
  }
  return rows;
}

}  // namespace fedsm
