#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedsm/config.hpp"
#include "fedsm/experiment.hpp"
#include "fedsm/fedcore.hpp"

#include <numeric>
#include <set>

using namespace fedsm;

namespace {

ExperimentConfig small_config(std::uint64_t seed) {
  ExperimentConfig cfg = preset_config("desk");
  cfg.seed = seed;
  cfg.classes = 5;
  cfg.input_dim = 8;
  cfg.emb_dim = 8;
  cfg.feature_dim = 8;
  cfg.hidden_dims = {12};
  cfg.head_count = 60;
  cfg.imbalance_factor = 10.0;
  cfg.test_per_class = 20;
  cfg.num_clients = 4;
  cfg.participation = 1.0;
  cfg.rounds = 4;
  cfg.retrain_rounds = 2;
  cfg.retrain_epochs = 3;
  cfg.epochs_per_round = 2;
  cfg.pseudo_per_class = 10;
  cfg.validate();
  return cfg;
}

std::vector<std::int64_t> all_indices(const Dataset& ds) {
  std::vector<std::int64_t> idx(ds.samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace

TEST_CASE("sample_clients size, uniqueness, determinism") {
  RngStream r1(1, stream_id(StreamKind::kClientSample), 5);
  const auto u = sample_clients(20, 0.4, r1);
  CHECK(u.size() == 8);
  CHECK(std::set<int>(u.begin(), u.end()).size() == 8);
  for (int id : u) {
    CHECK(id >= 0);
    CHECK(id < 20);
  }
  RngStream r2(1, stream_id(StreamKind::kClientSample), 5);
  CHECK(sample_clients(20, 0.4, r2) == u);

  RngStream r3(1, 1, 0);
  const auto all = sample_clients(6, 1.0, r3);
  CHECK(all == std::vector<int>{0, 1, 2, 3, 4, 5});
}

TEST_CASE("local prototypes equal brute-force means") {
  RngStream gen(2, stream_id(StreamKind::kDataGen), 0);
  Dataset ds = generate_synthetic(4, 6, 15, nullptr, 1.0, 0.5, gen);
  RngStream init(2, stream_id(StreamKind::kInit), 0);
  StudentModel m = make_student(6, {8}, 5, 4, init);
  const auto idx = all_indices(ds);
  const auto reports = local_prototypes(m, ds, idx);
  REQUIRE(reports.size() == 4);
  for (const PrototypeReport& r : reports) {
    VecD acc = VecD::Zero(5);
    std::int64_t n = 0;
    for (std::int64_t i : idx) {
      if (ds.samples[i].label == r.cls) {
        acc += forward(m, ds.samples[i].features).feature.cast<double>();
        ++n;
      }
    }
    CHECK(n == r.count);
    const VecD mean = acc / n;
    CHECK((r.prototype.cast<double>() - mean).norm() / std::max(1e-12, mean.norm()) < 1e-6);
  }
}

TEST_CASE("prototype weighted aggregation, tiny cases") {
  Vec u(2), v(2);
  u << 1, 0;
  v << 0, 1;
  std::vector<Vec> protos;
  std::vector<bool> present;

  // single client
  aggregate_prototypes({{{0, u, 3}}}, 2, protos, present);
  CHECK(present[0]);
  CHECK_FALSE(present[1]);
  CHECK(protos[0] == u);

  // counts 1 and 3 -> (u + 3v) / 4
  aggregate_prototypes({{{0, u, 1}}, {{0, v, 3}}}, 1, protos, present);
  CHECK(protos[0][0] == doctest::Approx(0.25));
  CHECK(protos[0][1] == doctest::Approx(0.75));
}

TEST_CASE("two-level prototype aggregation equals the global mean with a shared extractor") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    RngStream gen(seed, stream_id(StreamKind::kDataGen), 0);
    Dataset ds = generate_synthetic(4, 5, 30, nullptr, 1.0, 0.5, gen);
    RngStream prng(seed, stream_id(StreamKind::kPartition), 0);
    Partition p = dirichlet_partition(ds, 3, 0.5, 1, prng);
    RngStream init(seed, stream_id(StreamKind::kInit), 0);
    StudentModel m = make_student(5, {7}, 4, 4, init);

    std::vector<std::vector<PrototypeReport>> reports;
    for (const auto& shard : p.assignment) reports.push_back(local_prototypes(m, ds, shard));
    std::vector<Vec> protos;
    std::vector<bool> present;
    aggregate_prototypes(reports, 4, protos, present);

    const auto idx = all_indices(ds);
    for (int c = 0; c < 4; ++c) {
      REQUIRE(present[c]);
      VecD acc = VecD::Zero(4);
      std::int64_t n = 0;
      for (std::int64_t i : idx) {
        if (ds.samples[i].label == c) {
          acc += forward(m, ds.samples[i].features).feature.cast<double>();
          ++n;
        }
      }
      const VecD mean = acc / n;
      CHECK((protos[c].cast<double>() - mean).norm() / std::max(1e-12, mean.norm()) < 1e-5);
    }
  }
}

TEST_CASE("model aggregation: fixed point, midpoint, weighted mean") {
  RngStream init(3, stream_id(StreamKind::kInit), 0);
  StudentModel a = make_student(4, {5}, 3, 4, init);
  StudentModel b = make_student(4, {5}, 3, 4, init);

  const StudentModel same = aggregate_models({&a, &a, &a}, {1, 2, 3});
  CHECK(models_equal(same, a));

  const StudentModel mid = aggregate_models({&a, &b}, {7, 7});
  const double expected =
      0.5 * (static_cast<double>(a.classifier.weight(0, 0)) + b.classifier.weight(0, 0));
  CHECK(mid.classifier.weight(0, 0) == doctest::Approx(expected).epsilon(1e-6));

  const StudentModel w = aggregate_models({&a, &b}, {1, 3});
  const double expected_w =
      0.25 * static_cast<double>(a.hidden[0].weight(1, 2)) + 0.75 * b.hidden[0].weight(1, 2);
  CHECK(w.hidden[0].weight(1, 2) == doctest::Approx(expected_w).epsilon(1e-6));
}

TEST_CASE("pseudo-feature generation: balance, convexity, endpoints") {
  RngStream gen(4, stream_id(StreamKind::kDataGen), 0);
  Dataset ds = generate_synthetic(5, 6, 10, nullptr, 1.0, 0.5, gen);
  RngStream init(4, stream_id(StreamKind::kInit), 0);
  StudentModel m = make_student(6, {8}, 4, 5, init);

  // client holding only classes 0..2
  std::vector<std::int64_t> shard;
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(ds.samples.size()); ++i) {
    if (ds.samples[i].label <= 2) shard.push_back(i);
  }
  const ClientFeatures feats = extract_features(m, ds, shard);
  std::vector<std::vector<PrototypeReport>> reports = {local_prototypes(m, ds, all_indices(ds))};
  std::vector<Vec> protos;
  std::vector<bool> present;
  aggregate_prototypes(reports, 5, protos, present);

  RngStream erng(4, stream_id(StreamKind::kEmbedding), 0);
  const EmbeddingTable emb = synthetic_embeddings(5, 4, erng);
  const RelevanceMatrix rel =
      build_relevance(emb, SimilarityKind::kCosine, RelevanceTransform::kSoftmax);

  MixupConfig cfg;
  cfg.pseudo_per_class = 7;
  RngStream rng(4, stream_id(StreamKind::kMixup), 0);
  const auto pseudo = generate_pseudo_features(feats, protos, present, rel, cfg, rng);

  // exactly S per class, all C classes (3 and 4 are absent locally)
  REQUIRE(pseudo.size() == 35);
  std::vector<int> counts(5, 0);
  for (const auto& f : pseudo) ++counts[f.label];
  for (int c = 0; c < 5; ++c) CHECK(counts[c] == 7);

  // convexity: each coordinate within [min, max] of source coordinates
  for (const auto& f : pseudo) {
    const Vec& zg = protos[f.label];
    for (int j = 0; j < 4; ++j) {
      float lo = zg[j], hi = zg[j];
      for (int v = 0; v <= 2; ++v) {
        for (const Vec& zf : feats.by_class[v]) {
          lo = std::min(lo, zf[j]);
          hi = std::max(hi, zf[j]);
        }
      }
      CHECK(f.feature[j] >= lo - 1e-5f);
      CHECK(f.feature[j] <= hi + 1e-5f);
    }
  }

  // lambda endpoints
  MixupConfig at_one = cfg;
  at_one.lambda_lo = at_one.lambda_hi = 1.0;
  RngStream r1(5, 1, 0);
  for (const auto& f : generate_pseudo_features(feats, protos, present, rel, at_one, r1)) {
    CHECK(f.feature == protos[f.label]);
  }
  MixupConfig at_zero = cfg;
  at_zero.lambda_lo = at_zero.lambda_hi = 0.0;
  RngStream r0(6, 1, 0);
  for (const auto& f : generate_pseudo_features(feats, protos, present, rel, at_zero, r0)) {
    bool found = false;
    for (int v = 0; v <= 2 && !found; ++v) {
      for (const Vec& zf : feats.by_class[v]) {
        if (zf == f.feature) {
          found = true;
          break;
        }
      }
    }
    CHECK(found);
  }
}

TEST_CASE("missing global prototype aborts pseudo-feature generation") {
  ClientFeatures feats;
  feats.by_class.resize(2);
  feats.counts = {1, 0};
  Vec f0(3);
  f0 << 1, 2, 3;
  feats.by_class[0] = {f0};
  feats.prototypes = {f0, Vec()};
  std::vector<Vec> protos = {f0, Vec()};
  std::vector<bool> present = {true, false};

  EmbeddingTable emb;
  emb.dim = 2;
  Vec e0(2), e1(2);
  e0 << 1, 0;
  e1 << 0, 1;
  emb.label_vectors = {e0, e1};
  const RelevanceMatrix rel =
      build_relevance(emb, SimilarityKind::kCosine, RelevanceTransform::kIdentity);
  MixupConfig cfg;
  RngStream rng(1, 1, 0);
  CHECK_THROWS_AS(generate_pseudo_features(feats, protos, present, rel, cfg, rng),
                  ProtocolError);
}

TEST_CASE("retraining gate: no prototype traffic before T - R") {
  const ExperimentConfig cfg = small_config(11);
  const ExperimentSetup setup = build_setup(cfg);
  const FedContext ctx = make_context(cfg, setup, 1);

  RngStream init(cfg.seed, stream_id(StreamKind::kInit), 0);
  ServerState server;
  server.global_model =
      make_student(cfg.input_dim, cfg.hidden_dims, cfg.feature_dim, cfg.classes, init);
  std::vector<ClientState> clients(cfg.num_clients);
  for (int k = 0; k < cfg.num_clients; ++k) {
    clients[k] = {k, setup.partition.assignment[k], server.global_model};
  }

  for (int t = 0; t < cfg.rounds; ++t) {
    const RoundMetrics rm = run_round(server, clients, ctx);
    const bool gate_open = t >= cfg.rounds - cfg.retrain_rounds;
    CHECK(rm.retraining_active == gate_open);
    if (!gate_open) {
      CHECK(rm.prototype_uploads == 0);
      CHECK(rm.retrain_invocations == 0);
    } else {
      CHECK(rm.prototype_uploads == cfg.num_clients);
      CHECK(rm.retrain_invocations == static_cast<int>(rm.participants.size()));
    }
  }
  CHECK(server.round == cfg.rounds);
}

TEST_CASE("FedSM with gate off reduces to the FedAvg reference, byte identical") {
  ExperimentConfig cfg = small_config(21);
  cfg.retrain_rounds = 0;
  cfg.distill = "none";
  const ExperimentSetup setup = build_setup(cfg);
  const FedContext ctx = make_context(cfg, setup, 1);

  RngStream init(cfg.seed, stream_id(StreamKind::kInit), 0);
  const StudentModel initial =
      make_student(cfg.input_dim, cfg.hidden_dims, cfg.feature_dim, cfg.classes, init);

  ServerState fedsm_server{initial};
  ServerState ref_server{initial};
  std::vector<ClientState> fedsm_clients(cfg.num_clients), ref_clients(cfg.num_clients);
  for (int k = 0; k < cfg.num_clients; ++k) {
    fedsm_clients[k] = {k, setup.partition.assignment[k], initial};
    ref_clients[k] = {k, setup.partition.assignment[k], initial};
  }
  for (int t = 0; t < cfg.rounds; ++t) {
    run_round(fedsm_server, fedsm_clients, ctx);
    run_fedavg_round(ref_server, ref_clients, ctx);
    CHECK(models_equal(fedsm_server.global_model, ref_server.global_model));
  }
}

TEST_CASE("rounds are independent of the thread count") {
  const ExperimentConfig cfg = small_config(31);
  const ExperimentSetup setup = build_setup(cfg);

  auto run_with = [&](int threads) {
    const FedContext ctx = make_context(cfg, setup, threads);
    RngStream init(cfg.seed, stream_id(StreamKind::kInit), 0);
    ServerState server;
    server.global_model =
        make_student(cfg.input_dim, cfg.hidden_dims, cfg.feature_dim, cfg.classes, init);
    std::vector<ClientState> clients(cfg.num_clients);
    for (int k = 0; k < cfg.num_clients; ++k) {
      clients[k] = {k, setup.partition.assignment[k], server.global_model};
    }
    for (int t = 0; t < cfg.rounds; ++t) run_round(server, clients, ctx);
    return model_digest(server.global_model);
  };
  CHECK(run_with(1) == run_with(4));
}
