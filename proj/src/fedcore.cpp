#include "fedsm/fedcore.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace fedsm {
namespace {

struct AccumModel {
  std::vector<MatD> hidden_w;
  std::vector<VecD> hidden_b;
  MatD projection_w;
  VecD projection_b;
  MatD classifier_w;
  VecD classifier_b;

  explicit AccumModel(const StudentModel& shape) {
    for (const LinearLayer& l : shape.hidden) {
      hidden_w.emplace_back(MatD::Zero(l.weight.rows(), l.weight.cols()));
      hidden_b.emplace_back(VecD::Zero(l.bias.size()));
    }
    projection_w = MatD::Zero(shape.projection.weight.rows(), shape.projection.weight.cols());
    projection_b = VecD::Zero(shape.projection.bias.size());
    classifier_w = MatD::Zero(shape.classifier.weight.rows(), shape.classifier.weight.cols());
    classifier_b = VecD::Zero(shape.classifier.bias.size());
  }

  void add(const StudentModel& m, double w) {
    for (std::size_t i = 0; i < hidden_w.size(); ++i) {
      hidden_w[i] += w * m.hidden[i].weight.cast<double>();
      hidden_b[i] += w * m.hidden[i].bias.cast<double>();
    }
    projection_w += w * m.projection.weight.cast<double>();
    projection_b += w * m.projection.bias.cast<double>();
    classifier_w += w * m.classifier.weight.cast<double>();
    classifier_b += w * m.classifier.bias.cast<double>();
  }

  StudentModel finish(const StudentModel& shape) const {
    StudentModel out = shape;
    for (std::size_t i = 0; i < hidden_w.size(); ++i) {
      out.hidden[i].weight = hidden_w[i].cast<float>();
      out.hidden[i].bias = hidden_b[i].cast<float>();
    }
    out.projection.weight = projection_w.cast<float>();
    out.projection.bias = projection_b.cast<float>();
    out.classifier.weight = classifier_w.cast<float>();
    out.classifier.bias = classifier_b.cast<float>();
    return out;
  }
};

bool shape_congruent(const StudentModel& a, const StudentModel& b) {
  if (a.hidden.size() != b.hidden.size()) return false;
  auto same = [](const LinearLayer& x, const LinearLayer& y) {
    return x.weight.rows() == y.weight.rows() && x.weight.cols() == y.weight.cols();
  };
  for (std::size_t i = 0; i < a.hidden.size(); ++i) {
    if (!same(a.hidden[i], b.hidden[i])) return false;
  }
  return same(a.projection, b.projection) && same(a.classifier, b.classifier);
}

// Trains every selected client; returns per-selected-client loss, NaN marks
// a dropped client. Threaded execution must not change results: each client
// owns its model and stream, outputs land in preallocated slots.
void train_selected(std::vector<ClientState>& clients, const std::vector<int>& selected,
                    const FedContext& ctx, int round, std::vector<double>& losses) {
  losses.assign(selected.size(), std::numeric_limits<double>::quiet_NaN());
  auto work = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < selected.size(); i += stride) {
      ClientState& c = clients[selected[i]];
      RngStream rng(ctx.seed, stream_id(StreamKind::kLocalTrain, c.client_id), round);
      DatasetView view{ctx.train, &c.shard};
      try {
        const std::vector<double> trace =
            train_epochs(c.model, view, ctx.teacher, ctx.train_cfg, rng);
        losses[i] = std::accumulate(trace.begin(), trace.end(), 0.0) / trace.size();
      } catch (const NumericsError&) {
        // leave NaN: dropped from this round
      }
    }
  };
  const int threads = std::max(1, std::min<int>(ctx.threads, static_cast<int>(selected.size())));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& t : pool) t.join();
  }
}

}  // namespace

std::vector<int> sample_clients(int num_clients, double fraction, RngStream& rng) {
  if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("participation fraction out of (0,1]");
  const int n = static_cast<int>(std::ceil(fraction * num_clients));
  std::vector<int> ids(num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = 0; i < n; ++i) {
    const int j = i + static_cast<int>(rng.below(num_clients - i));
    std::swap(ids[i], ids[j]);
  }
  ids.resize(n);
  std::sort(ids.begin(), ids.end());
  return ids;
}

ClientFeatures extract_features(const StudentModel& model, const Dataset& ds,
                                const std::vector<std::int64_t>& shard) {
  ClientFeatures out;
  out.by_class.assign(ds.num_classes, {});
  out.counts.assign(ds.num_classes, 0);
  for (std::int64_t idx : shard) {
    const Sample& s = ds.samples[idx];
    out.by_class[s.label].push_back(forward(model, s.features).feature);
    ++out.counts[s.label];
  }
  out.prototypes.assign(ds.num_classes, Vec());
  for (int c = 0; c < ds.num_classes; ++c) {
    if (out.counts[c] == 0) continue;
    VecD acc = VecD::Zero(model.feature_dim());
    for (const Vec& f : out.by_class[c]) acc += f.cast<double>();
    out.prototypes[c] = (acc / static_cast<double>(out.counts[c])).cast<float>();
  }
  return out;
}

std::vector<PrototypeReport> local_prototypes(const StudentModel& model, const Dataset& ds,
                                              const std::vector<std::int64_t>& shard) {
  const ClientFeatures feats = extract_features(model, ds, shard);
  std::vector<PrototypeReport> reports;
  for (int c = 0; c < ds.num_classes; ++c) {
    if (feats.counts[c] > 0) reports.push_back({c, feats.prototypes[c], feats.counts[c]});
  }
  return reports;
}

void aggregate_prototypes(const std::vector<std::vector<PrototypeReport>>& reports,
                          int num_classes, std::vector<Vec>& prototypes,
                          std::vector<bool>& present) {
  std::vector<VecD> acc(num_classes);
  std::vector<std::int64_t> totals(num_classes, 0);
  for (const auto& client_reports : reports) {  // caller supplies client-id order
    for (const PrototypeReport& r : client_reports) {
      if (r.cls < 0 || r.cls >= num_classes) throw ProtocolError("prototype class out of range");
      if (r.count <= 0) throw ProtocolError("prototype report with nonpositive count");
      if (acc[r.cls].size() == 0) acc[r.cls] = VecD::Zero(r.prototype.size());
      acc[r.cls] += static_cast<double>(r.count) * r.prototype.cast<double>();
      totals[r.cls] += r.count;
    }
  }
  prototypes.assign(num_classes, Vec());
  present.assign(num_classes, false);
  for (int c = 0; c < num_classes; ++c) {
    if (totals[c] > 0) {
      prototypes[c] = (acc[c] / static_cast<double>(totals[c])).cast<float>();
      present[c] = true;
    }
  }
}

StudentModel aggregate_models(const std::vector<const StudentModel*>& models,
                              const std::vector<std::int64_t>& shard_sizes) {
  if (models.empty() || models.size() != shard_sizes.size()) {
    throw ProtocolError("aggregate_models: empty or mismatched inputs");
  }
  double total = 0.0;
  for (std::int64_t s : shard_sizes) {
    if (s <= 0) throw ProtocolError("aggregate_models: nonpositive shard size");
    total += static_cast<double>(s);
  }
  AccumModel acc(*models[0]);
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (!shape_congruent(*models[0], *models[i])) {
      throw DimensionError("aggregate_models: shape mismatch");
    }
    acc.add(*models[i], static_cast<double>(shard_sizes[i]) / total);
  }
  return acc.finish(*models[0]);
}

std::vector<LabeledFeature> generate_pseudo_features(
    const ClientFeatures& local, const std::vector<Vec>& global_prototypes,
    const std::vector<bool>& prototype_present, const RelevanceMatrix& rel,
    const MixupConfig& cfg, RngStream& rng) {
  const int classes = static_cast<int>(local.by_class.size());
  if (cfg.pseudo_per_class < 1) throw ConfigError("pseudo_per_class must be >= 1");
  if (cfg.lambda_lo < 0.0 || cfg.lambda_hi > 1.0 || cfg.lambda_lo > cfg.lambda_hi) {
    throw ConfigError("lambda range must satisfy 0 <= lo <= hi <= 1");
  }
  std::vector<int> available;
  for (int c = 0; c < classes; ++c) {
    if (local.counts[c] > 0) available.push_back(c);
  }
  if (available.empty()) throw DataError("pseudo-feature generation needs a nonempty shard");
  for (int c = 0; c < classes; ++c) {
    if (c >= static_cast<int>(prototype_present.size()) || !prototype_present[c]) {
      throw ProtocolError("missing global prototype for class " + std::to_string(c));
    }
  }

  std::vector<LabeledFeature> out;
  out.reserve(static_cast<std::size_t>(classes) * cfg.pseudo_per_class);
  for (int c = 0; c < classes; ++c) {
    const Vec dist = selection_distribution(rel, c, available, cfg.policy);
    for (int i = 0; i < cfg.pseudo_per_class; ++i) {
      const int v = available[rng.categorical(dist)];
      const Vec& z_v = cfg.source == MixupSource::kPrototype
                           ? local.prototypes[v]
                           : local.by_class[v][rng.below(local.by_class[v].size())];
      const double lambda = rng.uniform(cfg.lambda_lo, cfg.lambda_hi);
      LabeledFeature f;
      f.label = c;
      f.feature = ((1.0 - lambda) * z_v.cast<double>() +
                   lambda * global_prototypes[c].cast<double>())
                      .cast<float>();
      out.push_back(std::move(f));
    }
  }
  return out;
}

RoundMetrics run_round(ServerState& server, std::vector<ClientState>& clients,
                       const FedContext& ctx) {
  const int t = server.round;
  if (t >= ctx.schedule.total_rounds) throw ProtocolError("run_round: schedule exhausted");
  const int num_clients = static_cast<int>(clients.size());

  RoundMetrics metrics;
  metrics.round = t;
  metrics.retraining_active =
      t >= ctx.schedule.total_rounds - ctx.schedule.retraining_rounds &&
      ctx.schedule.retraining_rounds > 0;

  RngStream sample_rng(ctx.seed, stream_id(StreamKind::kClientSample), t);
  const std::vector<int> selected =
      sample_clients(num_clients, ctx.schedule.participation_fraction, sample_rng);

  for (int k : selected) clients[k].model = server.global_model;  // broadcast w^t

  std::vector<double> losses;
  train_selected(clients, selected, ctx, t, losses);

  std::vector<int> alive;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (std::isnan(losses[i])) {
      metrics.dropped.push_back(selected[i]);
    } else {
      alive.push_back(selected[i]);
      loss_sum += losses[i];
    }
  }
  if (alive.empty()) throw ProtocolError("all clients failed in round " + std::to_string(t));
  metrics.participants = alive;
  metrics.mean_local_loss = loss_sum / alive.size();

  if (metrics.retraining_active) {
    // ALL clients report prototypes; unselected ones use the broadcast model.
    std::vector<ClientFeatures> selected_feats(alive.size());
    std::vector<std::vector<PrototypeReport>> reports(num_clients);
    std::vector<int> alive_slot(num_clients, -1);
    for (std::size_t i = 0; i < alive.size(); ++i) alive_slot[alive[i]] = static_cast<int>(i);
    for (int k = 0; k < num_clients; ++k) {
      if (clients[k].shard.empty()) continue;
      const int slot = alive_slot[k];
      if (slot >= 0) {
        selected_feats[slot] = extract_features(clients[k].model, *ctx.train, clients[k].shard);
        for (int c = 0; c < ctx.train->num_classes; ++c) {
          if (selected_feats[slot].counts[c] > 0) {
            reports[k].push_back(
                {c, selected_feats[slot].prototypes[c], selected_feats[slot].counts[c]});
          }
        }
      } else {
        reports[k] = local_prototypes(server.global_model, *ctx.train, clients[k].shard);
      }
      ++metrics.prototype_uploads;
    }
    aggregate_prototypes(reports, ctx.train->num_classes, server.global_prototypes,
                         server.prototype_present);

    auto retrain_work = [&](std::size_t begin, std::size_t stride) {
      for (std::size_t i = begin; i < alive.size(); i += stride) {
        const int k = alive[i];
        RngStream mix_rng(ctx.seed, stream_id(StreamKind::kMixup, k), t);
        const std::vector<LabeledFeature> pseudo =
            generate_pseudo_features(selected_feats[i], server.global_prototypes,
                                     server.prototype_present, *ctx.rel, ctx.mixup, mix_rng);
        RngStream retrain_rng(ctx.seed, stream_id(StreamKind::kRetrain, k), t);
        retrain_classifier(clients[k].model, pseudo, ctx.train_cfg,
                           ctx.schedule.retrain_epochs, retrain_rng);
      }
    };
    const int threads = std::max(1, std::min<int>(ctx.threads, static_cast<int>(alive.size())));
    if (threads == 1) {
      retrain_work(0, 1);
    } else {
      std::vector<std::thread> pool;
      for (int th = 0; th < threads; ++th) pool.emplace_back(retrain_work, th, threads);
      for (auto& th : pool) th.join();
    }
    metrics.retrain_invocations = static_cast<int>(alive.size());
  }

  std::vector<const StudentModel*> models;
  std::vector<std::int64_t> sizes;
  for (int k : alive) {  // ascending client id
    models.push_back(&clients[k].model);
    sizes.push_back(static_cast<std::int64_t>(clients[k].shard.size()));
  }
  server.global_model = aggregate_models(models, sizes);
  ++server.round;
  return metrics;
}

RoundMetrics run_fedavg_round(ServerState& server, std::vector<ClientState>& clients,
                              const FedContext& ctx) {
  const int t = server.round;
  if (t >= ctx.schedule.total_rounds) throw ProtocolError("run_fedavg_round: schedule exhausted");

  RoundMetrics metrics;
  metrics.round = t;

  RngStream sample_rng(ctx.seed, stream_id(StreamKind::kClientSample), t);
  const std::vector<int> selected = sample_clients(
      static_cast<int>(clients.size()), ctx.schedule.participation_fraction, sample_rng);

  for (int k : selected) clients[k].model = server.global_model;

  std::vector<double> losses;
  train_selected(clients, selected, ctx, t, losses);

  std::vector<const StudentModel*> models;
  std::vector<std::int64_t> sizes;
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    if (std::isnan(losses[i])) {
      metrics.dropped.push_back(selected[i]);
      continue;
    }
    metrics.participants.push_back(selected[i]);
    models.push_back(&clients[selected[i]].model);
    sizes.push_back(static_cast<std::int64_t>(clients[selected[i]].shard.size()));
    loss_sum += losses[i];
  }
  if (metrics.participants.empty()) {
    throw ProtocolError("all clients failed in round " + std::to_string(t));
  }
  metrics.mean_local_loss = loss_sum / metrics.participants.size();
  server.global_model = aggregate_models(models, sizes);
  ++server.round;
  return metrics;
}

}  // namespace fedsm
