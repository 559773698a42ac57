#include "fedsm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fedsm {
namespace {

constexpr char kMagic[4] = {'F', 'S', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;

MatD row_softmax(const MatD& z) {
  MatD out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    VecD r = z.row(i).transpose();
    r.array() -= r.maxCoeff();
    VecD e = r.array().exp();
    out.row(i) = (e / e.sum()).transpose();
  }
  return out;
}

struct Activations {
  std::vector<MatD> pre;   // pre-ReLU per hidden layer
  std::vector<MatD> post;  // post-ReLU; post[0] is the input
  MatD features;
  MatD logits;
};

void forward_impl(const StudentModel& model, const MatD& x, Activations& act) {
  act.pre.clear();
  act.post.clear();
  act.post.push_back(x);
  MatD h = x;
  for (const LinearLayer& layer : model.hidden) {
    MatD z = h * layer.weight.cast<double>().transpose();
    z.rowwise() += layer.bias.cast<double>().transpose();
    act.pre.push_back(z);
    h = z.cwiseMax(0.0);
    act.post.push_back(h);
  }
  act.features = h * model.projection.weight.cast<double>().transpose();
  act.features.rowwise() += model.projection.bias.cast<double>().transpose();
  act.logits = act.features * model.classifier.weight.cast<double>().transpose();
  act.logits.rowwise() += model.classifier.bias.cast<double>().transpose();
}

double loss_impl(const StudentModel& model, const Batch& batch, const TrainConfig& cfg,
                 GradBuffer* grads) {
  const Eigen::Index b = batch.x.rows();
  if (b == 0) throw DegenerateInput("loss: empty batch");
  if (batch.x.cols() != model.input_dim()) throw DimensionError("loss: input dim mismatch");
  if (static_cast<Eigen::Index>(batch.labels.size()) != b) {
    throw DimensionError("loss: label count mismatch");
  }
  const int classes = model.num_classes();
  const int d = model.feature_dim();
  if (cfg.distill_mode != DistillMode::kNone && batch.teacher.rows() != b) {
    throw ConfigError("loss: teacher data missing for distillation mode");
  }
  if (cfg.distill_mode == DistillMode::kKl && batch.teacher.cols() != classes) {
    throw DimensionError("loss: teacher logits must have C columns");
  }
  if (cfg.distill_mode == DistillMode::kMse && batch.teacher.cols() != d) {
    throw DimensionError("loss: teacher features must match feature dim");
  }

  Activations act;
  forward_impl(model, batch.x, act);
  const MatD s = row_softmax(act.logits);

  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    loss -= std::log(std::max(s(i, batch.labels[i]), 1e-300));
  }

  MatD dlogits = s;
  for (Eigen::Index i = 0; i < b; ++i) dlogits(i, batch.labels[i]) -= 1.0;

  MatD dfeat_extra;
  if (cfg.distill_mode == DistillMode::kKl) {
    const MatD t = row_softmax(batch.teacher);
    for (Eigen::Index i = 0; i < b; ++i) {
      for (int c = 0; c < classes; ++c) {
        const double tc = t(i, c);
        if (tc > 0.0) loss += tc * (std::log(tc) - std::log(std::max(s(i, c), 1e-300)));
      }
    }
    dlogits += s - t;
  } else if (cfg.distill_mode == DistillMode::kMse) {
    const MatD diff = act.features - batch.teacher;
    // divided by b below along with the CE term, landing at ||diff||^2 / (b*d)
    loss += diff.squaredNorm() / d;
    dfeat_extra = diff * (2.0 / (static_cast<double>(b) * d));
  }
  loss /= static_cast<double>(b);
  dlogits /= static_cast<double>(b);

  if (grads) {
    grads->classifier_w = dlogits.transpose() * act.features;
    grads->classifier_b = dlogits.colwise().sum().transpose();
    MatD dfeat = dlogits * model.classifier.weight.cast<double>();
    if (dfeat_extra.size() > 0) dfeat += dfeat_extra;

    grads->projection_w = dfeat.transpose() * act.post.back();
    grads->projection_b = dfeat.colwise().sum().transpose();
    MatD dh = dfeat * model.projection.weight.cast<double>();

    for (int l = static_cast<int>(model.hidden.size()) - 1; l >= 0; --l) {
      const MatD dz = dh.cwiseProduct((act.pre[l].array() > 0.0).cast<double>().matrix());
      grads->hidden_w[l] = dz.transpose() * act.post[l];
      grads->hidden_b[l] = dz.colwise().sum().transpose();
      if (l > 0) dh = dz * model.hidden[l].weight.cast<double>();
    }
  }
  return loss;
}

void shuffle(std::vector<std::int64_t>& v, RngStream& rng) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const std::size_t j = i + rng.below(v.size() - i);
    std::swap(v[i], v[j]);
  }
}

}  // namespace

int StudentModel::input_dim() const {
  if (!hidden.empty()) return static_cast<int>(hidden.front().weight.cols());
  return static_cast<int>(projection.weight.cols());
}

void StudentModel::check_finite() const {
  auto ok = [](const LinearLayer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  };
  for (const LinearLayer& l : hidden) {
    if (!ok(l)) throw NumericsError("non-finite hidden layer parameters");
  }
  if (!ok(projection) || !ok(classifier)) {
    throw NumericsError("non-finite projection/classifier parameters");
  }
}

StudentModel make_student(int input_dim, const std::vector<int>& hidden_dims,
                          int feature_dim, int num_classes, RngStream& rng) {
  if (input_dim < 1 || feature_dim < 1 || num_classes < 2) {
    throw ConfigError("make_student: bad dimensions");
  }
  auto init = [&rng](int out, int in) {
    LinearLayer l;
    l.weight.resize(out, in);
    const double std_dev = std::sqrt(2.0 / in);
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) l.weight(i, j) = static_cast<float>(std_dev * rng.gaussian());
    }
    l.bias = Vec::Zero(out);
    return l;
  };
  StudentModel m;
  int prev = input_dim;
  for (int h : hidden_dims) {
    if (h < 1) throw ConfigError("make_student: bad hidden width");
    m.hidden.push_back(init(h, prev));
    prev = h;
  }
  m.projection = init(feature_dim, prev);
  m.classifier = init(num_classes, feature_dim);
  return m;
}

DistillMode distill_mode_from_string(const std::string& s) {
  if (s == "kl") return DistillMode::kKl;
  if (s == "mse") return DistillMode::kMse;
  if (s == "none") return DistillMode::kNone;
  throw ConfigError("unknown distill mode: " + s);
}

std::string to_string(DistillMode mode) {
  switch (mode) {
    case DistillMode::kKl: return "kl";
    case DistillMode::kMse: return "mse";
    case DistillMode::kNone: return "none";
  }
  return "?";
}

GradBuffer GradBuffer::like(const StudentModel& m) {
  GradBuffer g;
  for (const LinearLayer& l : m.hidden) {
    g.hidden_w.emplace_back(MatD::Zero(l.weight.rows(), l.weight.cols()));
    g.hidden_b.emplace_back(VecD::Zero(l.bias.size()));
  }
  g.projection_w = MatD::Zero(m.projection.weight.rows(), m.projection.weight.cols());
  g.projection_b = VecD::Zero(m.projection.bias.size());
  g.classifier_w = MatD::Zero(m.classifier.weight.rows(), m.classifier.weight.cols());
  g.classifier_b = VecD::Zero(m.classifier.bias.size());
  return g;
}

void GradBuffer::zero() {
  for (auto& w : hidden_w) w.setZero();
  for (auto& b : hidden_b) b.setZero();
  projection_w.setZero();
  projection_b.setZero();
  classifier_w.setZero();
  classifier_b.setZero();
}

ForwardResult forward(const StudentModel& model, const Vec& x) {
  if (x.size() != model.input_dim()) throw DimensionError("forward: input dim mismatch");
  Activations act;
  forward_impl(model, x.transpose().cast<double>(), act);
  ForwardResult r;
  r.feature = act.features.row(0).transpose().cast<float>();
  r.logits = act.logits.row(0).transpose().cast<float>();
  return r;
}

void forward_batch(const StudentModel& model, const MatD& x, MatD& features, MatD& logits) {
  Activations act;
  forward_impl(model, x, act);
  features = std::move(act.features);
  logits = std::move(act.logits);
}

Vec teacher_logits(const Vec& h_v, const EmbeddingTable& emb, double scale) {
  if (h_v.size() != emb.dim) throw DimensionError("teacher_logits: embedding dim mismatch");
  Vec q(emb.num_classes());
  for (int c = 0; c < emb.num_classes(); ++c) {
    q[c] = static_cast<float>(scale * similarity(h_v, emb.label_vectors[c], SimilarityKind::kCosine));
  }
  return q;
}

double loss_and_grad(const StudentModel& model, const Batch& batch, const TrainConfig& cfg,
                     GradBuffer& grads) {
  grads.zero();
  return loss_impl(model, batch, cfg, &grads);
}

void sgd_step(StudentModel& model, const GradBuffer& grads, double lr) {
  if (lr < 0.0) throw ConfigError("sgd_step: negative learning rate");
  auto apply = [lr](LinearLayer& l, const MatD& gw, const VecD& gb) {
    l.weight = (l.weight.cast<double>() - lr * gw).cast<float>();
    l.bias = (l.bias.cast<double>() - lr * gb).cast<float>();
  };
  for (std::size_t i = 0; i < model.hidden.size(); ++i) {
    apply(model.hidden[i], grads.hidden_w[i], grads.hidden_b[i]);
  }
  apply(model.projection, grads.projection_w, grads.projection_b);
  apply(model.classifier, grads.classifier_w, grads.classifier_b);
}

Vec TeacherView::image_embedding(const Vec& x, std::int64_t sample_index) const {
  if (use_input_as_hv) return x;
  if (!emb) throw ConfigError("teacher view has no embedding table");
  const auto it = emb->sample_vectors.find(sample_index);
  if (it == emb->sample_vectors.end()) {
    throw ConfigError("no teacher image embedding for sample " + std::to_string(sample_index));
  }
  return it->second;
}

std::vector<double> train_epochs(StudentModel& model, const DatasetView& view,
                                 const TeacherView& teacher, const TrainConfig& cfg,
                                 RngStream& rng) {
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.lr_local <= 0.0) throw ConfigError("lr_local must be positive");
  const Dataset& ds = *view.ds;
  std::vector<std::int64_t> order = *view.indices;
  if (order.empty()) throw DataError("train_epochs: empty shard");

  GradBuffer grads = GradBuffer::like(model);
  std::vector<double> trace;
  trace.reserve(cfg.epochs_per_round);
  for (int epoch = 0; epoch < cfg.epochs_per_round; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Eigen::Index b = static_cast<Eigen::Index>(end - start);
      Batch batch;
      batch.x.resize(b, ds.dim);
      batch.labels.resize(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        const Sample& s = ds.samples[order[start + i]];
        batch.x.row(i) = s.features.cast<double>().transpose();
        batch.labels[i] = s.label;
      }
      if (cfg.distill_mode == DistillMode::kKl) {
        batch.teacher.resize(b, teacher.emb->num_classes());
        for (Eigen::Index i = 0; i < b; ++i) {
          const Sample& s = ds.samples[order[start + i]];
          batch.teacher.row(i) =
              teacher_logits(teacher.image_embedding(s.features, order[start + i]), *teacher.emb,
                             cfg.teacher_logit_scale)
                  .cast<double>()
                  .transpose();
        }
      } else if (cfg.distill_mode == DistillMode::kMse) {
        batch.teacher.resize(b, model.feature_dim());
        for (Eigen::Index i = 0; i < b; ++i) {
          const Sample& s = ds.samples[order[start + i]];
          const Vec hv = teacher.image_embedding(s.features, order[start + i]);
          if (hv.size() != model.feature_dim()) {
            throw DimensionError("mse distillation needs feature dim == teacher dim");
          }
          batch.teacher.row(i) = hv.cast<double>().transpose();
        }
      }
      const double loss = loss_and_grad(model, batch, cfg, grads);
      if (!std::isfinite(loss)) throw NumericsError("non-finite training loss");
      sgd_step(model, grads, cfg.lr_local);
      epoch_loss += loss;
      ++batches;
    }
    trace.push_back(epoch_loss / batches);
  }
  return trace;
}

std::vector<double> retrain_classifier(StudentModel& model,
                                       const std::vector<LabeledFeature>& pseudo,
                                       const TrainConfig& cfg, int epochs, RngStream& rng) {
  if (pseudo.empty()) throw DataError("retrain_classifier: empty pseudo-feature set");
  const int d = model.feature_dim();
  for (const LabeledFeature& f : pseudo) {
    if (f.feature.size() != d) throw DimensionError("pseudo-feature dim mismatch");
  }
  std::vector<std::int64_t> order(pseudo.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

  std::vector<double> trace;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle(order, rng);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const Eigen::Index b = static_cast<Eigen::Index>(end - start);
      MatD feats(b, d);
      std::vector<int> labels(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        feats.row(i) = pseudo[order[start + i]].feature.cast<double>().transpose();
        labels[i] = pseudo[order[start + i]].label;
      }
      MatD logits = feats * model.classifier.weight.cast<double>().transpose();
      logits.rowwise() += model.classifier.bias.cast<double>().transpose();
      const MatD s = row_softmax(logits);
      double loss = 0.0;
      MatD dlogits = s;
      for (Eigen::Index i = 0; i < b; ++i) {
        loss -= std::log(std::max(s(i, labels[i]), 1e-300));
        dlogits(i, labels[i]) -= 1.0;
      }
      loss /= b;
      dlogits /= static_cast<double>(b);
      if (!std::isfinite(loss)) throw NumericsError("non-finite retraining loss");

      const MatD gw = dlogits.transpose() * feats;
      const VecD gb = dlogits.colwise().sum().transpose();
      model.classifier.weight =
          (model.classifier.weight.cast<double>() - cfg.lr_retrain * gw).cast<float>();
      model.classifier.bias =
          (model.classifier.bias.cast<double>() - cfg.lr_retrain * gb).cast<float>();
      epoch_loss += loss;
      ++batches;
    }
    trace.push_back(epoch_loss / batches);
  }
  return trace;
}

double grad_check(const StudentModel& model, const Batch& batch, const TrainConfig& cfg,
                  double epsilon) {
  if (epsilon < 1e-5 || epsilon > 1e-2) throw ConfigError("grad_check: epsilon out of range");
  GradBuffer grads = GradBuffer::like(model);
  loss_and_grad(model, batch, cfg, grads);

  StudentModel probe = model;
  double max_rel = 0.0;
  auto check_layer = [&](LinearLayer& l, const MatD& gw, const VecD& gb) {
    auto probe_param = [&](float& p, double analytic) {
      const float saved = p;
      p = saved + static_cast<float>(epsilon);
      const double up = loss_impl(probe, batch, cfg, nullptr);
      p = saved - static_cast<float>(epsilon);
      const double down = loss_impl(probe, batch, cfg, nullptr);
      p = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      const double rel = std::abs(analytic - fd) / std::max(1e-6, std::abs(analytic) + std::abs(fd));
      max_rel = std::max(max_rel, rel);
    };
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) probe_param(l.weight(i, j), gw(i, j));
    }
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) probe_param(l.bias(i), gb(i));
  };
  for (std::size_t i = 0; i < probe.hidden.size(); ++i) {
    check_layer(probe.hidden[i], grads.hidden_w[i], grads.hidden_b[i]);
  }
  check_layer(probe.projection, grads.projection_w, grads.projection_b);
  check_layer(probe.classifier, grads.classifier_w, grads.classifier_b);
  return max_rel;
}

namespace {

void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw ParseError("checkpoint truncated");
  return v;
}

void write_layer(std::ofstream& out, const LinearLayer& l) {
  out.write(reinterpret_cast<const char*>(l.weight.data()),
            static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(l.bias.data()),
            static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
}

void read_layer(std::ifstream& in, LinearLayer& l, int out_dim, int in_dim) {
  l.weight.resize(out_dim, in_dim);
  l.bias.resize(out_dim);
  in.read(reinterpret_cast<char*>(l.weight.data()),
          static_cast<std::streamsize>(l.weight.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(l.bias.data()),
          static_cast<std::streamsize>(l.bias.size() * sizeof(float)));
  if (!in) throw ParseError("checkpoint truncated");
}

}  // namespace

void save_model(const std::string& path, const StudentModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(model.input_dim()));
  write_u32(out, static_cast<std::uint32_t>(model.hidden.size()));
  for (const LinearLayer& l : model.hidden) {
    write_u32(out, static_cast<std::uint32_t>(l.weight.rows()));
  }
  write_u32(out, static_cast<std::uint32_t>(model.feature_dim()));
  write_u32(out, static_cast<std::uint32_t>(model.num_classes()));
  for (const LinearLayer& l : model.hidden) write_layer(out, l);
  write_layer(out, model.projection);
  write_layer(out, model.classifier);
}

StudentModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw ParseError("bad checkpoint magic");
  if (read_u32(in) != kVersion) throw ParseError("unsupported checkpoint version");
  const int input_dim = static_cast<int>(read_u32(in));
  const int n_hidden = static_cast<int>(read_u32(in));
  std::vector<int> widths(n_hidden);
  for (int& w : widths) w = static_cast<int>(read_u32(in));
  const int feature_dim = static_cast<int>(read_u32(in));
  const int classes = static_cast<int>(read_u32(in));

  StudentModel m;
  int prev = input_dim;
  m.hidden.resize(n_hidden);
  for (int i = 0; i < n_hidden; ++i) {
    read_layer(in, m.hidden[i], widths[i], prev);
    prev = widths[i];
  }
  read_layer(in, m.projection, feature_dim, prev);
  read_layer(in, m.classifier, classes, feature_dim);
  m.check_finite();
  return m;
}

std::string model_digest(const StudentModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const float* data, std::size_t n) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n * sizeof(float); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  auto feed_layer = [&](const LinearLayer& l) {
    feed(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    feed(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  };
  for (const LinearLayer& l : model.hidden) feed_layer(l);
  feed_layer(model.projection);
  feed_layer(model.classifier);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

bool models_equal(const StudentModel& a, const StudentModel& b) {
  auto eq = [](const LinearLayer& x, const LinearLayer& y) {
    return x.weight.rows() == y.weight.rows() && x.weight.cols() == y.weight.cols() &&
           std::memcmp(x.weight.data(), y.weight.data(), x.weight.size() * sizeof(float)) == 0 &&
           x.bias.size() == y.bias.size() &&
           std::memcmp(x.bias.data(), y.bias.data(), x.bias.size() * sizeof(float)) == 0;
  };
  if (a.hidden.size() != b.hidden.size()) return false;
  for (std::size_t i = 0; i < a.hidden.size(); ++i) {
    if (!eq(a.hidden[i], b.hidden[i])) return false;
  }
  return eq(a.projection, b.projection) && eq(a.classifier, b.classifier);
}

}  // namespace fedsm
