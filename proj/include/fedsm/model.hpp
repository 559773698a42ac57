#pragma once

#include "fedsm/data.hpp"
#include "fedsm/semantics.hpp"
#include "fedsm/types.hpp"

#include <string>
#include <vector>

namespace fedsm {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LinearLayer {
  Mat weight;  // out x in
  Vec bias;
};

// Federated unit w = {f, g}: MLP extractor with projection to the teacher
// feature dimension, plus a linear classifier.
struct StudentModel {
  std::vector<LinearLayer> hidden;  // ReLU after each
  LinearLayer projection;           // last hidden width -> feature dim
  LinearLayer classifier;           // feature dim -> classes

  int input_dim() const;
  int feature_dim() const { return static_cast<int>(projection.weight.rows()); }
  int num_classes() const { return static_cast<int>(classifier.weight.rows()); }
  void check_finite() const;
};

// He-style Gaussian init (std = sqrt(2 / fan_in)), biases zero.
StudentModel make_student(int input_dim, const std::vector<int>& hidden_dims,
                          int feature_dim, int num_classes, RngStream& rng);

enum class DistillMode { kKl, kMse, kNone };

DistillMode distill_mode_from_string(const std::string& s);
std::string to_string(DistillMode mode);

struct TrainConfig {
  double lr_local = 0.1;
  double lr_retrain = 0.01;
  int batch_size = 32;
  int epochs_per_round = 10;
  DistillMode distill_mode = DistillMode::kKl;
  double teacher_logit_scale = 10.0;
};

// Gradients accumulate in double; shape-congruent with the model.
struct GradBuffer {
  std::vector<MatD> hidden_w;
  std::vector<VecD> hidden_b;
  MatD projection_w;
  VecD projection_b;
  MatD classifier_w;
  VecD classifier_b;

  static GradBuffer like(const StudentModel& m);
  void zero();
};

struct ForwardResult {
  Vec feature;
  Vec logits;
};

ForwardResult forward(const StudentModel& model, const Vec& x);

// Batch forward; rows of the outputs correspond to rows of x.
void forward_batch(const StudentModel& model, const MatD& x, MatD& features, MatD& logits);

// q[c] = scale * cosine(h_v, h_t_c)
Vec teacher_logits(const Vec& h_v, const EmbeddingTable& emb, double scale);

struct Batch {
  MatD x;                   // B x m
  std::vector<int> labels;  // B
  // kl mode: B x C teacher logits q (already scaled); mse mode: B x d teacher
  // features h_v; unused for none.
  MatD teacher;
};

double loss_and_grad(const StudentModel& model, const Batch& batch, const TrainConfig& cfg,
                     GradBuffer& grads);

void sgd_step(StudentModel& model, const GradBuffer& grads, double lr);

// Supplies per-sample teacher data aligned with dataset indices. When
// use_input_as_hv is set the raw input vector doubles as the teacher image
// embedding (the synthetic-data contract); otherwise h_v comes from
// emb->sample_vectors.
struct TeacherView {
  const EmbeddingTable* emb = nullptr;
  bool use_input_as_hv = false;

  Vec image_embedding(const Vec& x, std::int64_t sample_index) const;
};

// A shard: indices into a dataset owned elsewhere.
struct DatasetView {
  const Dataset* ds = nullptr;
  const std::vector<std::int64_t>* indices = nullptr;

  std::int64_t size() const { return static_cast<std::int64_t>(indices->size()); }
};

// One epoch trace entry = mean minibatch loss over that epoch.
std::vector<double> train_epochs(StudentModel& model, const DatasetView& view,
                                 const TeacherView& teacher, const TrainConfig& cfg,
                                 RngStream& rng);

struct LabeledFeature {
  Vec feature;
  int label = 0;
};

// Updates the classifier only; extractor and projection stay bit-identical.
std::vector<double> retrain_classifier(StudentModel& model,
                                       const std::vector<LabeledFeature>& pseudo,
                                       const TrainConfig& cfg, int epochs, RngStream& rng);

// Max relative error between analytic gradients and central finite
// differences over every parameter.
double grad_check(const StudentModel& model, const Batch& batch, const TrainConfig& cfg,
                  double epsilon);

void save_model(const std::string& path, const StudentModel& model);
StudentModel load_model(const std::string& path);
std::string model_digest(const StudentModel& model);  // hex hash of parameter bytes

bool models_equal(const StudentModel& a, const StudentModel& b);

}  // namespace fedsm
