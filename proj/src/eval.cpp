#include "fedsm/eval.hpp"

namespace fedsm {

FrequencyGroup classify_group(std::int64_t train_count, const GroupThresholds& t) {
  if (t.few_max > t.many_min) throw ConfigError("group thresholds: few_max > many_min");
  if (train_count > t.many_min) return FrequencyGroup::kMany;
  if (train_count < t.few_max) return FrequencyGroup::kFew;
  return FrequencyGroup::kMedium;
}

EvalReport evaluate(const StudentModel& model, const Dataset& test,
                    const std::vector<std::int64_t>& train_class_counts,
                    const GroupThresholds& thresholds) {
  if (test.samples.empty()) throw DataError("evaluate: empty test set");
  const int classes = model.num_classes();
  if (static_cast<int>(train_class_counts.size()) != classes) {
    throw DimensionError("evaluate: train class count size mismatch");
  }

  EvalReport rep;
  rep.confusion.assign(classes, std::vector<std::int64_t>(classes, 0));
  std::vector<std::int64_t> class_correct(classes, 0), class_total(classes, 0);

  // batched forward to keep evaluation cheap
  const Eigen::Index chunk = 256;
  MatD feats, logits;
  for (std::size_t start = 0; start < test.samples.size(); start += chunk) {
    const Eigen::Index b =
        static_cast<Eigen::Index>(std::min<std::size_t>(chunk, test.samples.size() - start));
    MatD x(b, test.dim);
    for (Eigen::Index i = 0; i < b; ++i) {
      x.row(i) = test.samples[start + i].features.cast<double>().transpose();
    }
    forward_batch(model, x, feats, logits);
    for (Eigen::Index i = 0; i < b; ++i) {
      int pred = 0;
      for (int c = 1; c < classes; ++c) {
        if (logits(i, c) > logits(i, pred)) pred = c;  // ties keep lowest id
      }
      const int truth = test.samples[start + i].label;
      ++rep.confusion[truth][pred];
      ++class_total[truth];
      if (pred == truth) {
        ++class_correct[truth];
        ++rep.correct;
      }
      ++rep.total;
    }
  }

  rep.overall_acc = static_cast<double>(rep.correct) / static_cast<double>(rep.total);
  rep.per_class_acc.assign(classes, 0.0);
  double group_sum[3] = {0, 0, 0};
  int group_n[3] = {0, 0, 0};
  for (int c = 0; c < classes; ++c) {
    if (class_total[c] == 0) continue;
    rep.per_class_acc[c] = static_cast<double>(class_correct[c]) / class_total[c];
    const int g = static_cast<int>(classify_group(train_class_counts[c], thresholds));
    group_sum[g] += rep.per_class_acc[c];
    ++group_n[g];
  }
  auto group_acc = [&](FrequencyGroup g) -> std::optional<double> {
    const int i = static_cast<int>(g);
    if (group_n[i] == 0) return std::nullopt;
    return group_sum[i] / group_n[i];
  };
  rep.many_acc = group_acc(FrequencyGroup::kMany);
  rep.medium_acc = group_acc(FrequencyGroup::kMedium);
  rep.few_acc = group_acc(FrequencyGroup::kFew);
  return rep;
}

}  // namespace fedsm
