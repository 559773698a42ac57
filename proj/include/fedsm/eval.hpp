#pragma once

#include "fedsm/data.hpp"
#include "fedsm/model.hpp"

#include <optional>
#include <vector>

namespace fedsm {

// Bounds are exclusive: many > many_min, few < few_max, medium in between.
struct GroupThresholds {
  std::int64_t many_min = 100;
  std::int64_t few_max = 20;
};

enum class FrequencyGroup { kMany, kMedium, kFew };

FrequencyGroup classify_group(std::int64_t train_count, const GroupThresholds& t);

struct EvalReport {
  double overall_acc = 0.0;
  std::optional<double> many_acc;
  std::optional<double> medium_acc;
  std::optional<double> few_acc;
  std::vector<double> per_class_acc;
  std::vector<std::vector<std::int64_t>> confusion;  // [true][predicted]
  std::int64_t correct = 0;
  std::int64_t total = 0;
};

// Group membership comes from the TRAINING-set class counts; group accuracy
// is the macro-average of per-class accuracies within the group.
EvalReport evaluate(const StudentModel& model, const Dataset& test,
                    const std::vector<std::int64_t>& train_class_counts,
                    const GroupThresholds& thresholds);

}  // namespace fedsm
