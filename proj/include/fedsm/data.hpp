#pragma once

#include "fedsm/rng.hpp"
#include "fedsm/types.hpp"

#include <string>
#include <vector>

namespace fedsm {

struct Sample {
  Vec features;
  int label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;
  int dim = 0;
  std::vector<std::int64_t> class_counts;  // N_c

  void recount();
  void validate() const;
};

struct LongTailSpec {
  double imbalance_factor = 1.0;  // head/tail count ratio, >= 1
  std::int64_t head_count = 0;    // N_1
};

// Exponential profile: class c keeps round(N_1 * IF^(-c/(C-1))).
std::vector<std::int64_t> long_tail_counts(int num_classes, const LongTailSpec& spec);

struct Partition {
  std::vector<std::vector<std::int64_t>> assignment;  // per client, sample indices
  std::vector<std::vector<std::int64_t>> class_counts;  // n_c^k, K x C
};

// Class means are optional anchors scaled by `spread`; without anchors they
// are drawn Gaussian with std `spread`.
Dataset generate_synthetic(int num_classes, int dim, std::int64_t per_class,
                           const std::vector<Vec>* class_anchors, double spread,
                           double noise, RngStream& rng);

Dataset apply_long_tail(const Dataset& ds, const LongTailSpec& spec, RngStream& rng);

Partition dirichlet_partition(const Dataset& ds, int num_clients, double alpha,
                              std::int64_t min_per_client, RngStream& rng);

// Rebuilds n_c^k from the assignment (used after load_partition, which does
// not know the labels).
void recount_partition(const Dataset& ds, Partition& p);

Dataset load_dataset(const std::string& path);
void save_dataset(const std::string& path, const Dataset& ds);
Partition load_partition(const std::string& path);
void save_partition(const std::string& path, const Partition& p);

}  // namespace fedsm
