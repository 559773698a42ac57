#pragma once

#include "fedsm/numerics.hpp"
#include "fedsm/rng.hpp"
#include "fedsm/types.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace fedsm {

// Teacher embeddings, pre-encoded: one text vector per label, optionally one
// image vector per sample index.
struct EmbeddingTable {
  int dim = 0;
  std::vector<Vec> label_vectors;                      // h_t, indexed by class
  std::unordered_map<std::int64_t, Vec> sample_vectors;  // h_v, keyed by sample index

  int num_classes() const { return static_cast<int>(label_vectors.size()); }
};

enum class RelevanceTransform { kSoftmax, kIdentity };

struct RelevanceMatrix {
  Mat raw;  // raw pairwise similarity, C x C
  SimilarityKind kind = SimilarityKind::kCosine;
  RelevanceTransform transform = RelevanceTransform::kSoftmax;
  double temperature = 0.5;

  // Transformed scores; with the softmax transform each row is a probability
  // vector over j != i (diagonal masked).
  Mat scores;
};

enum class SelectionMode { kProbabilistic, kDeterministic, kRandom };

SelectionMode selection_mode_from_string(const std::string& s);
std::string to_string(SelectionMode mode);

struct SelectionPolicy {
  SelectionMode mode = SelectionMode::kProbabilistic;
  double temperature = 0.5;
};

RelevanceMatrix build_relevance(const EmbeddingTable& emb, SimilarityKind kind,
                                RelevanceTransform transform, double temperature = 0.5);

// Distribution over `available` (same order) for picking the mixup partner
// of `target_class`. The target class is excluded unless it is the only
// available class.
Vec selection_distribution(const RelevanceMatrix& rel, int target_class,
                           const std::vector<int>& available,
                           const SelectionPolicy& policy);

// Generates C random unit vectors to stand in for encoded labels.
EmbeddingTable synthetic_embeddings(int num_classes, int dim, RngStream& rng);

EmbeddingTable load_embeddings(const std::string& path, int expected_classes = -1);
void save_embeddings(const std::string& path, const EmbeddingTable& emb);

// Per-sample teacher image embeddings: same file format, keyed by sample index.
void load_sample_embeddings(const std::string& path, EmbeddingTable& emb);

}  // namespace fedsm
