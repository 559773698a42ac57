#pragma once

#include "fedsm/types.hpp"

#include <cstdint>

namespace fedsm {

// Logical actors each derive their own stream; streams with the same
// (seed, stream_id, round) produce bit-identical sequences regardless of
// execution order elsewhere in the process.
enum class StreamKind : std::uint64_t {
  kInit = 1,
  kClientSample = 2,
  kLocalTrain = 3,
  kMixup = 4,
  kRetrain = 5,
  kDataGen = 6,
  kLongTail = 7,
  kPartition = 8,
  kEmbedding = 9,
  kTestGen = 10,
};

constexpr std::uint64_t stream_id(StreamKind kind, std::uint64_t actor = 0) {
  return (static_cast<std::uint64_t>(kind) << 32) | actor;
}

// Counter-based generator: the key mixes (global_seed, stream_id, round),
// each draw mixes key + counter through splitmix64 finalization.
class RngStream {
 public:
  RngStream(std::uint64_t global_seed, std::uint64_t stream, std::uint64_t round);

  std::uint64_t next_u64();
  // in [0, 1)
  double next_double();
  double uniform(double lo, double hi);
  double gaussian();
  // index in [0, n)
  std::uint64_t below(std::uint64_t n);

  // probs are renormalized internally; must sum to 1 within 1e-4.
  Eigen::Index categorical(const Vec& probs);
  double gamma(double shape);
  Vec dirichlet(double alpha, Eigen::Index k);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double gauss_spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fedsm
