#include "fedsm/numerics.hpp"

#include <cmath>

namespace fedsm {

SimilarityKind similarity_kind_from_string(const std::string& s) {
  if (s == "cosine") return SimilarityKind::kCosine;
  if (s == "l1") return SimilarityKind::kL1;
  if (s == "l2") return SimilarityKind::kL2;
  if (s == "dot") return SimilarityKind::kDot;
  throw ConfigError("unknown similarity kind: " + s);
}

std::string to_string(SimilarityKind kind) {
  switch (kind) {
    case SimilarityKind::kCosine: return "cosine";
    case SimilarityKind::kL1: return "l1";
    case SimilarityKind::kL2: return "l2";
    case SimilarityKind::kDot: return "dot";
  }
  return "?";
}

double similarity(const Vec& a, const Vec& b, SimilarityKind kind) {
  if (a.size() != b.size() || a.size() == 0) {
    throw DimensionError("similarity: dimension mismatch (" + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()) + ")");
  }
  const VecD ad = a.cast<double>();
  const VecD bd = b.cast<double>();
  switch (kind) {
    case SimilarityKind::kCosine: {
      const double na = ad.norm();
      const double nb = bd.norm();
      if (na == 0.0 || nb == 0.0) throw DegenerateInput("cosine: zero vector");
      double c = ad.dot(bd) / (na * nb);
      if (c > 1.0) c = 1.0;
      if (c < -1.0) c = -1.0;
      return c;
    }
    case SimilarityKind::kL1:
      return -(ad - bd).lpNorm<1>();
    case SimilarityKind::kL2:
      return -(ad - bd).norm();
    case SimilarityKind::kDot:
      return ad.dot(bd);
  }
  return 0.0;
}

Vec softmax(const Vec& x, double temperature) {
  if (x.size() == 0) throw DegenerateInput("softmax: empty input");
  if (temperature <= 0.0) throw ConfigError("softmax: temperature must be positive");
  VecD z = x.cast<double>() / temperature;
  z.array() -= z.maxCoeff();
  VecD e = z.array().exp();
  return (e / e.sum()).cast<float>();
}

}  // namespace fedsm
