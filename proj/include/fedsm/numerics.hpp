#pragma once

#include "fedsm/types.hpp"

namespace fedsm {

enum class SimilarityKind { kCosine, kL1, kL2, kDot };

SimilarityKind similarity_kind_from_string(const std::string& s);
std::string to_string(SimilarityKind kind);

// L1/L2 return the negated distance so that "larger is more similar" holds
// for every kind.
double similarity(const Vec& a, const Vec& b, SimilarityKind kind);

// Numerically stable softmax with max-subtraction; temperature > 0.
Vec softmax(const Vec& x, double temperature = 1.0);

}  // namespace fedsm
