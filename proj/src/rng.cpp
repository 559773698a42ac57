#include "fedsm/rng.hpp"

#include <cmath>

namespace fedsm {
namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t global_seed, std::uint64_t stream, std::uint64_t round) {
  key_ = mix64(global_seed + kGamma);
  key_ = mix64(key_ ^ (stream + kGamma));
  key_ = mix64(key_ ^ (round + kGamma));
}

std::uint64_t RngStream::next_u64() {
  return mix64(key_ + kGamma * ++counter_);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * next_double();
}

double RngStream::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return gauss_spare_;
  }
  double u1 = next_double();
  double u2 = next_double();
  while (u1 <= 0.0) u1 = next_double();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  gauss_spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::uint64_t RngStream::below(std::uint64_t n) {
  // rejection sampling to avoid modulo bias
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return v % n;
}

Eigen::Index RngStream::categorical(const Vec& probs) {
  if (probs.size() == 0) throw DegenerateInput("categorical: empty probability vector");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    if (probs[i] < 0.0f) throw DegenerateInput("categorical: negative probability");
    total += probs[i];
  }
  if (std::abs(total - 1.0) > 1e-4) {
    throw DegenerateInput("categorical: probabilities sum to " + std::to_string(total));
  }
  const double u = next_double() * total;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

double RngStream::gamma(double shape) {
  if (shape <= 0.0) throw ConfigError("gamma: shape must be positive");
  if (shape < 1.0) {
    // boost to shape+1, then scale by U^(1/shape)
    const double u = std::max(next_double(), 1e-300);
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  // Marsaglia-Tsang
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = gaussian();
    double v = 1.0 + c * x;
    if (v <= 0.0) continue;
    v = v * v * v;
    const double u = next_double();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

Vec RngStream::dirichlet(double alpha, Eigen::Index k) {
  if (alpha <= 0.0) throw ConfigError("dirichlet: alpha must be positive");
  if (k < 1) throw ConfigError("dirichlet: k must be >= 1");
  VecD g(k);
  for (Eigen::Index i = 0; i < k; ++i) g[i] = gamma(alpha);
  const double total = g.sum();
  if (total <= 0.0) {
    // all draws underflowed; fall back to a single random winner
    VecD out = VecD::Zero(k);
    out[static_cast<Eigen::Index>(below(static_cast<std::uint64_t>(k)))] = 1.0;
    return out.cast<float>();
  }
  return (g / total).cast<float>();
}

}  // namespace fedsm
