#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedsm/numerics.hpp"
#include "fedsm/rng.hpp"

#include <cmath>

using namespace fedsm;

namespace {

Vec make(std::initializer_list<float> v) {
  Vec out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (float x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST_CASE("similarity basic values") {
  CHECK(similarity(make({1, 0}), make({1, 0}), SimilarityKind::kCosine) == doctest::Approx(1.0));
  CHECK(similarity(make({0, 0}), make({3, 4}), SimilarityKind::kL2) == doctest::Approx(-5.0));
  CHECK(similarity(make({1, 2}), make({3, 4}), SimilarityKind::kDot) == doctest::Approx(11.0));
  CHECK(similarity(make({1, 2}), make({3, 5}), SimilarityKind::kL1) == doctest::Approx(-5.0));
}

TEST_CASE("similarity errors") {
  CHECK_THROWS_AS(similarity(make({1, 2}), make({1, 2, 3}), SimilarityKind::kDot), DimensionError);
  CHECK_THROWS_AS(similarity(make({0, 0}), make({1, 0}), SimilarityKind::kCosine), DegenerateInput);
}

TEST_CASE("similarity is symmetric") {
  RngStream rng(7, 1, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Vec a(8), b(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = static_cast<float>(rng.gaussian());
      b[i] = static_cast<float>(rng.gaussian());
    }
    for (auto kind : {SimilarityKind::kCosine, SimilarityKind::kL1, SimilarityKind::kL2,
                      SimilarityKind::kDot}) {
      CHECK(similarity(a, b, kind) == doctest::Approx(similarity(b, a, kind)).epsilon(1e-9));
    }
  }
}

TEST_CASE("cosine of positive scalings is 1 and bounded") {
  RngStream rng(11, 1, 0);
  for (int trial = 0; trial < 50; ++trial) {
    Vec a(6);
    for (int i = 0; i < 6; ++i) a[i] = static_cast<float>(rng.gaussian());
    const float c = static_cast<float>(rng.uniform(0.01, 100.0));
    CHECK(similarity(a, Vec(c * a), SimilarityKind::kCosine) == doctest::Approx(1.0).epsilon(1e-6));
    Vec b(6);
    for (int i = 0; i < 6; ++i) b[i] = static_cast<float>(rng.gaussian());
    const double s = similarity(a, b, SimilarityKind::kCosine);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
  }
}

TEST_CASE("softmax closed forms") {
  const Vec u = softmax(make({0, 0, 0}), 1.0);
  for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3.0));

  const Vec two_thirds = softmax(make({std::log(2.0f), 0.0f}), 1.0);
  CHECK(two_thirds[0] == doctest::Approx(2.0 / 3.0));
  CHECK(two_thirds[1] == doctest::Approx(1.0 / 3.0));

  const Vec extreme = softmax(make({1000, 0}), 1.0);
  CHECK(extreme.allFinite());
  CHECK(extreme[0] == doctest::Approx(1.0));
  CHECK(extreme[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax is a probability vector for extreme inputs") {
  RngStream rng(3, 1, 0);
  for (int trial = 0; trial < 100; ++trial) {
    Vec x(5);
    for (int i = 0; i < 5; ++i) x[i] = static_cast<float>(rng.uniform(-1e4, 1e4));
    const Vec p = softmax(x, rng.uniform(0.05, 5.0));
    double sum = 0.0;
    for (int i = 0; i < 5; ++i) {
      CHECK(p[i] >= 0.0f);
      sum += p[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    // order preserving
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 5; ++j) {
        if (x[i] < x[j]) CHECK(p[i] <= p[j]);
      }
    }
  }
}

TEST_CASE("softmax rejects bad temperature") {
  CHECK_THROWS_AS(softmax(make({1, 2}), 0.0), ConfigError);
  CHECK_THROWS_AS(softmax(make({1, 2}), -1.0), ConfigError);
}

TEST_CASE("rng reproducibility and stream independence") {
  RngStream a(42, stream_id(StreamKind::kLocalTrain, 3), 7);
  RngStream b(42, stream_id(StreamKind::kLocalTrain, 3), 7);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42, stream_id(StreamKind::kLocalTrain, 4), 7);
  int same = 0;
  RngStream a2(42, stream_id(StreamKind::kLocalTrain, 3), 7);
  for (int i = 0; i < 1000; ++i) {
    if (a2.next_u64() == c.next_u64()) ++same;
  }
  CHECK(same == 0);
}

TEST_CASE("uniform Monte Carlo mean") {
  // analytic mean of U[0.65, 0.90] is 0.775
  RngStream rng(123, 1, 0);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += rng.uniform(0.65, 0.90);
  CHECK(sum / n == doctest::Approx(0.775).epsilon(0.002 / 0.775));
}

TEST_CASE("categorical basics") {
  RngStream rng(5, 1, 0);
  Vec single(1);
  single[0] = 1.0f;
  for (int i = 0; i < 10; ++i) CHECK(rng.categorical(single) == 0);
  CHECK_THROWS_AS(rng.categorical(Vec()), DegenerateInput);
}

TEST_CASE("categorical frequencies within 3 sigma") {
  RngStream rng(99, 1, 0);
  Vec probs = make({0.5f, 0.3f, 0.2f});
  const int n = 100000;
  int counts[3] = {0, 0, 0};
  for (int i = 0; i < n; ++i) ++counts[rng.categorical(probs)];
  for (int c = 0; c < 3; ++c) {
    const double p = probs[c];
    const double sigma = std::sqrt(p * (1 - p) * n);
    CHECK(std::abs(counts[c] - p * n) < 3 * sigma);
  }
}

TEST_CASE("dirichlet stays on the simplex") {
  RngStream rng(17, 1, 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec d = rng.dirichlet(0.5, 3);
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
      CHECK(d[i] >= 0.0f);
      sum += d[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK_THROWS_AS(rng.dirichlet(0.0, 3), ConfigError);
}

TEST_CASE("gaussian moments are sane") {
  RngStream rng(31, 1, 0);
  const int n = 100000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    sum += g;
    sum2 += g * g;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(1.0).scale(0.02));
  CHECK(sum2 / n == doctest::Approx(1.0).epsilon(0.02));
}
