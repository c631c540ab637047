#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mgeo/geometry.hpp"
#include "oracles.hpp"

using namespace mgeo;

namespace {

Matrix from_rows(std::vector<std::vector<float>> rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(r, c) = rows[r][c];
  return m;
}

std::vector<double> random_softmax(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 2.0);
  std::vector<double> z(n);
  for (auto& v : z) v = nd(rng);
  return oracle::softmax(z);
}

}  // namespace

TEST(ParticipationRatio, RankOneIsExactlyOne) {
  Matrix m(6, 4);
  const float dir[4] = {0.3f, -1.2f, 2.0f, 0.7f};
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 4; ++c) m(r, c) = static_cast<float>(r + 1) * 0.5f * dir[c];
  EXPECT_EQ(participation_ratio(m, false, true).participation_ratio, 1.0);
  EXPECT_EQ(participation_ratio(m, false, true, SpectrumRoute::gram).participation_ratio, 1.0);
}

TEST(ParticipationRatio, IsotropicPlaneIsTwo) {
  const auto m = from_rows({{1, 0}, {0, 1}, {-1, 0}, {0, -1}});
  EXPECT_NEAR(participation_ratio(m, false, true).participation_ratio, 2.0, 1e-12);
}

TEST(ParticipationRatio, AxisVariancesFourAndOne) {
  const auto m = from_rows({{2, 0}, {-2, 0}, {0, 1}, {0, -1}});
  const double expected = oracle::participation_ratio(m, false, true);
  EXPECT_NEAR(expected, 25.0 / 17.0, 1e-12);
  EXPECT_NEAR(participation_ratio(m, false, true).participation_ratio, expected, 1e-6);
}

TEST(ParticipationRatio, MatchesDirectOracleOnRandomData) {
  std::mt19937_64 rng(7);
  for (auto [n, d] : {std::pair{10, 5}, {5, 10}, {30, 30}, {3, 20}}) {
    const auto m = oracle::random_matrix(rng, n, d);
    for (bool norm : {false, true})
      for (bool center : {false, true})
        EXPECT_NEAR(participation_ratio(m, norm, center).participation_ratio,
                    oracle::participation_ratio(m, norm, center), 1e-8);
  }
}

TEST(ParticipationRatio, GramAndCovarianceRoutesAgree) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> dim(2, 64);
  for (int trial = 0; trial < 40; ++trial) {
    const auto m = oracle::random_matrix(rng, dim(rng), dim(rng));
    const auto g = participation_ratio(m, false, true, SpectrumRoute::gram);
    const auto c = participation_ratio(m, false, true, SpectrumRoute::covariance);
    EXPECT_NEAR(g.participation_ratio, c.participation_ratio, 1e-6);
    ASSERT_EQ(g.eigenvalues.size(), c.eigenvalues.size());
    for (std::size_t i = 0; i < g.eigenvalues.size(); ++i)
      EXPECT_NEAR(g.eigenvalues[i], c.eigenvalues[i], 1e-8 * (1.0 + c.eigenvalues[0]));
  }
}

TEST(ParticipationRatio, SpectrumIsNonincreasingAndBounded) {
  std::mt19937_64 rng(3);
  const auto m = oracle::random_matrix(rng, 12, 7);
  const auto s = participation_ratio(m, false, true);
  ASSERT_EQ(s.eigenvalues.size(), 7u);
  std::size_t positive = 0;
  for (std::size_t i = 0; i < s.eigenvalues.size(); ++i) {
    EXPECT_GE(s.eigenvalues[i], 0.0);
    if (i) {
      EXPECT_LE(s.eigenvalues[i], s.eigenvalues[i - 1]);
    }
    positive += s.eigenvalues[i] > 0;
  }
  EXPECT_GE(s.participation_ratio, 1.0);
  EXPECT_LE(s.participation_ratio, static_cast<double>(positive) + 1e-12);
  EXPECT_NEAR(s.participation_ratio, participation_ratio_of(s.eigenvalues), 1e-15);
}

TEST(ParticipationRatio, RotationInvariant) {
  std::mt19937_64 rng(5);
  const std::size_t n = 20, d = 8;
  const auto m = oracle::random_matrix(rng, n, d);
  const auto q = oracle::random_orthogonal(rng, d);
  Matrix r(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += double(m(i, k)) * q[k][j];
      r(i, j) = static_cast<float>(s);
    }
  EXPECT_NEAR(participation_ratio(m, false, true).participation_ratio,
              participation_ratio(r, false, true).participation_ratio, 1e-5);
}

TEST(ParticipationRatio, NormalizedIgnoresRowScale) {
  std::mt19937_64 rng(9);
  auto m = oracle::random_matrix(rng, 15, 6);
  const double before = participation_ratio(m, true, true).participation_ratio;
  std::uniform_real_distribution<float> scale(0.1f, 10.0f);
  for (std::size_t r = 0; r < m.rows; ++r) {
    const float s = scale(rng);
    for (auto& v : m.row(r)) v *= s;
  }
  EXPECT_NEAR(participation_ratio(m, true, true).participation_ratio, before, 1e-6);
}

TEST(ParticipationRatio, Errors) {
  EXPECT_THROW(participation_ratio(Matrix(1, 3, 1.0f), false), Error);
  const auto z = from_rows({{1, 2}, {0, 0}, {3, 1}});
  EXPECT_THROW(participation_ratio(z, true), Error);
  EXPECT_NO_THROW(participation_ratio(z, false));
}

TEST(Distances, OrthogonalPair) {
  const auto m = from_rows({{1, 0}, {0, 1}});
  EXPECT_NEAR(pairwise_distances(m, DistanceMetric::euclidean)(0, 1), std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(pairwise_distances(m, DistanceMetric::angular)(0, 1), std::numbers::pi / 2, 1e-12);
}

TEST(Distances, IdenticalRowsAreZero) {
  const auto m = from_rows({{0.3f, -2}, {0.3f, -2}, {1, 1}});
  for (auto metric : {DistanceMetric::euclidean, DistanceMetric::angular}) {
    const auto d = pairwise_distances(m, metric);
    EXPECT_EQ(d(0, 1), 0.0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(d(i, i), 0.0);
  }
}

TEST(Distances, LawOfCosines) {
  std::mt19937_64 rng(21);
  const auto m = oracle::random_matrix(rng, 40, 512);
  const auto e = pairwise_distances(m, DistanceMetric::euclidean);
  const auto a = pairwise_distances(m, DistanceMetric::angular);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = i + 1; j < m.rows; ++j) {
      const double xi = l2_norm(m.row(i)), xj = l2_norm(m.row(j));
      const double rhs = xi * xi + xj * xj - 2 * xi * xj * std::cos(a(i, j));
      EXPECT_NEAR(e(i, j) * e(i, j), rhs, 1e-4 * rhs);
    }
}

TEST(Distances, AngularIsAMetricOnDirections) {
  std::mt19937_64 rng(4);
  const auto m = oracle::random_matrix(rng, 25, 5);
  const auto d = pairwise_distances(m, DistanceMetric::angular);
  for (std::size_t i = 0; i < 25; ++i)
    for (std::size_t j = 0; j < 25; ++j) {
      EXPECT_EQ(d(i, j), d(j, i));
      EXPECT_GE(d(i, j), 0.0);
      EXPECT_LE(d(i, j), std::numbers::pi);
      for (std::size_t k = 0; k < 25; ++k) EXPECT_LE(d(i, k), d(i, j) + d(j, k) + 1e-9);
    }
  auto scaled = m;
  for (auto& v : scaled.row(3)) v *= 7.5f;
  EXPECT_NEAR(pairwise_distances(scaled, DistanceMetric::angular)(3, 8), d(3, 8), 1e-6);
}

TEST(Distances, UpperTriangleOrder) {
  const auto m = from_rows({{0}, {1}, {3}, {6}});
  const auto ut = pairwise_distances(m, DistanceMetric::euclidean).upper_triangle();
  EXPECT_EQ(ut, (std::vector<double>{1, 3, 6, 2, 5, 3}));
}

TEST(Distances, Errors) {
  EXPECT_THROW(pairwise_distances(from_rows({{1, 1}}), DistanceMetric::euclidean), Error);
  EXPECT_THROW(pairwise_distances(from_rows({{1, 1}, {0, 0}}), DistanceMetric::angular), Error);
  EXPECT_NO_THROW(pairwise_distances(from_rows({{1, 1}, {0, 0}}), DistanceMetric::euclidean));
}

TEST(SymmetricKl, WorkedExample) {
  const std::vector<double> p = {0.5, 0.5}, q = {0.25, 0.75};
  const double expected = oracle::kl(p, q) + oracle::kl(q, p);
  EXPECT_NEAR(expected, 0.2746, 1e-4);
  EXPECT_NEAR(symmetric_kl(p, q), expected, 1e-12);
  EXPECT_NEAR(symmetric_kl(p, q, KlConvention::halved), expected / 2, 1e-12);
}

TEST(SymmetricKl, ZeroForIdenticalAndSymmetric) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 50; ++i) {
    const auto p = random_softmax(rng, 30), q = random_softmax(rng, 30);
    EXPECT_EQ(symmetric_kl(p, p), 0.0);
    EXPECT_EQ(symmetric_kl(p, q), symmetric_kl(q, p));
    EXPECT_GT(symmetric_kl(p, q), 0.0);
    EXPECT_NEAR(symmetric_kl(p, q), oracle::kl(p, q) + oracle::kl(q, p), 1e-9);
  }
}

TEST(SymmetricKl, Errors) {
  const std::vector<double> p = {0.5, 0.5};
  EXPECT_THROW(symmetric_kl(p, std::vector<double>{1.0}), Error);
  EXPECT_THROW(symmetric_kl(p, std::vector<double>{1.0, 0.0}), Error);
  EXPECT_THROW(symmetric_kl(p, std::vector<double>{0.6, 0.6}), Error);
}

TEST(Spearman, PerfectAndReversed) {
  const std::vector<double> x = {3, 1, 4, 1.5, 9, 2.6};
  std::vector<double> rev;
  for (double v : x) rev.push_back(-v);
  EXPECT_DOUBLE_EQ(*spearman_rho(x, x), 1.0);
  EXPECT_DOUBLE_EQ(*spearman_rho(x, rev), -1.0);
}

TEST(Spearman, TiedExampleMatchesNaiveOracle) {
  const std::vector<double> x = {1, 2, 2, 3}, y = {10, 20, 20, 40};
  EXPECT_EQ(average_ranks(x), oracle::naive_ranks(x));
  EXPECT_EQ(*spearman_rho(x, y), oracle::spearman(x, y));
}

TEST(Spearman, RandomWithTiesMatchesOracleExactly) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> small(0, 6);
  std::normal_distribution<double> nd;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> x(25), y(25);
    for (auto& v : x) v = small(rng);
    for (auto& v : y) v = t % 2 ? nd(rng) : small(rng);
    const auto rho = spearman_rho(x, y);
    ASSERT_TRUE(rho.has_value());
    EXPECT_EQ(*rho, oracle::spearman(x, y));
  }
}

TEST(Spearman, InvariantUnderMonotoneTransform) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd;
  std::vector<double> x(40), y(40), fx(40);
  for (std::size_t i = 0; i < 40; ++i) {
    x[i] = nd(rng);
    y[i] = x[i] + nd(rng);
    fx[i] = std::exp(3 * x[i]) + 5;
  }
  EXPECT_EQ(*spearman_rho(x, y), *spearman_rho(fx, y));
}

TEST(Spearman, ConstantInputIsUndefined) {
  const std::vector<double> c = {2, 2, 2, 2}, x = {1, 2, 3, 4};
  EXPECT_FALSE(spearman_rho(c, x).has_value());
  EXPECT_FALSE(spearman_rho(x, c).has_value());
  EXPECT_THROW(spearman_rho(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);
  EXPECT_THROW(spearman_rho(x, std::vector<double>{1, 2, 3}), Error);
}

TEST(CorrelationCurve, MatchesOracleOnEveryLayer) {
  std::mt19937_64 rng(8);
  ActivationTrace t;
  t.model = "synthetic";
  t.n_layers = 2;
  t.d_model = 3;
  t.layers = {0, 1, 2};
  t.slots = {"last"};
  std::vector<std::vector<double>> preds;
  for (int s = 0; s < 9; ++s) {
    t.sequences.push_back({"s" + std::to_string(s), {0}, {0}});
    preds.push_back(random_softmax(rng, 4));
  }
  t.payload = oracle::random_matrix(rng, 9 * 3, 3).data;
  const auto div = pairwise_symmetric_kl(preds);
  for (auto metric : {DistanceMetric::euclidean, DistanceMetric::angular}) {
    const auto curve = layer_correlation_curve(t, "last", preds, metric);
    ASSERT_EQ(curve.layers, (std::vector<int>{0, 1, 2}));
    for (int l = 0; l < 3; ++l) {
      // independent pairwise distances straight from the payload
      std::vector<double> dist;
      for (int i = 0; i < 9; ++i)
        for (int j = i + 1; j < 9; ++j) {
          const float* a = &t.payload[(i * 3 + l) * 3];
          const float* b = &t.payload[(j * 3 + l) * 3];
          double ab = 0, aa = 0, bb = 0, sq = 0;
          for (int k = 0; k < 3; ++k) {
            ab += double(a[k]) * b[k];
            aa += double(a[k]) * a[k];
            bb += double(b[k]) * b[k];
            sq += (double(a[k]) - b[k]) * (double(a[k]) - b[k]);
          }
          dist.push_back(metric == DistanceMetric::euclidean ? std::sqrt(sq)
                                                             : std::acos(std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0)));
        }
      ASSERT_TRUE(curve.rho[l].has_value());
      EXPECT_NEAR(*curve.rho[l], oracle::spearman(dist, div), 1e-12);
    }
  }
}

TEST(CorrelationCurve, ConstantDistancesAreUndefinedNotZero) {
  const std::size_t n = 7;
  std::mt19937_64 rng(1);
  std::vector<std::vector<double>> preds;
  for (std::size_t s = 0; s < n; ++s) preds.push_back(random_softmax(rng, 5));
  ActivationTrace t;
  t.model = "synthetic";
  t.n_layers = 0;
  t.d_model = static_cast<int>(n);
  t.layers = {0};
  t.slots = {"last"};
  for (std::size_t s = 0; s < n; ++s) t.sequences.push_back({"s" + std::to_string(s), {0}, {0}});
  t.payload.assign(n * n, 0.0f);
  for (std::size_t s = 0; s < n; ++s) t.payload[s * n + s] = 1.0f;  // regular simplex
  const auto curve = layer_correlation_curve(t, "last", preds, DistanceMetric::euclidean);
  EXPECT_FALSE(curve.rho[0].has_value());
}

TEST(CorrelationCurve, JeffreysAndHalvedGiveIdenticalRho) {
  std::mt19937_64 rng(31);
  ActivationTrace t;
  t.model = "synthetic";
  t.n_layers = 1;
  t.d_model = 6;
  t.layers = {0, 1};
  t.slots = {"last"};
  std::vector<std::vector<double>> preds;
  for (int s = 0; s < 20; ++s) {
    t.sequences.push_back({"s" + std::to_string(s), {0}, {0}});
    preds.push_back(random_softmax(rng, 11));
  }
  t.payload = oracle::random_matrix(rng, 40, 6).data;
  for (auto metric : {DistanceMetric::euclidean, DistanceMetric::angular}) {
    const auto a = layer_correlation_curve(t, "last", preds, metric, KlConvention::jeffreys);
    const auto b = layer_correlation_curve(t, "last", preds, metric, KlConvention::halved);
    EXPECT_EQ(a.rho, b.rho);
  }
}

TEST(CorrelationCurve, PredictionCountMustMatch) {
  ActivationTrace t;
  t.n_layers = 0;
  t.d_model = 1;
  t.layers = {0};
  t.slots = {"last"};
  t.sequences = {{"a", {0}, {0}}, {"b", {0}, {0}}, {"c", {0}, {0}}};
  t.payload = {1, 2, 3};
  std::vector<std::vector<double>> two = {{0.5, 0.5}, {0.4, 0.6}};
  EXPECT_THROW(layer_correlation_curve(t, "last", two, DistanceMetric::euclidean), Error);
}

TEST(BaselineDifference, Examples) {
  const std::vector<double> s = {1.5, 2.0, -1.0};
  EXPECT_EQ(baseline_difference(s, s), (std::vector<double>{0, 0, 0}));
  std::vector<double> o = s;
  for (auto& v : o) v += 1;
  EXPECT_EQ(baseline_difference(o, s), (std::vector<double>{1, 1, 1}));
  EXPECT_THROW(baseline_difference(o, std::vector<double>{1}), Error);
}
