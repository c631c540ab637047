#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mgeo/tensor.hpp"
#include "mgeo/trace.hpp"

namespace mgeo {

/// gram: eigenvalues of the n x n X X^T; covariance: of the d x d X^T X.
enum class SpectrumRoute { automatic, gram, covariance };

struct SpectrumSummary {
  std::vector<double> eigenvalues;  // lambda_i = sigma_i^2, nonincreasing, min(n, d) entries
  double participation_ratio = 0.0;
  bool normalized = false;
  bool centered = true;
};

/// (sum lambda)^2 / sum lambda^2. Throws Error for an all-zero spectrum.
double participation_ratio_of(std::span<const double> eigenvalues);

SpectrumSummary participation_ratio(const Matrix& x, bool normalize_rows, bool center = true,
                                    SpectrumRoute route = SpectrumRoute::automatic);

enum class DistanceMetric { euclidean, angular };
std::string to_string(DistanceMetric m);
DistanceMetric parse_distance_metric(const std::string& s);

struct DistanceMatrix {
  DistanceMetric metric = DistanceMetric::euclidean;
  std::size_t n = 0;
  std::vector<double> values;  // n x n row-major

  double operator()(std::size_t i, std::size_t j) const { return values[i * n + j]; }
  /// Entries (i, j) with i < j in row-major order.
  std::vector<double> upper_triangle() const;
};

DistanceMatrix pairwise_distances(const Matrix& x, DistanceMetric metric);

enum class KlConvention { jeffreys, halved };

/// KL(p||q) + KL(q||p) in nats (halved on request).
double symmetric_kl(std::span<const double> p, std::span<const double> q, KlConvention c = KlConvention::jeffreys);

/// Pairwise symmetric KL over a list of distributions, strict upper triangle, row-major.
std::vector<double> pairwise_symmetric_kl(std::span<const std::vector<double>> dists,
                                          KlConvention c = KlConvention::jeffreys);

/// Ranks starting at 1; ties share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> v);

/// Pearson correlation of average ranks. Nullopt when either input is constant.
std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y);

struct CorrelationCurve {
  DistanceMetric metric = DistanceMetric::euclidean;
  std::string token_set;
  std::string condition;
  std::vector<int> layers;
  std::vector<std::optional<double>> rho;
};

/// Per captured layer: Spearman rho between pairwise distances of the selected
/// token states and pairwise symmetric KL of `predictions` (one per sequence).
CorrelationCurve layer_correlation_curve(const ActivationTrace& trace, const std::string& slot,
                                         std::span<const std::vector<double>> predictions, DistanceMetric metric,
                                         KlConvention kl = KlConvention::jeffreys);

/// Elementwise ordered - shuffled.
std::vector<double> baseline_difference(std::span<const double> ordered, std::span<const double> shuffled);

}  // namespace mgeo
