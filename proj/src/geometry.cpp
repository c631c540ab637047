#include "mgeo/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace mgeo {

double participation_ratio_of(std::span<const double> eigenvalues) {
  double s = 0.0, s2 = 0.0;
  for (double l : eigenvalues) {
    s += l;
    s2 += l * l;
  }
  if (!(s2 > 0.0)) throw Error("participation ratio of an all-zero spectrum is undefined");
  return s * s / s2;
}

SpectrumSummary participation_ratio(const Matrix& x, bool normalize_rows, bool center, SpectrumRoute route) {
  const auto n = static_cast<Eigen::Index>(x.rows);
  const auto d = static_cast<Eigen::Index>(x.cols);
  if (n < 2) throw Error("participation ratio needs at least 2 rows");
  if (d < 1) throw Error("participation ratio needs at least 1 column");

  Eigen::MatrixXd m(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = x.row(static_cast<std::size_t>(r));
    for (Eigen::Index c = 0; c < d; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
    if (normalize_rows) {
      const double norm = m.row(r).norm();
      if (norm == 0.0) throw Error("row " + std::to_string(r) + " has zero norm and cannot be normalized");
      m.row(r) /= norm;
    }
  }
  if (center) m.rowwise() -= m.colwise().mean();

  if (route == SpectrumRoute::automatic) route = n < d ? SpectrumRoute::gram : SpectrumRoute::covariance;
  const Eigen::MatrixXd sq = route == SpectrumRoute::gram ? Eigen::MatrixXd(m * m.transpose())
                                                          : Eigen::MatrixXd(m.transpose() * m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sq, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");

  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), std::greater<>());
  ev.resize(static_cast<std::size_t>(std::min(n, d)));
  // Round-off leaves tiny (possibly negative) values where the spectrum is exactly zero.
  const double cutoff = ev.front() * 1e-12;
  for (auto& l : ev)
    if (l <= cutoff) l = 0.0;

  SpectrumSummary s;
  s.participation_ratio = participation_ratio_of(ev);
  s.eigenvalues = std::move(ev);
  s.normalized = normalize_rows;
  s.centered = center;
  return s;
}

std::string to_string(DistanceMetric m) { return m == DistanceMetric::euclidean ? "euclidean" : "angular"; }

DistanceMetric parse_distance_metric(const std::string& s) {
  if (s == "euclidean") return DistanceMetric::euclidean;
  if (s == "angular") return DistanceMetric::angular;
  throw Error("unknown distance metric '" + s + "' (expected euclidean or angular)");
}

std::vector<double> DistanceMatrix::upper_triangle() const {
  std::vector<double> out;
  out.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) out.push_back(values[i * n + j]);
  return out;
}

DistanceMatrix pairwise_distances(const Matrix& x, DistanceMetric metric) {
  if (x.rows < 2) throw Error("pairwise distances need at least 2 rows");
  const std::size_t n = x.rows;
  DistanceMatrix dm{metric, n, std::vector<double>(n * n, 0.0)};
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = l2_norm(x.row(i));
    if (metric == DistanceMetric::angular && norms[i] == 0.0)
      throw Error("row " + std::to_string(i) + " has zero norm; angular distance is undefined");
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double v;
      if (metric == DistanceMetric::euclidean) {
        double s = 0.0;
        const auto a = x.row(i), b = x.row(j);
        for (std::size_t k = 0; k < x.cols; ++k) {
          const double t = static_cast<double>(a[k]) - b[k];
          s += t * t;
        }
        v = std::sqrt(s);
      } else {
        const double c = dot(x.row(i), x.row(j)) / (norms[i] * norms[j]);
        v = std::acos(std::clamp(c, -1.0, 1.0));
      }
      dm.values[i * n + j] = dm.values[j * n + i] = v;
    }
  }
  return dm;
}

namespace {

void check_distribution(std::span<const double> p, const char* name) {
  double s = 0.0;
  for (double v : p) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(std::string(name) + " has a non-positive or non-finite entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw Error(std::string(name) + " does not sum to 1");
}

}  // namespace

double symmetric_kl(std::span<const double> p, std::span<const double> q, KlConvention c) {
  if (p.size() != q.size()) throw Error("symmetric_kl needs equal-length distributions");
  check_distribution(p, "p");
  check_distribution(q, "q");
  double pq = 0.0, qp = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double lr = std::log(p[i]) - std::log(q[i]);
    pq += p[i] * lr;
    qp -= q[i] * lr;
  }
  const double j = pq + qp;
  return c == KlConvention::halved ? 0.5 * j : j;
}

std::vector<double> pairwise_symmetric_kl(std::span<const std::vector<double>> dists, KlConvention c) {
  std::vector<double> out;
  out.reserve(dists.size() * (dists.size() - (dists.empty() ? 0 : 1)) / 2);
  for (std::size_t i = 0; i < dists.size(); ++i)
    for (std::size_t j = i + 1; j < dists.size(); ++j) out.push_back(symmetric_kl(dists[i], dists[j], c));
  return out;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman_rho(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("spearman_rho needs equal-length sequences");
  if (x.size() < 3) throw Error("spearman_rho needs at least 3 observations");
  for (std::size_t i = 0; i < x.size(); ++i)
    if (std::isnan(x[i]) || std::isnan(y[i])) throw Error("spearman_rho input contains NaN");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double a = rx[i] - mx, b = ry[i] - my;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

CorrelationCurve layer_correlation_curve(const ActivationTrace& trace, const std::string& slot,
                                         std::span<const std::vector<double>> predictions, DistanceMetric metric,
                                         KlConvention kl) {
  if (predictions.size() != trace.sequences.size())
    throw Error("predictions (" + std::to_string(predictions.size()) + ") do not match trace sequences (" +
                std::to_string(trace.sequences.size()) + ")");
  CorrelationCurve c;
  c.metric = metric;
  c.token_set = slot;
  c.condition = trace.condition;
  const auto div = pairwise_symmetric_kl(predictions, kl);
  for (int layer : trace.layers) {
    const auto dist = pairwise_distances(select_token_matrix(trace, layer, slot), metric).upper_triangle();
    c.layers.push_back(layer);
    c.rho.push_back(spearman_rho(dist, div));
  }
  return c;
}

std::vector<double> baseline_difference(std::span<const double> ordered, std::span<const double> shuffled) {
  if (ordered.size() != shuffled.size()) throw Error("baseline_difference needs equal-length curves");
  std::vector<double> out(ordered.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ordered[i] - shuffled[i];
  return out;
}

}  // namespace mgeo
