#pragma once

// Robustness and conservativeness measurements.

#include <polyclass/data.hpp>
#include <polyclass/errors.hpp>
#include <polyclass/models.hpp>
#include <polyclass/numcore.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace polyclass {

/// M_z = z_y - max_{i != y} z_i. Negative iff another class scores higher.
inline double prediction_margin(std::span<const double> z, std::size_t y) {
  if (z.size() < 2) throw DimensionError("metrics", "prediction margin needs k >= 2");
  if (y >= z.size()) throw DimensionError("metrics", "label out of range");
  double runner_up = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != y) runner_up = std::max(runner_up, z[i]);
  return z[y] - runner_up;
}

struct MarginRecord {
  std::size_t sample_id = 0;
  double z_y = 0.0;
  double runner_up = 0.0;
  std::size_t runner_up_class = 0;
  double margin = 0.0;     // M_z
  double magnitude = 0.0;  // m: mean |d(z_y - z_j)/dx_i| over input coordinates
  double ratio = 0.0;      // R = m / M_z
};

/// Magnitude-margin ratio on the latent output. Returns nothing for samples
/// that are not correctly classified (M_z <= 0); callers count those as skipped.
inline std::optional<MarginRecord> magnitude_margin_ratio(const NeuralModel& m, std::span<const double> x,
                                                          std::size_t y, std::size_t sample_id = 0) {
  const Vector z = forward_latent(m, x);
  const double mz = prediction_margin(z, y);
  if (!(mz > 0.0)) return std::nullopt;
  std::size_t j = y == 0 ? 1 : 0;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (i != y && z[i] > z[j]) j = i;
  Vector c(z.size(), 0.0);
  c[y] = 1.0;
  c[j] = -1.0;
  const Vector g = latent_input_gradient(m, x, c);
  double mag = 0.0;
  for (double v : g) mag += std::abs(v);
  mag /= static_cast<double>(g.size());

  MarginRecord r;
  r.sample_id = sample_id;
  r.z_y = z[y];
  r.runner_up = z[j];
  r.runner_up_class = j;
  r.margin = mz;
  r.magnitude = mag;
  r.ratio = mag / mz;
  return r;
}

struct RatioSummary {
  std::vector<MarginRecord> records;
  std::size_t skipped = 0;
  double median_ratio = std::nan("");
};

inline RatioSummary ratio_summary(const NeuralModel& m, const Dataset& data) {
  RatioSummary s;
  std::vector<double> ratios;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto rec = magnitude_margin_ratio(m, data.sample(i), static_cast<std::size_t>(data.labels[i]), i);
    if (!rec) {
      ++s.skipped;
      continue;
    }
    ratios.push_back(rec->ratio);
    s.records.push_back(*rec);
  }
  s.median_ratio = median(std::move(ratios));
  return s;
}

/// posteriors[d][r] is the classifier output at radii[r] * directions[d].
struct PosteriorTable {
  std::vector<double> radii;
  std::vector<Vector> directions;
  std::vector<std::vector<Vector>> posteriors;

  /// Largest |p_i - 1/k| over the entries at radius index r.
  double max_deviation_from_uniform(std::size_t r) const {
    double worst = 0.0;
    for (const auto& row : posteriors) {
      const auto& p = row[r];
      const double u = 1.0 / static_cast<double>(p.size());
      for (double v : p) worst = std::max(worst, std::abs(v - u));
    }
    return worst;
  }
};

/// Evaluates `classify(x) -> posterior` along rays from the origin.
template <typename Classifier>
PosteriorTable tail_posterior_probe(Classifier&& classify, std::span<const Vector> directions,
                                    std::span<const double> radii) {
  for (std::size_t i = 1; i < radii.size(); ++i) {
    if (!(radii[i] > radii[i - 1])) throw ConfigError("metrics", "probe radii must be strictly increasing");
  }
  PosteriorTable t;
  t.radii.assign(radii.begin(), radii.end());
  t.directions.assign(directions.begin(), directions.end());
  for (const auto& u : directions) {
    std::vector<Vector> row;
    Vector x(u.size());
    for (double r : radii) {
      for (std::size_t i = 0; i < u.size(); ++i) x[i] = r * u[i];
      row.push_back(classify(std::span<const double>(x)));
    }
    t.posteriors.push_back(std::move(row));
  }
  return t;
}

inline constexpr std::size_t kDefaultHistogramBins = 20;

/// Histogram over [0, 1] of the predicted-class posterior of misclassified samples.
struct PosteriorHistogram {
  std::vector<std::size_t> counts;
  std::size_t misclassified = 0;
  std::size_t total = 0;
  double mean_posterior = std::nan("");

  std::size_t bins() const noexcept { return counts.size(); }
  double bin_lo(std::size_t b) const { return static_cast<double>(b) / static_cast<double>(counts.size()); }
  double bin_hi(std::size_t b) const { return static_cast<double>(b + 1) / static_cast<double>(counts.size()); }
  std::size_t mode_bin() const {
    return static_cast<std::size_t>(std::distance(counts.begin(), std::max_element(counts.begin(), counts.end())));
  }
};

inline std::size_t histogram_bin(double p, std::size_t bins) {
  const auto b = static_cast<std::size_t>(std::floor(p * static_cast<double>(bins)));
  return std::min(b, bins - 1);  // p = 1 belongs to the last bin
}

inline PosteriorHistogram misclassified_posterior_histogram(const NeuralModel& m, const Dataset& attacked,
                                                            std::size_t bins = kDefaultHistogramBins) {
  if (bins == 0) throw ConfigError("metrics", "histogram needs at least one bin");
  PosteriorHistogram h;
  h.counts.assign(bins, 0);
  h.total = attacked.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < attacked.size(); ++i) {
    const auto out = forward(m, attacked.sample(i));
    const std::size_t pred = argmax(out.z);
    if (static_cast<int>(pred) == attacked.labels[i]) continue;
    const double p = out.posterior[pred];
    ++h.counts[histogram_bin(p, bins)];
    ++h.misclassified;
    sum += p;
  }
  if (h.misclassified) h.mean_posterior = sum / static_cast<double>(h.misclassified);
  return h;
}

// ---------------------------------------------------------------------------
// Geometric margin
// ---------------------------------------------------------------------------

struct MarginSearch {
  std::size_t directions = 720;  // evenly spaced on the circle for 2-D inputs, random unit vectors otherwise
  double max_radius = 10.0;
  double step = 0.05;
  double tolerance = 1e-6;
  std::uint64_t seed = 1;
};

namespace detail {

inline std::vector<Vector> search_directions(std::size_t dim, const MarginSearch& s) {
  std::vector<Vector> dirs;
  if (dim == 2) {
    for (std::size_t i = 0; i < s.directions; ++i) {
      const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(s.directions);
      dirs.push_back({std::cos(a), std::sin(a)});
    }
    return dirs;
  }
  Rng rng(s.seed);
  for (std::size_t i = 0; i < s.directions; ++i) {
    Vector u(dim);
    for (double& v : u) v = rng.normal();
    const double n = norm2(u);
    for (double& v : u) v /= n;
    dirs.push_back(std::move(u));
  }
  return dirs;
}

}  // namespace detail

/// Distance from x to the nearest point where the predicted class changes,
/// searched along rays: coarse steps until the class flips, then bisection.
/// Returns `limit` when no flip occurs within it.
inline double distance_to_boundary(const NeuralModel& m, std::span<const double> x, const std::vector<Vector>& dirs,
                                   const MarginSearch& s, double limit) {
  const int base = predict(m, x);
  double best = limit;
  Vector probe(x.size());
  auto at = [&](const Vector& u, double r) {
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + r * u[i];
    return predict(m, probe);
  };
  for (const auto& u : dirs) {
    double lo = 0.0;
    double hi = -1.0;
    for (double r = s.step; r <= best + s.step; r += s.step) {
      const double rr = std::min(r, best);
      if (at(u, rr) != base) {
        hi = rr;
        break;
      }
      lo = rr;
      if (rr >= best) break;
    }
    if (hi < 0.0) continue;
    while (hi - lo > s.tolerance) {
      const double mid = 0.5 * (lo + hi);
      (at(u, mid) != base ? hi : lo) = mid;
    }
    best = std::min(best, hi);
  }
  return best;
}

struct GeometricMargin {
  double min_margin = 0.0;  // over correctly classified samples
  std::size_t misclassified = 0;
};

inline GeometricMargin min_geometric_margin(const NeuralModel& m, const Dataset& data, const MarginSearch& s = {}) {
  const auto dirs = detail::search_directions(data.dim(), s);
  GeometricMargin g;
  double best = s.max_radius;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (predict(m, data.sample(i)) != data.labels[i]) {
      ++g.misclassified;
      continue;
    }
    best = distance_to_boundary(m, data.sample(i), dirs, s, best);
  }
  g.min_margin = best;
  return g;
}

}  // namespace polyclass
