#pragma once

// Covariate-shift importance weighting w(x) = (p_target(x) / p_source(x))^lambda
// with Gaussian or Student-t density estimates, and the 1-D sinc regression
// experiment with tail outliers injected into the source sample.

#include <polyclass/distributions.hpp>
#include <polyclass/errors.hpp>
#include <polyclass/numcore.hpp>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace polyclass {

/// Weights above this are clamped to it and flagged.
inline constexpr double kWeightCap = 1e12;

struct ShiftWeighting {
  DensityParams source;
  DensityParams target;
  double lambda = 1.0;
};

inline void validate(const ShiftWeighting& sw) {
  if (!(sw.lambda >= 0.0 && sw.lambda <= 1.0)) throw ConfigError("shift", "lambda must lie in [0, 1]");
  if (family_of(sw.source) != family_of(sw.target)) {
    throw ConfigError("shift", "source and target densities must share a family");
  }
}

struct ImportanceWeight {
  double value = 1.0;
  bool capped = false;
  double log_value = 0.0;  // lambda * (log p_t - log p_s), never capped
};

inline ImportanceWeight importance_weight(const ShiftWeighting& sw, double x) {
  validate(sw);
  ImportanceWeight w;
  if (sw.lambda == 0.0) return w;  // exactly 1
  w.log_value = sw.lambda * (log_pdf(sw.target, x) - log_pdf(sw.source, x));
  if (w.log_value > std::log(kWeightCap)) {
    w.value = kWeightCap;
    w.capped = true;
  } else {
    w.value = std::exp(w.log_value);
  }
  return w;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;

  double operator()(double x) const noexcept { return slope * x + intercept; }
};

/// Minimises sum_i w_i (y_i - a x_i - c)^2 via the 2x2 normal equations in
/// centred form.
inline LinearFit weighted_regression(std::span<const double> x, std::span<const double> y,
                                     std::span<const double> w) {
  if (x.size() != y.size() || x.size() != w.size()) throw DimensionError("shift", "x, y, w lengths differ");
  if (x.size() < 2) throw DegenerateError("shift", "regression needs at least 2 samples");
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w[i] < 0.0 || !std::isfinite(w[i])) throw DegenerateError("shift", "weights must be finite and non-negative");
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
  }
  if (!(sw > 0.0)) throw DegenerateError("shift", "total weight is zero");
  const double mx = sx / sw, my = sy / sw;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    sxx += w[i] * dx * dx;
    sxy += w[i] * dx * (y[i] - my);
  }
  if (!(sxx > 1e-300 * sw)) throw DegenerateError("shift", "rank-deficient design: weighted x has no spread");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  return f;
}

// ---------------------------------------------------------------------------
// Sinc regression under covariate shift
// ---------------------------------------------------------------------------

/// sin(pi x) / (pi x) with sinc(0) = 1.
inline double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

struct ShiftSetup {
  GaussianParams source{1.1, 0.25};             // N(1.1, (1/2)^2)
  GaussianParams target{2.1, 100.0 / 289.0};    // N(2.1, (10/17)^2)
  double noise_sd = 0.25;
  std::size_t n_source = 150;
  std::size_t n_target = 100;
  std::size_t n_outliers = 5;
  double outlier_lo = -5.0;
  double outlier_hi = -4.0;
  double nu = kDefaultNu;
  double grid_lo = 0.5;  // target-region error grid
  double grid_hi = 3.7;
  std::size_t grid_points = 321;
};

struct ShiftSample {
  double x = 0.0;
  double y = 0.0;
  bool outlier = false;
};

struct ShiftRun {
  double lambda = 0.0;
  Family family = Family::gaussian;
  bool outliers = false;
  LinearFit fit;
  double target_error = 0.0;
  std::vector<ImportanceWeight> weights;  // aligned with ShiftExperiment::samples (outliers only when enabled)
  double median_source_weight = 0.0;      // over non-outlier samples
};

struct ShiftExperiment {
  std::vector<ShiftSample> samples;  // source sample followed by the outliers
  std::vector<double> target_x;
  DensityParams gaussian_source, gaussian_target;
  DensityParams t_source, t_target;
  std::vector<ShiftRun> runs;
};

/// Squared error of `fit` against sinc on an even grid over the target region,
/// each grid point weighted by the true target density.
inline double target_region_error(const LinearFit& fit, const ShiftSetup& setup) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < setup.grid_points; ++i) {
    const double g = setup.grid_lo + (setup.grid_hi - setup.grid_lo) * static_cast<double>(i) /
                                         static_cast<double>(setup.grid_points - 1);
    const double pt = gaussian_pdf(setup.target, g);
    const double e = sinc(g) - fit(g);
    num += pt * e * e;
    den += pt;
  }
  return num / den;
}

/// Samples source and target inputs, fits both density families by maximum
/// likelihood, then appends the outliers (after fitting, so they never
/// influence the densities) and runs weighted regression for every lambda.
/// Runs without outliers use only the clean source sample.
inline ShiftExperiment run_shift_experiment(std::uint64_t seed, std::span<const double> lambdas, bool with_outliers,
                                            const ShiftSetup& setup = {}) {
  for (double l : lambdas)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("shift", "lambda must lie in [0, 1]");
  Rng root(seed);
  Rng src_rng = root.split(1), tgt_rng = root.split(2), out_rng = root.split(3);

  ShiftExperiment ex;
  std::vector<double> xs;
  const double sd_s = std::sqrt(setup.source.sigma2), sd_t = std::sqrt(setup.target.sigma2);
  for (std::size_t i = 0; i < setup.n_source; ++i) {
    const double x = src_rng.normal(setup.source.mu, sd_s);
    const double y = sinc(x) + src_rng.normal(0.0, setup.noise_sd);
    ex.samples.push_back({x, y, false});
    xs.push_back(x);
  }
  for (std::size_t i = 0; i < setup.n_target; ++i) ex.target_x.push_back(tgt_rng.normal(setup.target.mu, sd_t));

  ex.gaussian_source = fit_gaussian_mle(xs);
  ex.gaussian_target = fit_gaussian_mle(ex.target_x);
  ex.t_source = fit_student_t(xs, setup.nu).params;
  ex.t_target = fit_student_t(ex.target_x, setup.nu).params;

  // Outliers are always drawn so both settings share the same source sample.
  for (std::size_t i = 0; i < setup.n_outliers; ++i) {
    const double x = out_rng.uniform(setup.outlier_lo, setup.outlier_hi);
    const double y = sinc(x) + out_rng.normal(0.0, setup.noise_sd);
    ex.samples.push_back({x, y, true});
  }

  std::vector<ShiftSample> used;
  for (const auto& s : ex.samples)
    if (with_outliers || !s.outlier) used.push_back(s);

  for (Family fam : {Family::gaussian, Family::student_t}) {
    for (double lambda : lambdas) {
      ShiftWeighting sw{fam == Family::gaussian ? ex.gaussian_source : ex.t_source,
                        fam == Family::gaussian ? ex.gaussian_target : ex.t_target, lambda};
      ShiftRun run;
      run.lambda = lambda;
      run.family = fam;
      run.outliers = with_outliers;
      std::vector<double> x, y, w, clean_w;
      for (const auto& s : used) {
        const auto iw = importance_weight(sw, s.x);
        run.weights.push_back(iw);
        x.push_back(s.x);
        y.push_back(s.y);
        w.push_back(iw.value);
        if (!s.outlier) clean_w.push_back(iw.value);
      }
      run.median_source_weight = median(clean_w);
      run.fit = weighted_regression(x, y, w);
      run.target_error = target_region_error(run.fit, setup);
      ex.runs.push_back(std::move(run));
    }
  }
  return ex;
}

}  // namespace polyclass
