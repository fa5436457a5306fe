#pragma once

// Univariate Gaussian and location-scale Student-t densities with
// maximum-likelihood fitting.

#include <polyclass/errors.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace polyclass {

/// Degrees of freedom used when the caller does not choose one (Cauchy).
inline constexpr double kDefaultNu = 1.0;

struct GaussianParams {
  double mu = 0.0;
  double sigma2 = 1.0;
};

struct StudentTParams {
  double mu = 0.0;
  double scale = 1.0;
  double nu = kDefaultNu;
};

enum class Family { gaussian, student_t };

inline const char* to_string(Family f) { return f == Family::gaussian ? "gaussian" : "student_t"; }

using DensityParams = std::variant<GaussianParams, StudentTParams>;

inline void validate(const GaussianParams& p) {
  if (!(p.sigma2 > 0.0) || !std::isfinite(p.sigma2) || !std::isfinite(p.mu)) {
    throw DegenerateError("distributions", "gaussian requires finite mu and sigma2 > 0");
  }
}

inline void validate(const StudentTParams& p) {
  if (!(p.scale > 0.0) || !(p.nu > 0.0) || !std::isfinite(p.mu) || !std::isfinite(p.scale)) {
    throw DegenerateError("distributions", "student-t requires finite mu, scale > 0 and nu > 0");
  }
}

inline double gaussian_log_pdf(const GaussianParams& p, double x) {
  const double d = x - p.mu;
  return -0.5 * std::log(2.0 * std::numbers::pi * p.sigma2) - d * d / (2.0 * p.sigma2);
}

inline double gaussian_pdf(const GaussianParams& p, double x) {
  validate(p);
  return std::exp(gaussian_log_pdf(p, x));
}

inline double student_t_log_pdf(const StudentTParams& p, double x) {
  const double u = (x - p.mu) / p.scale;
  const double nu = p.nu;
  // Far out u^2 overflows; log(1 + u^2/nu) = 2 log|u| - log nu to double precision there.
  const double log_kernel = std::abs(u) > 1e150 ? 2.0 * std::log(std::abs(u)) - std::log(nu) : std::log1p(u * u / nu);
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * std::numbers::pi) -
         std::log(p.scale) - 0.5 * (nu + 1.0) * log_kernel;
}

inline double student_t_pdf(const StudentTParams& p, double x) {
  validate(p);
  return std::exp(student_t_log_pdf(p, x));
}

inline double log_pdf(const DensityParams& p, double x) {
  return std::visit(
      [x](const auto& q) {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, GaussianParams>) {
          return gaussian_log_pdf(q, x);
        } else {
          return student_t_log_pdf(q, x);
        }
      },
      p);
}

inline Family family_of(const DensityParams& p) {
  return std::holds_alternative<GaussianParams>(p) ? Family::gaussian : Family::student_t;
}

/// Mean and biased (1/n) variance.
inline GaussianParams fit_gaussian_mle(std::span<const double> samples) {
  if (samples.size() < 2) throw DegenerateError("distributions", "gaussian fit needs at least 2 samples");
  double mean = 0.0;
  for (double s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  var /= static_cast<double>(samples.size());
  if (!(var > 0.0)) throw DegenerateError("distributions", "all samples identical: variance is zero");
  return {mean, var};
}

struct StudentTFit {
  StudentTParams params;
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> log_likelihood_trace;  // one entry per EM iterate, starting with the initial guess
};

inline double student_t_log_likelihood(const StudentTParams& p, std::span<const double> samples) {
  double ll = 0.0;
  for (double s : samples) ll += student_t_log_pdf(p, s);
  return ll;
}

namespace detail {

inline double sample_median(std::span<const double> samples) {
  std::vector<double> v(samples.begin(), samples.end());
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

inline double robust_scale(std::span<const double> samples, double center) {
  std::vector<double> dev;
  dev.reserve(samples.size());
  for (double s : samples) dev.push_back(std::abs(s - center));
  double mad = sample_median(dev);
  if (mad > 0.0) return mad;
  double ss = 0.0;
  for (double d : dev) ss += d * d;
  return std::sqrt(ss / static_cast<double>(samples.size()));
}

}  // namespace detail

inline constexpr int kStudentTMaxIterations = 500;
inline constexpr double kStudentTTolerance = 1e-10;

/// Location and scale of a Student-t with fixed nu by EM. Each iteration
/// reweights samples by (nu + 1) / (nu + r^2) and re-estimates the weighted
/// mean and scale; the log-likelihood is non-decreasing.
inline StudentTFit fit_student_t(std::span<const double> samples, double nu = kDefaultNu) {
  if (samples.size() < 3) throw DegenerateError("distributions", "student-t fit needs at least 3 samples");
  if (!(nu > 0.0)) throw DegenerateError("distributions", "nu must be positive");

  StudentTParams p{detail::sample_median(samples), 0.0, nu};
  p.scale = detail::robust_scale(samples, p.mu);
  if (!(p.scale > 0.0)) throw DegenerateError("distributions", "all samples identical: scale is zero");

  StudentTFit fit;
  double ll = student_t_log_likelihood(p, samples);
  fit.log_likelihood_trace.push_back(ll);
  const double n = static_cast<double>(samples.size());
  std::vector<double> w(samples.size());

  for (int it = 1; it <= kStudentTMaxIterations; ++it) {
    double wsum = 0.0, wx = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double u = (samples[i] - p.mu) / p.scale;
      w[i] = (nu + 1.0) / (nu + u * u);
      wsum += w[i];
      wx += w[i] * samples[i];
    }
    StudentTParams next = p;
    next.mu = wx / wsum;
    double ss = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const double d = samples[i] - next.mu;
      ss += w[i] * d * d;
    }
    next.scale = std::sqrt(ss / n);
    if (!(next.scale > 0.0)) break;  // collapsed onto a point; keep the previous iterate

    const double next_ll = student_t_log_likelihood(next, samples);
    p = next;
    fit.iterations = it;
    fit.log_likelihood_trace.push_back(next_ll);
    const double change = next_ll - ll;
    ll = next_ll;
    if (std::abs(change) < kStudentTTolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.params = p;
  fit.log_likelihood = ll;
  return fit;
}

}  // namespace polyclass
