#pragma once

// Bayes-rule classifier over 1-D features with Gaussian or Student-t class
// conditionals (LDA when the scale is pooled).

#include <polyclass/data.hpp>
#include <polyclass/distributions.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace polyclass {

struct GenerativeClassifier {
  Family family = Family::gaussian;
  std::vector<DensityParams> class_models;
  std::vector<double> priors;

  int k() const noexcept { return static_cast<int>(class_models.size()); }
};

struct GenerativeOptions {
  Family family = Family::gaussian;
  bool pooled_variance = true;
  double nu = kDefaultNu;
};

namespace detail {

// Joint EM for per-class locations and one shared scale under a Student-t
// likelihood with fixed nu.
inline std::vector<StudentTParams> fit_pooled_student_t(const std::vector<std::vector<double>>& groups, double nu) {
  std::vector<StudentTParams> params;
  std::vector<double> residuals;
  for (const auto& g : groups) {
    const double mu = sample_median(g);
    params.push_back({mu, 0.0, nu});
    for (double x : g) residuals.push_back(x - mu);
  }
  // Start the shared scale from the pooled residuals around the class medians.
  double scale = robust_scale(residuals, 0.0);
  if (!(scale > 0.0)) throw DegenerateError("generative", "all classes are constant: shared scale is zero");
  const double n = static_cast<double>(residuals.size());

  auto loglik = [&](double s) {
    double ll = 0.0;
    for (std::size_t c = 0; c < groups.size(); ++c) {
      StudentTParams q{params[c].mu, s, nu};
      ll += student_t_log_likelihood(q, groups[c]);
    }
    return ll;
  };
  double ll = loglik(scale);
  for (int it = 0; it < kStudentTMaxIterations; ++it) {
    double ss = 0.0;
    for (std::size_t c = 0; c < groups.size(); ++c) {
      double wsum = 0.0, wx = 0.0;
      std::vector<double> w(groups[c].size());
      for (std::size_t i = 0; i < groups[c].size(); ++i) {
        const double u = (groups[c][i] - params[c].mu) / scale;
        w[i] = (nu + 1.0) / (nu + u * u);
        wsum += w[i];
        wx += w[i] * groups[c][i];
      }
      params[c].mu = wx / wsum;
      for (std::size_t i = 0; i < groups[c].size(); ++i) {
        const double d = groups[c][i] - params[c].mu;
        ss += w[i] * d * d;
      }
    }
    const double next = std::sqrt(ss / n);
    if (!(next > 0.0)) break;
    scale = next;
    const double next_ll = loglik(scale);
    const double change = next_ll - ll;
    ll = next_ll;
    if (std::abs(change) < kStudentTTolerance) break;
  }
  for (auto& p : params) p.scale = scale;
  return params;
}

}  // namespace detail

/// Fits per-class densities to a 1-D dataset. Priors are class frequencies.
inline GenerativeClassifier fit_generative(const Dataset& data, const GenerativeOptions& opt = {}) {
  if (data.dim() != 1) throw DimensionError("generative", "only 1-D features are supported");
  std::vector<std::vector<double>> groups(static_cast<std::size_t>(data.k));
  for (int c = 0; c < data.k; ++c) {
    groups[static_cast<std::size_t>(c)] = class_values_1d(data, c);
    if (groups[static_cast<std::size_t>(c)].empty()) {
      throw MissingClassError("generative", "class " + std::to_string(c) + " has no samples");
    }
    if (groups[static_cast<std::size_t>(c)].size() < 2) {
      throw MissingClassError("generative", "class " + std::to_string(c) + " has fewer than 2 samples");
    }
  }

  GenerativeClassifier clf;
  clf.family = opt.family;
  for (const auto& g : groups) clf.priors.push_back(static_cast<double>(g.size()) / static_cast<double>(data.size()));

  if (opt.family == Family::gaussian) {
    std::vector<GaussianParams> fits;
    for (const auto& g : groups) fits.push_back(fit_gaussian_mle(g));
    if (opt.pooled_variance) {
      double ss = 0.0;
      for (std::size_t c = 0; c < groups.size(); ++c)
        for (double x : groups[c]) ss += (x - fits[c].mu) * (x - fits[c].mu);
      const double pooled = ss / static_cast<double>(data.size());
      for (auto& f : fits) f.sigma2 = pooled;
    }
    for (const auto& f : fits) clf.class_models.emplace_back(f);
  } else {
    if (opt.pooled_variance) {
      for (const auto& p : detail::fit_pooled_student_t(groups, opt.nu)) clf.class_models.emplace_back(p);
    } else {
      for (const auto& g : groups) clf.class_models.emplace_back(fit_student_t(g, opt.nu).params);
    }
  }
  return clf;
}

namespace detail {

inline double standardized_distance(const DensityParams& p, double x) {
  return std::visit(
      [x](const auto& q) {
        using T = std::decay_t<decltype(q)>;
        if constexpr (std::is_same_v<T, GaussianParams>) {
          return std::abs(x - q.mu) / std::sqrt(q.sigma2);
        } else {
          return std::abs(x - q.mu) / q.scale;
        }
      },
      p);
}

}  // namespace detail

/// Class posteriors at x. Evaluated in the log domain with max-subtraction, so
/// far-tail probes never underflow to 0/0. If every log-likelihood overflows to
/// -inf (Gaussian classes at |x| near the double range) the mass goes to the
/// class(es) with the smallest standardized distance, which is the limit.
inline std::vector<double> posterior(const GenerativeClassifier& clf, double x) {
  std::vector<double> logp(clf.class_models.size());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < logp.size(); ++c) {
    logp[c] = std::log(clf.priors[c]) + log_pdf(clf.class_models[c], x);
    top = std::max(top, logp[c]);
  }
  if (!std::isfinite(top)) {
    double nearest = std::numeric_limits<double>::infinity();
    for (const auto& m : clf.class_models) nearest = std::min(nearest, detail::standardized_distance(m, x));
    for (std::size_t c = 0; c < logp.size(); ++c) {
      const bool winner = detail::standardized_distance(clf.class_models[c], x) == nearest;
      logp[c] = winner ? std::log(clf.priors[c]) : -std::numeric_limits<double>::infinity();
    }
    top = *std::max_element(logp.begin(), logp.end());
  }
  double sum = 0.0;
  for (double& v : logp) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : logp) v /= sum;
  return logp;
}

}  // namespace polyclass
