#pragma once

// l-infinity adversarial attacks: FGSM, targeted FGSM, BIM, the model-free
// average-sample attack, and a black-box attack through a distilled substitute.

#include <polyclass/data.hpp>
#include <polyclass/errors.hpp>
#include <polyclass/models.hpp>
#include <polyclass/numcore.hpp>

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace polyclass {

struct ClipRange {
  double lo = 0.0;
  double hi = 1.0;
};

struct AttackConfig {
  double epsilon = 0.1;
  int steps = 1;                                // BIM iterations T; step size is epsilon / T
  std::optional<ClipRange> clip = ClipRange{};  // empty for unbounded inputs
};

inline void validate(const AttackConfig& cfg) {
  if (!(cfg.epsilon >= 0.0)) throw ConfigError("attacks", "epsilon must be non-negative");
  if (cfg.steps < 1) throw ConfigError("attacks", "steps must be at least 1");
  if (cfg.clip && !(cfg.clip->lo < cfg.clip->hi)) throw ConfigError("attacks", "clip range must have lo < hi");
}

namespace detail {

inline void sign_step(Vector& x, std::span<const double> direction, double scale, const std::optional<ClipRange>& clip) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] += scale * sign(direction[i]);
    if (clip) x[i] = std::clamp(x[i], clip->lo, clip->hi);
  }
}

inline void check_class(const NeuralModel& m, std::size_t y, const char* what) {
  if (y >= static_cast<std::size_t>(m.k)) {
    throw InvalidTargetError("attacks", std::string(what) + " " + std::to_string(y) + " out of range for k=" +
                                            std::to_string(m.k));
  }
}

}  // namespace detail

/// x + eps * sign(grad_x J(x, y)), clipped.
inline Vector fgsm(const NeuralModel& m, std::span<const double> x, std::size_t y, const AttackConfig& cfg) {
  validate(cfg);
  detail::check_class(m, y, "label");
  Vector out(x.begin(), x.end());
  if (cfg.epsilon == 0.0) return out;
  const Vector g = input_gradient(m, x, y);
  detail::sign_step(out, g, cfg.epsilon, cfg.clip);
  return out;
}

/// x - eps * sign(grad_x J(x, y_t)), clipped.
inline Vector targeted_fgsm(const NeuralModel& m, std::span<const double> x, std::size_t target,
                            const AttackConfig& cfg) {
  validate(cfg);
  detail::check_class(m, target, "target");
  Vector out(x.begin(), x.end());
  if (cfg.epsilon == 0.0) return out;
  const Vector g = input_gradient(m, x, target);
  detail::sign_step(out, g, -cfg.epsilon, cfg.clip);
  return out;
}

/// T steps of size eps / T, each using the gradient at the current iterate and
/// clipped to the valid range. With T = 1 this is exactly fgsm.
inline Vector bim(const NeuralModel& m, std::span<const double> x, std::size_t y, const AttackConfig& cfg) {
  validate(cfg);
  detail::check_class(m, y, "label");
  Vector cur(x.begin(), x.end());
  if (cfg.epsilon == 0.0) return cur;
  const double alpha = cfg.epsilon / static_cast<double>(cfg.steps);
  for (int t = 0; t < cfg.steps; ++t) {
    const Vector g = input_gradient(m, cur, y);
    detail::sign_step(cur, g, alpha, cfg.clip);
  }
  return cur;
}

/// Per-class mean input, computed on training data.
struct ClassAverages {
  std::vector<Vector> means;
};

inline ClassAverages class_averages(const Dataset& train) {
  ClassAverages avg;
  avg.means.assign(static_cast<std::size_t>(train.k), Vector(train.dim(), 0.0));
  std::vector<std::size_t> counts(static_cast<std::size_t>(train.k), 0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto c = static_cast<std::size_t>(train.labels[i]);
    auto x = train.sample(i);
    for (std::size_t j = 0; j < x.size(); ++j) avg.means[c][j] += x[j];
    ++counts[c];
  }
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) throw MissingClassError("attacks", "no training samples for class " + std::to_string(c));
    for (double& v : avg.means[c]) v /= static_cast<double>(counts[c]);
  }
  return avg;
}

/// x + eps * sign(Avg_target - Avg_y), clipped. Never consults a model.
inline Vector average_sample_attack(std::span<const double> x, std::size_t y, std::size_t target,
                                    const ClassAverages& avgs, const AttackConfig& cfg) {
  validate(cfg);
  if (target == y) throw InvalidTargetError("attacks", "average-sample attack needs target != label");
  if (y >= avgs.means.size() || target >= avgs.means.size()) {
    throw InvalidTargetError("attacks", "class index out of range for the class averages");
  }
  const Vector& from = avgs.means[y];
  const Vector& to = avgs.means[target];
  if (from.size() != x.size()) throw DimensionError("attacks", "class averages do not match input width");
  Vector dir(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) dir[i] = to[i] - from[i];
  Vector out(x.begin(), x.end());
  detail::sign_step(out, dir, cfg.epsilon, cfg.clip);
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Applies `perturb(x, y)` to every sample.
template <typename Perturb>
Dataset perturb_dataset(const Dataset& data, Perturb&& perturb) {
  Dataset out = data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vector adv = perturb(data.sample(i), static_cast<std::size_t>(data.labels[i]));
    std::copy(adv.begin(), adv.end(), out.features.row(i).begin());
  }
  return out;
}

/// Accuracy of `victim` on every sample after `perturb(x, y)`.
template <typename Perturb>
double accuracy_under(const NeuralModel& victim, const Dataset& data, Perturb&& perturb) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    const Vector adv = perturb(data.sample(i), y);
    correct += predict(victim, adv) == static_cast<int>(y);
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

/// Targeted protocol: every sample is attacked toward every class t != y.
struct TargetedEvaluation {
  double mean_over_targets = 0.0;     // accuracy averaged over all (sample, target) pairs
  double worst_target = 0.0;          // lowest per-target accuracy
  double all_targets_survived = 0.0;  // fraction of samples correct under every target
  std::vector<double> per_target;     // accuracy on samples attacked toward t (y != t)
  std::vector<double> per_class;      // mean accuracy over targets, grouped by true class
};

/// `perturb(x, y, t)` returns the attacked input.
template <typename Perturb>
TargetedEvaluation evaluate_targeted(const NeuralModel& victim, const Dataset& data, Perturb&& perturb) {
  const auto k = static_cast<std::size_t>(victim.k);
  if (k < 2) throw ConfigError("attacks", "targeted evaluation needs k >= 2");
  std::vector<std::size_t> target_hits(k, 0), target_total(k, 0), class_hits(k, 0), class_total(k, 0);
  std::size_t hits = 0, total = 0, survivors = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    bool survived = true;
    for (std::size_t t = 0; t < k; ++t) {
      if (t == y) continue;
      const Vector adv = perturb(data.sample(i), y, t);
      const bool ok = predict(victim, adv) == static_cast<int>(y);
      hits += ok;
      ++total;
      target_hits[t] += ok;
      ++target_total[t];
      class_hits[y] += ok;
      ++class_total[y];
      survived = survived && ok;
    }
    survivors += survived;
  }
  TargetedEvaluation ev;
  ev.mean_over_targets = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  ev.all_targets_survived = data.size() ? static_cast<double>(survivors) / static_cast<double>(data.size()) : 0.0;
  ev.worst_target = 1.0;
  for (std::size_t t = 0; t < k; ++t) {
    const double acc = target_total[t] ? static_cast<double>(target_hits[t]) / static_cast<double>(target_total[t]) : 0.0;
    ev.per_target.push_back(acc);
    if (target_total[t]) ev.worst_target = std::min(ev.worst_target, acc);
    ev.per_class.push_back(class_total[t] ? static_cast<double>(class_hits[t]) / static_cast<double>(class_total[t])
                                          : 0.0);
  }
  return ev;
}

// ---------------------------------------------------------------------------
// Black-box substitute attack
// ---------------------------------------------------------------------------

struct SubstituteConfig {
  std::size_t hidden = 128;
  TrainConfig train{};
  double holdout_fraction = 0.2;  // share of the pool kept aside to measure agreement
  double min_agreement = 0.8;
};

struct BlackBoxReport {
  NeuralModel substitute;
  double agreement = 0.0;       // substitute vs target label agreement on the held-out pool
  bool agreement_ok = false;    // agreement >= min_agreement
  TargetedEvaluation evaluation;
};

/// Labels `pool` with the target model's predictions, distils a softmax
/// substitute (input-hidden-k) on a shuffled part of it, and measures agreement on the rest.
inline BlackBoxReport train_substitute(const NeuralModel& target, const Matrix& pool, const SubstituteConfig& cfg) {
  if (pool.rows() < 2) throw ConfigError("attacks", "substitute pool needs at least 2 samples");
  Dataset labelled;
  labelled.features = pool;
  labelled.k = target.k;
  labelled.name = "substitute_pool";
  labelled.labels.reserve(pool.rows());
  for (std::size_t i = 0; i < pool.rows(); ++i) labelled.labels.push_back(predict(target, pool.row(i)));

  const auto n_hold = static_cast<std::size_t>(cfg.holdout_fraction * static_cast<double>(pool.rows()));
  std::vector<std::size_t> order(pool.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng(cfg.train.seed).split(0x400D).shuffle(order);
  const std::vector<std::size_t> fit_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_hold));
  const std::vector<std::size_t> hold_idx(order.end() - static_cast<std::ptrdiff_t>(n_hold), order.end());
  const Dataset fit = subset(labelled, fit_idx, "substitute_fit");
  const Dataset hold = subset(labelled, hold_idx, "substitute_holdout");

  const std::vector<std::size_t> widths{pool.cols(), cfg.hidden, static_cast<std::size_t>(target.k)};
  NeuralModel sub = make_model(widths, Head::softmax, cfg.train.init_scheme, cfg.train.seed ^ 0x5B5ULL);
  BlackBoxReport report;
  report.substitute = train(std::move(sub), fit, cfg.train).model;
  report.agreement = hold.size() ? accuracy(report.substitute, hold) : accuracy(report.substitute, fit);
  report.agreement_ok = report.agreement >= cfg.min_agreement;
  return report;
}

/// Trains a substitute on `pool` (which must be disjoint from the target's
/// training data), crafts targeted FGSM examples on the substitute, and
/// evaluates the target model on them.
inline BlackBoxReport blackbox_substitute_attack(const NeuralModel& target, const Matrix& pool, const Dataset& test,
                                                 const AttackConfig& cfg, const SubstituteConfig& sub_cfg = {}) {
  validate(cfg);
  BlackBoxReport report = train_substitute(target, pool, sub_cfg);
  const NeuralModel& sub = report.substitute;
  report.evaluation = evaluate_targeted(target, test, [&](std::span<const double> x, std::size_t, std::size_t t) {
    return targeted_fgsm(sub, x, t, cfg);
  });
  return report;
}

}  // namespace polyclass
