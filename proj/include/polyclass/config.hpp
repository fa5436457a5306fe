#pragma once

// Desk-scale defaults for every experiment, and the per-run spec that
// overrides them. Changing a default here changes every runner and the CLI.

#include <polyclass/errors.hpp>
#include <polyclass/models.hpp>

#include <array>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace polyclass {

namespace defaults {

inline constexpr std::uint64_t kSeed = 7;

// MNIST subsets. Caps are totals, split evenly across the selected classes.
inline constexpr std::size_t kTrainCap = 2000;
inline constexpr std::size_t kTestCap = 1000;
inline constexpr std::size_t kPoolCap = 2000;  // black-box substitute pool, disjoint from the train subset
inline constexpr std::size_t kHidden = 128;
inline const std::vector<int> kPairClasses{3, 7};
inline const std::vector<int> kAllClasses{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};

inline const std::vector<double> kEpsilons{0.1, 0.3};
inline const std::vector<int> kBimSteps{10};
inline const std::vector<int> kIterationGrid{1, 5, 10, 25, 50, 100};
inline constexpr double kStabilityTolerance = 0.03;  // |acc(T=100) - acc(T=50)|
inline constexpr double kTargetedEpsilon = 0.3;
inline constexpr double kHistogramEpsilon = 0.3;
inline constexpr double kProbeEpsilon = 100.0;  // unclipped saturation probe

inline const std::vector<double> kLambdas{0.0, 0.5, 1.0};

// Generative example: two uniform classes, 10^4 samples in total.
inline constexpr std::size_t kFig1PerClass = 5000;
inline constexpr double kFig1GridHalfWidth = 20.0;
inline constexpr std::size_t kFig1GridPoints = 801;

// Synthetic 2-D training.
inline constexpr std::size_t kFig2Samples = 200;
inline constexpr double kFig2Gap = 1.0;
inline constexpr double kFig2MoonsNoise = 0.1;
inline constexpr std::size_t kFig2Hidden = 32;
inline constexpr int kFig2NormEarlyEpoch = 5;

inline TrainConfig mnist_training() { return TrainConfig{}; }

inline TrainConfig fig2_training() {
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.grad_clip = 1.0;
  return cfg;
}

// Linear 1-D heads on the shifted uniform example.
inline TrainConfig fig1_linear_training() {
  TrainConfig cfg;
  cfg.epochs = 30;
  return cfg;
}

}  // namespace defaults

inline constexpr std::array<std::string_view, 8> kExperimentIds{"fig1",  "fig2",   "fig3",   "fig4",
                                                                "fig5",  "table1", "table2", "fig6"};

inline bool is_known_experiment(std::string_view id) {
  for (auto k : kExperimentIds)
    if (k == id) return true;
  return false;
}

inline bool needs_mnist(std::string_view id) {
  return id == "fig4" || id == "fig5" || id == "table1" || id == "table2" || id == "fig6";
}

/// Runs whose source artifact covers the full MNIST label set. The others use
/// the 3 vs 7 pair.
inline bool uses_all_digits(std::string_view id) { return id == "fig5" || id == "table2" || id == "fig6"; }

/// One experiment invocation. Unset overrides fall back to `defaults`.
struct ExperimentSpec {
  std::string id;
  std::uint64_t seed = defaults::kSeed;
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "results";
  std::optional<std::vector<double>> epsilons;
  std::optional<std::vector<int>> bim_steps;
  std::optional<std::vector<double>> lambdas;
  std::optional<std::size_t> train_cap;
  std::optional<std::size_t> test_cap;
  std::optional<std::vector<int>> classes;
};

/// Overrides applied on top of the defaults for one experiment.
struct ResolvedSpec {
  std::string id;
  std::uint64_t seed = defaults::kSeed;
  std::filesystem::path data_dir;
  std::vector<double> epsilons;
  std::vector<int> bim_steps;
  std::vector<double> lambdas;
  std::size_t train_cap = defaults::kTrainCap;
  std::size_t test_cap = defaults::kTestCap;
  std::size_t pool_cap = defaults::kPoolCap;
  std::vector<int> classes;
};

/// POLYCLASS_DATA_DIR, else $HOME/data/mnist.
inline std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("POLYCLASS_DATA_DIR"); env && *env) return env;
  if (const char* home = std::getenv("HOME"); home && *home) return std::filesystem::path(home) / "data" / "mnist";
  return "data/mnist";
}

inline ResolvedSpec resolve(const ExperimentSpec& spec) {
  if (!is_known_experiment(spec.id)) {
    std::string known;
    for (auto k : kExperimentIds) known += (known.empty() ? "" : ", ") + std::string(k);
    throw ConfigError("cli", "unknown experiment '" + spec.id + "' (expected one of " + known + ")");
  }
  ResolvedSpec r;
  r.id = spec.id;
  r.seed = spec.seed;
  r.data_dir = spec.data_dir.empty() ? default_data_dir() : spec.data_dir;

  const bool iterations = spec.id == "fig4";
  r.epsilons = spec.epsilons.value_or(defaults::kEpsilons);
  if (spec.id == "fig5" && !spec.epsilons) r.epsilons = {defaults::kHistogramEpsilon};
  if (spec.id == "table2" && !spec.epsilons) r.epsilons = {defaults::kTargetedEpsilon};
  r.bim_steps = spec.bim_steps.value_or(iterations ? defaults::kIterationGrid : defaults::kBimSteps);
  r.lambdas = spec.lambdas.value_or(defaults::kLambdas);
  r.classes = spec.classes.value_or(uses_all_digits(spec.id) ? defaults::kAllClasses : defaults::kPairClasses);
  r.train_cap = spec.train_cap.value_or(defaults::kTrainCap);
  r.test_cap = spec.test_cap.value_or(defaults::kTestCap);

  for (double e : r.epsilons)
    if (!(e >= 0.0)) throw ConfigError("cli", "epsilons must be non-negative");
  for (int t : r.bim_steps)
    if (t < 1) throw ConfigError("cli", "BIM steps must be at least 1");
  for (double l : r.lambdas)
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("cli", "lambdas must lie in [0, 1]");
  if (r.epsilons.empty() || r.bim_steps.empty() || r.lambdas.empty())
    throw ConfigError("cli", "override lists must not be empty");
  if (r.classes.size() < 2) throw ConfigError("cli", "at least two classes are required");
  for (std::size_t i = 0; i < r.classes.size(); ++i) {
    if (r.classes[i] < 0 || r.classes[i] > 9) throw ConfigError("cli", "classes must be MNIST digits 0-9");
    for (std::size_t j = 0; j < i; ++j)
      if (r.classes[i] == r.classes[j]) throw ConfigError("cli", "classes must be distinct");
  }
  if (r.train_cap < r.classes.size() || r.test_cap < r.classes.size())
    throw ConfigError("cli", "caps must allow at least one sample per class");
  if (iterations) {
    bool has50 = false, has100 = false;
    for (int t : r.bim_steps) {
      has50 = has50 || t == 50;
      has100 = has100 || t == 100;
    }
    if (!has50 || !has100) throw ConfigError("cli", "fig4 needs T = 50 and T = 100 in --bim-steps to judge stability");
  }
  return r;
}

}  // namespace polyclass
