#pragma once

// Experiment runners. Each returns the numbers of one run as JSON plus the
// plot-ready CSV tables; write_run() puts them on disk with a manifest.
// Runners check the invariants their outputs rely on and throw
// InvariantError (naming the module) when one breaks. Directional outcomes
// that may legitimately go either way are reported under "claims" instead.

#include <polyclass/attacks.hpp>
#include <polyclass/config.hpp>
#include <polyclass/data.hpp>
#include <polyclass/generative.hpp>
#include <polyclass/metrics.hpp>
#include <polyclass/models.hpp>
#include <polyclass/shift.hpp>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#ifndef POLYCLASS_VERSION
#define POLYCLASS_VERSION "unknown"
#endif

namespace polyclass {

using Json = nlohmann::ordered_json;

struct CsvTable {
  using Cell = std::variant<double, long long, std::string>;
  std::string name;  // file stem
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  void add(std::vector<Cell> row) {
    if (row.size() != columns.size()) throw DimensionError("cli", "CSV row width mismatch in " + name);
    rows.push_back(std::move(row));
  }
};

struct RunArtifacts {
  Json results = Json::object();
  Json claims = Json::object();  // directional statements, true/false
  std::vector<CsvTable> tables;
};

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Short form for labels and keys.
inline std::string tag(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

inline std::string csv_cell(const CsvTable::Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
  if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
  return std::get<std::string>(c);
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline Json to_json(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(x);
  return a;
}

// Runs f(i) for i in [0, n) on all hardware threads. Each index writes only its
// own slot, so the outcome is independent of scheduling.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& f) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) f(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

template <typename Perturb>
double parallel_accuracy(const NeuralModel& victim, const Dataset& data, Perturb&& perturb) {
  if (data.size() == 0) return 0.0;
  std::vector<char> ok(data.size(), 0);
  parallel_for(data.size(), [&](std::size_t i) {
    const auto y = static_cast<std::size_t>(data.labels[i]);
    ok[i] = predict(victim, perturb(data.sample(i), y)) == static_cast<int>(y);
  });
  std::size_t correct = 0;
  for (char c : ok) correct += c;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename Perturb>
Dataset parallel_perturb(const Dataset& data, Perturb&& perturb) {
  Dataset out = data;
  parallel_for(data.size(), [&](std::size_t i) {
    const Vector adv = perturb(data.sample(i), static_cast<std::size_t>(data.labels[i]));
    std::copy(adv.begin(), adv.end(), out.features.row(i).begin());
  });
  return out;
}

inline void check_posterior(std::span<const double> p, const char* module) {
  double s = 0.0;
  for (double v : p) {
    ensure(v >= 0.0 && v <= 1.0, module, "posterior entry outside [0, 1]");
    s += v;
  }
  ensure(std::abs(s - 1.0) <= 1e-9, module, "posterior does not sum to 1");
}

inline const char* head_name(Head h) { return h == Head::softmax ? "softmax" : "softrmax"; }

inline constexpr std::array<Head, 2> kHeads{Head::softmax, Head::softrmax};

}  // namespace detail

inline Json config_json(const ResolvedSpec& r) {
  Json c;
  c["experiment"] = r.id;
  c["seed"] = r.seed;
  c["epsilons"] = detail::to_json(r.epsilons);
  c["bim_steps"] = r.bim_steps;
  c["lambdas"] = detail::to_json(r.lambdas);
  if (needs_mnist(r.id)) {
    c["classes"] = r.classes;
    c["train_cap"] = r.train_cap;
    c["test_cap"] = r.test_cap;
    c["pool_cap"] = r.pool_cap;
    c["hidden"] = defaults::kHidden;
    const TrainConfig t = defaults::mnist_training();
    c["training"] = {{"learning_rate", t.learning_rate}, {"momentum", t.momentum},
                     {"batch_size", t.batch_size},       {"epochs", t.epochs}};
  }
  return c;
}

inline std::string config_hash(const ResolvedSpec& r) {
  return "fnv1a64:" + detail::hex64(detail::fnv1a64(config_json(r).dump()));
}

// ---------------------------------------------------------------------------
// fig1: generative posteriors and linear heads in the tail
// ---------------------------------------------------------------------------

inline RunArtifacts run_fig1(const ResolvedSpec& r) {
  RunArtifacts out;
  const std::vector<std::pair<double, double>> ranges{{-2.0, -1.0}, {1.0, 2.0}};
  const Dataset data = make_uniform_1d(ranges, defaults::kFig1PerClass, r.seed);
  const auto gauss = fit_generative(data, {Family::gaussian, true});
  const auto tlda = fit_generative(data, {Family::student_t, true, kDefaultNu});

  CsvTable post{"fig1_posteriors", {"x", "gaussian_p0", "t_p0"}, {}};
  const double half = defaults::kFig1GridHalfWidth;
  for (std::size_t i = 0; i < defaults::kFig1GridPoints; ++i) {
    const double x = -half + 2.0 * half * static_cast<double>(i) / static_cast<double>(defaults::kFig1GridPoints - 1);
    const auto pg = posterior(gauss, x);
    const auto pt = posterior(tlda, x);
    detail::check_posterior(pg, "generative");
    detail::check_posterior(pt, "generative");
    post.add({x, pg[0], pt[0]});
  }
  out.tables.push_back(std::move(post));

  const auto g = [](const GenerativeClassifier& c, std::size_t i) { return std::get<GaussianParams>(c.class_models[i]); };
  const auto t = [](const GenerativeClassifier& c, std::size_t i) { return std::get<StudentTParams>(c.class_models[i]); };
  out.results["generative"] = {
      {"samples", data.size()},
      {"gaussian", {{"mu", {g(gauss, 0).mu, g(gauss, 1).mu}}, {"sigma2", g(gauss, 0).sigma2}}},
      {"student_t", {{"mu", {t(tlda, 0).mu, t(tlda, 1).mu}}, {"scale", t(tlda, 0).scale}, {"nu", t(tlda, 0).nu}}},
      {"gaussian_p0_at_minus10", posterior(gauss, -10.0)[0]},
      {"gaussian_p0_at_plus10", posterior(gauss, 10.0)[0]},
      {"t_p0_at_minus100", posterior(tlda, -100.0)[0]},
      {"t_p0_at_plus100", posterior(tlda, 100.0)[0]},
  };

  // Linear heads on the shifted example; the class-0 range touches the origin.
  const std::vector<std::pair<double, double>> shifted{{-1.0, 0.0}, {1.0, 2.0}};
  const Dataset lin = make_uniform_1d(shifted, defaults::kFig1PerClass, Rng(r.seed).split(1).next_u64());
  TrainConfig cfg = defaults::fig1_linear_training();
  cfg.seed = r.seed;
  CsvTable tail{"fig1_linear", {"x", "softmax_p0", "softrmax_p0"}, {}};
  std::vector<double> xs;
  for (double x = -20.0; x <= 20.0 + 1e-9; x += 0.25) xs.push_back(x);
  for (double m : {1e2, 1e3, 1e4}) {
    xs.push_back(-m);
    xs.push_back(m);
  }
  std::sort(xs.begin(), xs.end());
  std::array<NeuralModel, 2> models;
  Json heads = Json::object();
  for (std::size_t h = 0; h < 2; ++h) {
    const Head head = detail::kHeads[h];
    models[h] = train(make_model({1, 2}, head, InitScheme::barycenter, r.seed), lin, cfg).model;
    const double at_neg = forward(models[h], Vector{-1e4}).posterior[0];
    const double at_pos = forward(models[h], Vector{1e4}).posterior[0];
    heads[detail::head_name(head)] = {{"train_accuracy", accuracy(models[h], lin)},
                                      {"p0_at_minus1e4", at_neg},
                                      {"p0_at_plus1e4", at_pos}};
  }
  for (double x : xs) {
    const auto ps = forward(models[0], Vector{x}).posterior;
    const auto pr = forward(models[1], Vector{x}).posterior;
    detail::check_posterior(ps, "activations");
    detail::check_posterior(pr, "activations");
    tail.add({x, ps[0], pr[0]});
  }
  out.tables.push_back(std::move(tail));
  out.results["linear"] = heads;

  const auto& gr = out.results["generative"];
  out.claims["gaussian_saturates"] = gr["gaussian_p0_at_minus10"].get<double>() >= 0.999 &&
                                     gr["gaussian_p0_at_plus10"].get<double>() <= 0.001;
  out.claims["t_lda_conservative"] = std::abs(gr["t_p0_at_minus100"].get<double>() - 0.5) <= 0.05 &&
                                     std::abs(gr["t_p0_at_plus100"].get<double>() - 0.5) <= 0.05;
  out.claims["softrmax_linear_conservative"] =
      std::abs(heads["softrmax"]["p0_at_minus1e4"].get<double>() - 0.5) <= 0.05 &&
      std::abs(heads["softrmax"]["p0_at_plus1e4"].get<double>() - 0.5) <= 0.05;
  return out;
}

// ---------------------------------------------------------------------------
// fig2: margins and final-layer norm growth on 2-D data
// ---------------------------------------------------------------------------

inline RunArtifacts run_fig2(const ResolvedSpec& r) {
  RunArtifacts out;
  TrainConfig cfg = defaults::fig2_training();
  cfg.seed = r.seed;
  const std::size_t h = defaults::kFig2Hidden;
  const int early = defaults::kFig2NormEarlyEpoch;

  CsvTable norms{"fig2_training", {"dataset", "head", "epoch", "loss", "final_layer_norm"}, {}};
  CsvTable grid{"fig2_grid", {"dataset", "head", "x0", "x1", "p0"}, {}};
  CsvTable points{"fig2_data", {"dataset", "x0", "x1", "label"}, {}};

  const std::array<Dataset, 2> sets{make_linear_2d(defaults::kFig2Samples, defaults::kFig2Gap, r.seed),
                                    make_moons(defaults::kFig2Samples, defaults::kFig2MoonsNoise, r.seed)};
  const std::array<std::string, 2> names{"linear", "moons"};
  for (std::size_t s = 0; s < 2; ++s) {
    const Dataset& d = sets[s];
    double lo0 = 1e300, hi0 = -1e300, lo1 = 1e300, hi1 = -1e300;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const auto x = d.sample(i);
      points.add({names[s], x[0], x[1], static_cast<long long>(d.labels[i])});
      lo0 = std::min(lo0, x[0]), hi0 = std::max(hi0, x[0]);
      lo1 = std::min(lo1, x[1]), hi1 = std::max(hi1, x[1]);
    }
    const double pad0 = 0.25 * (hi0 - lo0), pad1 = 0.25 * (hi1 - lo1);
    Json per_head = Json::object();
    for (Head head : detail::kHeads) {
      const auto run = train(make_model({2, h, h, 2}, head, InitScheme::barycenter, r.seed), d, cfg);
      for (std::size_t e = 0; e < run.epoch_loss.size(); ++e)
        norms.add({names[s], detail::head_name(head), static_cast<long long>(e + 1), run.epoch_loss[e],
                   run.final_layer_norm[e]});
      const auto margin = min_geometric_margin(run.model, d);
      const double n_early = run.final_layer_norm[static_cast<std::size_t>(early - 1)];
      const double n_last = run.final_layer_norm.back();
      per_head[detail::head_name(head)] = {{"train_accuracy", accuracy(run.model, d)},
                                           {"min_geometric_margin", margin.min_margin},
                                           {"misclassified", margin.misclassified},
                                           {"norm_epoch_early", n_early},
                                           {"norm_epoch_final", n_last},
                                           {"norm_growth", n_last / n_early}};
      constexpr std::size_t cells = 61;
      for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t j = 0; j < cells; ++j) {
          const double x0 = lo0 - pad0 + (hi0 - lo0 + 2 * pad0) * static_cast<double>(i) / (cells - 1);
          const double x1 = lo1 - pad1 + (hi1 - lo1 + 2 * pad1) * static_cast<double>(j) / (cells - 1);
          const auto p = forward(run.model, Vector{x0, x1}).posterior;
          detail::check_posterior(p, "models");
          grid.add({names[s], detail::head_name(head), x0, x1, p[0]});
        }
    }
    per_head["norm_epochs"] = {early, cfg.epochs};
    out.results[names[s]] = per_head;
  }
  out.tables.push_back(std::move(norms));
  out.tables.push_back(std::move(grid));
  out.tables.push_back(std::move(points));

  const auto& lin = out.results["linear"];
  out.claims["softrmax_margin_exceeds_softmax"] =
      lin["softrmax"]["min_geometric_margin"].get<double>() > lin["softmax"]["min_geometric_margin"].get<double>();
  out.claims["softmax_norm_grows_faster"] =
      lin["softmax"]["norm_growth"].get<double>() > lin["softrmax"]["norm_growth"].get<double>();
  return out;
}

// ---------------------------------------------------------------------------
// fig3: covariate-shift weighting with outliers
// ---------------------------------------------------------------------------

inline RunArtifacts run_fig3(const ResolvedSpec& r) {
  RunArtifacts out;
  const ShiftSetup setup;
  const double probe = 0.5 * (setup.outlier_lo + setup.outlier_hi);
  const StudentTParams t_src{setup.source.mu, std::sqrt(setup.source.sigma2), setup.nu};
  const StudentTParams t_tgt{setup.target.mu, std::sqrt(setup.target.sigma2), setup.nu};
  const double g_probe = importance_weight({setup.source, setup.target, 1.0}, probe).value;
  const double g_mode = importance_weight({setup.source, setup.target, 1.0}, setup.source.mu).value;
  const double t_probe = importance_weight({t_src, t_tgt, 1.0}, probe).value;
  const double t_mode = importance_weight({t_src, t_tgt, 1.0}, setup.source.mu).value;
  out.results["closed_form"] = {{"x", probe},
                                {"gaussian_weight", g_probe},
                                {"t_weight", t_probe},
                                {"gaussian_ratio_to_source_mode", g_probe / g_mode},
                                {"t_ratio_to_source_mode", t_probe / t_mode}};

  CsvTable runs{"fig3_runs",
                {"lambda", "family", "outliers", "slope", "intercept", "target_error", "median_source_weight",
                 "max_outlier_weight_ratio"},
                {}};
  CsvTable samples{"fig3_samples", {"x", "y", "outlier", "gaussian_weight", "t_weight"}, {}};
  Json all = Json::array();
  for (bool with : {false, true}) {
    const auto ex = run_shift_experiment(r.seed, r.lambdas, with, setup);
    for (const auto& run : ex.runs) {
      double max_ratio = 0.0;
      std::size_t w = 0;
      for (const auto& s : ex.samples) {
        if (!with && s.outlier) continue;
        if (run.lambda == 0.0) ensure(run.weights[w].value == 1.0, "shift", "lambda = 0 weight differs from 1");
        if (s.outlier) max_ratio = std::max(max_ratio, run.weights[w].value / run.median_source_weight);
        ++w;
      }
      ensure(w == run.weights.size(), "shift", "weights misaligned with samples");
      runs.add({run.lambda, to_string(run.family), static_cast<long long>(with), run.fit.slope, run.fit.intercept,
                run.target_error, run.median_source_weight, max_ratio});
      all.push_back({{"lambda", run.lambda},
                     {"family", to_string(run.family)},
                     {"outliers", with},
                     {"slope", run.fit.slope},
                     {"intercept", run.fit.intercept},
                     {"target_error", run.target_error},
                     {"median_source_weight", run.median_source_weight},
                     {"max_outlier_weight_ratio", max_ratio}});
    }
    if (with) {
      const ShiftWeighting gw{ex.gaussian_source, ex.gaussian_target, 1.0};
      const ShiftWeighting tw{ex.t_source, ex.t_target, 1.0};
      for (const auto& s : ex.samples)
        samples.add({s.x, s.y, static_cast<long long>(s.outlier), importance_weight(gw, s.x).value,
                     importance_weight(tw, s.x).value});
      const auto gs = std::get<GaussianParams>(ex.gaussian_source), gt = std::get<GaussianParams>(ex.gaussian_target);
      const auto ts = std::get<StudentTParams>(ex.t_source), tt = std::get<StudentTParams>(ex.t_target);
      out.results["fitted"] = {
          {"gaussian_source", {{"mu", gs.mu}, {"sigma2", gs.sigma2}}},
          {"gaussian_target", {{"mu", gt.mu}, {"sigma2", gt.sigma2}}},
          {"t_source", {{"mu", ts.mu}, {"scale", ts.scale}}},
          {"t_target", {{"mu", tt.mu}, {"scale", tt.scale}}},
          {"gaussian_weight_at_probe", importance_weight(gw, probe).value},
          {"t_weight_at_probe", importance_weight(tw, probe).value},
      };
    }
  }
  out.results["runs"] = all;
  out.tables.push_back(std::move(runs));
  out.tables.push_back(std::move(samples));

  const auto find = [&](const char* fam, bool with, double lambda) -> const Json* {
    for (const auto& j : out.results["runs"])
      if (j["family"] == fam && j["outliers"] == with && j["lambda"].get<double>() == lambda) return &j;
    return nullptr;
  };
  out.claims["gaussian_weight_blows_up"] = g_probe > 1e3;
  out.claims["t_ratio_100x_smaller"] = (g_probe / g_mode) / (t_probe / t_mode) > 100.0;
  const Json* g0 = find("gaussian", true, 0.0);
  const Json* g1 = find("gaussian", true, 1.0);
  const Json* t0 = find("student_t", true, 0.0);
  const Json* t1 = find("student_t", true, 1.0);
  if (g0 && g1) out.claims["gaussian_overfits_outliers"] = (*g1)["target_error"].get<double>() > (*g0)["target_error"].get<double>();
  if (t0 && t1) {
    out.claims["t_outlier_weights_bounded"] = (*t1)["max_outlier_weight_ratio"].get<double>() < 10.0;
    out.claims["t_error_within_2x"] = (*t1)["target_error"].get<double>() <= 2.0 * (*t0)["target_error"].get<double>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// MNIST context shared by fig4, fig5, fig6, table1 and table2
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 4> kMnistFiles{"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                                       "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};

inline void require_mnist(const std::filesystem::path& dir) {
  for (const char* f : kMnistFiles) {
    const auto p = dir / f;
    if (!std::filesystem::exists(p)) {
      throw MissingDataError("data", "expected MNIST file " + p.string() +
                                         " (set --data-dir or POLYCLASS_DATA_DIR, or run scripts/fetch_mnist.sh)");
    }
  }
}

struct MnistContext {
  Dataset train, pool, test;
  std::array<NeuralModel, 2> models;  // softmax, softrmax
  std::array<std::vector<double>, 2> loss;
  std::array<double, 2> clean_accuracy{};
  Json inputs = Json::array();
};

/// Per class, a seeded shuffle of the training images; the first share forms
/// the train subset and the next share the black-box pool.
inline MnistContext prepare_mnist(const ResolvedSpec& r) {
  require_mnist(r.data_dir);
  MnistContext ctx;
  const std::size_t k = r.classes.size();
  const Dataset full = read_idx(r.data_dir / kMnistFiles[0], r.data_dir / kMnistFiles[1], {r.classes, {}, r.seed});
  Rng rng(r.seed);
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < full.size(); ++i) by_class[static_cast<std::size_t>(full.labels[i])].push_back(i);
  const std::size_t train_pc = r.train_cap / k, pool_pc = r.pool_cap / k;
  std::vector<std::size_t> train_idx, pool_idx;
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < train_pc) throw ConfigError("data", "train cap exceeds available samples of a class");
    rng.split(c).shuffle(idx);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(train_pc));
    const std::size_t pool_end = std::min(idx.size(), train_pc + pool_pc);
    pool_idx.insert(pool_idx.end(), idx.begin() + static_cast<std::ptrdiff_t>(train_pc),
                    idx.begin() + static_cast<std::ptrdiff_t>(pool_end));
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(pool_idx.begin(), pool_idx.end());
  ctx.train = subset(full, train_idx, full.name + "/train");
  ctx.pool = subset(full, pool_idx, full.name + "/pool");
  ctx.test = read_idx(r.data_dir / kMnistFiles[2], r.data_dir / kMnistFiles[3],
                      {r.classes, r.test_cap / k, Rng(r.seed).split(1000).next_u64()});
  ctx.test.name += "/test";

  for (const char* f : kMnistFiles) {
    const auto bytes = detail::read_file(r.data_dir / f);
    ctx.inputs.push_back({{"file", f},
                          {"bytes", bytes.size()},
                          {"fnv1a64", detail::hex64(detail::fnv1a64({reinterpret_cast<const char*>(bytes.data()),
                                                                     bytes.size()}))}});
  }

  TrainConfig cfg = defaults::mnist_training();
  cfg.seed = r.seed;
  const std::vector<std::size_t> widths{ctx.train.dim(), defaults::kHidden, k};
  for (std::size_t h = 0; h < 2; ++h) {
    auto run = train(make_model(widths, detail::kHeads[h], InitScheme::barycenter, r.seed), ctx.train, cfg);
    ctx.models[h] = std::move(run.model);
    ctx.loss[h] = std::move(run.epoch_loss);
    ctx.clean_accuracy[h] = detail::parallel_accuracy(ctx.models[h], ctx.test,
                                                      [](std::span<const double> x, std::size_t) {
                                                        return Vector(x.begin(), x.end());
                                                      });
  }
  return ctx;
}

inline Json describe(const MnistContext& ctx) {
  Json j;
  j["train"] = {{"name", ctx.train.name}, {"size", ctx.train.size()}};
  j["pool"] = {{"name", ctx.pool.name}, {"size", ctx.pool.size()}};
  j["test"] = {{"name", ctx.test.name}, {"size", ctx.test.size()}};
  for (std::size_t h = 0; h < 2; ++h) {
    j["models"][detail::head_name(detail::kHeads[h])] = {{"clean_accuracy", ctx.clean_accuracy[h]},
                                                         {"epoch_loss", detail::to_json(ctx.loss[h])}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// table1: clean, FGSM and BIM accuracy
// ---------------------------------------------------------------------------

inline RunArtifacts run_table1(const ResolvedSpec& r, const MnistContext& ctx) {
  RunArtifacts out;
  out.results["data"] = describe(ctx);
  CsvTable table{"table1", {"head", "attack", "epsilon", "steps", "accuracy"}, {}};
  Json rows = Json::array();
  std::array<std::map<std::string, double>, 2> acc;
  for (std::size_t h = 0; h < 2; ++h) {
    const auto& m = ctx.models[h];
    const char* name = detail::head_name(detail::kHeads[h]);
    const auto add = [&](const std::string& attack, double eps, int steps, double a) {
      table.add({name, attack, eps, static_cast<long long>(steps), a});
      rows.push_back({{"head", name}, {"attack", attack}, {"epsilon", eps}, {"steps", steps}, {"accuracy", a}});
      acc[h][attack + "@" + detail::tag(eps) + "x" + std::to_string(steps)] = a;
    };
    add("clean", 0.0, 0, ctx.clean_accuracy[h]);
    for (double eps : r.epsilons) {
      const AttackConfig one{eps, 1, ClipRange{}};
      add("fgsm", eps, 1,
          detail::parallel_accuracy(m, ctx.test, [&](std::span<const double> x, std::size_t y) { return fgsm(m, x, y, one); }));
      for (int t : r.bim_steps) {
        const AttackConfig it{eps, t, ClipRange{}};
        add("bim", eps, t,
            detail::parallel_accuracy(m, ctx.test, [&](std::span<const double> x, std::size_t y) { return bim(m, x, y, it); }));
      }
    }
  }
  out.results["rows"] = rows;
  out.tables.push_back(std::move(table));

  out.claims["clean_accuracy_at_least_97"] = ctx.clean_accuracy[0] >= 0.97 && ctx.clean_accuracy[1] >= 0.97;
  for (double eps : r.epsilons) {
    const std::string e = detail::tag(eps);
    const std::string f = "fgsm@" + e + "x1";
    out.claims["fgsm_gap_20pp_eps_" + e] = acc[1][f] - acc[0][f] >= 0.20;
    for (int t : r.bim_steps) {
      const std::string b = "bim@" + e + "x" + std::to_string(t);
      out.claims["bim_gap_20pp_eps_" + e + "_T" + std::to_string(t)] = acc[1][b] - acc[0][b] >= 0.20;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// fig4: BIM accuracy against the number of iterations
// ---------------------------------------------------------------------------

inline RunArtifacts run_fig4(const ResolvedSpec& r, const MnistContext& ctx) {
  RunArtifacts out;
  out.results["data"] = describe(ctx);
  CsvTable table{"fig4", {"head", "epsilon", "steps", "accuracy"}, {}};
  Json curves = Json::array();
  std::vector<int> steps = r.bim_steps;
  std::sort(steps.begin(), steps.end());
  bool all_stable = true, all_ahead = true;
  for (double eps : r.epsilons) {
    std::array<std::map<int, double>, 2> acc;
    for (std::size_t h = 0; h < 2; ++h) {
      const auto& m = ctx.models[h];
      for (int t : steps) {
        const AttackConfig cfg{eps, t, ClipRange{}};
        acc[h][t] = detail::parallel_accuracy(
            m, ctx.test, [&](std::span<const double> x, std::size_t y) { return bim(m, x, y, cfg); });
        table.add({detail::head_name(detail::kHeads[h]), eps, static_cast<long long>(t), acc[h][t]});
      }
    }
    Json entry{{"epsilon", eps}};
    for (std::size_t h = 0; h < 2; ++h) {
      const double drift = std::abs(acc[h][100] - acc[h][50]);
      const bool stable = drift <= defaults::kStabilityTolerance;
      all_stable = all_stable && stable;
      Json curve = Json::array();
      for (int t : steps) curve.push_back({{"steps", t}, {"accuracy", acc[h][t]}});
      entry[detail::head_name(detail::kHeads[h])] = {
          {"curve", curve}, {"stabilized_accuracy", acc[h][100]}, {"drift_50_100", drift}, {"stable", stable}};
    }
    all_ahead = all_ahead && acc[1][100] > acc[0][100];
    curves.push_back(entry);
  }
  out.results["curves"] = curves;
  out.results["stability_tolerance"] = defaults::kStabilityTolerance;
  out.tables.push_back(std::move(table));
  out.claims["bim_stabilizes"] = all_stable;
  out.claims["softrmax_stabilized_above_softmax"] = all_ahead;
  return out;
}

// ---------------------------------------------------------------------------
// fig5: posteriors of misclassified samples
// ---------------------------------------------------------------------------

inline RunArtifacts run_fig5(const ResolvedSpec& r, const MnistContext& ctx) {
  RunArtifacts out;
  out.results["data"] = describe(ctx);
  const double k = static_cast<double>(r.classes.size());
  CsvTable table{"fig5", {"head", "setting", "epsilon", "bin_lo", "bin_hi", "count"}, {}};
  Json settings = Json::array();
  struct Setting {
    std::string name;
    double eps;
    std::optional<ClipRange> clip;
  };
  std::vector<Setting> list;
  for (double eps : r.epsilons) list.push_back({"fgsm", eps, ClipRange{}});
  list.push_back({"fgsm_unclipped_probe", defaults::kProbeEpsilon, std::nullopt});
  for (const auto& s : list) {
    Json entry{{"setting", s.name}, {"epsilon", s.eps}};
    for (std::size_t h = 0; h < 2; ++h) {
      const auto& m = ctx.models[h];
      const AttackConfig cfg{s.eps, 1, s.clip};
      const Dataset attacked =
          detail::parallel_perturb(ctx.test, [&](std::span<const double> x, std::size_t y) { return fgsm(m, x, y, cfg); });
      const auto hist = misclassified_posterior_histogram(m, attacked);
      std::size_t mass = 0;
      for (auto c : hist.counts) mass += c;
      ensure(mass == hist.misclassified, "metrics", "histogram mass differs from misclassified count");
      const char* name = detail::head_name(detail::kHeads[h]);
      for (std::size_t b = 0; b < hist.bins(); ++b)
        table.add({name, s.name, s.eps, hist.bin_lo(b), hist.bin_hi(b), static_cast<long long>(hist.counts[b])});
      const double mode_center = hist.misclassified ? 0.5 * (hist.bin_lo(hist.mode_bin()) + hist.bin_hi(hist.mode_bin()))
                                                    : std::nan("");
      const double quartile = 1.0 / k + 0.25 * (1.0 - 1.0 / k);
      entry[name] = {{"misclassified", hist.misclassified},
                     {"total", hist.total},
                     {"mean_posterior", hist.mean_posterior},
                     {"mode_bin_center", mode_center},
                     {"mode_in_lowest_quartile", hist.misclassified > 0 && mode_center <= quartile},
                     {"counts", hist.counts}};
    }
    settings.push_back(entry);
  }
  out.results["classes"] = r.classes;
  out.results["histograms"] = settings;
  out.tables.push_back(std::move(table));

  for (const auto& e : out.results["histograms"]) {
    if (e["setting"] != "fgsm") continue;
    const std::string tag = "eps_" + detail::tag(e["epsilon"].get<double>());
    const auto mean = [](const Json& j) { return j["mean_posterior"].is_number() ? j["mean_posterior"].get<double>() : std::nan(""); };
    out.claims["softmax_confident_" + tag] = mean(e["softmax"]) >= 0.9;
    out.claims["softrmax_unconfident_" + tag] = mean(e["softrmax"]) <= 0.7;
    out.claims["softrmax_mode_lowest_quartile_" + tag] = e["softrmax"]["mode_in_lowest_quartile"].get<bool>();
  }
  return out;
}

// ---------------------------------------------------------------------------
// table2: targeted white-box, black-box substitute, and average-sample attacks
// ---------------------------------------------------------------------------

inline RunArtifacts run_table2(const ResolvedSpec& r, const MnistContext& ctx) {
  RunArtifacts out;
  out.results["data"] = describe(ctx);
  const ClassAverages avgs = class_averages(ctx.train);
  CsvTable table{"table2", {"head", "attack", "epsilon", "mean_over_targets", "worst_target", "all_targets_survived"}, {}};
  CsvTable per_class{"table2_per_class", {"head", "attack", "epsilon", "class", "accuracy"}, {}};
  Json rows = Json::array();
  bool bb_weaker = true, avg_worst = true, softrmax_ahead = true;
  for (double eps : r.epsilons) {
    const AttackConfig cfg{eps, 1, ClipRange{}};
    std::array<std::map<std::string, double>, 2> acc;
    for (std::size_t h = 0; h < 2; ++h) {
      const auto& m = ctx.models[h];
      const char* name = detail::head_name(detail::kHeads[h]);
      SubstituteConfig sub;
      sub.hidden = defaults::kHidden;
      sub.train = defaults::mnist_training();
      sub.train.seed = Rng(r.seed).split(2000 + h).next_u64();
      const auto bb = blackbox_substitute_attack(m, ctx.pool.features, ctx.test, cfg, sub);
      const std::vector<std::pair<std::string, TargetedEvaluation>> evals{
          {"whitebox_targeted", evaluate_targeted(m, ctx.test, [&](std::span<const double> x, std::size_t, std::size_t t) {
             return targeted_fgsm(m, x, t, cfg);
           })},
          {"blackbox_substitute", bb.evaluation},
          {"average_sample", evaluate_targeted(m, ctx.test, [&](std::span<const double> x, std::size_t y, std::size_t t) {
             return average_sample_attack(x, y, t, avgs, cfg);
           })},
      };
      for (const auto& [attack, ev] : evals) {
        table.add({name, attack, eps, ev.mean_over_targets, ev.worst_target, ev.all_targets_survived});
        for (std::size_t c = 0; c < ev.per_class.size(); ++c)
          per_class.add({name, attack, eps, static_cast<long long>(r.classes[c]), ev.per_class[c]});
        Json row{{"head", name},
                 {"attack", attack},
                 {"epsilon", eps},
                 {"mean_over_targets", ev.mean_over_targets},
                 {"worst_target", ev.worst_target},
                 {"all_targets_survived", ev.all_targets_survived},
                 {"per_target", detail::to_json(ev.per_target)},
                 {"per_class", detail::to_json(ev.per_class)}};
        if (attack == "blackbox_substitute") {
          row["substitute_agreement"] = bb.agreement;
          row["substitute_agreement_ok"] = bb.agreement_ok;
        }
        rows.push_back(row);
        acc[h][attack] = ev.mean_over_targets;
      }
    }
    const auto worst = [](const std::map<std::string, double>& a) {
      double w = 1.0;
      for (const auto& [_, v] : a) w = std::min(w, v);
      return w;
    };
    bb_weaker = bb_weaker && acc[0]["blackbox_substitute"] > acc[0]["whitebox_targeted"];
    avg_worst = avg_worst && acc[1]["average_sample"] <= acc[1]["whitebox_targeted"];
    softrmax_ahead = softrmax_ahead && worst(acc[1]) > worst(acc[0]);
  }
  out.results["rows"] = rows;
  out.tables.push_back(std::move(table));
  out.tables.push_back(std::move(per_class));
  out.claims["blackbox_weaker_than_whitebox_softmax"] = bb_weaker;
  out.claims["average_sample_worst_for_softrmax"] = avg_worst;
  out.claims["softrmax_worst_attack_above_softmax"] = softrmax_ahead;
  return out;
}

// ---------------------------------------------------------------------------
// fig6: magnitude-margin ratio
// ---------------------------------------------------------------------------

inline RunArtifacts run_fig6(const ResolvedSpec&, const MnistContext& ctx) {
  RunArtifacts out;
  out.results["data"] = describe(ctx);
  CsvTable table{"fig6", {"head", "sample_id", "z_y", "runner_up", "margin", "magnitude", "ratio"}, {}};
  std::array<double, 2> medians{};
  for (std::size_t h = 0; h < 2; ++h) {
    const auto s = ratio_summary(ctx.models[h], ctx.test);
    const char* name = detail::head_name(detail::kHeads[h]);
    for (const auto& rec : s.records) {
      ensure(rec.margin > 0.0 && rec.ratio >= 0.0, "metrics", "ratio record violates M_z > 0, R >= 0");
      table.add({name, static_cast<long long>(rec.sample_id), rec.z_y, rec.runner_up, rec.margin, rec.magnitude,
                 rec.ratio});
    }
    medians[h] = s.median_ratio;
    out.results[name] = {{"median_ratio", s.median_ratio}, {"records", s.records.size()}, {"skipped", s.skipped}};
  }
  out.tables.push_back(std::move(table));
  out.claims["softrmax_median_ratio_below_softmax"] = medians[1] < medians[0];
  return out;
}

// ---------------------------------------------------------------------------
// Dispatch and output
// ---------------------------------------------------------------------------

struct CompletedRun {
  ResolvedSpec spec;
  RunArtifacts artifacts;
  Json inputs = Json::array();
};

inline CompletedRun run_experiment(const ResolvedSpec& r) {
  CompletedRun done{r, {}, Json::array()};
  if (r.id == "fig1") done.artifacts = run_fig1(r);
  else if (r.id == "fig2") done.artifacts = run_fig2(r);
  else if (r.id == "fig3") done.artifacts = run_fig3(r);
  else {
    const MnistContext ctx = prepare_mnist(r);
    done.inputs = ctx.inputs;
    if (r.id == "table1") done.artifacts = run_table1(r, ctx);
    else if (r.id == "fig4") done.artifacts = run_fig4(r, ctx);
    else if (r.id == "fig5") done.artifacts = run_fig5(r, ctx);
    else if (r.id == "table2") done.artifacts = run_table2(r, ctx);
    else if (r.id == "fig6") done.artifacts = run_fig6(r, ctx);
    else throw ConfigError("cli", "unknown experiment '" + r.id + "'");
  }
  return done;
}

inline std::string to_csv(const CsvTable& t) {
  std::string s;
  for (std::size_t i = 0; i < t.columns.size(); ++i) s += (i ? "," : "") + t.columns[i];
  s += '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) s += (i ? "," : "") + detail::csv_cell(row[i]);
    s += '\n';
  }
  return s;
}

inline std::string compiler_version() {
#if defined(__clang__)
  return std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  return std::string("gcc ") + __VERSION__;
#else
  return "unknown";
#endif
}

/// Writes results.json, one CSV per table, and manifest.json into `dir`.
/// Nothing written depends on wall-clock time or the output location.
inline std::vector<std::filesystem::path> write_run(const CompletedRun& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::pair<std::string, std::string>> files;

  Json results;
  results["experiment"] = run.spec.id;
  results["seed"] = run.spec.seed;
  results["config"] = config_json(run.spec);
  results["config_hash"] = config_hash(run.spec);
  results["results"] = run.artifacts.results;
  results["claims"] = run.artifacts.claims;
  Json csvs = Json::array();
  for (const auto& t : run.artifacts.tables) csvs.push_back(t.name + ".csv");
  results["tables"] = csvs;
  files.emplace_back("results.json", results.dump(2) + "\n");
  for (const auto& t : run.artifacts.tables) files.emplace_back(t.name + ".csv", to_csv(t));

  Json manifest;
  manifest["experiment"] = run.spec.id;
  manifest["seed"] = run.spec.seed;
  manifest["config_hash"] = config_hash(run.spec);
  manifest["versions"] = {{"polyclass", POLYCLASS_VERSION},
                          {"compiler", compiler_version()},
                          {"cxx_standard", static_cast<long long>(__cplusplus)},
                          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
  manifest["inputs"] = run.inputs;
  Json outputs = Json::array();
  for (const auto& [name, body] : files)
    outputs.push_back({{"file", name}, {"bytes", body.size()}, {"fnv1a64", detail::hex64(detail::fnv1a64(body))}});
  manifest["outputs"] = outputs;
  files.emplace_back("manifest.json", manifest.dump(2) + "\n");

  std::vector<std::filesystem::path> written;
  for (const auto& [name, body] : files) {
    const auto p = dir / name;
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw ConfigError("cli", "cannot write " + p.string());
    f << body;
    written.push_back(p);
  }
  return written;
}

}  // namespace polyclass
