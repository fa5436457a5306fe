// Acceptance suite: one PASS/FAIL line per criterion.
//
// MNIST criteria read the IDX files from POLYCLASS_DATA_DIR, else the
// directory configured at build time. Exits 1 if any criterion fails.

#include <polyclass/polyclass.hpp>

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>

using namespace polyclass;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const std::function<Outcome()>& check, double budget_s = 0.0) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (budget_s > 0.0 && secs > budget_s) {
    o.pass = false;
    o.detail += "; runtime " + std::to_string(secs) + " s over the " + std::to_string(budget_s) + " s budget";
  }
  failures += !o.pass;
  char timing[32];
  std::snprintf(timing, sizeof timing, "%.1fs", secs);
  std::cout << "CRITERION " << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << title << "  [" << timing << "]  "
            << o.detail << std::endl;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double get(const Json& j, std::initializer_list<const char*> path) {
  const Json* cur = &j;
  for (const char* p : path) cur = &(*cur)[p];
  return cur->is_number() ? cur->get<double>() : std::nan("");
}

bool claim(const RunArtifacts& a, const std::string& name) {
  return a.claims.contains(name) && a.claims[name].get<bool>();
}

ResolvedSpec spec_for(const std::string& id) {
  ExperimentSpec s;
  s.id = id;
  s.data_dir = default_data_dir();
  if (!std::getenv("POLYCLASS_DATA_DIR")) s.data_dir = POLYCLASS_MNIST_DIR;
  return resolve(s);
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto a = run_fig1(spec_for("fig1"));
  const auto& g = a.results["generative"];
  const auto& l = a.results["linear"]["softrmax"];
  const bool ok = claim(a, "gaussian_saturates") && claim(a, "t_lda_conservative") &&
                  claim(a, "softrmax_linear_conservative");
  return {ok, "gauss p0(-10)=" + num(get(g, {"gaussian_p0_at_minus10"})) + " p0(+10)=" +
                  num(get(g, {"gaussian_p0_at_plus10"})) + "; t-LDA p0(-100)=" + num(get(g, {"t_p0_at_minus100"})) +
                  " p0(+100)=" + num(get(g, {"t_p0_at_plus100"})) + "; softRmax p0(-1e4)=" +
                  num(get(l, {"p0_at_minus1e4"})) + " p0(+1e4)=" + num(get(l, {"p0_at_plus1e4"}))};
}

// Gradient checks use the five-point central stencil with h = 1e-3. ReLU
// kinks closer than the stencil reach are not differentiable points and are
// redrawn, as are softRmax points within 1e-6 of a basis vector.
constexpr double kStep = 1e-3;
constexpr double kFloor = 1e-7;
constexpr double kKinkMargin = 0.05;

double kink_distance(const NeuralModel& m, std::span<const double> x) {
  Tape tape;
  forward_latent(m, x, &tape);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    if (m.layers[l].act == Nonlinearity::relu)
      for (double v : tape.pre[l]) best = std::min(best, std::abs(v));
  return best;
}

double singular_distance(std::span<const double> z) {
  const Vector d = basis_sq_distances(z);
  return std::sqrt(*std::min_element(d.begin(), d.end()));
}

Outcome criterion2() {
  constexpr int kCases = 100;
  Rng rng(2024);
  double worst_jac[2] = {0, 0}, worst_in[2] = {0, 0}, worst_par[2] = {0, 0};
  for (std::size_t hi = 0; hi < 2; ++hi) {
    const Head h = hi == 0 ? Head::softmax : Head::softrmax;
    for (int c = 0; c < kCases;) {
      const std::size_t k = 2 + rng.below(9);
      Vector z(k);
      for (double& v : z) v = rng.normal(0.0, 1.5);
      if (h == Head::softrmax && singular_distance(z) < 1e-6) continue;
      const Matrix j = activation_jacobian(h, z);
      for (std::size_t i = 0; i < k; ++i) {
        const Vector fd = finite_diff_grad5([&](std::span<const double> v) { return activate(h, v)[i]; }, z, kStep);
        Vector row(k);
        for (std::size_t col = 0; col < k; ++col) row[col] = j(i, col);
        worst_jac[hi] = std::max(worst_jac[hi], max_relative_error(row, fd, kFloor));
      }
      ++c;
    }
    for (int c = 0; c < kCases;) {
      const std::size_t hidden_layers = rng.below(3);
      std::vector<std::size_t> widths{2 + rng.below(5)};
      for (std::size_t l = 0; l < hidden_layers; ++l) widths.push_back(2 + rng.below(6));
      widths.push_back(2 + rng.below(9));
      const auto m = make_model(widths, h, InitScheme::fan_in_uniform, rng.next_u64());
      Vector x(widths.front());
      for (double& v : x) v = rng.uniform(-1.0, 1.0);
      const auto y = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(m.k)));
      if (h == Head::softrmax && singular_distance(forward_latent(m, x)) < 1e-6) continue;
      if (kink_distance(m, x) < kKinkMargin) continue;

      const Vector g = input_gradient(m, x, y);
      const Vector fd = finite_diff_grad5(
          [&](std::span<const double> v) { return nll_loss(h, forward_latent(m, v), y).loss; }, x, kStep);
      worst_in[hi] = std::max(worst_in[hi], max_relative_error(g, fd, kFloor));

      Gradients grads(m);
      accumulate_gradients(m, x, y, grads);
      for (std::size_t l = 0; l < m.layers.size(); ++l) {
        Vector params(m.layers[l].weight.data().begin(), m.layers[l].weight.data().end());
        params.insert(params.end(), m.layers[l].bias.begin(), m.layers[l].bias.end());
        const std::size_t nw = m.layers[l].weight.size();
        const Vector pfd = finite_diff_grad5(
            [&](std::span<const double> p) {
              NeuralModel probe = m;
              std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(nw), probe.layers[l].weight.data().begin());
              std::copy(p.begin() + static_cast<std::ptrdiff_t>(nw), p.end(), probe.layers[l].bias.begin());
              return nll_loss(h, forward_latent(probe, x), y).loss;
            },
            params, kStep);
        Vector analytic(grads.weight[l].data().begin(), grads.weight[l].data().end());
        analytic.insert(analytic.end(), grads.bias[l].begin(), grads.bias[l].end());
        worst_par[hi] = std::max(worst_par[hi], max_relative_error(analytic, pfd, kFloor));
      }
      ++c;
    }
  }
  double worst = 0.0;
  for (int i = 0; i < 2; ++i) worst = std::max({worst, worst_jac[i], worst_in[i], worst_par[i]});
  return {worst < 1e-5, "100 cases each; max rel err jacobian " + num(worst_jac[0]) + "/" + num(worst_jac[1]) +
                            ", input " + num(worst_in[0]) + "/" + num(worst_in[1]) + ", params " +
                            num(worst_par[0]) + "/" + num(worst_par[1]) + " (softmax/softRmax)"};
}

Outcome criterion3() {
  Rng rng(3);
  double worst_norm = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const std::size_t k = 2 + rng.below(9);
    Vector z(k);
    for (double& v : z) v = rng.normal(0.0, 3.0);
    for (Head h : {Head::softmax, Head::softrmax}) {
      const Vector p = activate(h, z);
      double s = 0.0;
      for (double v : p) s += v;
      worst_norm = std::max(worst_norm, std::abs(s - 1.0));
    }
  }
  double worst_tail = 0.0;
  for (std::size_t k : {2u, 3u, 5u, 10u}) {
    for (int d = 0; d < 100; ++d) {
      Vector u(k);
      double n = 0.0;
      for (double& v : u) {
        v = rng.normal();
        n += v * v;
      }
      for (double& v : u) v *= 1e6 / std::sqrt(n);
      for (double p : softrmax(u)) worst_tail = std::max(worst_tail, std::abs(p - 1.0 / static_cast<double>(k)));
    }
  }
  return {worst_norm <= 1e-12 && worst_tail <= 1e-3,
          "max |sum p - 1| = " + num(worst_norm) + " over 1e5 z; max |p - 1/k| at t=1e6 = " + num(worst_tail)};
}

Outcome criterion4(const RunArtifacts& t1) {
  const bool ok = claim(t1, "clean_accuracy_at_least_97") && claim(t1, "fgsm_gap_20pp_eps_0.3") &&
                  claim(t1, "bim_gap_20pp_eps_0.3_T10");
  std::string d;
  for (const auto& row : t1.results["rows"]) {
    const double e = row["epsilon"].get<double>();
    if (row["attack"] == "clean" || e == 0.3)
      d += row["head"].get<std::string>() + " " + row["attack"].get<std::string>() + "=" +
           num(row["accuracy"].get<double>()) + " ";
  }
  return {ok, d};
}

Outcome criterion5(const RunArtifacts& f4) {
  std::string d;
  for (const auto& c : f4.results["curves"])
    d += "eps " + num(c["epsilon"].get<double>()) + ": softmax " + num(get(c, {"softmax", "stabilized_accuracy"})) +
         " (drift " + num(get(c, {"softmax", "drift_50_100"})) + "), softRmax " +
         num(get(c, {"softrmax", "stabilized_accuracy"})) + " (drift " + num(get(c, {"softrmax", "drift_50_100"})) +
         "); ";
  return {claim(f4, "bim_stabilizes") && claim(f4, "softrmax_stabilized_above_softmax"), d};
}

Outcome criterion6(const RunArtifacts& f5) {
  for (const auto& e : f5.results["histograms"]) {
    if (e["setting"] != "fgsm" || e["epsilon"].get<double>() != 0.3) continue;
    const bool ok = claim(f5, "softmax_confident_eps_0.3") && claim(f5, "softrmax_unconfident_eps_0.3") &&
                    claim(f5, "softrmax_mode_lowest_quartile_eps_0.3");
    return {ok, "mean posterior softmax " + num(get(e, {"softmax", "mean_posterior"})) + " (n=" +
                    num(get(e, {"softmax", "misclassified"})) + "), softRmax " +
                    num(get(e, {"softrmax", "mean_posterior"})) + " (n=" + num(get(e, {"softrmax", "misclassified"})) +
                    "), softRmax mode bin centre " + num(get(e, {"softrmax", "mode_bin_center"}))};
  }
  return {false, "no eps = 0.3 histogram"};
}

Outcome criterion7(const RunArtifacts& t2) {
  std::string d;
  for (const auto& row : t2.results["rows"])
    d += row["head"].get<std::string>() + "/" + row["attack"].get<std::string>() + "=" +
         num(row["mean_over_targets"].get<double>()) + " ";
  const bool a = claim(t2, "blackbox_weaker_than_whitebox_softmax");
  const bool b = claim(t2, "average_sample_worst_for_softrmax");
  const bool c = claim(t2, "softrmax_worst_attack_above_softmax");
  d += std::string("| (a) ") + (a ? "yes" : "no") + " (b) " + (b ? "yes" : "no") + " (c) " + (c ? "yes" : "no");
  return {a && b && c, d};
}

Outcome criterion8() {
  const auto a = run_fig2(spec_for("fig2"));
  const auto& l = a.results["linear"];
  return {claim(a, "softrmax_margin_exceeds_softmax") && claim(a, "softmax_norm_grows_faster"),
          "margin softmax " + num(get(l, {"softmax", "min_geometric_margin"})) + " softRmax " +
              num(get(l, {"softrmax", "min_geometric_margin"})) + "; norm growth 5->50 softmax " +
              num(get(l, {"softmax", "norm_growth"})) + " softRmax " + num(get(l, {"softrmax", "norm_growth"}))};
}

Outcome criterion9(const RunArtifacts& f6) {
  return {claim(f6, "softrmax_median_ratio_below_softmax"),
          "median R softmax " + num(get(f6.results, {"softmax", "median_ratio"})) + " softRmax " +
              num(get(f6.results, {"softrmax", "median_ratio"}))};
}

Outcome criterion10() {
  const auto a = run_fig3(spec_for("fig3"));  // throws InvariantError if any lambda = 0 weight differs from 1
  const auto& cf = a.results["closed_form"];
  const bool ok = claim(a, "gaussian_weight_blows_up") && claim(a, "t_outlier_weights_bounded") &&
                  claim(a, "gaussian_overfits_outliers") && claim(a, "t_error_within_2x");
  std::string d = "lambda=0 weights exactly 1; gaussian w(-4.5) = " + num(get(cf, {"gaussian_weight"})) + " (need > 1e3), gaussian/t mode-relative ratio " +
                  num(get(cf, {"gaussian_ratio_to_source_mode"}) / get(cf, {"t_ratio_to_source_mode"})) + " (need > 100)";
  for (const auto& r : a.results["runs"]) {
    if (!r["outliers"].get<bool>() || (r["lambda"].get<double>() != 0.0 && r["lambda"].get<double>() != 1.0)) continue;
    d += "; " + r["family"].get<std::string>() + " lambda=" + num(r["lambda"].get<double>()) +
         " err=" + num(r["target_error"].get<double>());
    if (r["family"] == "student_t" && r["lambda"].get<double>() == 1.0)
      d += " max outlier/median weight=" + num(r["max_outlier_weight_ratio"].get<double>());
  }
  return {ok, d};
}

Outcome criterion11() {
  const auto root = std::filesystem::temp_directory_path() / ("polyclass_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(root);
  std::string d;
  bool ok = true;

  // IDX fixture covering every byte value.
  {
    std::ofstream img(root / "img", std::ios::binary), lab(root / "lab", std::ios::binary);
    const auto be32 = [](std::ofstream& o, std::uint32_t v) {
      for (int s = 24; s >= 0; s -= 8) o.put(static_cast<char>((v >> s) & 0xFF));
    };
    be32(img, 0x803u), be32(img, 64), be32(img, 2), be32(img, 2);
    be32(lab, 0x801u), be32(lab, 64);
    for (int i = 0; i < 256; ++i) img.put(static_cast<char>(i));
    for (int i = 0; i < 64; ++i) lab.put(static_cast<char>(i % 10));
  }
  const Dataset d1 = read_idx(root / "img", root / "lab");
  write_idx(d1, 2, 2, root / "img2", root / "lab2");
  const bool idx_ok = detail::read_file(root / "img") == detail::read_file(root / "img2") &&
                      detail::read_file(root / "lab") == detail::read_file(root / "lab2") &&
                      read_idx(root / "img2", root / "lab2").features == d1.features;
  d += std::string("IDX round-trip ") + (idx_ok ? "bit-exact" : "MISMATCH");

  const auto m = make_model({5, 7, 6, 3}, Head::softrmax, InitScheme::fan_in_uniform, 99);
  std::stringstream s1, s2;
  save_checkpoint(m, s1);
  const NeuralModel back = load_checkpoint(s1);
  save_checkpoint(back, s2);
  const bool ck_ok = s1.str() == s2.str() && back == m;
  d += std::string("; checkpoint round-trip ") + (ck_ok ? "bit-exact" : "MISMATCH");

  bool cli_ok = true;
  for (const char* id : {"fig1", "fig3"}) {
    std::vector<std::filesystem::path> dirs{root / (std::string(id) + "_a"), root / (std::string(id) + "_b")};
    for (const auto& dir : dirs) {
      const std::string cmd = std::string("\"") + POLYCLASS_CLI + "\" " + id + " --out-dir \"" + dir.string() + "\" > /dev/null";
      if (std::system(cmd.c_str()) != 0) cli_ok = false;
    }
    for (const auto& entry : std::filesystem::directory_iterator(dirs[0])) {
      const auto other = dirs[1] / entry.path().filename();
      if (!std::filesystem::exists(other) || detail::read_file(entry.path()) != detail::read_file(other)) cli_ok = false;
    }
  }
  d += std::string("; CLI reruns (fig1, fig3) ") + (cli_ok ? "byte-identical" : "DIFFER");
  ok = idx_ok && ck_ok && cli_ok;
  std::filesystem::remove_all(root);
  return {ok, d};
}

}  // namespace

int main() {
  std::cout << "polyclass acceptance suite" << std::endl;
  report(1, "generative and linear-head tails", criterion1, 5.0);
  report(2, "gradient suite vs finite differences", criterion2, 30.0);
  report(3, "simplex normalization and softRmax conservativeness", criterion3);

  // MNIST-backed criteria share one trained pair per class set.
  std::optional<MnistContext> pair, digits;
  std::string pair_error, digits_error;
  const auto pair_spec = spec_for("table1");
  const auto digits_spec = spec_for("table2");
  const auto load = [](const ResolvedSpec& r, std::optional<MnistContext>& ctx, std::string& err) {
    try {
      ctx = prepare_mnist(r);
    } catch (const std::exception& e) {
      err = e.what();
    }
  };
  const auto with = [](std::optional<MnistContext>& ctx, const std::string& err,
                       const std::function<Outcome(const MnistContext&)>& f) -> std::function<Outcome()> {
    return [&ctx, &err, f] { return ctx ? f(*ctx) : Outcome{false, "MNIST unavailable: " + err}; };
  };

  const auto t_pair = std::chrono::steady_clock::now();
  load(pair_spec, pair, pair_error);
  const double pair_train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_pair).count();
  std::cout << "  (3&7 pair trained in " << num(pair_train_s) << " s)" << std::endl;
  report(4, "untargeted attack gap, MNIST 3&7", with(pair, pair_error, [&](const MnistContext& c) {
           return criterion4(run_table1(pair_spec, c));
         }), 300.0 - pair_train_s);
  report(5, "BIM accuracy stabilizes over iterations", with(pair, pair_error, [&](const MnistContext& c) {
           return criterion5(run_fig4(spec_for("fig4"), c));
         }), 600.0);

  load(digits_spec, digits, digits_error);
  report(6, "posteriors of misclassified samples", with(digits, digits_error, [&](const MnistContext& c) {
           return criterion6(run_fig5(spec_for("fig5"), c));
         }));
  report(7, "targeted attack ordering", with(digits, digits_error, [&](const MnistContext& c) {
           return criterion7(run_table2(digits_spec, c));
         }));
  report(8, "geometric margin and weight-norm growth", criterion8);
  report(9, "magnitude-margin ratio", with(digits, digits_error, [&](const MnistContext& c) {
           return criterion9(run_fig6(spec_for("fig6"), c));
         }));
  report(10, "importance weighting under covariate shift", criterion10, 10.0);
  report(11, "infrastructure round-trips and reruns", criterion11);

  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAIL") << std::endl;
  return failures == 0 ? 0 : 1;
}
