#include <polyclass/distributions.hpp>
#include <polyclass/numcore.hpp>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/multiprecision/cpp_dec_float.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace polyclass;

namespace {

using Big = boost::multiprecision::cpp_dec_float_50;

// Integral over [mu - 50 s, mu + 50 s] by adaptive Gauss-Kronrod plus the two
// tails from an independent CDF.
template <typename Pdf>
double integrate_with_tails(Pdf pdf, double mu, double s, double tail_mass) {
  double err = 0.0;
  const double bulk =
      boost::math::quadrature::gauss_kronrod<double, 61>::integrate(pdf, mu - 50.0 * s, mu + 50.0 * s, 15, 1e-12, &err);
  return bulk + tail_mass;
}

}  // namespace

TEST(GaussianPdf, StandardNormalMode) {
  EXPECT_NEAR(gaussian_pdf({0.0, 1.0}, 0.0), 0.3989422804, 1e-10);
}

TEST(GaussianPdf, Symmetric) {
  EXPECT_DOUBLE_EQ(gaussian_pdf({0.0, 1.0}, 1.0), gaussian_pdf({0.0, 1.0}, -1.0));
}

TEST(GaussianPdf, ArbitraryPrecisionOracle) {
  // exp(-2) / sqrt(0.5 pi) evaluated in 50 digits.
  const Big expected = boost::multiprecision::exp(Big(-2)) /
                       boost::multiprecision::sqrt(Big(1) / 2 * boost::math::constants::pi<Big>());
  const double got = gaussian_pdf({1.1, 0.25}, 2.1);
  EXPECT_NEAR(got, expected.convert_to<double>(), 1e-15);
}

TEST(GaussianPdf, AgreesWithBoost) {
  const boost::math::normal_distribution<double> ref(-0.7, 1.9);
  for (double x : {-30.0, -2.0, 0.0, 0.3, 11.0}) {
    EXPECT_NEAR(gaussian_pdf({-0.7, 1.9 * 1.9}, x) / boost::math::pdf(ref, x), 1.0, 1e-12);
  }
}

TEST(GaussianPdf, InvalidVarianceRejected) {
  EXPECT_THROW(gaussian_pdf({0.0, 0.0}, 1.0), DegenerateError);
  EXPECT_THROW(gaussian_pdf({0.0, -1.0}, 1.0), DegenerateError);
}

TEST(StudentTPdf, CauchyMode) {
  EXPECT_NEAR(student_t_pdf({0.0, 1.0, 1.0}, 0.0), 1.0 / std::numbers::pi, 1e-15);
}

TEST(StudentTPdf, CauchyClosedForm) {
  EXPECT_NEAR(student_t_pdf({0.0, 1.0, 1.0}, 10.0), 1.0 / (101.0 * std::numbers::pi), 1e-16);
}

TEST(StudentTPdf, SymmetricAboutLocation) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const StudentTParams p{rng.uniform(-5.0, 5.0), rng.uniform(0.1, 3.0), rng.uniform(0.5, 10.0)};
    const double dx = rng.uniform(0.0, 20.0);
    EXPECT_NEAR(student_t_pdf(p, p.mu + dx) / student_t_pdf(p, p.mu - dx), 1.0, 1e-13);
  }
}

TEST(StudentTPdf, AgreesWithBoostLocationScale) {
  for (double nu : {1.0, 2.5, 7.0}) {
    const boost::math::students_t_distribution<double> ref(nu);
    const StudentTParams p{1.5, 0.4, nu};
    for (double x : {-100.0, -1.0, 1.5, 2.0, 40.0}) {
      const double expected = boost::math::pdf(ref, (x - p.mu) / p.scale) / p.scale;
      EXPECT_NEAR(student_t_pdf(p, x) / expected, 1.0, 1e-12);
    }
  }
}

TEST(DensityNormalization, GaussianIntegratesToOne) {
  for (const GaussianParams p : {GaussianParams{0.0, 1.0}, GaussianParams{1.1, 0.25}, GaussianParams{-3.0, 9.0}}) {
    const double s = std::sqrt(p.sigma2);
    // Gaussian mass beyond 50 sigma is below 1e-500; the tail bound is zero in double.
    const double total = integrate_with_tails([&](double x) { return gaussian_pdf(p, x); }, p.mu, s, 0.0);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(DensityNormalization, StudentTIntegratesToOne) {
  for (const StudentTParams p : {StudentTParams{0.0, 1.0, 1.0}, StudentTParams{2.0, 0.5, 1.0},
                                 StudentTParams{-1.0, 2.0, 3.0}}) {
    const boost::math::students_t_distribution<double> ref(p.nu);
    const double tails = 2.0 * boost::math::cdf(boost::math::complement(ref, 50.0));
    const double total =
        integrate_with_tails([&](double x) { return student_t_pdf(p, x); }, p.mu, p.scale, tails);
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(DensityTails, StudentTDominatesGaussianFarOut) {
  const GaussianParams g{0.0, 1.0};
  const StudentTParams t{0.0, 1.0, 1.0};
  EXPECT_GT(student_t_pdf(t, 20.0) / gaussian_pdf(g, 20.0), 1e6);
  EXPECT_GT(student_t_pdf(t, -20.0) / gaussian_pdf(g, -20.0), 1e6);
  // Log domain keeps the comparison meaningful where the Gaussian underflows.
  EXPECT_GT(student_t_log_pdf(t, 1e4) - gaussian_log_pdf(g, 1e4), std::log(1e6));
}

TEST(GaussianMle, TwoPoints) {
  const std::vector<double> xs{-1.0, 1.0};
  const auto p = fit_gaussian_mle(xs);
  EXPECT_DOUBLE_EQ(p.mu, 0.0);
  EXPECT_DOUBLE_EQ(p.sigma2, 1.0);
}

TEST(GaussianMle, IdenticalSamplesAreDegenerate) {
  const std::vector<double> xs{2.0, 2.0, 2.0};
  EXPECT_THROW(fit_gaussian_mle(xs), DegenerateError);
}

TEST(GaussianMle, MonteCarloSeed7) {
  Rng rng(7);
  std::vector<double> xs(10000);
  for (double& x : xs) x = rng.normal(2.0, 2.0);
  const auto p = fit_gaussian_mle(xs);
  EXPECT_NEAR(p.mu, 2.0, 0.1);
  EXPECT_NEAR(p.sigma2, 4.0, 0.2);
}

TEST(GaussianMle, BiasedVariance) {
  const std::vector<double> xs{1.0, 2.0, 3.0, 6.0};
  const auto p = fit_gaussian_mle(xs);
  EXPECT_DOUBLE_EQ(p.mu, 3.0);
  EXPECT_DOUBLE_EQ(p.sigma2, (4.0 + 1.0 + 0.0 + 9.0) / 4.0);
}

TEST(StudentTFitTest, SymmetricSetHasZeroLocation) {
  for (double a : {0.5, 1.0, 7.0}) {
    const std::vector<double> xs{-a, 0.0, a};
    const auto fit = fit_student_t(xs, 1.0);
    EXPECT_NEAR(fit.params.mu, 0.0, 1e-12);
    EXPECT_GT(fit.params.scale, 0.0);
  }
}

TEST(StudentTFitTest, RecoversCauchySeed7) {
  Rng rng(7);
  std::vector<double> xs(10000);
  for (double& x : xs) x = rng.cauchy(0.0, 1.0);
  const auto fit = fit_student_t(xs, 1.0);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.params.mu, 0.0, 0.1);
  EXPECT_NEAR(fit.params.scale, 1.0, 0.1);
}

TEST(StudentTFitTest, OutlierMovesLocationLessThanGaussianMean) {
  Rng rng(7);
  std::vector<double> xs(100);
  for (double& x : xs) x = rng.normal();
  const double t_before = fit_student_t(xs, 1.0).params.mu;
  const double g_before = fit_gaussian_mle(xs).mu;
  xs.push_back(1000.0);
  const double t_shift = std::abs(fit_student_t(xs, 1.0).params.mu - t_before);
  const double g_shift = std::abs(fit_gaussian_mle(xs).mu - g_before);
  EXPECT_LT(t_shift, g_shift);
}

TEST(StudentTFitTest, LogLikelihoodNeverDecreases) {
  Rng rng(21);
  for (double nu : {1.0, 3.0}) {
    std::vector<double> xs(500);
    for (double& x : xs) x = rng.uniform() < 0.9 ? rng.normal(3.0, 0.5) : rng.cauchy(-2.0, 4.0);
    const auto fit = fit_student_t(xs, nu);
    ASSERT_GE(fit.log_likelihood_trace.size(), 2u);
    for (std::size_t i = 1; i < fit.log_likelihood_trace.size(); ++i) {
      EXPECT_GE(fit.log_likelihood_trace[i], fit.log_likelihood_trace[i - 1] - 1e-9 * std::abs(fit.log_likelihood_trace[i - 1]))
          << "iteration " << i;
    }
    EXPECT_NEAR(fit.log_likelihood, student_t_log_likelihood(fit.params, xs), 1e-9 * std::abs(fit.log_likelihood));
  }
}

TEST(StudentTFitTest, IsLocalMaximumOfLikelihood) {
  Rng rng(5);
  std::vector<double> xs(300);
  for (double& x : xs) x = rng.cauchy(1.0, 0.5);
  const auto fit = fit_student_t(xs, 1.0);
  const double best = student_t_log_likelihood(fit.params, xs);
  for (double dm : {-1e-3, 1e-3}) {
    StudentTParams p = fit.params;
    p.mu += dm;
    EXPECT_LE(student_t_log_likelihood(p, xs), best + 1e-9);
  }
  for (double ds : {0.999, 1.001}) {
    StudentTParams p = fit.params;
    p.scale *= ds;
    EXPECT_LE(student_t_log_likelihood(p, xs), best + 1e-9);
  }
}

TEST(StudentTFitTest, TooFewSamplesRejected) {
  const std::vector<double> xs{1.0, 2.0};
  EXPECT_THROW(fit_student_t(xs, 1.0), DegenerateError);
}
