#pragma once

// Dense linear algebra, a splittable counter-based RNG, and finite-difference
// gradient checking.

#include <polyclass/errors.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace polyclass {

using Vector = std::vector<double>;

/// Row-major dense matrix of doubles.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("numcore", "matrix data length " + std::to_string(data_.size()) +
                                          " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("numcore", "ragged matrix literal");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("numcore", "matmul shape mismatch: " + std::to_string(a.rows()) + "x" +
                                        std::to_string(a.cols()) + " times " + std::to_string(b.rows()) +
                                        "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      auto b_row = b.row(p);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aip * b_row[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

/// y = A x
inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) {
    throw DimensionError("numcore", "matvec: matrix has " + std::to_string(a.cols()) +
                                        " columns, vector has " + std::to_string(x.size()));
  }
  Vector y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) s += r[j] * x[j];
    y[i] = s;
  }
  return y;
}

/// y = Aᵀ v
inline Vector matvec_transposed(const Matrix& a, std::span<const double> v) {
  if (a.rows() != v.size()) {
    throw DimensionError("numcore", "matvec_transposed: matrix has " + std::to_string(a.rows()) +
                                        " rows, vector has " + std::to_string(v.size()));
  }
  Vector y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) y[j] += vi * r[j];
  }
  return y;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("numcore", "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

/// sign with sign(0) = 0.
inline double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

namespace detail {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Counter-based generator: draw n is mix(key + n * golden). Streams derived by
/// split() have independent keys, so parallel consumers stay reproducible
/// regardless of scheduling. All distributions are implemented here rather
/// than through <random> so sequences do not depend on the standard library.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : seed_(seed), key_(detail::mix64(seed + detail::kGolden)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t position() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return detail::mix64(key_ + counter_ * detail::kGolden);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling removes modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Standard normal via Box-Muller; one draw per call.
  double normal() noexcept {
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) noexcept { return mean + sd * normal(); }

  /// Standard Cauchy by inversion.
  double cauchy() noexcept {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return std::tan(std::numbers::pi * (u - 0.5));
  }

  double cauchy(double location, double scale) noexcept { return location + scale * cauchy(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Independent child stream. Does not advance this generator.
  Rng split(std::uint64_t stream) const noexcept {
    Rng child(seed_);
    child.key_ = detail::mix64(key_ ^ detail::mix64(stream + 0x632BE59BD9B4E019ULL));
    return child;
  }

private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar function.
template <typename F>
Vector finite_diff_grad(F&& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step must be positive");
  Vector probe(x.begin(), x.end());
  Vector grad(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(std::span<const double>(probe));
    probe[i] = orig - h;
    const double fm = f(std::span<const double>(probe));
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw EvaluationError("numcore", "non-finite function value at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

/// Five-point stencil, error O(h^4). A step near 1e-3 balances truncation
/// against roundoff for smooth functions of order-one magnitude.
template <typename F>
Vector finite_diff_grad5(F&& f, std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad5: step must be positive");
  Vector probe(x.begin(), x.end());
  Vector grad(x.size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    double v[4];
    const double offsets[4] = {-2.0 * h, -h, h, 2.0 * h};
    for (int s = 0; s < 4; ++s) {
      probe[i] = orig + offsets[s];
      v[s] = f(std::span<const double>(probe));
      if (!std::isfinite(v[s])) {
        throw EvaluationError("numcore", "non-finite function value at coordinate " + std::to_string(i));
      }
    }
    probe[i] = orig;
    grad[i] = (v[0] - 8.0 * v[1] + 8.0 * v[2] - v[3]) / (12.0 * h);
  }
  return grad;
}

/// Max over coordinates of |a - b| / max(|a|, |b|, floor).
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  if (a.size() != b.size()) throw DimensionError("numcore", "max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

}  // namespace polyclass
