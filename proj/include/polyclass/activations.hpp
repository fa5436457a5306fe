#pragma once

// Output heads mapping a latent vector z (one coordinate per class) to class
// posteriors: the exponential softmax and its polynomial counterpart softRmax,
//
//   softrmax_i(z) = ||z - e_i||^-2 / sum_k ||z - e_k||^-2,
//
// where e_i is the i-th standard basis vector. Includes analytic Jacobians
// and the negative-log-posterior loss with its gradient in z.

#include <polyclass/errors.hpp>
#include <polyclass/numcore.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace polyclass {

enum class Head : std::uint8_t { softmax = 0, softrmax = 1 };

inline const char* to_string(Head h) { return h == Head::softmax ? "softmax" : "softrmax"; }

/// Smallest posterior fed to the log in the loss.
inline constexpr double kLossClamp = 1e-12;

/// Jacobians of softRmax are refused when some ||z - e_i||^2 is below this.
inline constexpr double kSingularDistance = 1e-12;

inline Vector softmax(std::span<const double> z) {
  if (z.empty()) throw DimensionError("activations", "softmax of an empty vector");
  const double top = *std::max_element(z.begin(), z.end());
  Vector p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp(z[i] - top);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// Squared distances ||z - e_i||^2 for every class i.
inline Vector basis_sq_distances(std::span<const double> z) {
  // Summed term by term: the expanded ||z||^2 - 2 z_i + 1 cancels badly near e_i.
  Vector d(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double diff = z[j] - (i == j ? 1.0 : 0.0);
      s += diff * diff;
    }
    d[i] = s;
  }
  return d;
}

/// softRmax in product form: p_i = prod_{j != i} d_j / sum_m prod_{j != m} d_j.
/// Exact at d_i = 0, where the result is one-hot at i. Distances are scaled by
/// their maximum first; at most one d_j can be small because the basis vectors
/// are sqrt(2) apart, so the products neither overflow nor underflow.
inline Vector softrmax(std::span<const double> z) {
  const std::size_t k = z.size();
  if (k == 0) throw DimensionError("activations", "softrmax of an empty vector");
  Vector d = basis_sq_distances(z);
  const double dmax = *std::max_element(d.begin(), d.end());
  for (double& v : d) v /= dmax;

  // num_i = prefix[i] * suffix[i + 1]
  Vector prefix(k + 1, 1.0), suffix(k + 1, 1.0);
  for (std::size_t i = 0; i < k; ++i) prefix[i + 1] = prefix[i] * d[i];
  for (std::size_t i = k; i-- > 0;) suffix[i] = suffix[i + 1] * d[i];
  Vector p(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    p[i] = prefix[i] * suffix[i + 1];
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline Vector activate(Head head, std::span<const double> z) {
  return head == Head::softmax ? softmax(z) : softrmax(z);
}

/// J(i, j) = d softmax_i / d z_j = p_i (delta_ij - p_j).
inline Matrix softmax_jacobian(std::span<const double> z) {
  const Vector p = softmax(z);
  const std::size_t k = p.size();
  Matrix j(k, k);
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) j(a, b) = (a == b ? p[a] : 0.0) - p[a] * p[b];
  return j;
}

/// J(i, j) = d softrmax_i / d z_j.
///
/// With r_m = 1/d_m and g_mj = d log r_m / d z_j = -2 (z_j - delta_mj) / d_m,
/// J(i, j) = p_i (g_ij - sum_m p_m g_mj). Columns sum to zero.
inline Matrix softrmax_jacobian(std::span<const double> z) {
  const std::size_t k = z.size();
  const Vector d = basis_sq_distances(z);
  for (std::size_t i = 0; i < k; ++i) {
    if (d[i] < kSingularDistance) {
      throw NearSingularError("activations", "softrmax jacobian undefined: z is within 1e-6 of basis vector e_" +
                                                 std::to_string(i));
    }
  }
  const Vector p = softrmax(z);
  Matrix g(k, k);
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t j = 0; j < k; ++j) g(m, j) = -2.0 * (z[j] - (m == j ? 1.0 : 0.0)) / d[m];
  Vector mean_g(k, 0.0);
  for (std::size_t m = 0; m < k; ++m)
    for (std::size_t j = 0; j < k; ++j) mean_g[j] += p[m] * g(m, j);
  Matrix jac(k, k);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) jac(i, j) = p[i] * (g(i, j) - mean_g[j]);
  return jac;
}

inline Matrix activation_jacobian(Head head, std::span<const double> z) {
  return head == Head::softmax ? softmax_jacobian(z) : softrmax_jacobian(z);
}

struct LossResult {
  double loss = 0.0;
  Vector posterior;
  Vector grad_z;  // d loss / d z
};

/// Negative log posterior -log(max(p_y, 1e-12)) and its gradient in z. The
/// gradient equals -J(y, :) / p_y; it is zero where the clamp is active.
///
/// For softRmax the gradient is evaluated as
///   p_y * sum_{m != y} (grad d_y / d_m - d_y grad d_m / d_m^2),
/// which is the same quantity with the removable singularity at z = e_y
/// cancelled analytically, so a perfectly fitted sample yields a zero
/// gradient instead of a near-singular error.
inline LossResult nll_loss(Head head, std::span<const double> z, std::size_t y) {
  const std::size_t k = z.size();
  if (y >= k) throw DimensionError("activations", "label " + std::to_string(y) + " >= k=" + std::to_string(k));
  LossResult r;
  r.posterior = activate(head, z);
  const double py = r.posterior[y];
  r.loss = -std::log(std::max(py, kLossClamp));
  r.grad_z.assign(k, 0.0);
  if (py <= kLossClamp) return r;

  if (head == Head::softmax) {
    for (std::size_t j = 0; j < k; ++j) r.grad_z[j] = r.posterior[j] - (j == y ? 1.0 : 0.0);
    return r;
  }
  const Vector d = basis_sq_distances(z);
  for (std::size_t m = 0; m < k; ++m) {
    if (m == y) continue;
    const double inv = 1.0 / d[m];
    const double ratio = d[y] * inv * inv;
    for (std::size_t j = 0; j < k; ++j) {
      const double grad_dy = 2.0 * (z[j] - (j == y ? 1.0 : 0.0));
      const double grad_dm = 2.0 * (z[j] - (j == m ? 1.0 : 0.0));
      r.grad_z[j] += grad_dy * inv - ratio * grad_dm;
    }
  }
  for (double& g : r.grad_z) g *= py;
  return r;
}

}  // namespace polyclass
