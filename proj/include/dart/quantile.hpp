#pragma once

// Piecewise-constant 1D distributions and their uniform quantiles.
//
// Bin i carries mass m_i spread uniformly over (i, i+1]. The CDF is piecewise
// linear, so each quantile is found by locating the containing bin j and
// inverting linearly inside it:
//
//   t_k = (k / K) * M,   q_k = j + (t_k - C_{j-1}) / m_j,   C_{j-1} <= t_k < C_j
//
// Derivatives below treat every m_i as a free variable, so t_k moves with the
// total mass M. At a bin boundary the right-hand segment is used.

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dart {

template <typename Scalar>
class PiecewiseDistribution {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit PiecewiseDistribution(Vector masses) : masses_(std::move(masses)) {
    const Eigen::Index n = masses_.size();
    if (n < 1) throw std::invalid_argument("distribution needs at least one bin");
    cumulative_.resize(n);
    Scalar acc = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Scalar m = masses_[i];
      if (!std::isfinite(static_cast<double>(m)) || m < Scalar(0))
        throw std::invalid_argument("bin " + std::to_string(i) + " has invalid mass");
      acc += m;
      cumulative_[i] = acc;
    }
    if (!(acc > Scalar(0))) throw std::invalid_argument("distribution total mass must be positive");
  }

  Eigen::Index bins() const { return masses_.size(); }
  const Vector& masses() const { return masses_; }
  /// C_i = m_0 + ... + m_i.
  const Vector& cumulative() const { return cumulative_; }
  Scalar total() const { return cumulative_[bins() - 1]; }
  /// C_{j-1}, with C_{-1} = 0.
  Scalar mass_before(Eigen::Index j) const { return j == 0 ? Scalar(0) : cumulative_[j - 1]; }

 private:
  Vector masses_;
  Vector cumulative_;
};

/// F(x) for 0 <= x <= n.
template <typename Scalar>
Scalar cdf_eval(const PiecewiseDistribution<Scalar>& dist, Scalar x) {
  const auto n = dist.bins();
  if (!(x >= Scalar(0) && x <= Scalar(n)))
    throw std::invalid_argument("cdf_eval: x outside [0, " + std::to_string(n) + "]");
  const auto whole = static_cast<Eigen::Index>(std::floor(static_cast<double>(x)));
  if (whole >= n) return dist.total();
  return dist.mass_before(whole) + (x - Scalar(whole)) * dist.masses()[whole];
}

template <typename Scalar>
struct QuantileSet {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Vector points;                     // K-1 interior quantiles
  std::vector<Eigen::Index> bins;    // containing bin of each point
  int segments = 0;                  // K
  std::vector<int> boundary_points;  // indices of points within 1e-12 of a bin edge
};

inline constexpr double kBoundaryTolerance = 1e-12;

template <typename Scalar>
QuantileSet<Scalar> uniform_quantiles(const PiecewiseDistribution<Scalar>& dist, int segments) {
  if (segments < 1) throw std::invalid_argument("uniform_quantiles: segment count must be >= 1");
  const Eigen::Index n = dist.bins();
  const auto& cum = dist.cumulative();
  const auto& m = dist.masses();
  const Scalar total = dist.total();

  QuantileSet<Scalar> out;
  out.segments = segments;
  out.points.resize(segments - 1);
  out.bins.resize(static_cast<std::size_t>(segments - 1));

  Eigen::Index j = 0;
  for (int k = 1; k < segments; ++k) {
    const Scalar target = Scalar(k) * total / Scalar(segments);
    while (j < n - 1 && !(target < cum[j])) ++j;
    // Roundoff can leave j on an empty trailing bin; step back to the last massive one.
    while (j > 0 && !(m[j] > Scalar(0))) --j;
    const Scalar q = Scalar(j) + (target - dist.mass_before(j)) / m[j];
    out.points[k - 1] = q;
    out.bins[static_cast<std::size_t>(k - 1)] = j;
    if (std::abs(static_cast<double>(q) - std::round(static_cast<double>(q))) <= kBoundaryTolerance)
      out.boundary_points.push_back(k - 1);
  }
  return out;
}

template <typename Scalar>
struct QuantileJacobian {
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> dense;  // (K-1) x n, d q_k / d m_i
  std::vector<int> boundary_rows;  // rows evaluated with the one-sided convention

  bool boundary_subgradient() const { return !boundary_rows.empty(); }
};

template <typename Scalar>
QuantileJacobian<Scalar> quantile_jacobian(const PiecewiseDistribution<Scalar>& dist, int segments) {
  const auto qs = uniform_quantiles(dist, segments);
  const Eigen::Index n = dist.bins();
  const auto& m = dist.masses();
  const Scalar total = dist.total();

  QuantileJacobian<Scalar> jac;
  jac.dense.setZero(segments - 1, n);
  jac.boundary_rows = qs.boundary_points;
  for (int k = 1; k < segments; ++k) {
    const Eigen::Index j = qs.bins[static_cast<std::size_t>(k - 1)];
    const Scalar frac = Scalar(k) / Scalar(segments);
    const Scalar offset = frac * total - dist.mass_before(j);
    auto row = jac.dense.row(k - 1);
    row.head(j).setConstant((frac - Scalar(1)) / m[j]);
    row.tail(n - j - 1).setConstant(frac / m[j]);
    row[j] = frac / m[j] - offset / (m[j] * m[j]);
  }
  return jac;
}

/// upstream^T * Jacobian in O(n + K), reusing an already computed QuantileSet.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> quantile_vjp(
    const PiecewiseDistribution<Scalar>& dist, const QuantileSet<Scalar>& qs,
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& upstream) {
  const int segments = qs.segments;
  if (upstream.size() != segments - 1)
    throw std::invalid_argument("quantile_vjp: upstream has " + std::to_string(upstream.size()) +
                                " entries, expected " + std::to_string(segments - 1));
  const Eigen::Index n = dist.bins();
  const auto& m = dist.masses();
  const Scalar total = dist.total();

  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> grad = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> left_of = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(n);
  Scalar everywhere = 0;
  for (int k = 1; k < segments; ++k) {
    const Scalar u = upstream[k - 1];
    if (u == Scalar(0)) continue;
    const Eigen::Index j = qs.bins[static_cast<std::size_t>(k - 1)];
    const Scalar frac = Scalar(k) / Scalar(segments);
    const Scalar offset = frac * total - dist.mass_before(j);
    everywhere += u * frac / m[j];
    left_of[j] += u / m[j];
    grad[j] -= u * offset / (m[j] * m[j]);
  }
  Scalar running = 0;
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    grad[i] += everywhere - running;
    running += left_of[i];
  }
  return grad;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> quantile_vjp(
    const PiecewiseDistribution<Scalar>& dist, int segments,
    const Eigen::Ref<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>& upstream) {
  return quantile_vjp(dist, uniform_quantiles(dist, segments), upstream);
}

}  // namespace dart
