#pragma once

// Reference implementations used only by the tests. They are deliberately naive
// and share no code with the library beyond plain data types.

#include "dart/image.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracle {

inline constexpr double kFdStep = 1e-6;

/// Central difference of f with respect to the scalar x refers to, restoring x afterwards.
inline double central_diff(const std::function<double()>& f, double& x, double h = kFdStep) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2 * h);
}

/// One-sided slopes; they disagree when the evaluation point sits on a kink.
inline bool straddles_kink(const std::function<double()>& f, double& x, double h = kFdStep) {
  const double saved = x;
  const double mid = f();
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  const double right = (up - mid) / h, left = (mid - down) / h;
  return std::abs(right - left) > 1e-2 * std::max({std::abs(right), std::abs(left), 1e-6});
}

/// |a - f| / max(|a|, |f|, floor).
inline double rel_error(double a, double f, double floor = 1e-12) {
  const double d = std::max({std::abs(a), std::abs(f), floor});
  return std::abs(a - f) / d;
}

/// F(x) of a histogram whose bin i covers (i, i+1], summed term by term.
inline double cdf(const std::vector<double>& masses, double x) {
  double acc = 0;
  for (std::size_t i = 0; i < masses.size(); ++i) {
    const double lo = static_cast<double>(i), hi = lo + 1;
    const double overlap = std::clamp(x, lo, hi) - lo;
    acc += overlap * masses[i];
  }
  return acc;
}

/// Smallest x with F(x) >= t, found by bisection on the monotone CDF.
inline double quantile_bisect(const std::vector<double>& masses, double t) {
  double lo = 0, hi = static_cast<double>(masses.size());
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(masses, mid) < t ? lo : hi) = mid;
  }
  return hi;
}

/// Bilinear sample with pixel centers at i + 0.5 and edge clamping.
inline double bilinear(const Eigen::MatrixXd& plane, double u, double v) {
  const auto h = plane.rows(), w = plane.cols();
  const double px = std::clamp(u - 0.5, 0.0, static_cast<double>(w - 1));
  const double py = std::clamp(v - 0.5, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<Eigen::Index>(std::floor(px)), y0 = static_cast<Eigen::Index>(std::floor(py));
  const auto x1 = std::min<Eigen::Index>(x0 + 1, w - 1), y1 = std::min<Eigen::Index>(y0 + 1, h - 1);
  const double fx = px - static_cast<double>(x0), fy = py - static_cast<double>(y0);
  return (1 - fy) * ((1 - fx) * plane(y0, x0) + fx * plane(y0, x1)) + fy * ((1 - fx) * plane(y1, x0) + fx * plane(y1, x1));
}

/// Integral of the piecewise-constant field over a rect, by per-cell interval overlap.
inline double rect_mass(const Eigen::MatrixXd& s, double x0, double x1, double y0, double y1) {
  double acc = 0;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double oy = std::max(0.0, std::min(y1, i + 1.0) - std::max(y0, static_cast<double>(i)));
    if (oy == 0) continue;
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double ox = std::max(0.0, std::min(x1, j + 1.0) - std::max(x0, static_cast<double>(j)));
      acc += oy * ox * s(i, j);
    }
  }
  return acc;
}

/// Column boundaries from the concatenated formulation: rows of the band-weighted map are laid
/// end to end on one axis of length R*W', the R*C - 1 global quantiles are taken there, and each
/// is mapped back into its row. Returns R vectors of C+1 bounds.
inline std::vector<Eigen::VectorXd> concatenated_x_bounds(const Eigen::MatrixXd& s, const Eigen::VectorXd& y, int cols) {
  const int rows = static_cast<int>(y.size()) - 1;
  const auto w = s.cols();
  std::vector<double> axis;
  axis.reserve(static_cast<std::size_t>(rows * w));
  for (int r = 0; r < rows; ++r)
    for (Eigen::Index j = 0; j < w; ++j) axis.push_back(rect_mass(s, static_cast<double>(j), j + 1.0, y[r], y[r + 1]));

  double total = 0;
  std::vector<double> cum(axis.size());
  for (std::size_t i = 0; i < axis.size(); ++i) cum[i] = total += axis[i];

  std::vector<Eigen::VectorXd> out(static_cast<std::size_t>(rows), Eigen::VectorXd(cols + 1));
  for (int r = 0; r < rows; ++r) {
    out[static_cast<std::size_t>(r)][0] = 0;
    out[static_cast<std::size_t>(r)][cols] = static_cast<double>(w);
  }
  const int k_total = rows * cols;
  std::size_t j = 0;
  for (int k = 1; k < k_total; ++k) {
    if (k % cols == 0) continue;  // a row boundary, not a column bound
    const double t = total * k / k_total;
    while (j + 1 < axis.size() && !(t < cum[j])) ++j;
    const double before = j == 0 ? 0.0 : cum[j - 1];
    const double q = static_cast<double>(j) + (t - before) / axis[j];
    const int r = k / cols;
    out[static_cast<std::size_t>(r)][k % cols] = q - static_cast<double>(r) * static_cast<double>(w);
  }
  return out;
}

/// Conventional ViT tokenizer: non-overlapping p x p pixel blocks flattened (y, x, c), projected,
/// plus the grid positional embedding of that block's (row, col).
inline Eigen::MatrixXd conventional_tokens(const dart::ImageD& img, int rows, int cols, int p, const Eigen::MatrixXd& w,
                                           const Eigen::VectorXd& b, const dart::ImageD& pe) {
  const int ch = img.channels();
  Eigen::MatrixXd tokens(rows * cols, w.rows());
  Eigen::VectorXd patch(p * p * ch);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int k = 0; k < ch; ++k) patch[(y * p + x) * ch + k] = img(r * p + y, c * p + x, k);
      Eigen::VectorXd t = w * patch + b;
      for (Eigen::Index d = 0; d < t.size(); ++d) t[d] += pe(r, c, static_cast<int>(d));
      tokens.row(r * cols + c) = t.transpose();
    }
  return tokens;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline dart::ImageD random_image(int h, int w, int ch, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  dart::ImageD img(h, w, ch);
  for (auto& p : img.planes) p = random_matrix(h, w, rng, lo, hi);
  return img;
}

}  // namespace oracle
