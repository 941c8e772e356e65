#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace dart {

/// Planar image: one H×W matrix per channel. Pixel (y, x) occupies [x, x+1) × [y, y+1).
template <typename Scalar>
struct Image {
  using Plane = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  std::vector<Plane> planes;

  Image() = default;
  Image(int height, int width, int channels, Scalar fill = Scalar(0))
      : planes(static_cast<std::size_t>(channels), Plane::Constant(height, width, fill)) {
    if (height < 1 || width < 1 || channels < 1)
      throw std::invalid_argument("image dims must be positive, got " + std::to_string(height) +
                                  "x" + std::to_string(width) + "x" + std::to_string(channels));
  }

  int height() const { return planes.empty() ? 0 : static_cast<int>(planes.front().rows()); }
  int width() const { return planes.empty() ? 0 : static_cast<int>(planes.front().cols()); }
  int channels() const { return static_cast<int>(planes.size()); }
  bool empty() const { return planes.empty(); }

  Scalar& operator()(int y, int x, int c) { return planes[static_cast<std::size_t>(c)](y, x); }
  Scalar operator()(int y, int x, int c) const { return planes[static_cast<std::size_t>(c)](y, x); }

  bool all_finite() const {
    for (const auto& p : planes)
      if (!p.allFinite()) return false;
    return true;
  }

  template <typename Other>
  Image<Other> cast() const {
    Image<Other> out;
    out.planes.reserve(planes.size());
    for (const auto& p : planes) out.planes.push_back(p.template cast<Other>());
    return out;
  }
};

using ImageD = Image<double>;
using ImageF = Image<float>;

/// Axis-aligned region in image coordinates.
struct Rect {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
  bool valid() const { return x0 < x1 && y0 < y1 && std::isfinite(x0 + x1 + y0 + y1); }
};

/// Gradient with respect to the four rect coordinates.
struct RectGrad {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
};

}  // namespace dart
