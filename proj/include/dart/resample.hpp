#pragma once

#include "dart/image.hpp"
#include "dart/partition.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <vector>

namespace dart {

// Bilinear interpolation against pixel centers at i + 0.5, clamped to the border.
// A sample point outside the image takes the nearest border value and has zero
// derivative along the clamped axis. Kinks take the right-hand segment.
template <typename Scalar>
struct BilinearTap {
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  Scalar ax = 0, ay = 0;
  bool x_clamped = false, y_clamped = false;
};

template <typename Scalar>
BilinearTap<Scalar> bilinear_tap(Scalar u, Scalar v, int width, int height) {
  BilinearTap<Scalar> t;
  auto axis = [](Scalar coord, int extent, int& lo, int& hi, Scalar& frac, bool& clamped) {
    Scalar f = coord - Scalar(0.5);
    clamped = false;
    if (f < Scalar(0)) {
      f = Scalar(0);
      clamped = true;
    }
    const Scalar last = Scalar(extent - 1);
    if (f >= last) {
      lo = hi = extent - 1;
      frac = Scalar(0);
      clamped = true;
      return;
    }
    lo = static_cast<int>(std::floor(f));
    hi = lo + 1;
    frac = f - Scalar(lo);
  };
  axis(u, width, t.x0, t.x1, t.ax, t.x_clamped);
  axis(v, height, t.y0, t.y1, t.ay, t.y_clamped);
  return t;
}

template <typename Scalar>
Scalar bilinear_value(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& plane,
                      const BilinearTap<Scalar>& t) {
  const Scalar top = plane(t.y0, t.x0) + t.ax * (plane(t.y0, t.x1) - plane(t.y0, t.x0));
  const Scalar bottom = plane(t.y1, t.x0) + t.ax * (plane(t.y1, t.x1) - plane(t.y1, t.x0));
  return top + t.ay * (bottom - top);
}

/// d value / d(u, v) at a tap.
template <typename Scalar>
std::pair<Scalar, Scalar> bilinear_slope(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& plane,
                                         const BilinearTap<Scalar>& t) {
  Scalar du = 0, dv = 0;
  if (!t.x_clamped)
    du = (Scalar(1) - t.ay) * (plane(t.y0, t.x1) - plane(t.y0, t.x0)) +
         t.ay * (plane(t.y1, t.x1) - plane(t.y1, t.x0));
  if (!t.y_clamped)
    dv = (Scalar(1) - t.ax) * (plane(t.y1, t.x0) - plane(t.y0, t.x0)) +
         t.ax * (plane(t.y1, t.x1) - plane(t.y0, t.x1));
  return {du, dv};
}

/// Scatters an upstream value onto the four taps.
template <typename Scalar>
void bilinear_scatter(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& grad, const BilinearTap<Scalar>& t,
                      Scalar g) {
  const Scalar wx0 = Scalar(1) - t.ax, wy0 = Scalar(1) - t.ay;
  grad(t.y0, t.x0) += g * wx0 * wy0;
  grad(t.y0, t.x1) += g * t.ax * wy0;
  grad(t.y1, t.x0) += g * wx0 * t.ay;
  grad(t.y1, t.x1) += g * t.ax * t.ay;
}

/// Cell-center sample coordinate a of n inside [lo, hi].
inline double cell_center(double lo, double hi, int a, int n) { return lo + ((a + 0.5) * (hi - lo)) / n; }

/// Fixed-size p×p×Ch resampling of one rect. Values are flattened in (y, x, channel) order.
struct Patch {
  int size = 0;
  int channels = 0;
  Eigen::VectorXd values;
  Rect source;

  double at(int y, int x, int c) const { return values[(static_cast<Eigen::Index>(y) * size + x) * channels + c]; }
};

/// Samples an out_h × out_w grid of cell centers inside r.
ImageD resample_region(const ImageD& img, const Rect& r, int out_h, int out_w);

/// Reverse pass of resample_region. Upstream is an out_h × out_w image; pixel gradients
/// are accumulated into `pixel_grad` when non-null.
RectGrad resample_region_backward(const ImageD& img, const Rect& r, const ImageD& upstream, ImageD* pixel_grad);

Patch resample_patch(const ImageD& img, const Rect& r, int p);

/// Upstream is flattened like Patch::values.
RectGrad resample_patch_backward(const ImageD& img, const Rect& r, int p, const Eigen::VectorXd& upstream,
                                 ImageD* pixel_grad);

/// Bilinear resize over the whole image.
ImageD resize_bilinear(const ImageD& img, int height, int width);

/// Positional embeddings laid out as a G_h × G_w map with D channels.
struct PosEmbedMap {
  ImageD grid;

  int grid_height() const { return grid.height(); }
  int grid_width() const { return grid.width(); }
  int dim() const { return grid.channels(); }
};

inline constexpr int kDefaultPosEmbedSamples = 4;

/// Mean of q×q bilinear samples at cell centers of r, with r in grid units.
Eigen::VectorXd resample_posembed(const PosEmbedMap& pe, const Rect& r, int q);

RectGrad resample_posembed_backward(const PosEmbedMap& pe, const Rect& r, int q, const Eigen::VectorXd& upstream,
                                    ImageD* grid_grad);

/// Reassembles row-major patches of a regular-mode partition into an (R·p)×(C·p) image.
ImageD stitch_regular(const Partition& partition, const std::vector<Patch>& patches);

}  // namespace dart
