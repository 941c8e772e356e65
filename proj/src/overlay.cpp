#include "dart/overlay.hpp"

#include "dart/scoremap.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dart {

namespace {

// Black -> red -> yellow -> white.
std::array<double, 3> heat(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return {std::min(1.0, 3.0 * v), std::clamp(3.0 * v - 1.0, 0.0, 1.0), std::clamp(3.0 * v - 2.0, 0.0, 1.0)};
}

int pixel_line(double bound, int extent) {
  return std::clamp(static_cast<int>(std::floor(bound)), 0, extent - 1);
}

}  // namespace

ImageD render_overlay(const ImageD& img, const Partition& partition, const Eigen::MatrixXd* scores, double alpha) {
  if (img.channels() != 1 && img.channels() != 3)
    throw std::invalid_argument("overlay needs a 1- or 3-channel image");
  const int h = img.height(), w = img.width();
  ImageD out(h, w, 3);
  for (int c = 0; c < 3; ++c) out.planes[static_cast<std::size_t>(c)] = img.planes[img.channels() == 3 ? static_cast<std::size_t>(c) : 0];

  if (scores && scores->size() > 0) {
    const double peak = scores->maxCoeff();
    const int sh = static_cast<int>(scores->rows()), sw = static_cast<int>(scores->cols());
    for (int y = 0; y < h; ++y) {
      const int sy = std::min(sh - 1, static_cast<int>(static_cast<long long>(y) * sh / h));
      for (int x = 0; x < w; ++x) {
        const int sx = std::min(sw - 1, static_cast<int>(static_cast<long long>(x) * sw / w));
        const auto color = heat(peak > 0 ? (*scores)(sy, sx) / peak : 0.0);
        for (int c = 0; c < 3; ++c) out(y, x, c) = (1 - alpha) * out(y, x, c) + alpha * color[static_cast<std::size_t>(c)];
      }
    }
  }

  auto paint = [&](int y, int x) {
    for (int c = 0; c < 3; ++c) out(y, x, c) = kBoundaryColor[static_cast<std::size_t>(c)];
  };
  const double sy = h / partition.height, sx = w / partition.width;
  for (int r = 0; r < partition.rows(); ++r) {
    if (r > 0) {
      const int line = pixel_line(partition.y[r] * sy, h);
      for (int x = 0; x < w; ++x) paint(line, x);
    }
    const int top = pixel_line(partition.y[r] * sy, h);
    const int bottom = std::max(top + 1, std::min(h, static_cast<int>(std::ceil(partition.y[r + 1] * sy))));
    const auto& xs = partition.x[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 1; c + 1 < xs.size(); ++c) {
      const int line = pixel_line(xs[c] * sx, w);
      for (int y = top; y < bottom; ++y) paint(y, line);
    }
  }
  return out;
}

}  // namespace dart
