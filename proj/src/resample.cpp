#include "dart/resample.hpp"

#include <stdexcept>
#include <string>

namespace dart {

namespace {

void check_rect(const Rect& r) {
  if (!r.valid())
    throw std::invalid_argument("degenerate rect [" + std::to_string(r.x0) + ", " + std::to_string(r.x1) + "] x [" +
                                std::to_string(r.y0) + ", " + std::to_string(r.y1) + "]");
}

void check_image(const ImageD& img) {
  if (img.empty()) throw std::invalid_argument("resample: image is empty");
}

}  // namespace

ImageD resample_region(const ImageD& img, const Rect& r, int out_h, int out_w) {
  check_image(img);
  check_rect(r);
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resample: output size must be positive");
  ImageD out(out_h, out_w, img.channels());
  for (int b = 0; b < out_h; ++b) {
    const double v = cell_center(r.y0, r.y1, b, out_h);
    for (int a = 0; a < out_w; ++a) {
      const auto tap = bilinear_tap(cell_center(r.x0, r.x1, a, out_w), v, img.width(), img.height());
      for (int c = 0; c < img.channels(); ++c)
        out.planes[static_cast<std::size_t>(c)](b, a) = bilinear_value(img.planes[static_cast<std::size_t>(c)], tap);
    }
  }
  return out;
}

RectGrad resample_region_backward(const ImageD& img, const Rect& r, const ImageD& upstream, ImageD* pixel_grad) {
  check_image(img);
  check_rect(r);
  if (upstream.channels() != img.channels())
    throw std::invalid_argument("resample backward: upstream has " + std::to_string(upstream.channels()) +
                                " channels, image has " + std::to_string(img.channels()));
  const int out_h = upstream.height(), out_w = upstream.width();
  if (pixel_grad && (pixel_grad->height() != img.height() || pixel_grad->width() != img.width() ||
                     pixel_grad->channels() != img.channels()))
    throw std::invalid_argument("resample backward: pixel gradient buffer shape mismatch");

  RectGrad g;
  for (int b = 0; b < out_h; ++b) {
    const double fb = (b + 0.5) / out_h;
    const double v = cell_center(r.y0, r.y1, b, out_h);
    for (int a = 0; a < out_w; ++a) {
      const double fa = (a + 0.5) / out_w;
      const auto tap = bilinear_tap(cell_center(r.x0, r.x1, a, out_w), v, img.width(), img.height());
      double gu = 0, gv = 0;
      for (int c = 0; c < img.channels(); ++c) {
        const auto& plane = img.planes[static_cast<std::size_t>(c)];
        const double up = upstream.planes[static_cast<std::size_t>(c)](b, a);
        if (up == 0.0) continue;
        const auto [du, dv] = bilinear_slope(plane, tap);
        gu += up * du;
        gv += up * dv;
        if (pixel_grad) bilinear_scatter(pixel_grad->planes[static_cast<std::size_t>(c)], tap, up);
      }
      g.x0 += gu * (1.0 - fa);
      g.x1 += gu * fa;
      g.y0 += gv * (1.0 - fb);
      g.y1 += gv * fb;
    }
  }
  return g;
}

Patch resample_patch(const ImageD& img, const Rect& r, int p) {
  if (p < 1) throw std::invalid_argument("patch size must be >= 1");
  const ImageD region = resample_region(img, r, p, p);
  Patch out;
  out.size = p;
  out.channels = img.channels();
  out.source = r;
  out.values.resize(static_cast<Eigen::Index>(p) * p * out.channels);
  Eigen::Index i = 0;
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x)
      for (int c = 0; c < out.channels; ++c) out.values[i++] = region(y, x, c);
  return out;
}

RectGrad resample_patch_backward(const ImageD& img, const Rect& r, int p, const Eigen::VectorXd& upstream,
                                 ImageD* pixel_grad) {
  check_image(img);
  const int ch = img.channels();
  if (upstream.size() != static_cast<Eigen::Index>(p) * p * ch)
    throw std::invalid_argument("resample_patch_backward: upstream size mismatch");
  ImageD up(p, p, ch);
  Eigen::Index i = 0;
  for (int y = 0; y < p; ++y)
    for (int x = 0; x < p; ++x)
      for (int c = 0; c < ch; ++c) up(y, x, c) = upstream[i++];
  return resample_region_backward(img, r, up, pixel_grad);
}

ImageD resize_bilinear(const ImageD& img, int height, int width) {
  check_image(img);
  if (height == img.height() && width == img.width()) return img;
  return resample_region(img, Rect{0, static_cast<double>(img.width()), 0, static_cast<double>(img.height())},
                         height, width);
}

Eigen::VectorXd resample_posembed(const PosEmbedMap& pe, const Rect& r, int q) {
  if (q < 1) throw std::invalid_argument("positional-embedding sample count must be >= 1");
  const ImageD samples = resample_region(pe.grid, r, q, q);
  Eigen::VectorXd out(pe.dim());
  for (int d = 0; d < pe.dim(); ++d) out[d] = samples.planes[static_cast<std::size_t>(d)].mean();
  return out;
}

RectGrad resample_posembed_backward(const PosEmbedMap& pe, const Rect& r, int q, const Eigen::VectorXd& upstream,
                                    ImageD* grid_grad) {
  if (q < 1) throw std::invalid_argument("positional-embedding sample count must be >= 1");
  if (upstream.size() != pe.dim()) throw std::invalid_argument("resample_posembed_backward: upstream size mismatch");
  ImageD up(q, q, pe.dim());
  for (int d = 0; d < pe.dim(); ++d) up.planes[static_cast<std::size_t>(d)].setConstant(upstream[d] / (q * q));
  return resample_region_backward(pe.grid, r, up, grid_grad);
}

ImageD stitch_regular(const Partition& partition, const std::vector<Patch>& patches) {
  if (partition.mode != PartitionMode::regular) throw std::invalid_argument("stitching requires regular grid");
  const int rows = partition.rows(), cols = partition.cols();
  if (static_cast<int>(patches.size()) != rows * cols)
    throw std::invalid_argument("stitch_regular: expected " + std::to_string(rows * cols) + " patches, got " +
                                std::to_string(patches.size()));
  const int p = patches.front().size, ch = patches.front().channels;
  ImageD out(rows * p, cols * p, ch);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Patch& patch = patches[static_cast<std::size_t>(r * cols + c)];
      if (patch.size != p || patch.channels != ch) throw std::invalid_argument("stitch_regular: patch shape mismatch");
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int k = 0; k < ch; ++k) out(r * p + y, c * p + x, k) = patch.at(y, x, k);
    }
  return out;
}

}  // namespace dart
