#pragma once

#include "dart/image.hpp"
#include "dart/partition.hpp"

#include <Eigen/Dense>

#include <array>

namespace dart {

inline constexpr std::array<double, 3> kBoundaryColor{1.0, 0.15, 0.1};

/// RGB rendering of `img` with 1-px cell boundaries of a partition given in image
/// coordinates. When `scores` is non-null it is alpha-blended as a heatmap first.
ImageD render_overlay(const ImageD& img, const Partition& partition, const Eigen::MatrixXd* scores = nullptr,
                      double alpha = 0.45);

}  // namespace dart
