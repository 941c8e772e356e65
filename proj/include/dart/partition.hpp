#pragma once

#include "dart/image.hpp"
#include "dart/quantile.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace dart {

enum class PartitionMode { irregular, regular };

std::string to_string(PartitionMode mode);
PartitionMode partition_mode_from_string(const std::string& name);

struct PartitionSpec {
  int rows = 1;
  int cols = 1;
  PartitionMode mode = PartitionMode::irregular;

  int seqlen() const { return rows * cols; }
  void validate() const;
  /// R = C = sqrt(seqlen); throws for non-square token budgets.
  static PartitionSpec square(int seqlen, PartitionMode mode = PartitionMode::irregular);
};

/// R row bands with fractional y extents, each split into C cells with its own x bounds.
struct Partition {
  PartitionMode mode = PartitionMode::irregular;
  double height = 0;                  // extent of the y axis
  double width = 0;                   // extent of the x axis
  Eigen::VectorXd y;                  // R+1 bounds, y[0] = 0, y[R] = height
  std::vector<Eigen::VectorXd> x;     // R vectors of C+1 bounds

  int rows() const { return static_cast<int>(y.size()) - 1; }
  int cols() const { return x.empty() ? 0 : static_cast<int>(x.front().size()) - 1; }
  Rect cell(int r, int c) const {
    return {x[static_cast<std::size_t>(r)][c], x[static_cast<std::size_t>(r)][c + 1], y[r], y[r + 1]};
  }
  /// Cells in row-major token order.
  std::vector<Rect> cells() const;
};

/// Upstream gradient on every bound of a partition (fixed outer bounds are ignored).
struct PartitionGrad {
  Eigen::VectorXd y;
  std::vector<Eigen::VectorXd> x;

  static PartitionGrad zeros_like(const Partition& p);
};

/// Fixed uniform grid over [0, height] x [0, width].
Partition uniform_partition(const PartitionSpec& spec, double height, double width);

/// Overlap of [lo, hi] with each unit interval [i, i+1]: first index and lengths.
struct BandWeights {
  Eigen::Index first = 0;
  Eigen::VectorXd weights;
};

BandWeights band_weights(double lo, double hi, Eigen::Index cells);

/// Reverse-derivative record of one partitioning call. Immutable after creation.
class PartitionTape {
 public:
  /// d(loss)/d(scores) given d(loss)/d(bounds).
  Eigen::MatrixXd backward(const PartitionGrad& upstream) const;

 private:
  friend struct PartitionBuilder;

  struct RowRecord {
    BandWeights band;
    PiecewiseDistribution<double> marginal;
    QuantileSet<double> quantiles;
  };

  Eigen::MatrixXd scores_;
  PartitionSpec spec_;
  std::vector<PiecewiseDistribution<double>> y_marginal_;  // exactly one entry
  QuantileSet<double> y_quantiles_;
  std::vector<RowRecord> rows_;                           // irregular mode
  std::vector<PiecewiseDistribution<double>> x_marginal_; // regular mode, one entry
  QuantileSet<double> x_quantiles_;
};

struct TapedPartition {
  Partition partition;
  PartitionTape tape;
};

/// Quantile partitioning of a strictly positive score map (any total mass), in score-grid units.
TapedPartition partition_taped(const Eigen::MatrixXd& scores, const PartitionSpec& spec);

Partition partition_irregular(const Eigen::MatrixXd& scores, const PartitionSpec& spec);
Partition partition_regular(const Eigen::MatrixXd& scores, const PartitionSpec& spec);

struct VideoPartition {
  Partition partition;
  std::vector<int> rows_per_frame;  // by row-band center
};

/// Irregular partitioning of a vertically stacked (F*H') x W' score map.
VideoPartition partition_video(const Eigen::MatrixXd& stacked_scores, int frames, const PartitionSpec& spec);

/// Rescales bounds from the partition's own extent to (height, width).
Partition scale_partition(const Partition& p, double height, double width);

/// Integral of the piecewise-constant score field over a rect in score-grid units.
double integrate_scores(const Eigen::MatrixXd& scores, const Rect& r);

}  // namespace dart
