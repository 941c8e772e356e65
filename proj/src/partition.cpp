#include "dart/partition.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dart {

std::string to_string(PartitionMode mode) {
  return mode == PartitionMode::irregular ? "irregular" : "regular";
}

PartitionMode partition_mode_from_string(const std::string& name) {
  if (name == "irregular") return PartitionMode::irregular;
  if (name == "regular") return PartitionMode::regular;
  throw std::invalid_argument("unknown partition mode '" + name + "'");
}

void PartitionSpec::validate() const {
  if (rows < 1 || cols < 1)
    throw std::invalid_argument("partition needs rows >= 1 and cols >= 1, got " + std::to_string(rows) +
                                "x" + std::to_string(cols));
}

PartitionSpec PartitionSpec::square(int seqlen, PartitionMode mode) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(seqlen))));
  if (seqlen < 1 || side * side != seqlen)
    throw std::invalid_argument("seqlen " + std::to_string(seqlen) + " is not a perfect square; give rows and cols");
  return {side, side, mode};
}

std::vector<Rect> Partition::cells() const {
  std::vector<Rect> out;
  out.reserve(static_cast<std::size_t>(rows() * cols()));
  for (int r = 0; r < rows(); ++r)
    for (int c = 0; c < cols(); ++c) out.push_back(cell(r, c));
  return out;
}

PartitionGrad PartitionGrad::zeros_like(const Partition& p) {
  PartitionGrad g;
  g.y = Eigen::VectorXd::Zero(p.y.size());
  g.x.assign(p.x.size(), Eigen::VectorXd::Zero(p.cols() + 1));
  return g;
}

Partition uniform_partition(const PartitionSpec& spec, double height, double width) {
  spec.validate();
  Partition p;
  p.mode = spec.mode;
  p.height = height;
  p.width = width;
  p.y.resize(spec.rows + 1);
  for (int r = 0; r <= spec.rows; ++r) p.y[r] = height * r / spec.rows;
  Eigen::VectorXd xs(spec.cols + 1);
  for (int c = 0; c <= spec.cols; ++c) xs[c] = width * c / spec.cols;
  p.x.assign(static_cast<std::size_t>(spec.rows), xs);
  return p;
}

BandWeights band_weights(double lo, double hi, Eigen::Index cells) {
  BandWeights b;
  const auto first = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(lo)), 0, cells - 1);
  const auto last = std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::ceil(hi)) - 1, first, cells - 1);
  b.first = first;
  b.weights.resize(last - first + 1);
  for (Eigen::Index i = first; i <= last; ++i) {
    const double d = static_cast<double>(i);
    b.weights[i - first] = std::max(0.0, std::min(hi, d + 1) - std::max(lo, d));
  }
  return b;
}

namespace {

void check_scores(const Eigen::MatrixXd& scores) {
  if (scores.size() == 0) throw std::invalid_argument("score map is empty");
  if (!scores.allFinite() || !(scores.minCoeff() > 0))
    throw std::invalid_argument("partitioning needs strictly positive finite scores");
}

Eigen::VectorXd with_ends(const Eigen::VectorXd& interior, double extent) {
  Eigen::VectorXd out(interior.size() + 2);
  out[0] = 0;
  out.segment(1, interior.size()) = interior;
  out[out.size() - 1] = extent;
  return out;
}

// Cell containing a bound under the right-continuous convention.
Eigen::Index containing_cell(double bound, Eigen::Index cells) {
  return std::clamp<Eigen::Index>(static_cast<Eigen::Index>(std::floor(bound)), 0, cells - 1);
}

}  // namespace

struct PartitionBuilder {
  static TapedPartition build(const Eigen::MatrixXd& scores, const PartitionSpec& spec) {
    spec.validate();
    check_scores(scores);
    const auto height = scores.rows();
    const auto width = scores.cols();

    TapedPartition out;
    PartitionTape& tape = out.tape;
    Partition& p = out.partition;
    tape.scores_ = scores;
    tape.spec_ = spec;
    p.mode = spec.mode;
    p.height = static_cast<double>(height);
    p.width = static_cast<double>(width);

    tape.y_marginal_.emplace_back(Eigen::VectorXd(scores.rowwise().sum()));
    tape.y_quantiles_ = uniform_quantiles(tape.y_marginal_.front(), spec.rows);
    p.y = with_ends(tape.y_quantiles_.points, p.height);

    if (spec.mode == PartitionMode::regular) {
      tape.x_marginal_.emplace_back(Eigen::VectorXd(scores.colwise().sum().transpose()));
      tape.x_quantiles_ = uniform_quantiles(tape.x_marginal_.front(), spec.cols);
      p.x.assign(static_cast<std::size_t>(spec.rows), with_ends(tape.x_quantiles_.points, p.width));
      return out;
    }

    tape.rows_.reserve(static_cast<std::size_t>(spec.rows));
    p.x.reserve(static_cast<std::size_t>(spec.rows));
    for (int r = 0; r < spec.rows; ++r) {
      BandWeights band = band_weights(p.y[r], p.y[r + 1], height);
      Eigen::VectorXd marginal =
          (band.weights.transpose() * scores.middleRows(band.first, band.weights.size())).transpose();
      PiecewiseDistribution<double> dist(std::move(marginal));
      auto quantiles = uniform_quantiles(dist, spec.cols);
      p.x.push_back(with_ends(quantiles.points, p.width));
      tape.rows_.push_back({std::move(band), std::move(dist), std::move(quantiles)});
    }
    return out;
  }
};

Eigen::MatrixXd PartitionTape::backward(const PartitionGrad& upstream) const {
  const int rows = spec_.rows;
  const int cols = spec_.cols;
  if (upstream.y.size() != rows + 1 || static_cast<int>(upstream.x.size()) != rows)
    throw std::invalid_argument("partition backward: upstream shape mismatch");
  const Eigen::Index height = scores_.rows();

  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(scores_.rows(), scores_.cols());
  Eigen::VectorXd g_y = upstream.y;

  if (spec_.mode == PartitionMode::regular) {
    Eigen::VectorXd g_x = Eigen::VectorXd::Zero(cols - 1);
    for (const auto& gx : upstream.x) g_x += gx.segment(1, cols - 1);
    const Eigen::VectorXd g_m = quantile_vjp<double>(x_marginal_.front(), x_quantiles_, g_x);
    grad.rowwise() += g_m.transpose();
  } else {
    Eigen::VectorXd bounds(rows + 1);
    bounds[0] = 0;
    bounds.segment(1, rows - 1) = y_quantiles_.points;
    bounds[rows] = static_cast<double>(height);
    for (int r = 0; r < rows; ++r) {
      const auto& rec = rows_[static_cast<std::size_t>(r)];
      const auto& gx = upstream.x[static_cast<std::size_t>(r)];
      if (gx.size() != cols + 1) throw std::invalid_argument("partition backward: x upstream size mismatch");
      const Eigen::VectorXd g_m = quantile_vjp<double>(rec.marginal, rec.quantiles, gx.segment(1, cols - 1));
      const auto n = rec.band.weights.size();
      grad.middleRows(rec.band.first, n) += rec.band.weights * g_m.transpose();
      // Band weights move with the row's own bounds: d w / d(lower) = -1, d w / d(upper) = +1
      // on the cell containing that bound.
      if (r > 0) g_y[r] -= scores_.row(containing_cell(bounds[r], height)).dot(g_m);
      if (r + 1 < rows) g_y[r + 1] += scores_.row(containing_cell(bounds[r + 1], height)).dot(g_m);
    }
  }

  const Eigen::VectorXd g_my = quantile_vjp<double>(y_marginal_.front(), y_quantiles_, g_y.segment(1, rows - 1));
  grad.colwise() += g_my;
  return grad;
}

TapedPartition partition_taped(const Eigen::MatrixXd& scores, const PartitionSpec& spec) {
  return PartitionBuilder::build(scores, spec);
}

Partition partition_irregular(const Eigen::MatrixXd& scores, const PartitionSpec& spec) {
  PartitionSpec s = spec;
  s.mode = PartitionMode::irregular;
  return partition_taped(scores, s).partition;
}

Partition partition_regular(const Eigen::MatrixXd& scores, const PartitionSpec& spec) {
  PartitionSpec s = spec;
  s.mode = PartitionMode::regular;
  return partition_taped(scores, s).partition;
}

VideoPartition partition_video(const Eigen::MatrixXd& stacked_scores, int frames, const PartitionSpec& spec) {
  if (frames < 1) throw std::invalid_argument("partition_video: frame count must be >= 1");
  if (stacked_scores.rows() % frames != 0)
    throw std::invalid_argument("partition_video: score height " + std::to_string(stacked_scores.rows()) +
                                " is not a multiple of " + std::to_string(frames) + " frames");
  PartitionSpec s = spec;
  s.mode = PartitionMode::irregular;
  VideoPartition out{partition_taped(stacked_scores, s).partition, std::vector<int>(static_cast<std::size_t>(frames), 0)};
  const double frame_height = static_cast<double>(stacked_scores.rows() / frames);
  for (int r = 0; r < s.rows; ++r) {
    const double center = 0.5 * (out.partition.y[r] + out.partition.y[r + 1]);
    const int f = std::clamp(static_cast<int>(std::floor(center / frame_height)), 0, frames - 1);
    ++out.rows_per_frame[static_cast<std::size_t>(f)];
  }
  return out;
}

Partition scale_partition(const Partition& p, double height, double width) {
  if (!(height > 0) || !(width > 0)) throw std::invalid_argument("scale_partition: target dims must be positive");
  if (!(p.height > 0) || !(p.width > 0)) throw std::invalid_argument("scale_partition: source dims must be positive");
  Partition out = p;
  const double sy = height / p.height;
  const double sx = width / p.width;
  out.height = height;
  out.width = width;
  out.y *= sy;
  out.y[out.y.size() - 1] = height;
  for (auto& xs : out.x) {
    xs *= sx;
    xs[xs.size() - 1] = width;
  }
  return out;
}

double integrate_scores(const Eigen::MatrixXd& scores, const Rect& r) {
  const BandWeights wy = band_weights(r.y0, r.y1, scores.rows());
  const BandWeights wx = band_weights(r.x0, r.x1, scores.cols());
  return wy.weights.dot(scores.block(wy.first, wx.first, wy.weights.size(), wx.weights.size()) * wx.weights);
}

}  // namespace dart
