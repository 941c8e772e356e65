#include "dart/scoremap.hpp"

#include <cmath>
#include <stdexcept>

namespace dart {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void require_finite(const RawScoreMap& raw) {
  if (raw.size() == 0) throw std::invalid_argument("score map is empty");
  for (Eigen::Index c = 0; c < raw.cols(); ++c)
    for (Eigen::Index r = 0; r < raw.rows(); ++r)
      if (!std::isfinite(raw(r, c)))
        throw std::invalid_argument("non-finite raw score at cell (" + std::to_string(r) + ", " +
                                    std::to_string(c) + ")");
}

struct Standardized {
  Eigen::ArrayXXd z;
  double scale = 1;
  bool floored = false;
};

Standardized standardize(const RawScoreMap& raw) {
  const double mean = raw.mean();
  const Eigen::ArrayXXd centered = raw.array() - mean;
  const double std_raw = std::sqrt(centered.square().mean());
  Standardized s;
  s.floored = !(std_raw > kStdFloor);
  s.scale = s.floored ? kStdFloor : std_raw;
  s.z = centered / s.scale;
  return s;
}

void check_grid(const ImageD& image, CellGrid grid) {
  if (grid.rows < 1 || grid.cols < 1)
    throw std::invalid_argument("score grid must be at least 1x1");
  if (image.empty()) throw std::invalid_argument("image is empty");
  if (image.height() < grid.rows || image.width() < grid.cols)
    throw std::invalid_argument("image " + std::to_string(image.height()) + "x" +
                                std::to_string(image.width()) + " is smaller than score grid " +
                                std::to_string(grid.rows) + "x" + std::to_string(grid.cols));
}

void check_mlp_inputs(const CellMlp& mlp, Eigen::Index expected) {
  if (mlp.inputs() != expected || mlp.b1.size() != mlp.hidden() || mlp.w2.size() != mlp.hidden())
    throw std::invalid_argument("scorer weights expect " + std::to_string(mlp.inputs()) +
                                " inputs (hidden " + std::to_string(mlp.hidden()) +
                                "), cell features have " + std::to_string(expected));
}

Eigen::MatrixXd to_grid(const Eigen::VectorXd& per_cell, int rows, int cols) {
  Eigen::MatrixXd out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out(r, c) = per_cell[r * cols + c];
  return out;
}

Eigen::VectorXd from_grid(const Eigen::MatrixXd& grid) {
  Eigen::VectorXd out(grid.size());
  for (Eigen::Index r = 0; r < grid.rows(); ++r)
    for (Eigen::Index c = 0; c < grid.cols(); ++c) out[r * grid.cols() + c] = grid(r, c);
  return out;
}

}  // namespace

ScoreMap ScoreMap::from_normalized(Eigen::MatrixXd values) {
  if (values.size() == 0) throw std::invalid_argument("score map is empty");
  if (!values.allFinite()) throw std::invalid_argument("score map has non-finite entries");
  if (!(values.minCoeff() > 0)) throw std::invalid_argument("score map entries must be strictly positive");
  if (std::abs(values.sum() - 1.0) > 1e-9) throw std::invalid_argument("score map must sum to 1");
  return ScoreMap(std::move(values));
}

ScoreMap normalize_scores(const RawScoreMap& raw) {
  require_finite(raw);
  const auto st = standardize(raw);
  const Eigen::ArrayXXd lifted = st.z.unaryExpr(&sigmoid) + epsilon_floor(raw.size());
  return ScoreMap(Eigen::MatrixXd(lifted / lifted.sum()));
}

Eigen::MatrixXd normalize_scores_backward(const RawScoreMap& raw, const Eigen::MatrixXd& upstream) {
  require_finite(raw);
  if (upstream.rows() != raw.rows() || upstream.cols() != raw.cols())
    throw std::invalid_argument("normalize_scores_backward: upstream shape mismatch");
  const auto st = standardize(raw);
  const Eigen::ArrayXXd s = st.z.unaryExpr(&sigmoid);
  const Eigen::ArrayXXd lifted = s + epsilon_floor(raw.size());
  const double total = lifted.sum();
  const Eigen::ArrayXXd normalized = lifted / total;

  const Eigen::ArrayXXd g_lifted = (upstream.array() - (upstream.array() * normalized).sum()) / total;
  const Eigen::ArrayXXd g_z = g_lifted * s * (1.0 - s);
  Eigen::ArrayXXd g_raw = g_z - g_z.mean();
  if (!st.floored) g_raw -= st.z * (g_z * st.z).mean();
  return (g_raw / st.scale).matrix();
}

RawScoreMap score_pixel_energy(const ImageD& image, CellGrid grid) {
  check_grid(image, grid);
  const int h = image.height();
  const int w = image.width();

  Eigen::MatrixXd luma;
  if (image.channels() == 3)
    luma = 0.299 * image.planes[0] + 0.587 * image.planes[1] + 0.114 * image.planes[2];
  else {
    luma = Eigen::MatrixXd::Zero(h, w);
    for (const auto& p : image.planes) luma += p;
    luma /= image.channels();
  }

  Eigen::MatrixXd magnitude(h, w);
  for (int y = 0; y < h; ++y) {
    const int yu = std::max(y - 1, 0), yd = std::min(y + 1, h - 1);
    for (int x = 0; x < w; ++x) {
      const int xl = std::max(x - 1, 0), xr = std::min(x + 1, w - 1);
      const double gx = 0.5 * (luma(y, xr) - luma(y, xl));
      const double gy = 0.5 * (luma(yd, x) - luma(yu, x));
      magnitude(y, x) = std::sqrt(gx * gx + gy * gy);
    }
  }

  RawScoreMap out(grid.rows, grid.cols);
  for (int r = 0; r < grid.rows; ++r) {
    const auto [y0, y1] = cell_span(r, grid.rows, h);
    for (int c = 0; c < grid.cols; ++c) {
      const auto [x0, x1] = cell_span(c, grid.cols, w);
      out(r, c) = magnitude.block(y0, x0, y1 - y0, x1 - x0).mean();
    }
  }
  return out;
}

CellMlp CellMlp::zeros(int inputs, int hidden) {
  CellMlp m;
  m.w1 = Eigen::MatrixXd::Zero(hidden, inputs);
  m.b1 = Eigen::VectorXd::Zero(hidden);
  m.w2 = Eigen::VectorXd::Zero(hidden);
  return m;
}

CellMlp CellMlp::random(int inputs, int hidden, std::mt19937_64& rng) {
  CellMlp m = zeros(inputs, hidden);
  const double limit = std::sqrt(6.0 / (inputs + hidden));
  std::uniform_real_distribution<double> first(-limit, limit);
  std::uniform_real_distribution<double> second(-0.1, 0.1);
  for (Eigen::Index i = 0; i < m.w1.size(); ++i) m.w1.data()[i] = first(rng);
  for (Eigen::Index i = 0; i < m.w2.size(); ++i) m.w2[i] = second(rng);
  return m;
}

Eigen::MatrixXd pool_cell_features(const ImageD& image, CellGrid grid) {
  check_grid(image, grid);
  const int ch = image.channels();
  Eigen::MatrixXd features(grid.rows * grid.cols, 2 * ch);
  for (int r = 0; r < grid.rows; ++r) {
    const auto [y0, y1] = cell_span(r, grid.rows, image.height());
    for (int c = 0; c < grid.cols; ++c) {
      const auto [x0, x1] = cell_span(c, grid.cols, image.width());
      const int cell = r * grid.cols + c;
      for (int k = 0; k < ch; ++k) {
        const auto block = image.planes[static_cast<std::size_t>(k)].block(y0, x0, y1 - y0, x1 - x0).array();
        const double mean = block.mean();
        features(cell, k) = mean;
        features(cell, ch + k) = std::sqrt((block - mean).square().mean() + kVarianceSmoothing);
      }
    }
  }
  return features;
}

ImageD pool_cell_features_backward(const ImageD& image, CellGrid grid, const Eigen::MatrixXd& upstream) {
  check_grid(image, grid);
  const int ch = image.channels();
  if (upstream.rows() != grid.rows * grid.cols || upstream.cols() != 2 * ch)
    throw std::invalid_argument("pool_cell_features_backward: upstream shape mismatch");
  ImageD grad(image.height(), image.width(), ch);
  for (int r = 0; r < grid.rows; ++r) {
    const auto [y0, y1] = cell_span(r, grid.rows, image.height());
    for (int c = 0; c < grid.cols; ++c) {
      const auto [x0, x1] = cell_span(c, grid.cols, image.width());
      const int cell = r * grid.cols + c;
      const double count = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int k = 0; k < ch; ++k) {
        const auto& plane = image.planes[static_cast<std::size_t>(k)];
        const Eigen::ArrayXXd block = plane.block(y0, x0, y1 - y0, x1 - x0).array();
        const double mean = block.mean();
        const double sd = std::sqrt((block - mean).square().mean() + kVarianceSmoothing);
        // d sd / d x_p = (x_p - mean) / (count * sd); the mean term sums to zero.
        const Eigen::ArrayXXd g = upstream(cell, k) / count + upstream(cell, ch + k) * (block - mean) / (count * sd);
        grad.planes[static_cast<std::size_t>(k)].block(y0, x0, y1 - y0, x1 - x0) += g.matrix();
      }
    }
  }
  return grad;
}

MlpCache mlp_forward(const CellMlp& mlp, const Eigen::MatrixXd& features) {
  check_mlp_inputs(mlp, features.cols());
  MlpCache cache;
  cache.hidden = ((features * mlp.w1.transpose()).rowwise() + mlp.b1.transpose()).array().tanh().matrix();
  cache.output = (cache.hidden * mlp.w2).array() + mlp.b2;
  return cache;
}

MlpGrad mlp_backward(const CellMlp& mlp, const Eigen::MatrixXd& features, const MlpCache& cache,
                     const Eigen::VectorXd& upstream) {
  check_mlp_inputs(mlp, features.cols());
  MlpGrad g;
  g.params = CellMlp::zeros(mlp.inputs(), mlp.hidden());
  g.params.w2 = cache.hidden.transpose() * upstream;
  g.params.b2 = upstream.sum();
  const Eigen::MatrixXd pre =
      (upstream * mlp.w2.transpose()).array() * (1.0 - cache.hidden.array().square());
  g.params.w1 = pre.transpose() * features;
  g.params.b1 = pre.colwise().sum().transpose();
  g.features = pre * mlp.w1;
  return g;
}

RawScoreMap score_learnable(const ImageD& image, CellGrid grid, const CellMlp& mlp) {
  const Eigen::MatrixXd features = pool_cell_features(image, grid);
  return to_grid(mlp_forward(mlp, features).output, grid.rows, grid.cols);
}

LearnableScorerGrad score_learnable_backward(const ImageD& image, CellGrid grid, const CellMlp& mlp,
                                             const Eigen::MatrixXd& upstream) {
  if (upstream.rows() != grid.rows || upstream.cols() != grid.cols)
    throw std::invalid_argument("score_learnable_backward: upstream shape mismatch");
  const Eigen::MatrixXd features = pool_cell_features(image, grid);
  const auto cache = mlp_forward(mlp, features);
  auto g = mlp_backward(mlp, features, cache, from_grid(upstream));
  return {std::move(g.params), pool_cell_features_backward(image, grid, g.features)};
}

CellMlp score_learnable_weights_backward(const ImageD& image, CellGrid grid, const CellMlp& mlp,
                                         const Eigen::MatrixXd& upstream) {
  if (upstream.rows() != grid.rows || upstream.cols() != grid.cols)
    throw std::invalid_argument("score_learnable_weights_backward: upstream shape mismatch");
  const Eigen::MatrixXd features = pool_cell_features(image, grid);
  return mlp_backward(mlp, features, mlp_forward(mlp, features), from_grid(upstream)).params;
}

Eigen::MatrixXd temporal_features(const FrameStack& frames, CellGrid grid) {
  if (frames.empty()) throw std::invalid_argument("frame stack is empty");
  const int h = frames.front().height(), w = frames.front().width(), ch = frames.front().channels();
  for (std::size_t f = 1; f < frames.size(); ++f)
    if (frames[f].height() != h || frames[f].width() != w || frames[f].channels() != ch)
      throw std::invalid_argument("frame " + std::to_string(f) + " dims differ from frame 0");

  const Eigen::Index cells = static_cast<Eigen::Index>(grid.rows) * grid.cols;
  Eigen::MatrixXd out(cells * static_cast<Eigen::Index>(frames.size()), 4 * ch);
  Eigen::MatrixXd previous;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    Eigen::MatrixXd current = pool_cell_features(frames[f], grid);
    auto block = out.middleRows(static_cast<Eigen::Index>(f) * cells, cells);
    block.leftCols(2 * ch) = current;
    if (f == 0)
      block.rightCols(2 * ch).setZero();
    else
      block.rightCols(2 * ch) = (current - previous).cwiseAbs();
    previous = std::move(current);
  }
  return out;
}

RawScoreMap score_temporal(const FrameStack& frames, CellGrid grid, const CellMlp& mlp) {
  const Eigen::MatrixXd features = temporal_features(frames, grid);
  const auto out = mlp_forward(mlp, features).output;
  return to_grid(out, grid.rows * static_cast<int>(frames.size()), grid.cols);
}

CellMlp score_temporal_backward(const FrameStack& frames, CellGrid grid, const CellMlp& mlp,
                                const Eigen::MatrixXd& upstream) {
  const Eigen::MatrixXd features = temporal_features(frames, grid);
  if (upstream.rows() != grid.rows * static_cast<Eigen::Index>(frames.size()) || upstream.cols() != grid.cols)
    throw std::invalid_argument("score_temporal_backward: upstream shape mismatch");
  const auto cache = mlp_forward(mlp, features);
  return mlp_backward(mlp, features, cache, from_grid(upstream)).params;
}

CellMlp motion_scorer(int channels) {
  CellMlp m = CellMlp::zeros(4 * channels, 1);
  m.w1.rightCols(2 * channels).setConstant(1.0);
  m.w2[0] = 1.0;
  return m;
}

std::string to_string(ScorerKind kind) {
  switch (kind) {
    case ScorerKind::external_file: return "external-file";
    case ScorerKind::pixel_energy: return "pixel-energy";
    case ScorerKind::learnable_cell_mlp: return "learnable-cell-mlp";
    case ScorerKind::temporal_diff: return "temporal-diff";
  }
  return "unknown";
}

ScorerKind scorer_kind_from_string(const std::string& name) {
  if (name == "external-file") return ScorerKind::external_file;
  if (name == "pixel-energy") return ScorerKind::pixel_energy;
  if (name == "learnable-cell-mlp") return ScorerKind::learnable_cell_mlp;
  if (name == "temporal-diff") return ScorerKind::temporal_diff;
  throw std::invalid_argument("unknown scorer kind '" + name + "'");
}

}  // namespace dart
