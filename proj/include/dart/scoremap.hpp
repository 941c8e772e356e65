#pragma once

#include "dart/image.hpp"

#include <Eigen/Dense>

#include <random>
#include <span>
#include <string>
#include <vector>

namespace dart {

/// Unbounded scorer output, H'×W'.
using RawScoreMap = Eigen::MatrixXd;

/// Strictly positive H'×W' distribution summing to one.
class ScoreMap {
 public:
  ScoreMap() = default;

  /// Validates an already normalized map (positive, finite, sum 1 within 1e-9).
  static ScoreMap from_normalized(Eigen::MatrixXd values);

  const Eigen::MatrixXd& values() const { return values_; }
  int rows() const { return static_cast<int>(values_.rows()); }
  int cols() const { return static_cast<int>(values_.cols()); }
  double operator()(int r, int c) const { return values_(r, c); }

 private:
  explicit ScoreMap(Eigen::MatrixXd v) : values_(std::move(v)) {}
  friend ScoreMap normalize_scores(const RawScoreMap& raw);

  Eigen::MatrixXd values_;
};

inline constexpr double kStdFloor = 1e-6;

/// Floor mass added to each cell before the final renormalization.
inline double epsilon_floor(Eigen::Index cells) { return 1e-6 / static_cast<double>(cells); }

/// standardize -> sigmoid -> + epsilon_floor -> divide by sum.
ScoreMap normalize_scores(const RawScoreMap& raw);

/// d(loss)/d(raw) given d(loss)/d(normalized map).
Eigen::MatrixXd normalize_scores_backward(const RawScoreMap& raw, const Eigen::MatrixXd& upstream);

struct CellGrid {
  int rows = 0;
  int cols = 0;
};

/// Integer pixel span [begin, end) of score cell `index` when `pixels` are split into `cells`.
inline std::pair<int, int> cell_span(int index, int cells, int pixels) {
  const auto begin = static_cast<int>(static_cast<long long>(index) * pixels / cells);
  const auto end = static_cast<int>(static_cast<long long>(index + 1) * pixels / cells);
  return {begin, end};
}

/// Per-cell mean central-difference gradient magnitude of luminance.
RawScoreMap score_pixel_energy(const ImageD& image, CellGrid grid);

/// Two-layer perceptron applied independently to each cell's feature vector:
/// out = w2 . tanh(w1 f + b1) + b2.
struct CellMlp {
  Eigen::MatrixXd w1;  // hidden x inputs
  Eigen::VectorXd b1;  // hidden
  Eigen::VectorXd w2;  // hidden
  double b2 = 0;

  int inputs() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }

  static CellMlp zeros(int inputs, int hidden);
  /// Glorot-uniform hidden layer, small output layer.
  static CellMlp random(int inputs, int hidden, std::mt19937_64& rng);

  /// Visits every parameter block as a flat span.
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("scorer.w1", std::span<double>(w1.data(), static_cast<std::size_t>(w1.size())));
    fn("scorer.b1", std::span<double>(b1.data(), static_cast<std::size_t>(b1.size())));
    fn("scorer.w2", std::span<double>(w2.data(), static_cast<std::size_t>(w2.size())));
    fn("scorer.b2", std::span<double>(&b2, 1));
  }
};

inline constexpr int kDefaultScorerHidden = 16;
/// Smoothing added to the cell variance so the pooled std stays differentiable.
inline constexpr double kVarianceSmoothing = 1e-8;

/// Cell features: per-channel mean then per-channel (smoothed) std. Rows are cells in row-major order.
Eigen::MatrixXd pool_cell_features(const ImageD& image, CellGrid grid);

/// Pulls d(loss)/d(features) back onto pixels.
ImageD pool_cell_features_backward(const ImageD& image, CellGrid grid, const Eigen::MatrixXd& upstream);

struct MlpCache {
  Eigen::MatrixXd hidden;  // cells x hidden, post-activation
  Eigen::VectorXd output;  // cells
};

MlpCache mlp_forward(const CellMlp& mlp, const Eigen::MatrixXd& features);

struct MlpGrad {
  CellMlp params;
  Eigen::MatrixXd features;
};

MlpGrad mlp_backward(const CellMlp& mlp, const Eigen::MatrixXd& features, const MlpCache& cache,
                     const Eigen::VectorXd& upstream);

/// Learnable scorer on a single image: features are 2*channels wide.
RawScoreMap score_learnable(const ImageD& image, CellGrid grid, const CellMlp& mlp);

struct LearnableScorerGrad {
  CellMlp weights;
  ImageD pixels;
};

LearnableScorerGrad score_learnable_backward(const ImageD& image, CellGrid grid, const CellMlp& mlp,
                                             const Eigen::MatrixXd& upstream);
/// Weight gradient only, skipping the per-pixel pass.
CellMlp score_learnable_weights_backward(const ImageD& image, CellGrid grid, const CellMlp& mlp,
                                         const Eigen::MatrixXd& upstream);

using FrameStack = std::vector<ImageD>;

/// Temporal features per cell: [frame features, |frame features - previous frame features|];
/// 4*channels wide. Frame 0 uses a zero difference.
Eigen::MatrixXd temporal_features(const FrameStack& frames, CellGrid grid_per_frame);

/// Scores stacked vertically in frame order: (F*H') x W'.
RawScoreMap score_temporal(const FrameStack& frames, CellGrid grid_per_frame, const CellMlp& mlp);

/// Weight gradient of score_temporal (frames are not differentiated through |.|).
CellMlp score_temporal_backward(const FrameStack& frames, CellGrid grid_per_frame, const CellMlp& mlp,
                                const Eigen::MatrixXd& upstream);

/// Hand-set temporal weights: a single hidden unit summing the difference features.
CellMlp motion_scorer(int channels);

enum class ScorerKind { external_file, pixel_energy, learnable_cell_mlp, temporal_diff };

std::string to_string(ScorerKind kind);
ScorerKind scorer_kind_from_string(const std::string& name);

struct ScorerSpec {
  ScorerKind kind = ScorerKind::pixel_energy;
  CellMlp weights;                // learnable and temporal kinds
  RawScoreMap external;           // external_file kind
};

}  // namespace dart
