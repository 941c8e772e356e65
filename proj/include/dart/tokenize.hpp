#pragma once

#include "dart/image.hpp"
#include "dart/partition.hpp"
#include "dart/resample.hpp"
#include "dart/scoremap.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dart {

struct TokenizerConfig {
  int rows = 14;
  int cols = 14;
  int patch = 16;
  int dim = 192;
  int channels = 3;
  PartitionMode mode = PartitionMode::irregular;
  ScorerKind scorer = ScorerKind::pixel_energy;
  int pe_samples = kDefaultPosEmbedSamples;
  int pe_grid = 0;     // positional-embedding grid side; 0 means rows x cols
  int resize_h = 448;  // 0 keeps the input resolution
  int resize_w = 448;
  int score_h = 0;     // 0 means working height / 4
  int score_w = 0;

  int seqlen() const { return rows * cols; }
  int patch_length() const { return patch * patch * channels; }
  int pe_grid_h() const { return pe_grid > 0 ? pe_grid : rows; }
  int pe_grid_w() const { return pe_grid > 0 ? pe_grid : cols; }
  PartitionSpec partition_spec() const { return {rows, cols, mode}; }
  void validate() const;
  /// Working resolution for an input of the given size.
  std::pair<int, int> working_size(int height, int width) const;
  CellGrid score_grid(int working_h, int working_w) const;
};

struct ProjectionWeights {
  Eigen::MatrixXd weight;  // D x (p*p*Ch)
  Eigen::VectorXd bias;    // D

  static ProjectionWeights zeros(int dim, int patch_length);
  static ProjectionWeights random(int dim, int patch_length, std::mt19937_64& rng);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("projection.weight", std::span<double>(weight.data(), static_cast<std::size_t>(weight.size())));
    fn("projection.bias", std::span<double>(bias.data(), static_cast<std::size_t>(bias.size())));
  }
};

PosEmbedMap random_posembed(int grid_h, int grid_w, int dim, std::mt19937_64& rng, double scale = 0.02);

/// Every trainable leaf of the tokenizer.
struct TokenizerParams {
  ProjectionWeights projection;
  PosEmbedMap posembed;
  CellMlp scorer;  // used by the learnable scorer only

  static TokenizerParams random(const TokenizerConfig& cfg, std::mt19937_64& rng);
  static TokenizerParams zeros_like(const TokenizerParams& other);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    projection.for_each_tensor(fn);
    for (std::size_t d = 0; d < posembed.grid.planes.size(); ++d) {
      auto& plane = posembed.grid.planes[d];
      fn("posembed", std::span<double>(plane.data(), static_cast<std::size_t>(plane.size())));
    }
    scorer.for_each_tensor(fn);
  }
};

struct TokenBatch {
  Eigen::MatrixXd tokens;     // seqlen x D
  std::vector<Patch> patches;
  std::vector<Rect> rects;    // in working-image coordinates
  ScoreMap scores;            // empty for the fixed-grid baseline
  Partition partition;        // working-image coordinates
};

struct TokenizerGrads {
  TokenizerParams params;
  Eigen::MatrixXd scores;      // d loss / d normalized score map
  Eigen::MatrixXd raw_scores;  // d loss / d raw scorer output
};

/// Stage-structured reverse record: scores -> bounds -> rects -> samples -> tokens.
/// Holds a pointer to the parameters, which must outlive it and stay unchanged.
class TokenizerTape {
 public:
  TokenizerGrads backward(const Eigen::MatrixXd& token_grad) const;

 private:
  friend struct TokenizerRunner;

  TokenizerConfig cfg_;
  const TokenizerParams* params_ = nullptr;
  ImageD working_;
  RawScoreMap raw_;
  bool adaptive_ = true;
  TapedPartition taped_;
  Partition image_partition_;
  std::vector<Patch> patches_;
};

struct TokenizeResult {
  TokenBatch batch;
  TokenizerTape tape;
};

/// scorer -> normalize -> partition -> scale -> resample -> project + positional embedding.
/// `external_scores` supplies the raw score map for the external-file scorer kind.
TokenizeResult tokenize_taped(const ImageD& img, const TokenizerConfig& cfg, const TokenizerParams& params,
                              const RawScoreMap* external_scores = nullptr);

TokenBatch tokenize(const ImageD& img, const TokenizerConfig& cfg, const TokenizerParams& params,
                    const RawScoreMap* external_scores = nullptr);

/// Conventional fixed-grid tokenizer through the same resampling and projection path.
TokenizeResult tokenize_uniform_baseline_taped(const ImageD& img, const TokenizerConfig& cfg,
                                               const TokenizerParams& params);
TokenBatch tokenize_uniform_baseline(const ImageD& img, const TokenizerConfig& cfg, const TokenizerParams& params);

/// Raw scorer output on a working image for the configured scorer kind.
RawScoreMap run_scorer(const ImageD& working, const TokenizerConfig& cfg, const TokenizerParams& params,
                       const RawScoreMap* external_scores);

/// Arithmetic accounting for one tokenized image.
///
/// projection_macs = seqlen * D * p^2 * Ch
/// resample_macs   = seqlen * p^2 * Ch * 3       (three lerps per bilinear sample)
/// posembed_macs   = seqlen * q^2 * D * 3 + seqlen * D   (samples plus averaging)
/// tokenizer_flops = 2 * (projection + resample + posembed)
/// backbone_flops  = seqlen * per-token cost
struct CostReport {
  std::int64_t seqlen = 0;
  std::int64_t projection_macs = 0;
  std::int64_t resample_macs = 0;
  std::int64_t posembed_macs = 0;
  double tokenizer_flops = 0;
  double backbone_flops = 0;
  double tokenizer_share = 0;  // tokenizer / (tokenizer + backbone)
};

CostReport count_cost(const TokenizerConfig& cfg, double backbone_per_token_flops);

}  // namespace dart
