#include "dart/tokenize.hpp"

#include "dart/error.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dart {

void TokenizerConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("tokenizer config: " + what); };
  if (rows < 1 || cols < 1) fail("rows and cols must be >= 1");
  if (patch < 1) fail("patch size must be >= 1");
  if (dim < 1) fail("embedding dim must be >= 1");
  if (channels < 1) fail("channels must be >= 1");
  if (pe_samples < 1) fail("positional-embedding samples must be >= 1");
  if (pe_grid < 0) fail("positional-embedding grid must be >= 0");
  if (resize_h < 0 || resize_w < 0 || (resize_h == 0) != (resize_w == 0))
    fail("resize target must be both zero or both positive");
  if (score_h < 0 || score_w < 0 || (score_h == 0) != (score_w == 0))
    fail("score grid must be both zero or both positive");
}

std::pair<int, int> TokenizerConfig::working_size(int height, int width) const {
  if (resize_h > 0) return {resize_h, resize_w};
  return {height, width};
}

CellGrid TokenizerConfig::score_grid(int working_h, int working_w) const {
  if (score_h > 0) return {score_h, score_w};
  return {std::max(1, working_h / 4), std::max(1, working_w / 4)};
}

ProjectionWeights ProjectionWeights::zeros(int dim, int patch_length) {
  return {Eigen::MatrixXd::Zero(dim, patch_length), Eigen::VectorXd::Zero(dim)};
}

ProjectionWeights ProjectionWeights::random(int dim, int patch_length, std::mt19937_64& rng) {
  ProjectionWeights w = zeros(dim, patch_length);
  const double limit = std::sqrt(3.0 / patch_length);
  std::uniform_real_distribution<double> u(-limit, limit);
  for (Eigen::Index i = 0; i < w.weight.size(); ++i) w.weight.data()[i] = u(rng);
  return w;
}

PosEmbedMap random_posembed(int grid_h, int grid_w, int dim, std::mt19937_64& rng, double scale) {
  PosEmbedMap pe{ImageD(grid_h, grid_w, dim)};
  std::normal_distribution<double> n(0.0, scale);
  for (auto& plane : pe.grid.planes)
    for (Eigen::Index i = 0; i < plane.size(); ++i) plane.data()[i] = n(rng);
  return pe;
}

TokenizerParams TokenizerParams::random(const TokenizerConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  TokenizerParams p;
  p.projection = ProjectionWeights::random(cfg.dim, cfg.patch_length(), rng);
  p.posembed = random_posembed(cfg.pe_grid_h(), cfg.pe_grid_w(), cfg.dim, rng);
  p.scorer = CellMlp::random(2 * cfg.channels, kDefaultScorerHidden, rng);
  return p;
}

TokenizerParams TokenizerParams::zeros_like(const TokenizerParams& other) {
  TokenizerParams p;
  p.projection = ProjectionWeights::zeros(static_cast<int>(other.projection.weight.rows()),
                                          static_cast<int>(other.projection.weight.cols()));
  p.posembed.grid = ImageD(other.posembed.grid_height(), other.posembed.grid_width(), other.posembed.dim());
  p.scorer = CellMlp::zeros(other.scorer.inputs(), other.scorer.hidden());
  return p;
}

RawScoreMap run_scorer(const ImageD& working, const TokenizerConfig& cfg, const TokenizerParams& params,
                       const RawScoreMap* external_scores) {
  const CellGrid grid = cfg.score_grid(working.height(), working.width());
  switch (cfg.scorer) {
    case ScorerKind::external_file:
      if (!external_scores) throw std::invalid_argument("external scorer selected but no score map supplied");
      return *external_scores;
    case ScorerKind::pixel_energy:
      return score_pixel_energy(working, grid);
    case ScorerKind::learnable_cell_mlp:
      return score_learnable(working, grid, params.scorer);
    case ScorerKind::temporal_diff:
      throw std::invalid_argument("temporal scorer applies to frame stacks, not single images");
  }
  throw std::invalid_argument("unknown scorer kind");
}

namespace {

Rect posembed_rect(const Rect& r, const PosEmbedMap& pe, const ImageD& working) {
  const double sx = static_cast<double>(pe.grid_width()) / working.width();
  const double sy = static_cast<double>(pe.grid_height()) / working.height();
  return {r.x0 * sx, r.x1 * sx, r.y0 * sy, r.y1 * sy};
}

void check_params(const TokenizerConfig& cfg, const TokenizerParams& params) {
  if (params.projection.weight.rows() != cfg.dim || params.projection.weight.cols() != cfg.patch_length() ||
      params.projection.bias.size() != cfg.dim)
    throw std::invalid_argument("projection weights are " + std::to_string(params.projection.weight.rows()) + "x" +
                                std::to_string(params.projection.weight.cols()) + ", config needs " +
                                std::to_string(cfg.dim) + "x" + std::to_string(cfg.patch_length()));
  if (params.posembed.dim() != cfg.dim)
    throw std::invalid_argument("positional embeddings have dim " + std::to_string(params.posembed.dim()) +
                                ", config needs " + std::to_string(cfg.dim));
}

}  // namespace

struct TokenizerRunner {
  static TokenizeResult run(const ImageD& img, const TokenizerConfig& cfg, const TokenizerParams& params,
                            const RawScoreMap* external_scores, bool adaptive) {
    cfg.validate();
    check_params(cfg, params);
    if (img.empty()) throw StageError("input", "image is empty");
    if (img.channels() != cfg.channels)
      throw StageError("input", "image has " + std::to_string(img.channels()) + " channels, config expects " +
                                    std::to_string(cfg.channels));

    TokenizeResult out;
    TokenizerTape& tape = out.tape;
    TokenBatch& batch = out.batch;
    tape.cfg_ = cfg;
    tape.params_ = &params;
    tape.adaptive_ = adaptive;

    const auto [wh, ww] = cfg.working_size(img.height(), img.width());
    try {
      tape.working_ = resize_bilinear(img, wh, ww);
    } catch (const std::exception& e) {
      throw StageError("resize", e.what());
    }
    const ImageD& working = tape.working_;

    if (adaptive) {
      try {
        tape.raw_ = run_scorer(working, cfg, params, external_scores);
      } catch (const std::exception& e) {
        throw StageError("score", e.what());
      }
      try {
        batch.scores = normalize_scores(tape.raw_);
      } catch (const std::exception& e) {
        throw StageError("normalize", e.what());
      }
      try {
        tape.taped_ = partition_taped(batch.scores.values(), cfg.partition_spec());
      } catch (const std::exception& e) {
        throw StageError("partition", e.what());
      }
      tape.image_partition_ = scale_partition(tape.taped_.partition, working.height(), working.width());
    } else {
      tape.image_partition_ = uniform_partition(cfg.partition_spec(), working.height(), working.width());
    }
    batch.partition = tape.image_partition_;
    batch.rects = batch.partition.cells();

    const int seqlen = cfg.seqlen();
    batch.tokens.resize(seqlen, cfg.dim);
    batch.patches.reserve(static_cast<std::size_t>(seqlen));
    try {
      for (int k = 0; k < seqlen; ++k) {
        const Rect& r = batch.rects[static_cast<std::size_t>(k)];
        Patch patch = resample_patch(working, r, cfg.patch);
        const Eigen::VectorXd pe = resample_posembed(params.posembed, posembed_rect(r, params.posembed, working),
                                                     cfg.pe_samples);
        batch.tokens.row(k) = (params.projection.weight * patch.values + params.projection.bias + pe).transpose();
        batch.patches.push_back(std::move(patch));
      }
    } catch (const std::exception& e) {
      throw StageError("resample", e.what());
    }
    tape.patches_ = batch.patches;
    return out;
  }
};

TokenizerGrads TokenizerTape::backward(const Eigen::MatrixXd& token_grad) const {
  const TokenizerConfig& cfg = cfg_;
  const TokenizerParams& params = *params_;
  const int seqlen = cfg.seqlen();
  if (token_grad.rows() != seqlen || token_grad.cols() != cfg.dim)
    throw std::invalid_argument("tokenizer backward: token gradient must be " + std::to_string(seqlen) + "x" +
                                std::to_string(cfg.dim));

  TokenizerGrads g;
  g.params = TokenizerParams::zeros_like(params);
  PartitionGrad bounds = PartitionGrad::zeros_like(image_partition_);
  const double pe_sx = static_cast<double>(params.posembed.grid_width()) / working_.width();
  const double pe_sy = static_cast<double>(params.posembed.grid_height()) / working_.height();

  for (int k = 0; k < seqlen; ++k) {
    const Eigen::VectorXd gt = token_grad.row(k).transpose();
    const Patch& patch = patches_[static_cast<std::size_t>(k)];
    g.params.projection.weight.noalias() += gt * patch.values.transpose();
    g.params.projection.bias += gt;

    const Eigen::VectorXd g_patch = params.projection.weight.transpose() * gt;
    const RectGrad from_patch = resample_patch_backward(working_, patch.source, cfg.patch, g_patch, nullptr);
    const RectGrad from_pe =
        resample_posembed_backward(params.posembed, posembed_rect(patch.source, params.posembed, working_),
                                   cfg.pe_samples, gt, &g.params.posembed.grid);

    const int r = k / cfg.cols, c = k % cfg.cols;
    bounds.y[r] += from_patch.y0 + from_pe.y0 * pe_sy;
    bounds.y[r + 1] += from_patch.y1 + from_pe.y1 * pe_sy;
    bounds.x[static_cast<std::size_t>(r)][c] += from_patch.x0 + from_pe.x0 * pe_sx;
    bounds.x[static_cast<std::size_t>(r)][c + 1] += from_patch.x1 + from_pe.x1 * pe_sx;
  }

  if (!adaptive_) return g;

  // Image-space bounds are score-grid bounds times the grid-to-image scale.
  const Partition& grid_partition = taped_.partition;
  bounds.y *= working_.height() / grid_partition.height;
  for (auto& xs : bounds.x) xs *= working_.width() / grid_partition.width;

  g.scores = taped_.tape.backward(bounds);
  g.raw_scores = normalize_scores_backward(raw_, g.scores);
  if (cfg.scorer == ScorerKind::learnable_cell_mlp) {
    const CellGrid grid = cfg.score_grid(working_.height(), working_.width());
    g.params.scorer = score_learnable_weights_backward(working_, grid, params.scorer, g.raw_scores);
  }
  return g;
}

TokenizeResult tokenize_taped(const ImageD& img, const TokenizerConfig& cfg, const TokenizerParams& params,
                              const RawScoreMap* external_scores) {
  return TokenizerRunner::run(img, cfg, params, external_scores, true);
}

TokenBatch tokenize(const ImageD& img, const TokenizerConfig& cfg, const TokenizerParams& params,
                    const RawScoreMap* external_scores) {
  return tokenize_taped(img, cfg, params, external_scores).batch;
}

TokenizeResult tokenize_uniform_baseline_taped(const ImageD& img, const TokenizerConfig& cfg,
                                               const TokenizerParams& params) {
  return TokenizerRunner::run(img, cfg, params, nullptr, false);
}

TokenBatch tokenize_uniform_baseline(const ImageD& img, const TokenizerConfig& cfg, const TokenizerParams& params) {
  return tokenize_uniform_baseline_taped(img, cfg, params).batch;
}

CostReport count_cost(const TokenizerConfig& cfg, double backbone_per_token_flops) {
  CostReport r;
  const std::int64_t seqlen = cfg.seqlen();
  const std::int64_t samples = static_cast<std::int64_t>(cfg.patch) * cfg.patch;
  const std::int64_t q2 = static_cast<std::int64_t>(cfg.pe_samples) * cfg.pe_samples;
  r.seqlen = seqlen;
  r.projection_macs = seqlen * cfg.dim * samples * cfg.channels;
  r.resample_macs = seqlen * samples * cfg.channels * 3;
  r.posembed_macs = seqlen * q2 * cfg.dim * 3 + seqlen * cfg.dim;
  r.tokenizer_flops = 2.0 * static_cast<double>(r.projection_macs + r.resample_macs + r.posembed_macs);
  r.backbone_flops = static_cast<double>(seqlen) * backbone_per_token_flops;
  const double total = r.tokenizer_flops + r.backbone_flops;
  r.tokenizer_share = total > 0 ? r.tokenizer_flops / total : 0.0;
  return r;
}

}  // namespace dart
