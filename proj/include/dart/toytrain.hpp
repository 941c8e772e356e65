#pragma once

#include "dart/image.hpp"
#include "dart/tokenize.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dart::toy {

struct DatasetConfig {
  int canvas = 112;
  int glyph = 14;
  int classes = 10;
  int channels = 3;
  double noise_max = 0.3;
  double glyph_value = 1.0;
  // Fixed input standardization applied to every canvas after it is drawn. The raw canvases
  // (mostly noise in [0, 0.3]) have mean ~0.15 and std ~0.087; centering and scaling them
  // keeps plain SGD at lr 0.05 well conditioned.
  double input_mean = 0.15;
  double input_scale = 0.0866;
};

struct SynthSample {
  ImageD canvas;
  int label = 0;
  Rect glyph_box;  // pixel coordinates
};

struct Dataset {
  std::vector<SynthSample> train;
  std::vector<SynthSample> test;
};

/// Class glyphs: a 1-px frame around a 2x-upsampled interior whose lit fraction grows with the
/// class index, so classes differ in ink mass as well as layout. Fixed across seeds.
std::vector<Eigen::MatrixXd> make_glyphs(const DatasetConfig& cfg);

/// Labels are assigned round-robin; positions and noise come from `seed`.
Dataset gen_dataset(std::uint64_t seed, int n_train, int n_test, const DatasetConfig& cfg = {});

/// Mean-pool over tokens -> affine D -> L -> softmax cross-entropy.
struct ToyHead {
  Eigen::MatrixXd weight;  // L x D
  Eigen::VectorXd bias;    // L

  static ToyHead zeros(int classes, int dim);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    fn("head.weight", std::span<double>(weight.data(), static_cast<std::size_t>(weight.size())));
    fn("head.bias", std::span<double>(bias.data(), static_cast<std::size_t>(bias.size())));
  }
};

struct HeadOutput {
  double loss = 0;
  int prediction = 0;
  Eigen::VectorXd probabilities;
};

HeadOutput head_forward(const ToyHead& head, const Eigen::MatrixXd& tokens, int label);

/// Returns d loss / d tokens and accumulates head gradients into `grad`.
Eigen::MatrixXd head_backward(const ToyHead& head, const Eigen::MatrixXd& tokens, const HeadOutput& out, int label,
                              ToyHead& grad);

enum class Mode { dart, uniform };
std::string to_string(Mode mode);
Mode mode_from_string(const std::string& name);

struct ToyModel {
  TokenizerParams tokenizer;
  ToyHead head;

  static ToyModel init(const TokenizerConfig& cfg, int classes, std::uint64_t seed);
  static ToyModel zeros_like(const ToyModel& other);

  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    tokenizer.for_each_tensor(fn);
    head.for_each_tensor(fn);
  }
};

/// Learnable-scorer tokenizer for the toy task: 16 tokens of 8x8 patches on the native canvas.
TokenizerConfig default_toy_tokenizer();

struct SampleResult {
  HeadOutput output;
  bool finite = true;
};

/// Forward and (when `grad` is non-null) backward for a single sample, accumulating into `grad`.
SampleResult sample_step(const ToyModel& model, const TokenizerConfig& cfg, Mode mode, const SynthSample& sample,
                         ToyModel* grad);

struct TrainConfig {
  TokenizerConfig tokenizer = default_toy_tokenizer();
  DatasetConfig data;
  int epochs = 20;
  int batch = 32;
  double lr = 0.05;
  double momentum = 0.9;
  int n_train = 2000;
  int n_test = 500;
  int threads = 0;  // 0 = DART_THREADS or hardware concurrency
};

struct MetricRow {
  int epoch = 0;
  std::string split;
  double loss = 0;
  double accuracy = 0;
};

struct DensityReport {
  std::vector<double> ratios;  // bbox density / uniform density, per test image
  double fraction_at_least_2x = 0;
  double mean_ratio = 0;
};

struct TrainResult {
  std::vector<MetricRow> history;  // epochs 1..E, train then test
  double initial_train_loss = 0;
  double initial_test_loss = 0;
  ToyModel model;
  bool diverged = false;
  DensityReport density;  // dart mode only
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
};

EvalResult evaluate(const ToyModel& model, const TokenizerConfig& cfg, Mode mode,
                    const std::vector<SynthSample>& samples, int threads = 0);

DensityReport measure_density(const ToyModel& model, const TokenizerConfig& cfg,
                              const std::vector<SynthSample>& samples);

using EpochCallback = std::function<void(const MetricRow&)>;

TrainResult train(const TrainConfig& cfg, Mode mode, std::uint64_t seed, const Dataset& data,
                  const EpochCallback& on_row = {});
TrainResult train(const TrainConfig& cfg, Mode mode, std::uint64_t seed, const EpochCallback& on_row = {});

std::string metrics_csv(const std::vector<MetricRow>& rows);

int resolve_threads(int requested);

// Finite-difference verification of every differentiable stage and of the full pipeline.

struct GradcheckEntry {
  std::string leaf;
  double max_rel_error = 0;
  double tolerance = 0;
  int checked = 0;
  int skipped = 0;  // entries straddling a kink
  bool pass = false;
};

struct GradcheckReport {
  std::uint64_t seed = 0;
  std::vector<GradcheckEntry> entries;
  bool all_pass() const;
};

/// Error metric for one entry: |a - f| / max(|a|, |f|, floor_fraction * max|f|).
double relative_error(double analytic, double numeric, double scale);

GradcheckReport gradcheck_all(std::uint64_t seed);

/// The small end-to-end configuration: 32x32 input, R = C = 4, p = 4, D = 8.
TokenizerConfig gradcheck_tokenizer(ScorerKind scorer);

}  // namespace dart::toy
