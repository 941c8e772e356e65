#include "dart/toytrain.hpp"

#include "dart/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace dart::toy {

namespace {

constexpr std::uint64_t kGlyphSeed = 0x6c797068;

std::vector<std::span<double>> tensors(ToyModel& m) {
  std::vector<std::span<double>> out;
  m.for_each_tensor([&](const char*, std::span<double> s) { out.push_back(s); });
  return out;
}

void add_into(ToyModel& dst, ToyModel& src, double scale = 1.0) {
  auto d = tensors(dst);
  auto s = tensors(src);
  for (std::size_t t = 0; t < d.size(); ++t)
    for (std::size_t i = 0; i < d[t].size(); ++i) d[t][i] += scale * s[t][i];
}

void set_zero(ToyModel& m) {
  for (auto span : tensors(m)) std::fill(span.begin(), span.end(), 0.0);
}

bool all_finite(ToyModel& m) {
  for (auto span : tensors(m))
    for (double v : span)
      if (!std::isfinite(v)) return false;
  return true;
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers; results must go to per-index slots.
template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += threads) fn(i);
    });
  for (auto& th : pool) th.join();
}

}  // namespace

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("DART_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<Eigen::MatrixXd> make_glyphs(const DatasetConfig& cfg) {
  if (cfg.glyph < 4) throw std::invalid_argument("glyph size must be >= 4");
  std::mt19937_64 rng(kGlyphSeed);
  const int inner = cfg.glyph - 2;
  const int block = 2;
  const int cells = (inner + block - 1) / block;
  std::vector<Eigen::MatrixXd> glyphs;
  while (static_cast<int>(glyphs.size()) < cfg.classes) {
    // Class c lights round(c * cells^2 / (L - 1)) interior blocks at shuffled positions.
    Eigen::MatrixXd pattern = Eigen::MatrixXd::Zero(cells, cells);
    const double share = cfg.classes > 1 ? static_cast<double>(glyphs.size()) / (cfg.classes - 1) : 0.5;
    const auto lit = static_cast<std::size_t>(std::lround(share * static_cast<double>(pattern.size())));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(pattern.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < lit; ++i) pattern.data()[idx[i]] = 1.0;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(cfg.glyph, cfg.glyph);
    g.row(0).setOnes();
    g.row(cfg.glyph - 1).setOnes();
    g.col(0).setOnes();
    g.col(cfg.glyph - 1).setOnes();
    for (int y = 0; y < inner; ++y)
      for (int x = 0; x < inner; ++x) g(y + 1, x + 1) = pattern(y / block, x / block);
    const bool duplicate =
        std::any_of(glyphs.begin(), glyphs.end(), [&](const Eigen::MatrixXd& other) { return other == g; });
    if (!duplicate) glyphs.push_back(std::move(g));
  }
  return glyphs;
}

Dataset gen_dataset(std::uint64_t seed, int n_train, int n_test, const DatasetConfig& cfg) {
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("dataset sizes must be >= 1");
  if (cfg.classes < 1) throw std::invalid_argument("need at least one class");
  if (cfg.glyph > cfg.canvas) throw std::invalid_argument("glyph larger than canvas");
  const auto glyphs = make_glyphs(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, cfg.noise_max);
  std::uniform_int_distribution<int> pos(0, cfg.canvas - cfg.glyph);

  auto make = [&](int index) {
    SynthSample s;
    s.label = index % cfg.classes;
    s.canvas = ImageD(cfg.canvas, cfg.canvas, cfg.channels);
    for (auto& plane : s.canvas.planes)
      for (Eigen::Index i = 0; i < plane.size(); ++i) plane.data()[i] = noise(rng);
    const int top = pos(rng), left = pos(rng);
    const auto& g = glyphs[static_cast<std::size_t>(s.label)];
    for (int y = 0; y < cfg.glyph; ++y)
      for (int x = 0; x < cfg.glyph; ++x)
        if (g(y, x) > 0)
          for (auto& plane : s.canvas.planes) plane(top + y, left + x) = cfg.glyph_value;
    for (auto& plane : s.canvas.planes) plane = (plane.array() - cfg.input_mean) / cfg.input_scale;
    s.glyph_box = {static_cast<double>(left), static_cast<double>(left + cfg.glyph), static_cast<double>(top),
                   static_cast<double>(top + cfg.glyph)};
    return s;
  };

  Dataset d;
  d.train.reserve(static_cast<std::size_t>(n_train));
  d.test.reserve(static_cast<std::size_t>(n_test));
  for (int i = 0; i < n_train; ++i) d.train.push_back(make(i));
  for (int i = 0; i < n_test; ++i) d.test.push_back(make(i));
  return d;
}

ToyHead ToyHead::zeros(int classes, int dim) {
  return {Eigen::MatrixXd::Zero(classes, dim), Eigen::VectorXd::Zero(classes)};
}

HeadOutput head_forward(const ToyHead& head, const Eigen::MatrixXd& tokens, int label) {
  const Eigen::VectorXd pooled = tokens.colwise().mean().transpose();
  const Eigen::VectorXd logits = head.weight * pooled + head.bias;
  const double peak = logits.maxCoeff();
  const Eigen::ArrayXd e = (logits.array() - peak).exp();
  HeadOutput out;
  out.probabilities = e / e.sum();
  out.loss = -(logits[label] - peak - std::log(e.sum()));
  out.probabilities.maxCoeff(&out.prediction);
  return out;
}

Eigen::MatrixXd head_backward(const ToyHead& head, const Eigen::MatrixXd& tokens, const HeadOutput& out, int label,
                              ToyHead& grad) {
  const Eigen::VectorXd pooled = tokens.colwise().mean().transpose();
  Eigen::VectorXd g_logits = out.probabilities;
  g_logits[label] -= 1.0;
  grad.weight.noalias() += g_logits * pooled.transpose();
  grad.bias += g_logits;
  const Eigen::RowVectorXd g_pooled = (head.weight.transpose() * g_logits).transpose() / tokens.rows();
  return g_pooled.replicate(tokens.rows(), 1);
}

std::string to_string(Mode mode) { return mode == Mode::dart ? "dart" : "uniform"; }

Mode mode_from_string(const std::string& name) {
  if (name == "dart") return Mode::dart;
  if (name == "uniform") return Mode::uniform;
  throw std::invalid_argument("unknown training mode '" + name + "'");
}

ToyModel ToyModel::init(const TokenizerConfig& cfg, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ToyModel m;
  m.tokenizer = TokenizerParams::random(cfg, rng);
  m.head = ToyHead::zeros(classes, cfg.dim);
  return m;
}

ToyModel ToyModel::zeros_like(const ToyModel& other) {
  ToyModel m;
  m.tokenizer = TokenizerParams::zeros_like(other.tokenizer);
  m.head = ToyHead::zeros(static_cast<int>(other.head.weight.rows()), static_cast<int>(other.head.weight.cols()));
  return m;
}

TokenizerConfig default_toy_tokenizer() {
  TokenizerConfig cfg;
  cfg.rows = 4;
  cfg.cols = 4;
  cfg.patch = 8;
  cfg.dim = 32;
  cfg.channels = 3;
  cfg.scorer = ScorerKind::learnable_cell_mlp;
  cfg.resize_h = 0;
  cfg.resize_w = 0;
  return cfg;
}

SampleResult sample_step(const ToyModel& model, const TokenizerConfig& cfg, Mode mode, const SynthSample& sample,
                         ToyModel* grad) {
  const TokenizeResult res = mode == Mode::dart ? tokenize_taped(sample.canvas, cfg, model.tokenizer)
                                                : tokenize_uniform_baseline_taped(sample.canvas, cfg, model.tokenizer);
  SampleResult out;
  out.output = head_forward(model.head, res.batch.tokens, sample.label);
  out.finite = std::isfinite(out.output.loss);
  if (!grad || !out.finite) return out;

  const Eigen::MatrixXd g_tokens = head_backward(model.head, res.batch.tokens, out.output, sample.label, grad->head);
  const TokenizerGrads tg = res.tape.backward(g_tokens);
  ToyModel part = ToyModel::zeros_like(model);
  part.tokenizer = tg.params;
  add_into(*grad, part);
  return out;
}

EvalResult evaluate(const ToyModel& model, const TokenizerConfig& cfg, Mode mode,
                    const std::vector<SynthSample>& samples, int threads) {
  std::vector<HeadOutput> outs(samples.size());
  parallel_for(static_cast<int>(samples.size()), resolve_threads(threads), [&](int i) {
    outs[static_cast<std::size_t>(i)] = sample_step(model, cfg, mode, samples[static_cast<std::size_t>(i)], nullptr).output;
  });
  EvalResult r;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    r.loss += outs[i].loss;
    r.accuracy += outs[i].prediction == samples[i].label ? 1.0 : 0.0;
  }
  r.loss /= static_cast<double>(samples.size());
  r.accuracy /= static_cast<double>(samples.size());
  return r;
}

DensityReport measure_density(const ToyModel& model, const TokenizerConfig& cfg,
                              const std::vector<SynthSample>& samples) {
  DensityReport rep;
  int hits = 0;
  for (const auto& s : samples) {
    const ImageD working = resize_bilinear(s.canvas, cfg.working_size(s.canvas.height(), s.canvas.width()).first,
                                           cfg.working_size(s.canvas.height(), s.canvas.width()).second);
    const CellGrid grid = cfg.score_grid(working.height(), working.width());
    const ScoreMap scores = normalize_scores(score_learnable(working, grid, model.tokenizer.scorer));
    const double sy = static_cast<double>(grid.rows) / s.canvas.height();
    const double sx = static_cast<double>(grid.cols) / s.canvas.width();
    const Rect box{s.glyph_box.x0 * sx, s.glyph_box.x1 * sx, s.glyph_box.y0 * sy, s.glyph_box.y1 * sy};
    const double density = integrate_scores(scores.values(), box) / box.area();
    const double uniform = 1.0 / static_cast<double>(grid.rows * grid.cols);
    const double ratio = density / uniform;
    rep.ratios.push_back(ratio);
    if (ratio >= 2.0) ++hits;
    rep.mean_ratio += ratio;
  }
  if (!samples.empty()) {
    rep.fraction_at_least_2x = static_cast<double>(hits) / static_cast<double>(samples.size());
    rep.mean_ratio /= static_cast<double>(samples.size());
  }
  return rep;
}

TrainResult train(const TrainConfig& cfg, Mode mode, std::uint64_t seed, const Dataset& data,
                  const EpochCallback& on_row) {
  cfg.tokenizer.validate();
  if (cfg.epochs < 0 || cfg.batch < 1 || !(cfg.lr > 0))
    throw std::invalid_argument("train: epochs >= 0, batch >= 1 and lr > 0 required");
  const int threads = resolve_threads(cfg.threads);

  TrainResult result;
  result.model = ToyModel::init(cfg.tokenizer, cfg.data.classes, seed);
  ToyModel& model = result.model;
  ToyModel velocity = ToyModel::zeros_like(model);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);

  result.initial_train_loss = evaluate(model, cfg.tokenizer, mode, data.train, threads).loss;
  result.initial_test_loss = evaluate(model, cfg.tokenizer, mode, data.test, threads).loss;

  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<ToyModel> slots(static_cast<std::size_t>(cfg.batch), ToyModel::zeros_like(model));
  std::vector<SampleResult> step_out(static_cast<std::size_t>(cfg.batch));

  for (int epoch = 1; epoch <= cfg.epochs && !result.diverged; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0, correct = 0;
    int seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const int n = static_cast<int>(std::min(order.size() - start, static_cast<std::size_t>(cfg.batch)));
      parallel_for(n, threads, [&](int i) {
        ToyModel& slot = slots[static_cast<std::size_t>(i)];
        set_zero(slot);
        const auto& sample = data.train[static_cast<std::size_t>(order[start + static_cast<std::size_t>(i)])];
        step_out[static_cast<std::size_t>(i)] = sample_step(model, cfg.tokenizer, mode, sample, &slot);
      });

      ToyModel grad = ToyModel::zeros_like(model);
      bool finite = true;
      for (int i = 0; i < n; ++i) {
        const auto& out = step_out[static_cast<std::size_t>(i)];
        if (!out.finite) finite = false;
        loss_sum += out.output.loss;
        const auto& sample = data.train[static_cast<std::size_t>(order[start + static_cast<std::size_t>(i)])];
        correct += out.output.prediction == sample.label ? 1.0 : 0.0;
        add_into(grad, slots[static_cast<std::size_t>(i)], 1.0 / n);
      }
      seen += n;
      if (!finite || !all_finite(grad)) {
        result.diverged = true;
        break;
      }

      const ToyModel previous = model;
      auto v = tensors(velocity);
      auto g = tensors(grad);
      auto p = tensors(model);
      for (std::size_t t = 0; t < p.size(); ++t)
        for (std::size_t i = 0; i < p[t].size(); ++i) {
          v[t][i] = cfg.momentum * v[t][i] + g[t][i];
          p[t][i] -= cfg.lr * v[t][i];
        }
      if (!all_finite(model)) {
        model = previous;
        result.diverged = true;
        break;
      }
    }
    if (result.diverged) break;

    const MetricRow train_row{epoch, "train", loss_sum / seen, correct / seen};
    const EvalResult test = evaluate(model, cfg.tokenizer, mode, data.test, threads);
    const MetricRow test_row{epoch, "test", test.loss, test.accuracy};
    result.history.push_back(train_row);
    result.history.push_back(test_row);
    if (on_row) {
      on_row(train_row);
      on_row(test_row);
    }
  }

  if (mode == Mode::dart) result.density = measure_density(model, cfg.tokenizer, data.test);
  return result;
}

TrainResult train(const TrainConfig& cfg, Mode mode, std::uint64_t seed, const EpochCallback& on_row) {
  const Dataset data = gen_dataset(seed, cfg.n_train, cfg.n_test, cfg.data);
  return train(cfg, mode, seed, data, on_row);
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream out;
  out.precision(10);
  out << "epoch,split,loss,accuracy\n";
  for (const auto& r : rows) out << r.epoch << ',' << r.split << ',' << r.loss << ',' << r.accuracy << '\n';
  return out.str();
}

}  // namespace dart::toy
