#include "dart/quantile.hpp"
#include "dart/toytrain.hpp"

#include <algorithm>
#include <cmath>

namespace dart::toy {

namespace {

constexpr double kStep = 1e-6;
constexpr double kStageTolerance = 1e-5;
constexpr double kPartitionTolerance = 1e-4;
constexpr double kEndToEndTolerance = 1e-3;
// Entries smaller than this fraction of the leaf's largest gradient are compared on that scale.
constexpr double kScaleFloor = 1e-3;
// Minimum distance of any kink from the evaluation point for stage checks.
constexpr double kKinkMargin = 1e-4;

struct Accumulator {
  GradcheckEntry entry;
  std::vector<double> analytic, numeric;
  std::vector<bool> kinked;

  void add(double a, double f, bool kink = false) {
    analytic.push_back(a);
    numeric.push_back(f);
    kinked.push_back(kink);
  }

  GradcheckEntry finish() {
    double scale = 0;
    for (std::size_t i = 0; i < numeric.size(); ++i)
      if (!kinked[i]) scale = std::max(scale, std::abs(numeric[i]));
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      if (kinked[i]) {
        ++entry.skipped;
        continue;
      }
      ++entry.checked;
      entry.max_rel_error =
          std::max(entry.max_rel_error, relative_error(analytic[i], numeric[i], std::max(kScaleFloor * scale, 1e-300)));
    }
    entry.pass = entry.checked > 0 && entry.max_rel_error <= entry.tolerance;
    return entry;
  }
};

Accumulator start(const std::string& leaf, double tol) {
  Accumulator a;
  a.entry.leaf = leaf;
  a.entry.tolerance = tol;
  return a;
}

template <typename Fn>
double central(Fn&& f, double& x) {
  const double saved = x;
  x = saved + kStep;
  const double up = f();
  x = saved - kStep;
  const double down = f();
  x = saved;
  return (up - down) / (2 * kStep);
}

/// Central difference plus a kink flag from the disagreement of the one-sided slopes.
template <typename Fn>
std::pair<double, bool> central_with_kink(Fn&& f, double& x) {
  const double saved = x;
  const double mid = f();
  x = saved + kStep;
  const double up = f();
  x = saved - kStep;
  const double down = f();
  x = saved;
  const double right = (up - mid) / kStep, left = (mid - down) / kStep;
  const bool kink = std::abs(right - left) > 1e-2 * std::max({std::abs(right), std::abs(left), 1e-6});
  return {(up - down) / (2 * kStep), kink};
}

double near_integer(double v) { return std::abs(v - std::round(v)); }

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

ImageD random_image(int h, int w, int ch, std::mt19937_64& rng) {
  ImageD img(h, w, ch);
  for (auto& p : img.planes) p = random_matrix(h, w, rng, 0.0, 1.0);
  return img;
}

GradcheckEntry check_quantile(std::mt19937_64& rng) {
  auto acc = start("stage.quantile_jacobian", kStageTolerance);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const int n = 12, segments = 5;
    Eigen::VectorXd masses = random_matrix(n, 1, rng, 0.1, 10.0);
    const auto qs = uniform_quantiles(PiecewiseDistribution<double>(masses), segments);
    if ((qs.points.array() - qs.points.array().round()).abs().minCoeff() < kKinkMargin) continue;
    const auto jac = quantile_jacobian(PiecewiseDistribution<double>(masses), segments);
    for (int k = 0; k < segments - 1; ++k)
      for (int i = 0; i < n; ++i) {
        auto f = [&] { return uniform_quantiles(PiecewiseDistribution<double>(masses), segments).points[k]; };
        acc.add(jac.dense(k, i), central(f, masses[i]));
      }
    break;
  }
  return acc.finish();
}

GradcheckEntry check_normalize(std::mt19937_64& rng) {
  auto acc = start("stage.normalize_scores", kStageTolerance);
  Eigen::MatrixXd raw = random_matrix(6, 6, rng, -2.0, 2.0);
  const Eigen::MatrixXd up = random_matrix(6, 6, rng, -1.0, 1.0);
  const Eigen::MatrixXd g = normalize_scores_backward(raw, up);
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    auto f = [&] { return (normalize_scores(raw).values().array() * up.array()).sum(); };
    acc.add(g.data()[i], central(f, raw.data()[i]));
  }
  return acc.finish();
}

std::vector<GradcheckEntry> check_scorer(std::mt19937_64& rng) {
  auto weights = start("stage.scorer_weights", kStageTolerance);
  auto pixels = start("stage.scorer_pixels", kStageTolerance);
  ImageD img = random_image(12, 12, 3, rng);
  CellMlp mlp = CellMlp::random(6, kDefaultScorerHidden, rng);
  mlp.w2 = random_matrix(kDefaultScorerHidden, 1, rng, -1.0, 1.0);
  const CellGrid grid{3, 3};
  const Eigen::MatrixXd up = random_matrix(3, 3, rng, -1.0, 1.0);
  const auto g = score_learnable_backward(img, grid, mlp, up);
  auto f = [&] { return (score_learnable(img, grid, mlp).array() * up.array()).sum(); };

  CellMlp analytic = g.weights;
  std::vector<std::span<double>> a_spans, p_spans;
  analytic.for_each_tensor([&](const char*, std::span<double> s) { a_spans.push_back(s); });
  mlp.for_each_tensor([&](const char*, std::span<double> s) { p_spans.push_back(s); });
  for (std::size_t t = 0; t < p_spans.size(); ++t)
    for (std::size_t i = 0; i < p_spans[t].size(); ++i) weights.add(a_spans[t][i], central(f, p_spans[t][i]));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) pixels.add(g.pixels(y, x, c), central(f, img.planes[static_cast<std::size_t>(c)](y, x)));
  return {weights.finish(), pixels.finish()};
}

GradcheckEntry check_partition(std::mt19937_64& rng) {
  auto acc = start("stage.partition_bounds", kPartitionTolerance);
  for (int attempt = 0; attempt < 200; ++attempt) {
    Eigen::MatrixXd scores = random_matrix(8, 8, rng, 0.1, 1.0);
    for (PartitionMode mode : {PartitionMode::irregular, PartitionMode::regular}) {
      const PartitionSpec spec{3, 3, mode};
      const auto taped = partition_taped(scores, spec);
      bool near_kink = false;
      for (Eigen::Index i = 1; i + 1 < taped.partition.y.size(); ++i) near_kink |= near_integer(taped.partition.y[i]) < kKinkMargin;
      for (const auto& xs : taped.partition.x)
        for (Eigen::Index i = 1; i + 1 < xs.size(); ++i) near_kink |= near_integer(xs[i]) < kKinkMargin;
      if (near_kink) goto next_attempt;
    }
    for (PartitionMode mode : {PartitionMode::irregular, PartitionMode::regular}) {
      const PartitionSpec spec{3, 3, mode};
      const auto taped = partition_taped(scores, spec);
      PartitionGrad up = PartitionGrad::zeros_like(taped.partition);
      up.y = random_matrix(4, 1, rng, -1.0, 1.0);
      for (auto& xs : up.x) xs = random_matrix(4, 1, rng, -1.0, 1.0);
      const Eigen::MatrixXd g = taped.tape.backward(up);
      auto f = [&] {
        const Partition p = partition_taped(scores, spec).partition;
        double s = p.y.dot(up.y);
        for (std::size_t r = 0; r < p.x.size(); ++r) s += p.x[r].dot(up.x[r]);
        return s;
      };
      for (Eigen::Index i = 0; i < scores.size(); ++i) acc.add(g.data()[i], central(f, scores.data()[i]));
    }
    break;
  next_attempt:;
  }
  return acc.finish();
}

std::vector<GradcheckEntry> check_resample(std::mt19937_64& rng) {
  auto rect_acc = start("stage.resample_rect", kStageTolerance);
  auto pixel_acc = start("stage.resample_pixels", kStageTolerance);
  auto pe_acc = start("stage.posembed_rect", kStageTolerance);
  auto pe_grid_acc = start("stage.posembed_grid", kStageTolerance);
  const int p = 4;
  std::uniform_real_distribution<double> coord(0.3, 7.7);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    double a = coord(rng), b = coord(rng), c = coord(rng), d = coord(rng);
    Rect r{std::min(a, b), std::max(a, b), std::min(c, d), std::max(c, d)};
    if (r.width() < 0.5 || r.height() < 0.5) continue;
    bool near_kink = false;
    for (int i = 0; i < p; ++i) {
      near_kink |= near_integer(cell_center(r.x0, r.x1, i, p) - 0.5) < kKinkMargin;
      near_kink |= near_integer(cell_center(r.y0, r.y1, i, p) - 0.5) < kKinkMargin;
    }
    if (near_kink) continue;

    ImageD img = random_image(8, 8, 2, rng);
    const Eigen::VectorXd up = random_matrix(p * p * 2, 1, rng, -1.0, 1.0);
    ImageD pixel_grad(8, 8, 2);
    const RectGrad g = resample_patch_backward(img, r, p, up, &pixel_grad);
    auto f = [&] { return resample_patch(img, r, p).values.dot(up); };
    rect_acc.add(g.x0, central(f, r.x0));
    rect_acc.add(g.x1, central(f, r.x1));
    rect_acc.add(g.y0, central(f, r.y0));
    rect_acc.add(g.y1, central(f, r.y1));
    for (int ch = 0; ch < 2; ++ch)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) pixel_acc.add(pixel_grad(y, x, ch), central(f, img.planes[static_cast<std::size_t>(ch)](y, x)));

    PosEmbedMap pe{random_image(8, 8, 3, rng)};
    const Eigen::VectorXd up_pe = random_matrix(3, 1, rng, -1.0, 1.0);
    ImageD grid_grad(8, 8, 3);
    const RectGrad gp = resample_posembed_backward(pe, r, p, up_pe, &grid_grad);
    auto fp = [&] { return resample_posembed(pe, r, p).dot(up_pe); };
    pe_acc.add(gp.x0, central(fp, r.x0));
    pe_acc.add(gp.x1, central(fp, r.x1));
    pe_acc.add(gp.y0, central(fp, r.y0));
    pe_acc.add(gp.y1, central(fp, r.y1));
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          pe_grid_acc.add(grid_grad(y, x, ch), central(fp, pe.grid.planes[static_cast<std::size_t>(ch)](y, x)));
    if (rect_acc.analytic.size() >= 40) break;
  }
  return {rect_acc.finish(), pixel_acc.finish(), pe_acc.finish(), pe_grid_acc.finish()};
}

struct EndToEnd {
  ImageD image;
  ToyHead head;
  int label = 3;
};

double end_to_end_loss(const EndToEnd& setup, const TokenizerConfig& cfg, const TokenizerParams& params,
                       const RawScoreMap* raw) {
  const TokenBatch b = tokenize(setup.image, cfg, params, raw);
  return head_forward(setup.head, b.tokens, setup.label).loss;
}

std::vector<GradcheckEntry> check_end_to_end(std::mt19937_64& rng) {
  EndToEnd setup;
  setup.image = random_image(32, 32, 3, rng);
  setup.head = ToyHead::zeros(5, 8);
  setup.head.weight = random_matrix(5, 8, rng, -1.0, 1.0);
  setup.head.bias = random_matrix(5, 1, rng, -0.5, 0.5);

  std::vector<GradcheckEntry> out;

  // d loss / d raw scores through an external score map.
  {
    auto acc = start("e2e.scores", kEndToEndTolerance);
    TokenizerConfig cfg = gradcheck_tokenizer(ScorerKind::external_file);
    TokenizerParams params = TokenizerParams::random(cfg, rng);
    RawScoreMap raw = random_matrix(8, 8, rng, -1.5, 1.5);
    const auto res = tokenize_taped(setup.image, cfg, params, &raw);
    const auto head_out = head_forward(setup.head, res.batch.tokens, setup.label);
    ToyHead unused = ToyHead::zeros(5, 8);
    const auto grads = res.tape.backward(head_backward(setup.head, res.batch.tokens, head_out, setup.label, unused));
    for (Eigen::Index i = 0; i < raw.size(); ++i) {
      auto f = [&] { return end_to_end_loss(setup, cfg, params, &raw); };
      const auto [fd, kink] = central_with_kink(f, raw.data()[i]);
      acc.add(grads.raw_scores.data()[i], fd, kink);
    }
    out.push_back(acc.finish());
  }

  // Trainable leaves through the learnable scorer.
  TokenizerConfig cfg = gradcheck_tokenizer(ScorerKind::learnable_cell_mlp);
  TokenizerParams params = TokenizerParams::random(cfg, rng);
  params.scorer.w2 = random_matrix(kDefaultScorerHidden, 1, rng, -1.0, 1.0);
  params.posembed.grid = random_image(cfg.pe_grid_h(), cfg.pe_grid_w(), cfg.dim, rng);
  const auto res = tokenize_taped(setup.image, cfg, params);
  const auto head_out = head_forward(setup.head, res.batch.tokens, setup.label);
  ToyHead unused = ToyHead::zeros(5, 8);
  TokenizerGrads grads = res.tape.backward(head_backward(setup.head, res.batch.tokens, head_out, setup.label, unused));

  std::vector<std::pair<std::string, std::span<double>>> p_spans, a_spans;
  params.for_each_tensor([&](const char* name, std::span<double> s) { p_spans.emplace_back(name, s); });
  grads.params.for_each_tensor([&](const char* name, std::span<double> s) { a_spans.emplace_back(name, s); });

  auto leaf_of = [](const std::string& name) {
    if (name.rfind("scorer", 0) == 0) return std::string("e2e.scorer_weights");
    if (name.rfind("projection", 0) == 0) return std::string("e2e.projection");
    return std::string("e2e.posembed");
  };
  std::vector<Accumulator> leaves;
  for (const char* name : {"e2e.scorer_weights", "e2e.projection", "e2e.posembed"})
    leaves.push_back(start(name, kEndToEndTolerance));
  auto f = [&] { return end_to_end_loss(setup, cfg, params, nullptr); };
  for (std::size_t t = 0; t < p_spans.size(); ++t) {
    const std::string leaf = leaf_of(p_spans[t].first);
    auto& acc = *std::find_if(leaves.begin(), leaves.end(), [&](const Accumulator& a) { return a.entry.leaf == leaf; });
    for (std::size_t i = 0; i < p_spans[t].second.size(); ++i) {
      const auto [fd, kink] = central_with_kink(f, p_spans[t].second[i]);
      acc.add(a_spans[t].second[i], fd, kink);
    }
  }
  for (auto& acc : leaves) out.push_back(acc.finish());

  // Zero upstream gives zero gradients on every leaf.
  {
    auto acc = start("e2e.zero_upstream", 0.0);
    const auto zero = res.tape.backward(Eigen::MatrixXd::Zero(cfg.seqlen(), cfg.dim));
    TokenizerGrads copy = zero;
    double worst = 0;
    copy.params.for_each_tensor([&](const char*, std::span<double> s) {
      for (double v : s) worst = std::max(worst, std::abs(v));
    });
    worst = std::max({worst, zero.scores.cwiseAbs().maxCoeff(), zero.raw_scores.cwiseAbs().maxCoeff()});
    acc.entry.checked = 1;
    acc.entry.max_rel_error = worst;
    acc.entry.pass = worst == 0.0;
    out.push_back(acc.entry);
  }
  return out;
}

}  // namespace

double relative_error(double analytic, double numeric, double scale) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), scale});
  return denom > 0 ? std::abs(analytic - numeric) / denom : 0.0;
}

bool GradcheckReport::all_pass() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.pass; });
}

TokenizerConfig gradcheck_tokenizer(ScorerKind scorer) {
  TokenizerConfig cfg;
  cfg.rows = 4;
  cfg.cols = 4;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.channels = 3;
  cfg.scorer = scorer;
  cfg.resize_h = 0;
  cfg.resize_w = 0;
  return cfg;
}

GradcheckReport gradcheck_all(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GradcheckReport rep;
  rep.seed = seed;
  rep.entries.push_back(check_quantile(rng));
  rep.entries.push_back(check_normalize(rng));
  for (auto& e : check_scorer(rng)) rep.entries.push_back(e);
  rep.entries.push_back(check_partition(rng));
  for (auto& e : check_resample(rng)) rep.entries.push_back(e);
  for (auto& e : check_end_to_end(rng)) rep.entries.push_back(e);
  return rep;
}

}  // namespace dart::toy
