#include "dart/scoremap.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <string>

using namespace dart;

TEST_CASE("constant raw map normalizes to uniform") {
  const ScoreMap s = normalize_scores(Eigen::MatrixXd::Constant(3, 5, 5.0));
  CHECK((s.values().array() - 1.0 / 15.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("single high cell keeps the strict maximum") {
  Eigen::MatrixXd raw(2, 2);
  raw << 0, 0, 0, 10;
  const ScoreMap s = normalize_scores(raw);
  Eigen::Index r = 0, c = 0;
  s.values().maxCoeff(&r, &c);
  CHECK(r == 1);
  CHECK(c == 1);
  CHECK(s.values()(1, 1) > s.values()(0, 0));
}

TEST_CASE("normalized maps sum to one and respect the floor, including extreme inputs") {
  std::mt19937_64 rng(2);
  for (double scale : {1e-8, 1.0, 1e3, 1e8}) {
    const Eigen::MatrixXd raw = oracle::random_matrix(7, 9, rng, -scale, scale);
    const ScoreMap s = normalize_scores(raw);
    CHECK(std::abs(s.values().sum() - 1.0) < 1e-12);
    CHECK(s.values().minCoeff() >= epsilon_floor(63) / 2);  // floor survives the division by a sum <= 63
    Eigen::Index r0, c0, r1, c1;
    raw.maxCoeff(&r0, &c0);
    s.values().maxCoeff(&r1, &c1);
    CHECK(r0 == r1);
    CHECK(c0 == c1);
  }
  const ScoreMap big = normalize_scores(Eigen::MatrixXd::Constant(4, 4, -1e8));
  CHECK(std::abs(big.values().sum() - 1.0) < 1e-12);
}

TEST_CASE("non-finite raw scores are rejected with the cell index") {
  Eigen::MatrixXd raw = Eigen::MatrixXd::Zero(3, 3);
  raw(1, 2) = std::numeric_limits<double>::infinity();
  try {
    normalize_scores(raw);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find("(1, 2)") != std::string::npos);
  }
}

TEST_CASE("from_normalized validates the distribution") {
  CHECK_THROWS(ScoreMap::from_normalized(Eigen::MatrixXd::Constant(2, 2, 0.3)));
  CHECK_NOTHROW(ScoreMap::from_normalized(Eigen::MatrixXd::Constant(2, 2, 0.25)));
}

TEST_CASE("normalize backward matches central differences") {
  std::mt19937_64 rng(4);
  Eigen::MatrixXd raw = oracle::random_matrix(5, 6, rng, -2, 2);
  const Eigen::MatrixXd up = oracle::random_matrix(5, 6, rng, -1, 1);
  const Eigen::MatrixXd g = normalize_scores_backward(raw, up);
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const double fd = oracle::central_diff(
        [&] { return (normalize_scores(raw).values().array() * up.array()).sum(); }, raw.data()[i]);
    CHECK(oracle::rel_error(g.data()[i], fd, 1e-8) < 1e-5);
  }
}

TEST_CASE("normalize backward of a constant map uses the floored std") {
  Eigen::MatrixXd raw = Eigen::MatrixXd::Constant(3, 3, 2.0);
  std::mt19937_64 rng(6);
  const Eigen::MatrixXd up = oracle::random_matrix(3, 3, rng, -1, 1);
  const Eigen::MatrixXd g = normalize_scores_backward(raw, up);
  CHECK(g.allFinite());
  // A bump far below the std floor stays in the linear regime of the floored standardization.
  const double h = 1e-12;
  raw(1, 1) += h;
  const double up_val = (normalize_scores(raw).values().array() * up.array()).sum();
  raw(1, 1) -= 2 * h;
  const double down_val = (normalize_scores(raw).values().array() * up.array()).sum();
  CHECK(oracle::rel_error(g(1, 1), (up_val - down_val) / (2 * h), 1e-3) < 1e-3);
}

TEST_CASE("pixel energy: constant image gives a constant map") {
  ImageD img(16, 16, 3, 0.4);
  const RawScoreMap raw = score_pixel_energy(img, {4, 4});
  CHECK(raw.isZero(0.0));
}

TEST_CASE("pixel energy: a bright square's border cells attain the maximum") {
  ImageD img(16, 16, 1, 0.0);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) img(y, x, 0) = 1.0;
  // 8x8 grid of 2x2 cells; the square spans cells 2..5, its edges run through cells 2 and 5.
  const RawScoreMap raw = score_pixel_energy(img, {8, 8});
  const double peak = raw.maxCoeff();
  CHECK(peak > 0);
  CHECK(raw(3, 3) < peak);  // interior
  CHECK(raw(0, 0) == 0.0);  // far background
  bool border_hits_peak = false;
  for (int i = 2; i <= 5; ++i)
    border_hits_peak |= raw(2, i) == peak || raw(5, i) == peak || raw(i, 2) == peak || raw(i, 5) == peak;
  CHECK(border_hits_peak);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      const bool border = (i >= 1 && i <= 6 && j >= 1 && j <= 6) && !(i >= 3 && i <= 4 && j >= 3 && j <= 4);
      if (!border) CHECK(raw(i, j) < peak);
    }
}

TEST_CASE("pixel energy: period-1 checkerboard gives four equal cells") {
  ImageD img(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img(y, x, 0) = (x + y) % 2;
  const RawScoreMap raw = score_pixel_energy(img, {2, 2});
  CHECK(raw(0, 0) == doctest::Approx(raw(0, 1)).epsilon(1e-15));
  CHECK(raw(0, 0) == doctest::Approx(raw(1, 0)).epsilon(1e-15));
  CHECK(raw(0, 0) == doctest::Approx(raw(1, 1)).epsilon(1e-15));
}

TEST_CASE("pixel energy: image smaller than the grid is an error") {
  CHECK_THROWS_AS(score_pixel_energy(ImageD(3, 3, 1), {4, 4}), std::invalid_argument);
}

TEST_CASE("learnable scorer: zero weights give a constant map") {
  std::mt19937_64 rng(1);
  const ImageD img = oracle::random_image(12, 12, 3, rng);
  const RawScoreMap raw = score_learnable(img, {3, 3}, CellMlp::zeros(6, kDefaultScorerHidden));
  CHECK((raw.array() - raw(0, 0)).abs().maxCoeff() == 0.0);
}

TEST_CASE("learnable scorer: deterministic and shape-checked") {
  std::mt19937_64 rng(2);
  const ImageD img = oracle::random_image(12, 12, 3, rng);
  const CellMlp mlp = CellMlp::random(6, kDefaultScorerHidden, rng);
  CHECK(score_learnable(img, {3, 3}, mlp) == score_learnable(img, {3, 3}, mlp));
  const CellMlp wrong = CellMlp::random(4, kDefaultScorerHidden, rng);
  try {
    score_learnable(img, {3, 3}, wrong);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find('6') != std::string::npos);
    CHECK(what.find('4') != std::string::npos);
  }
}

TEST_CASE("learnable scorer gradients match central differences") {
  std::mt19937_64 rng(9);
  ImageD img = oracle::random_image(8, 8, 3, rng);
  CellMlp mlp = CellMlp::random(6, kDefaultScorerHidden, rng);
  mlp.w2 = oracle::random_matrix(kDefaultScorerHidden, 1, rng, -1, 1);
  const CellGrid grid{2, 2};
  const Eigen::MatrixXd up = oracle::random_matrix(2, 2, rng, -1, 1);
  const auto g = score_learnable_backward(img, grid, mlp, up);
  auto f = [&] { return (score_learnable(img, grid, mlp).array() * up.array()).sum(); };

  CellMlp analytic = g.weights;
  std::vector<std::span<double>> a, p;
  analytic.for_each_tensor([&](const char*, std::span<double> s) { a.push_back(s); });
  mlp.for_each_tensor([&](const char*, std::span<double> s) { p.push_back(s); });
  double worst = 0;
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].size(); ++i)
      worst = std::max(worst, oracle::rel_error(a[t][i], oracle::central_diff(f, p[t][i]), 1e-8));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        worst = std::max(worst, oracle::rel_error(g.pixels(y, x, c), oracle::central_diff(f, img.planes[c](y, x)), 1e-8));
  CHECK(worst < 1e-5);
}

TEST_CASE("temporal scorer: identical frames give identical blocks") {
  std::mt19937_64 rng(3);
  const ImageD frame = oracle::random_image(8, 8, 3, rng);
  const FrameStack frames{frame, frame, frame};
  const CellMlp mlp = CellMlp::random(12, kDefaultScorerHidden, rng);
  const RawScoreMap raw = score_temporal(frames, {2, 2}, mlp);
  REQUIRE(raw.rows() == 6);
  REQUIRE(raw.cols() == 2);
  CHECK(raw.middleRows(0, 2) == raw.middleRows(2, 2));
  CHECK(raw.middleRows(2, 2) == raw.middleRows(4, 2));
}

TEST_CASE("temporal scorer: a new bright cell raises its score") {
  ImageD a(8, 8, 3, 0.2);
  ImageD b = a;
  for (int y = 4; y < 8; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) b(y, x, c) = 1.0;
  const RawScoreMap raw = score_temporal({a, b}, {2, 2}, motion_scorer(3));
  CHECK(raw(3, 0) > raw(1, 0));
}

TEST_CASE("temporal scorer: output height and empty stack") {
  std::mt19937_64 rng(5);
  const FrameStack frames{oracle::random_image(8, 8, 1, rng), oracle::random_image(8, 8, 1, rng)};
  CHECK(score_temporal(frames, {4, 2}, motion_scorer(1)).rows() == 8);
  CHECK_THROWS_AS(score_temporal({}, {4, 2}, motion_scorer(1)), std::invalid_argument);
}

TEST_CASE("temporal scorer weight gradients match central differences") {
  std::mt19937_64 rng(13);
  const FrameStack frames{oracle::random_image(8, 8, 2, rng), oracle::random_image(8, 8, 2, rng)};
  CellMlp mlp = CellMlp::random(8, kDefaultScorerHidden, rng);
  const Eigen::MatrixXd up = oracle::random_matrix(4, 2, rng, -1, 1);
  CellMlp g = score_temporal_backward(frames, {2, 2}, mlp, up);
  std::vector<std::span<double>> a, p;
  g.for_each_tensor([&](const char*, std::span<double> s) { a.push_back(s); });
  mlp.for_each_tensor([&](const char*, std::span<double> s) { p.push_back(s); });
  auto f = [&] { return (score_temporal(frames, {2, 2}, mlp).array() * up.array()).sum(); };
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t i = 0; i < p[t].size(); ++i) CHECK(oracle::rel_error(a[t][i], oracle::central_diff(f, p[t][i]), 1e-8) < 1e-5);
}

TEST_CASE("scorer kind names round-trip") {
  for (auto k : {ScorerKind::external_file, ScorerKind::pixel_energy, ScorerKind::learnable_cell_mlp, ScorerKind::temporal_diff})
    CHECK(scorer_kind_from_string(to_string(k)) == k);
  CHECK_THROWS(scorer_kind_from_string("bogus"));
}
