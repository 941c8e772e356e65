#include "dart/error.hpp"
#include "dart/io.hpp"
#include "dart/partition.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <filesystem>

using namespace dart;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dart_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::uint32_t u32_at(const std::string& bytes, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]);
  return v;
}

}  // namespace

TEST_CASE("PPM and PGM round trip at 8-bit precision") {
  std::mt19937_64 rng(1);
  for (int ch : {1, 3}) {
    ImageD img = oracle::random_image(5, 7, ch, rng);
    for (auto& p : img.planes) p = (p * 255).array().round() / 255;
    const fs::path path = scratch(ch == 1 ? "a.pgm" : "a.ppm");
    io::write_pnm(path, img);
    const ImageD back = io::read_pnm(path);
    REQUIRE(back.channels() == ch);
    REQUIRE(back.height() == 5);
    REQUIRE(back.width() == 7);
    for (int c = 0; c < ch; ++c) CHECK((back.planes[c] - img.planes[c]).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("16-bit PGM with comments is read") {
  const fs::path path = scratch("deep.pgm");
  std::string bytes = "P5\n# a comment\n2 1\n65535\n";
  bytes += std::string("\xff\xff\x00\x00", 4);
  io::write_text(path, bytes);
  const ImageD img = io::read_pnm(path);
  CHECK(img(0, 0, 0) == 1.0);
  CHECK(img(0, 1, 0) == 0.0);
}

TEST_CASE("PNM errors are I/O errors") {
  CHECK_THROWS_AS(io::read_pnm(scratch("missing.ppm")), IoError);
  io::write_text(scratch("ascii.ppm"), "P3\n1 1\n255\n0 0 0\n");
  CHECK_THROWS_AS(io::read_pnm(scratch("ascii.ppm")), IoError);
  io::write_text(scratch("short.ppm"), "P6\n4 4\n255\nabc");
  CHECK_THROWS_AS(io::read_pnm(scratch("short.ppm")), IoError);
}

TEST_CASE("score maps round trip through CSV and DARTSCR1") {
  std::mt19937_64 rng(2);
  const Eigen::MatrixXd s = oracle::random_matrix(3, 4, rng, -5, 5);
  io::write_scores_csv(scratch("s.csv"), s);
  io::write_scores_bin(scratch("s.bin"), s);
  CHECK(io::read_scores_csv(scratch("s.csv")) == s);
  CHECK(io::read_scores_bin(scratch("s.bin")) == s);
  CHECK(io::read_scores(scratch("s.csv")) == s);
  CHECK(io::read_scores(scratch("s.bin")) == s);

  const std::string bytes = io::read_text(scratch("s.bin"));
  CHECK(bytes.compare(0, 8, "DARTSCR1") == 0);
  CHECK(u32_at(bytes, 8) == 3);
  CHECK(u32_at(bytes, 12) == 4);
  CHECK(bytes.size() == 16 + 12 * 8);
}

TEST_CASE("malformed score files") {
  io::write_text(scratch("ragged.csv"), "1,2\n3\n");
  CHECK_THROWS_AS(io::read_scores_csv(scratch("ragged.csv")), IoError);
  io::write_text(scratch("word.csv"), "1,x\n");
  CHECK_THROWS_AS(io::read_scores_csv(scratch("word.csv")), IoError);
  io::write_text(scratch("trunc.bin"), std::string("DARTSCR1\x02\x00\x00\x00\x02\x00\x00\x00", 16));
  CHECK_THROWS_AS(io::read_scores_bin(scratch("trunc.bin")), IoError);
}

TEST_CASE("partition JSON round trips bit for bit") {
  std::mt19937_64 rng(3);
  const Eigen::MatrixXd s = oracle::random_matrix(9, 11, rng, 0.1, 1.0);
  const Partition p = partition_irregular(s / s.sum(), {3, 4, PartitionMode::irregular});
  io::write_partition(scratch("p.json"), p);
  const Partition q = io::read_partition(scratch("p.json"));
  CHECK(q.mode == p.mode);
  CHECK(q.height == p.height);
  CHECK(q.width == p.width);
  CHECK(q.y == p.y);
  for (int r = 0; r < 3; ++r) CHECK(q.x[r] == p.x[r]);

  const auto j = nlohmann::json::parse(io::read_text(scratch("p.json")));
  CHECK(j["mode"] == "irregular");
  CHECK(j["grid"]["rows"] == 3);
  CHECK(j["grid"]["cols"] == 4);
  CHECK(j["space"]["h"] == 9.0);
  CHECK(j["x"].size() == 3);
  CHECK_THROWS_AS(io::partition_from_json("{\"mode\":\"irregular\"}"), IoError);
}

TEST_CASE("tokenizer config JSON round trip") {
  TokenizerConfig cfg;
  cfg.rows = 28;
  cfg.cols = 14;
  cfg.mode = PartitionMode::regular;
  cfg.scorer = ScorerKind::learnable_cell_mlp;
  cfg.resize_h = 0;
  cfg.resize_w = 0;
  const TokenizerConfig back = io::config_from_json(io::to_json(cfg));
  CHECK(back.rows == 28);
  CHECK(back.cols == 14);
  CHECK(back.mode == PartitionMode::regular);
  CHECK(back.scorer == ScorerKind::learnable_cell_mlp);
  CHECK(back.resize_h == 0);
  CHECK_THROWS_AS(io::config_from_json(nlohmann::json{{"rows", "many"}}), ConfigError);
}

TEST_CASE("patch and token dumps") {
  std::mt19937_64 rng(4);
  TokenizerConfig cfg;
  cfg.rows = 2;
  cfg.cols = 3;
  cfg.patch = 2;
  cfg.dim = 4;
  cfg.resize_h = 0;
  cfg.resize_w = 0;
  const TokenizerParams params = TokenizerParams::random(cfg, rng);
  const TokenBatch b = tokenize(oracle::random_image(12, 12, 3, rng), cfg, params);

  io::write_patch_dump(scratch("p.bin"), scratch("p_rects.json"), b);
  const auto pd = io::read_patch_dump(scratch("p.bin"));
  CHECK(pd.seqlen == 6);
  CHECK(pd.patch == 2);
  CHECK(pd.channels == 3);
  REQUIRE(pd.values.size() == 6 * 12);
  CHECK(pd.values[13] == static_cast<float>(b.patches[1].values[1]));
  const auto rects = nlohmann::json::parse(io::read_text(scratch("p_rects.json")));
  CHECK(rects["rects"].size() == 6);

  io::write_token_dump(scratch("t.bin"), b, io::to_json(cfg));
  const std::string bytes = io::read_text(scratch("t.bin"));
  CHECK(bytes.compare(0, 8, "DARTTOK1") == 0);
  const auto td = io::read_token_dump(scratch("t.bin"));
  CHECK(td.seqlen == 6);
  CHECK(td.dim == 4);
  CHECK(td.header["dtype"] == "float32-le");
  CHECK(td.header["config"]["rows"] == 2);
  CHECK(td.payload.size() == 6 * 4 * 4);
  for (int i = 0; i < 6; ++i)
    for (int d = 0; d < 4; ++d) CHECK(td.values[static_cast<std::size_t>(i * 4 + d)] == static_cast<float>(b.tokens(i, d)));
  float first = 0;
  std::memcpy(&first, td.payload.data(), 4);
  CHECK(first == static_cast<float>(b.tokens(0, 0)));
}

TEST_CASE("checkpoint round trip") {
  const std::vector<io::TensorRecord> tensors{{"a", {1.0, -2.5, 3.25}}, {"b", {}}, {"c", {1e-300}}};
  io::write_checkpoint(scratch("ckpt"), tensors, {{"note", "x"}});
  nlohmann::json manifest;
  const auto back = io::read_checkpoint(scratch("ckpt"), &manifest);
  REQUIRE(back.size() == 3);
  CHECK(back[0].name == "a");
  CHECK(back[0].values == tensors[0].values);
  CHECK(back[1].values.empty());
  CHECK(back[2].values == tensors[2].values);
  CHECK(manifest["note"] == "x");
  CHECK(manifest["format"] == "DARTCKP1");
  CHECK(io::read_text(scratch("ckpt.bin")).compare(0, 8, "DARTCKP1") == 0);
  CHECK_THROWS_AS(io::read_checkpoint(scratch("nothing")), IoError);
}
