#include "dart/io.hpp"

#include "dart/error.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dart::io {

namespace {

constexpr char kScoreMagic[] = "DARTSCR1";
constexpr char kPatchMagic[] = "DARTPAT1";
constexpr char kTokenMagic[] = "DARTTOK1";
constexpr char kCheckpointMagic[] = "DARTCKP1";

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}

  void expect_magic(const char* magic) {
    const std::string got = bytes(8);
    if (got != std::string(magic, 8))
      throw IoError(origin_ + ": bad magic, expected " + std::string(magic, 8));
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw IoError(origin_ + ": truncated file");
    std::string out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32() {
    const std::string b = bytes(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    const std::string b = bytes(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_binary(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string format17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

nlohmann::json rect_json(const Rect& r) { return nlohmann::json::array({r.x0, r.x1, r.y0, r.y1}); }

}  // namespace

std::string read_text(const fs::path& path) { return read_binary(path); }
void write_text(const fs::path& path, const std::string& text) { write_binary(path, text); }

ImageD read_pnm(const fs::path& path) {
  const std::string data = read_binary(path);
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> int {
    skip_space();
    if (pos >= data.size() || !std::isdigit(static_cast<unsigned char>(data[pos])))
      throw IoError(path.string() + ": malformed PNM header");
    long v = 0;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos]))) {
      v = v * 10 + (data[pos++] - '0');
      if (v > (1 << 24)) throw IoError(path.string() + ": PNM header value too large");
    }
    return static_cast<int>(v);
  };

  if (data.size() < 2 || data[0] != 'P' || (data[1] != '5' && data[1] != '6'))
    throw IoError(path.string() + ": only binary PGM (P5) and PPM (P6) are supported");
  const int channels = data[1] == '6' ? 3 : 1;
  pos = 2;
  const int width = number();
  const int height = number();
  const int maxval = number();
  if (width < 1 || height < 1 || maxval < 1 || maxval > 65535) throw IoError(path.string() + ": invalid PNM header");
  ++pos;  // single whitespace before the raster
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(width) * height * channels * bytes_per;
  if (pos + need > data.size()) throw IoError(path.string() + ": truncated PNM raster");

  ImageD img(height, width, channels);
  const auto* raw = reinterpret_cast<const unsigned char*>(data.data() + pos);
  std::size_t i = 0;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        unsigned v = raw[i++];
        if (bytes_per == 2) v = (v << 8) | raw[i++];
        img(y, x, c) = static_cast<double>(v) / maxval;
      }
  return img;
}

void write_pnm(const fs::path& path, const ImageD& img) {
  if (img.channels() != 1 && img.channels() != 3)
    throw std::invalid_argument("PNM output needs 1 or 3 channels, image has " + std::to_string(img.channels()));
  std::string out = (img.channels() == 3 ? "P6\n" : "P5\n") + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + static_cast<std::size_t>(img.height()) * img.width() * img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) {
        const double v = std::clamp(img(y, x, c), 0.0, 1.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
  write_binary(path, out);
}

Eigen::MatrixXd read_scores_csv(const fs::path& path) {
  std::istringstream in(read_binary(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        throw IoError(path.string() + ": bad value '" + cell + "' on line " + std::to_string(rows.size() + 1));
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw IoError(path.string() + ": ragged CSV at line " + std::to_string(rows.size() + 1));
    rows.push_back(std::move(row));
  }
  if (rows.empty() || rows.front().empty()) throw IoError(path.string() + ": empty score file");
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  return m;
}

void write_scores_csv(const fs::path& path, const Eigen::MatrixXd& scores) {
  std::string out;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
      if (c) out += ',';
      out += format17(scores(r, c));
    }
    out += '\n';
  }
  write_binary(path, out);
}

Eigen::MatrixXd read_scores_bin(const fs::path& path) {
  Reader in(read_binary(path), path.string());
  in.expect_magic(kScoreMagic);
  const auto h = in.u32(), w = in.u32();
  if (h == 0 || w == 0) throw IoError(path.string() + ": zero score grid");
  if (in.remaining() != static_cast<std::size_t>(h) * w * 8) throw IoError(path.string() + ": payload size mismatch");
  Eigen::MatrixXd m(h, w);
  for (std::uint32_t r = 0; r < h; ++r)
    for (std::uint32_t c = 0; c < w; ++c) m(r, c) = in.f64();
  return m;
}

void write_scores_bin(const fs::path& path, const Eigen::MatrixXd& scores) {
  std::string out(kScoreMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(scores.rows()));
  put_u32(out, static_cast<std::uint32_t>(scores.cols()));
  for (Eigen::Index r = 0; r < scores.rows(); ++r)
    for (Eigen::Index c = 0; c < scores.cols(); ++c) put_f64(out, scores(r, c));
  write_binary(path, out);
}

Eigen::MatrixXd read_scores(const fs::path& path) {
  const std::string head = read_binary(path).substr(0, 8);
  if (head == std::string(kScoreMagic, 8)) return read_scores_bin(path);
  return read_scores_csv(path);
}

std::string partition_to_json(const Partition& p) {
  auto list = [](const Eigen::VectorXd& v) {
    std::string s = "[";
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += format17(v[i]);
    }
    return s + "]";
  };
  std::string s = "{\"mode\":\"" + to_string(p.mode) + "\",\"grid\":{\"rows\":" + std::to_string(p.rows()) +
                  ",\"cols\":" + std::to_string(p.cols()) + "},\"space\":{\"h\":" + format17(p.height) +
                  ",\"w\":" + format17(p.width) + "},\"y\":" + list(p.y) + ",\"x\":[";
  for (std::size_t r = 0; r < p.x.size(); ++r) {
    if (r) s += ',';
    s += list(p.x[r]);
  }
  return s + "]}";
}

Partition partition_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw IoError(std::string("partition JSON: ") + e.what());
  }
  try {
    Partition p;
    p.mode = partition_mode_from_string(j.at("mode").get<std::string>());
    const int rows = j.at("grid").at("rows").get<int>();
    const int cols = j.at("grid").at("cols").get<int>();
    p.height = j.at("space").at("h").get<double>();
    p.width = j.at("space").at("w").get<double>();
    const auto ys = j.at("y").get<std::vector<double>>();
    if (static_cast<int>(ys.size()) != rows + 1) throw std::invalid_argument("y has wrong length");
    p.y = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    const auto& xs = j.at("x");
    if (static_cast<int>(xs.size()) != rows) throw std::invalid_argument("x has wrong row count");
    for (const auto& row : xs) {
      const auto v = row.get<std::vector<double>>();
      if (static_cast<int>(v.size()) != cols + 1) throw std::invalid_argument("x row has wrong length");
      p.x.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    }
    return p;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(std::string("partition JSON: ") + e.what());
  }
}

void write_partition(const fs::path& path, const Partition& p) { write_binary(path, partition_to_json(p) + "\n"); }
Partition read_partition(const fs::path& path) { return partition_from_json(read_binary(path)); }

nlohmann::json to_json(const TokenizerConfig& cfg) {
  return {{"rows", cfg.rows},
          {"cols", cfg.cols},
          {"seqlen", cfg.seqlen()},
          {"patch", cfg.patch},
          {"dim", cfg.dim},
          {"channels", cfg.channels},
          {"mode", to_string(cfg.mode)},
          {"scorer", to_string(cfg.scorer)},
          {"pe_samples", cfg.pe_samples},
          {"pe_grid", cfg.pe_grid},
          {"resize", {cfg.resize_h, cfg.resize_w}},
          {"score_grid", {cfg.score_h, cfg.score_w}}};
}

TokenizerConfig config_from_json(const nlohmann::json& j) {
  try {
    TokenizerConfig cfg;
    cfg.rows = j.at("rows").get<int>();
    cfg.cols = j.at("cols").get<int>();
    cfg.patch = j.at("patch").get<int>();
    cfg.dim = j.at("dim").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.mode = partition_mode_from_string(j.at("mode").get<std::string>());
    cfg.scorer = scorer_kind_from_string(j.at("scorer").get<std::string>());
    cfg.pe_samples = j.at("pe_samples").get<int>();
    cfg.pe_grid = j.value("pe_grid", 0);
    cfg.resize_h = j.at("resize").at(0).get<int>();
    cfg.resize_w = j.at("resize").at(1).get<int>();
    cfg.score_h = j.at("score_grid").at(0).get<int>();
    cfg.score_w = j.at("score_grid").at(1).get<int>();
    cfg.validate();
    return cfg;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("tokenizer config: ") + e.what());
  }
}

void write_patch_dump(const fs::path& bin_path, const fs::path& json_path, const TokenBatch& batch) {
  if (batch.patches.empty()) throw std::invalid_argument("patch dump: no patches");
  const int p = batch.patches.front().size, ch = batch.patches.front().channels;
  std::string out(kPatchMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(batch.patches.size()));
  put_u32(out, static_cast<std::uint32_t>(p));
  put_u32(out, static_cast<std::uint32_t>(ch));
  nlohmann::json rects = nlohmann::json::array();
  for (const auto& patch : batch.patches) {
    for (Eigen::Index i = 0; i < patch.values.size(); ++i) put_f32(out, static_cast<float>(patch.values[i]));
    rects.push_back(rect_json(patch.source));
  }
  write_binary(bin_path, out);
  const nlohmann::json meta = {{"seqlen", batch.patches.size()}, {"patch", p}, {"channels", ch},
                               {"layout", "y,x,channel"}, {"rects", rects}};
  write_binary(json_path, meta.dump(2) + "\n");
}

PatchDump read_patch_dump(const fs::path& bin_path) {
  Reader in(read_binary(bin_path), bin_path.string());
  in.expect_magic(kPatchMagic);
  PatchDump d;
  d.seqlen = static_cast<int>(in.u32());
  d.patch = static_cast<int>(in.u32());
  d.channels = static_cast<int>(in.u32());
  const std::size_t n = static_cast<std::size_t>(d.seqlen) * d.patch * d.patch * d.channels;
  if (in.remaining() != n * 4) throw IoError(bin_path.string() + ": payload size mismatch");
  d.values.resize(n);
  for (auto& v : d.values) v = in.f32();
  return d;
}

void write_token_dump(const fs::path& path, const TokenBatch& batch, const nlohmann::json& config_echo) {
  nlohmann::json rects = nlohmann::json::array();
  for (const auto& r : batch.rects) rects.push_back(rect_json(r));
  const nlohmann::json header = {{"seqlen", batch.tokens.rows()},
                                 {"dim", batch.tokens.cols()},
                                 {"dtype", "float32-le"},
                                 {"config", config_echo},
                                 {"rects", rects}};
  const std::string text = header.dump();
  std::string out(kTokenMagic, 8);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (Eigen::Index r = 0; r < batch.tokens.rows(); ++r)
    for (Eigen::Index c = 0; c < batch.tokens.cols(); ++c) put_f32(out, static_cast<float>(batch.tokens(r, c)));
  write_binary(path, out);
}

TokenDump read_token_dump(const fs::path& path) {
  Reader in(read_binary(path), path.string());
  in.expect_magic(kTokenMagic);
  TokenDump d;
  const auto len = in.u32();
  try {
    d.header = nlohmann::json::parse(in.bytes(len));
    d.seqlen = d.header.at("seqlen").get<int>();
    d.dim = d.header.at("dim").get<int>();
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(path.string() + ": bad token header: " + e.what());
  }
  const std::size_t n = static_cast<std::size_t>(d.seqlen) * d.dim;
  if (in.remaining() != n * 4) throw IoError(path.string() + ": payload size mismatch");
  d.payload = in.bytes(n * 4);
  Reader payload(d.payload, path.string());
  d.values.resize(n);
  for (auto& v : d.values) v = payload.f32();
  return d;
}

void write_checkpoint(const fs::path& stem, const std::vector<TensorRecord>& tensors, const nlohmann::json& extra) {
  std::string blob(kCheckpointMagic, 8);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& t : tensors) {
    entries.push_back({{"name", t.name}, {"offset", blob.size()}, {"count", t.values.size()}});
    for (double v : t.values) put_f64(blob, v);
  }
  fs::path bin = stem;
  bin += ".bin";
  fs::path manifest_path = stem;
  manifest_path += ".json";
  write_binary(bin, blob);
  nlohmann::json manifest = extra;
  manifest["format"] = "DARTCKP1";
  manifest["blob"] = bin.filename().string();
  manifest["dtype"] = "float64-le";
  manifest["tensors"] = entries;
  write_binary(manifest_path, manifest.dump(2) + "\n");
}

std::vector<TensorRecord> read_checkpoint(const fs::path& stem, nlohmann::json* manifest_out) {
  fs::path bin = stem;
  bin += ".bin";
  fs::path manifest_path = stem;
  manifest_path += ".json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_binary(manifest_path));
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError(manifest_path.string() + ": " + e.what());
  }
  const std::string blob = read_binary(bin);
  if (blob.size() < 8 || blob.compare(0, 8, kCheckpointMagic, 8) != 0) throw IoError(bin.string() + ": bad magic");
  std::vector<TensorRecord> out;
  for (const auto& e : manifest.at("tensors")) {
    TensorRecord t;
    t.name = e.at("name").get<std::string>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto count = e.at("count").get<std::size_t>();
    if (offset + count * 8 > blob.size()) throw IoError(bin.string() + ": tensor " + t.name + " out of range");
    Reader r(blob.substr(offset, count * 8), bin.string());
    t.values.resize(count);
    for (auto& v : t.values) v = r.f64();
    out.push_back(std::move(t));
  }
  if (manifest_out) *manifest_out = std::move(manifest);
  return out;
}

}  // namespace dart::io
