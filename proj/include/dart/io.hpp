#pragma once

// File formats. Binary payloads are little-endian regardless of host order.
//
//   score map   CSV (H' lines of W' values) or "DARTSCR1" u32 H' u32 W' then f64 row-major
//   partition   JSON {"mode","grid":{"rows","cols"},"space":{"h","w"},"y":[...],"x":[[...],...]}
//   patches     "DARTPAT1" u32 seqlen u32 p u32 Ch then f32 patches (y, x, channel), plus JSON rects
//   tokens      "DARTTOK1" u32 header_bytes, JSON header, then f32 tokens seqlen x D row-major
//   checkpoint  "DARTCKP1" then f64 tensors back to back, described by a JSON manifest

#include "dart/image.hpp"
#include "dart/partition.hpp"
#include "dart/tokenize.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

namespace dart::io {

namespace fs = std::filesystem;

/// Binary PGM (P5) or PPM (P6), 8- or 16-bit, scaled to [0, 1].
ImageD read_pnm(const fs::path& path);
/// One channel writes P5, three channels write P6; values are clamped to [0, 1].
void write_pnm(const fs::path& path, const ImageD& img);

Eigen::MatrixXd read_scores_csv(const fs::path& path);
void write_scores_csv(const fs::path& path, const Eigen::MatrixXd& scores);
Eigen::MatrixXd read_scores_bin(const fs::path& path);
void write_scores_bin(const fs::path& path, const Eigen::MatrixXd& scores);
/// Dispatches on the DARTSCR1 magic, falling back to CSV.
Eigen::MatrixXd read_scores(const fs::path& path);

/// Bounds printed with 17 significant digits.
std::string partition_to_json(const Partition& p);
Partition partition_from_json(const std::string& text);
void write_partition(const fs::path& path, const Partition& p);
Partition read_partition(const fs::path& path);

nlohmann::json to_json(const TokenizerConfig& cfg);
TokenizerConfig config_from_json(const nlohmann::json& j);

void write_patch_dump(const fs::path& bin_path, const fs::path& json_path, const TokenBatch& batch);

struct PatchDump {
  int seqlen = 0;
  int patch = 0;
  int channels = 0;
  std::vector<float> values;
};
PatchDump read_patch_dump(const fs::path& bin_path);

void write_token_dump(const fs::path& path, const TokenBatch& batch, const nlohmann::json& config_echo);

struct TokenDump {
  nlohmann::json header;
  int seqlen = 0;
  int dim = 0;
  std::vector<float> values;
  /// Raw little-endian payload bytes following the header.
  std::string payload;
};
TokenDump read_token_dump(const fs::path& path);

/// A named flat tensor in a checkpoint.
struct TensorRecord {
  std::string name;
  std::vector<double> values;
};

/// Writes `<stem>.bin` and `<stem>.json` side by side.
void write_checkpoint(const fs::path& stem, const std::vector<TensorRecord>& tensors, const nlohmann::json& extra);
std::vector<TensorRecord> read_checkpoint(const fs::path& stem, nlohmann::json* manifest = nullptr);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

}  // namespace dart::io
