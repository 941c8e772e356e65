// Command-line front end. Every subcommand prints its effective configuration as
// one JSON line on stdout before doing any work.
//
// Exit codes: 0 ok, 2 I/O error, 3 configuration error, 4 failed check.

#include "dart/error.hpp"
#include "dart/io.hpp"
#include "dart/overlay.hpp"
#include "dart/partition.hpp"
#include "dart/resample.hpp"
#include "dart/scoremap.hpp"
#include "dart/tokenize.hpp"
#include "dart/toytrain.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitCheck = 4;

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void echo(const json& effective) { std::cout << effective.dump() << std::endl; }

/// "energy", "file:PATH" or "learned:CKPT".
struct ScorerArg {
  dart::ScorerKind kind = dart::ScorerKind::pixel_energy;
  std::string path;
};

ScorerArg parse_scorer(const std::string& text) {
  if (text == "energy") return {};
  const auto colon = text.find(':');
  if (colon != std::string::npos) {
    const std::string head = text.substr(0, colon), tail = text.substr(colon + 1);
    if (tail.empty()) throw dart::ConfigError("scorer '" + text + "' is missing its path");
    if (head == "file") return {dart::ScorerKind::external_file, tail};
    if (head == "learned") return {dart::ScorerKind::learnable_cell_mlp, tail};
  }
  throw dart::ConfigError("unknown scorer '" + text + "' (expected energy, file:PATH or learned:CKPT)");
}

/// Overwrites the tensors of `params` (or just the scorer's) from a checkpoint, matching records in order.
void load_tokenizer_params(const fs::path& stem, dart::TokenizerParams& params, bool scorer_only) {
  const auto records = dart::io::read_checkpoint(stem);
  std::size_t next = 0;
  params.for_each_tensor([&](const char* name, std::span<double> dst) {
    if (scorer_only && std::string(name).rfind("scorer", 0) != 0) return;
    while (next < records.size() && records[next].name != name) ++next;
    if (next == records.size()) {
      throw dart::IoError("checkpoint " + stem.string() + " has no tensor '" + name + "'");
    }
    const auto& rec = records[next++];
    if (rec.values.size() != dst.size())
      throw dart::ConfigError("checkpoint tensor '" + rec.name + "' has " + std::to_string(rec.values.size()) +
                              " values, model expects " + std::to_string(dst.size()));
    std::copy(rec.values.begin(), rec.values.end(), dst.begin());
  });
}

/// The checkpoint stem may be given with or without its .json / .bin suffix.
fs::path checkpoint_stem(const fs::path& p) {
  if (p.extension() == ".json" || p.extension() == ".bin") return fs::path(p).replace_extension();
  return p;
}

// Checkpoints from `train` record the fixed input standardization the model saw.
dart::ImageD standardized_for(const fs::path& stem, const dart::ImageD& img) {
  json manifest;
  dart::io::read_checkpoint(stem, &manifest);
  if (!manifest.contains("input")) return img;
  const double mean = manifest["input"].value("mean", 0.0), scale = manifest["input"].value("scale", 1.0);
  dart::ImageD out = img;
  for (auto& plane : out.planes) plane = (plane.array() - mean) / scale;
  return out;
}

dart::TokenizerConfig config_from_checkpoint(const fs::path& stem) {
  json manifest;
  dart::io::read_checkpoint(stem, &manifest);
  if (!manifest.contains("config")) throw dart::ConfigError("checkpoint manifest has no tokenizer config");
  return dart::io::config_from_json(manifest["config"]);
}

/// Shared tokenizer flags.
struct TokenizerFlags {
  int rows = 14, cols = 14, patch = 16, dim = 192;
  std::string mode = "irregular";
  std::string scorer = "energy";
  std::vector<int> resize{448, 448};
  std::vector<int> score_grid{0, 0};
  int pe_samples = dart::kDefaultPosEmbedSamples;

  void attach(CLI::App* app) {
    app->add_option("--rows", rows, "Token rows R")->check(CLI::PositiveNumber);
    app->add_option("--cols", cols, "Token columns C")->check(CLI::PositiveNumber);
    app->add_option("--mode", mode, "irregular or regular")->check(CLI::IsMember({"irregular", "regular"}));
    app->add_option("--scorer", scorer, "energy, file:PATH or learned:CKPT");
    app->add_option("--score-grid", score_grid, "Score grid H' W' (0 0 = working size / 4)")->expected(2);
  }
  void attach_tokens(CLI::App* app) {
    app->add_option("--patch", patch, "Patch side p")->check(CLI::PositiveNumber);
    app->add_option("--dim", dim, "Embedding dimension D")->check(CLI::PositiveNumber);
    app->add_option("--resize", resize, "Working resolution H W (0 0 = native)")->expected(2);
    app->add_option("--pe-samples", pe_samples, "Positional-embedding samples per side")->check(CLI::PositiveNumber);
  }

  dart::TokenizerConfig config(int channels, const ScorerArg& s) const {
    dart::TokenizerConfig cfg;
    cfg.rows = rows;
    cfg.cols = cols;
    cfg.patch = patch;
    cfg.dim = dim;
    cfg.channels = channels;
    cfg.mode = dart::partition_mode_from_string(mode);
    cfg.scorer = s.kind;
    cfg.resize_h = resize[0];
    cfg.resize_w = resize[1];
    cfg.score_h = score_grid[0];
    cfg.score_w = score_grid[1];
    cfg.pe_samples = pe_samples;
    cfg.validate();
    return cfg;
  }
};

int cmd_partition(const std::string& image_path, TokenizerFlags& flags, const std::string& out_path,
                  const std::string& overlay_path, std::uint64_t seed) {
  const ScorerArg scorer = parse_scorer(flags.scorer);
  const dart::ImageD img = dart::io::read_pnm(image_path);
  flags.resize = {0, 0};
  dart::TokenizerConfig cfg = flags.config(img.channels(), scorer);
  std::mt19937_64 rng(seed);
  dart::TokenizerParams params = dart::TokenizerParams::random(cfg, rng);
  dart::RawScoreMap external;
  if (scorer.kind == dart::ScorerKind::external_file) {
    external = dart::io::read_scores(scorer.path);
    cfg.score_h = static_cast<int>(external.rows());
    cfg.score_w = static_cast<int>(external.cols());
  } else if (scorer.kind == dart::ScorerKind::learnable_cell_mlp) {
    load_tokenizer_params(checkpoint_stem(scorer.path), params, true);
  }
  const dart::CellGrid grid = cfg.score_grid(img.height(), img.width());

  json effective = {{"command", "partition"},
                    {"image", image_path},
                    {"scorer", flags.scorer},
                    {"rows", cfg.rows},
                    {"cols", cfg.cols},
                    {"mode", dart::to_string(cfg.mode)},
                    {"score_grid", {grid.rows, grid.cols}},
                    {"out", out_path},
                    {"overlay", overlay_path},
                    {"seed", seed}};
  echo(effective);

  const dart::ImageD scored =
      scorer.kind == dart::ScorerKind::learnable_cell_mlp ? standardized_for(checkpoint_stem(scorer.path), img) : img;
  const dart::RawScoreMap raw = dart::run_scorer(scored, cfg, params, &external);
  const dart::ScoreMap scores = dart::normalize_scores(raw);
  const dart::Partition in_grid = cfg.mode == dart::PartitionMode::regular
                                      ? dart::partition_regular(scores.values(), cfg.partition_spec())
                                      : dart::partition_irregular(scores.values(), cfg.partition_spec());
  const dart::Partition in_pixels = dart::scale_partition(in_grid, img.height(), img.width());
  dart::io::write_partition(out_path, in_pixels);
  if (!overlay_path.empty()) {
    const Eigen::MatrixXd& s = scores.values();
    dart::io::write_pnm(overlay_path, dart::render_overlay(img, in_pixels, &s));
  }
  return 0;
}

int cmd_tokenize(const std::string& image_path, TokenizerFlags& flags, const std::string& out_path,
                 const std::string& patches_path, bool baseline, std::uint64_t seed) {
  const ScorerArg scorer = parse_scorer(flags.scorer);
  dart::ImageD img = dart::io::read_pnm(image_path);
  dart::TokenizerConfig cfg;
  if (scorer.kind == dart::ScorerKind::learnable_cell_mlp) {
    cfg = config_from_checkpoint(checkpoint_stem(scorer.path));
    img = standardized_for(checkpoint_stem(scorer.path), img);
    cfg.mode = dart::partition_mode_from_string(flags.mode);
  } else {
    cfg = flags.config(img.channels(), scorer);
  }
  std::mt19937_64 rng(seed);
  dart::TokenizerParams params = dart::TokenizerParams::random(cfg, rng);
  dart::RawScoreMap external;
  if (scorer.kind == dart::ScorerKind::external_file) {
    external = dart::io::read_scores(scorer.path);
    cfg.score_h = static_cast<int>(external.rows());
    cfg.score_w = static_cast<int>(external.cols());
  } else if (scorer.kind == dart::ScorerKind::learnable_cell_mlp) {
    load_tokenizer_params(checkpoint_stem(scorer.path), params, false);
  }

  json config = dart::io::to_json(cfg);
  json effective = {{"command", "tokenize"}, {"image", image_path},  {"scorer", flags.scorer},
                    {"baseline", baseline},  {"out", out_path},      {"patches", patches_path},
                    {"seed", seed},          {"tokenizer", config}};
  echo(effective);

  const dart::TokenBatch batch = baseline ? dart::tokenize_uniform_baseline(img, cfg, params)
                                          : dart::tokenize(img, cfg, params, &external);
  dart::io::write_token_dump(out_path, batch, config);
  if (!patches_path.empty()) {
    fs::path json_path = patches_path;
    json_path.replace_extension(".json");
    dart::io::write_patch_dump(patches_path, json_path, batch);
  }
  std::cout << json{{"seqlen", batch.tokens.rows()}, {"dim", batch.tokens.cols()}}.dump() << std::endl;
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  echo({{"command", "gradcheck"}, {"seed", seed}});
  const auto report = dart::toy::gradcheck_all(seed);
  for (const auto& e : report.entries) {
    std::printf("%-26s %-4s max_rel=%.3e tol=%.0e checked=%d skipped=%d\n", e.leaf.c_str(), e.pass ? "PASS" : "FAIL",
                e.max_rel_error, e.tolerance, e.checked, e.skipped);
  }
  if (!report.all_pass()) throw CheckFailed("gradient check failed");
  return 0;
}

int cmd_train(dart::toy::TrainConfig cfg, const std::string& mode_name, std::uint64_t seed, const std::string& out) {
  const dart::toy::Mode mode = dart::toy::mode_from_string(mode_name);
  json effective = {{"command", "train"},
                    {"mode", mode_name},
                    {"seed", seed},
                    {"epochs", cfg.epochs},
                    {"batch", cfg.batch},
                    {"lr", cfg.lr},
                    {"momentum", cfg.momentum},
                    {"n_train", cfg.n_train},
                    {"n_test", cfg.n_test},
                    {"threads", dart::toy::resolve_threads(cfg.threads)},
                    {"out", out},
                    {"tokenizer", dart::io::to_json(cfg.tokenizer)}};
  echo(effective);

  fs::create_directories(out);
  const auto result = dart::toy::train(cfg, mode, seed, [](const dart::toy::MetricRow& row) {
    std::printf("epoch %3d %-5s loss=%.4f acc=%.4f\n", row.epoch, row.split.c_str(), row.loss, row.accuracy);
    std::fflush(stdout);
  });
  dart::io::write_text(fs::path(out) / "metrics.csv", dart::toy::metrics_csv(result.history));

  json summary = effective;
  summary.erase("command");
  summary["initial_train_loss"] = result.initial_train_loss;
  summary["initial_test_loss"] = result.initial_test_loss;
  summary["diverged"] = result.diverged;
  if (!result.history.empty()) {
    for (auto it = result.history.rbegin(); it != result.history.rend(); ++it) {
      const std::string key = "final_" + it->split;
      if (!summary.contains(key)) summary[key] = {{"epoch", it->epoch}, {"loss", it->loss}, {"accuracy", it->accuracy}};
    }
  }
  if (mode == dart::toy::Mode::dart) {
    summary["density"] = {{"fraction_at_least_2x", result.density.fraction_at_least_2x},
                          {"mean_ratio", result.density.mean_ratio}};
  }
  dart::io::write_text(fs::path(out) / "summary.json", summary.dump(2) + "\n");

  std::vector<dart::io::TensorRecord> tensors;
  dart::toy::ToyModel model = result.model;
  model.for_each_tensor([&](const char* name, std::span<double> s) {
    tensors.push_back({name, std::vector<double>(s.begin(), s.end())});
  });
  dart::io::write_checkpoint(fs::path(out) / "model", tensors,
                             {{"config", dart::io::to_json(cfg.tokenizer)},
                              {"input", {{"mean", cfg.data.input_mean}, {"scale", cfg.data.input_scale}}},
                              {"mode", mode_name},
                              {"seed", seed}});
  return result.diverged ? kExitCheck : 0;
}

int cmd_video(const std::string& frames_dir, TokenizerFlags& flags, const std::string& out_path,
              const std::string& overlay_path) {
  if (!fs::is_directory(frames_dir)) throw dart::IoError("frames directory not found: " + frames_dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(frames_dir)) {
    const auto ext = entry.path().extension();
    if (entry.is_regular_file() && (ext == ".ppm" || ext == ".pgm" || ext == ".pnm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw dart::IoError("no PPM/PGM frames in " + frames_dir);

  dart::FrameStack frames;
  for (const auto& f : files) frames.push_back(dart::io::read_pnm(f));
  for (const auto& f : frames)
    if (f.height() != frames[0].height() || f.width() != frames[0].width() || f.channels() != frames[0].channels())
      throw dart::ConfigError("all frames must share size and channel count");

  flags.resize = {0, 0};
  dart::TokenizerConfig cfg = flags.config(frames[0].channels(), {});
  const dart::CellGrid grid = cfg.score_grid(frames[0].height(), frames[0].width());
  json effective = {{"command", "video"},       {"frames", frames_dir},   {"count", frames.size()},
                    {"rows", cfg.rows},         {"cols", cfg.cols},       {"score_grid", {grid.rows, grid.cols}},
                    {"scorer", "temporal_diff"}, {"out", out_path},        {"overlay", overlay_path}};
  echo(effective);

  const auto raw = dart::score_temporal(frames, grid, dart::motion_scorer(frames[0].channels()));
  const dart::ScoreMap scores = dart::normalize_scores(raw);
  const auto video =
      dart::partition_video(scores.values(), static_cast<int>(frames.size()), {cfg.rows, cfg.cols, cfg.mode});
  const double stacked_h = static_cast<double>(frames[0].height()) * static_cast<double>(frames.size());
  const dart::Partition in_pixels = dart::scale_partition(video.partition, stacked_h, frames[0].width());
  std::cout << json{{"rows_per_frame", video.rows_per_frame}}.dump() << std::endl;
  if (!out_path.empty()) dart::io::write_partition(out_path, in_pixels);
  if (!overlay_path.empty()) {
    dart::ImageD stacked(frames[0].height() * static_cast<int>(frames.size()), frames[0].width(), frames[0].channels());
    for (std::size_t f = 0; f < frames.size(); ++f)
      for (int c = 0; c < stacked.channels(); ++c)
        stacked.planes[static_cast<std::size_t>(c)].middleRows(static_cast<Eigen::Index>(f) * frames[0].height(),
                                                              frames[0].height()) = frames[f].planes[static_cast<std::size_t>(c)];
    const Eigen::MatrixXd& s = scores.values();
    dart::io::write_pnm(overlay_path, dart::render_overlay(stacked, in_pixels, &s));
  }
  return 0;
}

json cost_json(const dart::CostReport& r) {
  return {{"seqlen", r.seqlen},
          {"projection_macs", r.projection_macs},
          {"resample_macs", r.resample_macs},
          {"posembed_macs", r.posembed_macs},
          {"tokenizer_flops", r.tokenizer_flops},
          {"backbone_flops", r.backbone_flops},
          {"tokenizer_share", r.tokenizer_share}};
}

int cmd_cost(int seqlen, double per_token, int compare, int patch, int dim, int channels) {
  auto config_for = [&](int n) {
    dart::TokenizerConfig cfg;
    cfg.rows = n;  // only the token count enters the accounting
    cfg.cols = 1;
    cfg.patch = patch;
    cfg.dim = dim;
    cfg.channels = channels;
    cfg.validate();
    return cfg;
  };
  echo({{"command", "cost"},
        {"seqlen", seqlen},
        {"per_token", per_token},
        {"compare", compare},
        {"patch", patch},
        {"dim", dim},
        {"channels", channels}});
  const auto report = dart::count_cost(config_for(seqlen), per_token);
  json out = {{"cost", cost_json(report)}};
  if (compare > 0) {
    const auto other = dart::count_cost(config_for(compare), per_token);
    out["compare"] = cost_json(other);
    out["backbone_ratio"] = report.backbone_flops / other.backbone_flops;
  }
  std::cout << out.dump(2) << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Differentiable adaptive region tokenizer"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "Random seed")->capture_default_str();

  TokenizerFlags part_flags;
  std::string part_image, part_out, part_overlay;
  auto* part = app.add_subcommand("partition", "Partition an image from its score map");
  part->add_option("--image", part_image, "Input PPM/PGM")->required();
  part->add_option("--out", part_out, "Partition JSON")->required();
  part->add_option("--overlay", part_overlay, "Overlay PPM");
  part_flags.attach(part);
  part->add_option("--seed", seed, "Random seed");

  TokenizerFlags tok_flags;
  std::string tok_image, tok_out, tok_patches;
  bool tok_baseline = false;
  auto* tok = app.add_subcommand("tokenize", "Tokenize an image into a DARTTOK1 dump");
  tok->add_option("--image", tok_image, "Input PPM/PGM")->required();
  tok->add_option("--out", tok_out, "Token dump")->required();
  tok->add_option("--patches", tok_patches, "Optional DARTPAT1 patch dump (rects go next to it as JSON)");
  tok->add_flag("--baseline", tok_baseline, "Fixed-grid baseline tokenizer");
  tok_flags.attach(tok);
  tok_flags.attach_tokens(tok);
  tok->add_option("--seed", seed, "Random seed");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  grad->add_option("--seed", seed, "Random seed");

  dart::toy::TrainConfig train_cfg;
  std::string train_mode = "dart", train_out = "train_out";
  auto* trn = app.add_subcommand("train", "Train the toy glyph classifier");
  trn->add_option("--mode", train_mode, "dart or uniform")->check(CLI::IsMember({"dart", "uniform"}));
  trn->add_option("--epochs", train_cfg.epochs, "Epochs")->check(CLI::NonNegativeNumber);
  trn->add_option("--batch", train_cfg.batch, "Batch size")->check(CLI::PositiveNumber);
  trn->add_option("--lr", train_cfg.lr, "Learning rate")->check(CLI::PositiveNumber);
  trn->add_option("--momentum", train_cfg.momentum, "Momentum")->check(CLI::Range(0.0, 1.0));
  trn->add_option("--n-train", train_cfg.n_train, "Training samples")->check(CLI::PositiveNumber);
  trn->add_option("--n-test", train_cfg.n_test, "Test samples")->check(CLI::PositiveNumber);
  trn->add_option("--threads", train_cfg.threads, "Worker threads (0 = DART_THREADS or all cores)");
  trn->add_option("--out", train_out, "Output directory");
  trn->add_option("--seed", seed, "Random seed");

  TokenizerFlags vid_flags;
  vid_flags.rows = 8;
  vid_flags.cols = 8;
  std::string vid_frames, vid_out, vid_overlay;
  auto* vid = app.add_subcommand("video", "Partition a stack of frames with temporal-difference scores");
  vid->add_option("--frames", vid_frames, "Directory of PPM/PGM frames, sorted by name")->required();
  vid->add_option("--out", vid_out, "Partition JSON of the stacked frames");
  vid->add_option("--overlay", vid_overlay, "Overlay PPM of the stacked frames");
  vid_flags.attach(vid);

  int cost_seqlen = 196, cost_compare = 0, cost_patch = 16, cost_dim = 192, cost_channels = 3;
  double cost_per_token = 0;
  auto* cost = app.add_subcommand("cost", "Token-count cost accounting");
  cost->add_option("--seqlen", cost_seqlen, "Tokens per image")->check(CLI::PositiveNumber);
  cost->add_option("--per-token", cost_per_token, "Backbone FLOPs per token")->required()->check(CLI::NonNegativeNumber);
  cost->add_option("--compare", cost_compare, "Second seqlen to compare against")->check(CLI::NonNegativeNumber);
  cost->add_option("--patch", cost_patch, "Patch side")->check(CLI::PositiveNumber);
  cost->add_option("--dim", cost_dim, "Embedding dimension")->check(CLI::PositiveNumber);
  cost->add_option("--channels", cost_channels, "Image channels")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*part) return cmd_partition(part_image, part_flags, part_out, part_overlay, seed);
    if (*tok) return cmd_tokenize(tok_image, tok_flags, tok_out, tok_patches, tok_baseline, seed);
    if (*grad) return cmd_gradcheck(seed);
    if (*trn) return cmd_train(train_cfg, train_mode, seed, train_out);
    if (*vid) return cmd_video(vid_frames, vid_flags, vid_out, vid_overlay);
    if (*cost) return cmd_cost(cost_seqlen, cost_per_token, cost_compare, cost_patch, cost_dim, cost_channels);
  } catch (const dart::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CheckFailed& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCheck;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
  return 0;
}
