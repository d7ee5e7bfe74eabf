#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "latte/backbone.hpp"

namespace latte {

struct DiffusionConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  double vlb_weight = 1e-3;
};

struct OptimConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double ema_decay = 0.9999;
};

struct TrainConfig {
  int batch_size = 4;
  int steps = 500;
  int log_every = 10;
  int ckpt_every = 250;
  uint64_t seed = 7;
  std::string out_dir = "run";
};

struct DataConfig {
  std::string kind = "moving_squares";  // or clip_dir
  std::string path;                     // frame directory for clip_dir
  int height_px = 32;
  int width_px = 32;
  int channels_px = 1;
  int codec_factor = 2;
  int source_frames = 16;  // synthetic source video length
  int clip_interval = 3;
  double hflip_p = 0.5;
};

struct RunConfig {
  ModelConfig model;
  DiffusionConfig diffusion;
  OptimConfig optim;
  TrainConfig train;
  DataConfig data;

  void validate() const;  // throws ConfigError
};

// Strict parsing: unknown keys anywhere are rejected; missing keys fall back
// to the defaults above.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_json(const RunConfig& cfg);

// FNV-1a over the canonical serialization; embedded in checkpoints so that a
// resume against a different config fails loudly.
std::string config_hash_hex(const RunConfig& cfg);

// Hash over the fields that define the training trajectory (model, schedule,
// optimizer, data, batch size, seed). Run-control fields like the step budget
// or output directory may differ between a checkpoint and its resume.
std::string resume_hash_hex(const RunConfig& cfg);

// Small moving-squares setup used by the desk-scale training checks.
RunConfig desk_config();

std::string cond_mode_str(CondMode m);
std::string temporal_pos_str(TemporalPos m);
std::string patch_mode_str(PatchMode m);

}  // namespace latte
