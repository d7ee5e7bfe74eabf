#pragma once

#include <string>
#include <vector>

#include "latte/config.hpp"
#include "latte/diffusion.hpp"

namespace latte {

struct TrainResult {
  std::vector<double> l_simple;  // one entry per executed step
  std::vector<double> l_vlb;
  int end_step = 0;
  std::string ckpt_dir;      // final raw checkpoint
  std::string ema_ckpt_dir;  // final EMA checkpoint
};

// Runs the training loop: synthetic data pipeline, q_sample corruption,
// L_simple + vlb_weight * L_vlb, AdamW, EMA, CSV metrics, periodic
// checkpoints. Resumable: `resume_from` names a raw checkpoint whose config
// hash must match. Deterministic given (config, mode): every step draws its
// data, timesteps and noise from seeds derived of (seed, step, sample).
TrainResult train_run(const RunConfig& cfg, const std::string& resume_from = "");

struct SampleResult {
  std::vector<double> coherence;  // per generated clip
  double mean_coherence = 0.0;
  std::string report_path;
};

// Generates `count` clips from a checkpoint directory (EMA preferred unless
// `prefer_ema` is false and the directory holds raw weights), writes
// sample_{i}/frame_*.pgm|ppm plus report.json into out_dir.
SampleResult sample_run(const std::string& ckpt_dir, int count, uint64_t seed,
                        const std::string& out_dir, bool prefer_ema = true);

// Resolves the checkpoint directory cmd_sample should read: the sibling
// "_ema" directory when present and preferred.
std::string resolve_sample_checkpoint(const std::string& ckpt_dir, bool prefer_ema);

// Loads model + config out of a checkpoint.
struct LoadedModel {
  RunConfig cfg;
  Model model;
};
LoadedModel load_model_checkpoint(const std::string& ckpt_dir);

}  // namespace latte
