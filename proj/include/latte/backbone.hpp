#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "latte/embedding.hpp"
#include "latte/ops.hpp"
#include "latte/tensor.hpp"

namespace latte {

enum class CondMode { all_tokens, s_adaln };
enum class TemporalPos { absolute, rope };
enum class PatchMode { uniform, compression };

struct ModelConfig {
  int variant = 1;  // 1 interleaved, 2 late fusion, 3 serial attention, 4 split heads
  int layers = 4;
  int hidden = 64;
  int heads = 4;
  int patch_h = 2;
  int patch_w = 2;
  int tube_stride = 2;  // used in compression mode only
  CondMode cond_mode = CondMode::s_adaln;
  TemporalPos temporal_pos = TemporalPos::absolute;
  PatchMode patch_mode = PatchMode::uniform;
  int frames = 4;
  int latent_h = 16;
  int latent_w = 16;
  int latent_c = 4;
  int num_classes = 0;     // 0 = unconditional, no class table
  int extra_frames = 0;    // joint-training image slots appended after `frames`

  void validate() const;  // throws ConfigError

  int stride() const { return patch_mode == PatchMode::compression ? tube_stride : 1; }
  int64_t n_f() const { return frames / stride(); }
  int64_t n_h() const { return latent_h / patch_h; }
  int64_t n_w() const { return latent_w / patch_w; }
  int64_t tokens_per_frame() const { return n_h() * n_w(); }
  int64_t seq_len() const { return n_f() * tokens_per_frame(); }
  // frame capacity of the positional table (covers appended image slots)
  int64_t n_f_max() const { return n_f() + extra_frames; }
  int64_t patch_in_dim() const {
    return static_cast<int64_t>(stride()) * patch_h * patch_w * latent_c;
  }
  int64_t decode_out_dim() const {
    return static_cast<int64_t>(patch_h) * patch_w * 2 * latent_c;
  }
};

enum class BlockKind { spatial, temporal, fused_sequential, fused_parallel };

// Block layout for a config: variant 1 alternates spatial/temporal starting
// spatial, variant 2 runs all spatial then all temporal, variants 3/4 repeat
// their fused kind. Single-frame configs build an image model: all spatial.
std::vector<BlockKind> block_plan(const ModelConfig& cfg);

struct AttnWeights {
  Tensor qkv_w, qkv_b;  // [D, 3D], [3D]
  Tensor proj_w, proj_b;
};

struct BlockWeights {
  BlockKind kind = BlockKind::spatial;
  AttnWeights attn_s;  // spatial / fused kinds
  AttnWeights attn_t;  // temporal / fused kinds
  Tensor fc1_w, fc1_b, fc2_w, fc2_b;
  Tensor adaln_w, adaln_b;            // s_adaln regressor [D, 6D]
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;  // all_tokens affine norms
};

struct Model {
  ModelConfig cfg;
  Tensor patch_w, patch_b;
  Tensor temb_fc1_w, temb_fc1_b, temb_fc2_w, temb_fc2_b;
  Tensor class_table;  // defined when num_classes > 0
  std::vector<BlockWeights> blocks;
  Tensor final_adaln_w, final_adaln_b;  // s_adaln
  Tensor final_ln_g, final_ln_b;        // all_tokens
  Tensor dec_w, dec_b;
  Tensor tups_w, tups_b;  // compression temporal upsampling
  Tensor pos_table;       // [n_f_max * t, D] buffer, not trained

  std::vector<std::pair<std::string, Tensor>> named_params() const;
  std::vector<std::pair<std::string, Tensor>> named_buffers() const;
  int64_t param_count() const;
  Model clone() const;
};

Model build_model(const ModelConfig& cfg, uint64_t seed);

// One Transformer block over tokens x [B, S, D]. `temporal_valid` limits the
// frames the temporal pathway may touch (joint image-video batches); pass
// n_f for plain video batches.
Tensor block_forward(const ModelConfig& cfg, const BlockWeights& bw, const Tensor& x,
                     const Tensor& cond_vec, int64_t n_f, int64_t t, int64_t temporal_valid);

struct DenoiserOut {
  Tensor eps;      // predicted noise, same shape as the input latents
  Tensor var_raw;  // raw covariance interpolation channel, same shape
};

// Full denoiser: patch embed + positional table + block stack + decode.
// latents [B, F, H, W, C]; temporal_valid < 0 means all frames are video.
DenoiserOut denoiser_forward(const Model& m, const Tensor& latents,
                             std::span<const Conditioning> cond, int temporal_valid = -1);

Tensor conditioning_vector(const Model& m, std::span<const Conditioning> cond);

// Builds a video model from a trained single-frame model: spatial blocks and
// embedders are copied, the positional table is replicated across frames, the
// class table is zero-initialized at the video task's size, and temporal
// blocks start gated to zero so the result initially acts per frame.
Model adapt_image_checkpoint(const Model& image, const ModelConfig& video_cfg, uint64_t seed);

}  // namespace latte
