#pragma once

#include <span>
#include <vector>

#include "latte/ops.hpp"
#include "latte/tensor.hpp"

namespace latte {

// Timestep plus optional class label; label -1 means unconditional.
struct Conditioning {
  int timestep = 1;
  int label = -1;
};

// Rearranges a latent clip [B, F, H, W, C] into patch vectors.
// Uniform mode (stride == 1): one token per (frame, h-patch, w-patch), vector
// layout (ph, pw, C). Compression mode (stride s > 1): one token per
// (frame-tube, h-patch, w-patch), vector layout (s, ph, pw, C).
// Result: [B, n_f*n_h*n_w, stride*ph*pw*C].
Tensor patchify(const Tensor& v, int ph, int pw, int stride);

// Inverse spatial rearrangement of per-token vectors back to frames:
// [B, n_f*n_h*n_w, ph*pw*c_out] -> [B, n_f, H, W, c_out].
Tensor unpatchify(const Tensor& tokens, int64_t n_f, int64_t height, int64_t width,
                  int64_t c_out, int ph, int pw);

// Strided 1-D transposed convolution over the frame axis, kernel size equals
// stride: [B, n_f, H, W, C] -> [B, n_f*s, H, W, C] with
// out[b, f*s + k] = sum_ci kernel[k, ci, :] * in[b, f, :, :, ci] + bias.
Tensor temporal_upsample(const Tensor& x, const Tensor& kernel, const Tensor& bias);

// kernel [s, C, C] zeroed except kernel[s/2][c][c] = 1, so an untrained model
// starts out placing each latent frame at the tube's center slot.
Tensor temporal_upsample_init(int stride, int64_t channels);

// 1-D sinusoidal features for `positions` rows: [sin(p*w_0)..sin(p*w_{k-1}),
// cos(...)] with sin taking ceil(dim/2) slots. Row of position 0 is all zeros
// followed by all ones.
std::vector<double> sincos_table(int64_t positions, int64_t dim);

// Additive positional table [n_f*n_h*n_w, d]. Dims [0, d/2) carry the 2-D
// spatial sinusoid (split between the two axes), dims [d/2, d) carry the
// temporal sinusoid in absolute mode and zeros in rope mode.
Tensor build_pos_table(int64_t n_f, int64_t n_h, int64_t n_w, int64_t d, bool temporal_absolute);

// 256-dim sinusoidal timestep features fed to the conditioning MLP.
constexpr int64_t kTimestepFeatureDim = 256;
std::vector<double> timestep_features(int timestep);

// c = MLP(sinusoidal(t)) + class_table[label]; the class term is a zero
// vector when the label is absent or the table is undefined.
Tensor conditioning_embed(std::span<const Conditioning> cond, const Tensor& fc1_w,
                          const Tensor& fc1_b, const Tensor& fc2_w, const Tensor& fc2_b,
                          const Tensor& class_table);

}  // namespace latte
