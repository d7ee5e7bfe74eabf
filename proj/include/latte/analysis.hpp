#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "latte/backbone.hpp"

namespace latte {

struct CostBreakdown {
  double patch_embed = 0;
  double conditioning = 0;  // timestep MLP, class table, modulation regressors
  double blocks_linear = 0;
  double blocks_attention = 0;
  double final_decode = 0;
  double total() const {
    return patch_embed + conditioning + blocks_linear + blocks_attention + final_decode;
  }
};

struct CostReport {
  int64_t params = 0;
  double flops_forward = 0;  // one multiply-accumulate counted as 2 FLOPs
  CostBreakdown params_by_part;
  CostBreakdown flops_by_part;
};

// Closed-form trainable-parameter count; matches the allocated weights of
// build_model exactly for every valid config.
int64_t count_params(const ModelConfig& cfg);

// Analytic forward cost per clip: linear layers at 2*m*n FLOPs per token,
// attention at 2*s^2*d per sequence for scores and again for mixing.
CostReport estimate_flops(const ModelConfig& cfg);

// Depth giving the variant a parameter count closest to (and not below) the
// reference interleaved stack of `base_layers` blocks.
int equalized_depth(int variant, int base_layers, int hidden, CondMode mode);

struct ModelPreset {
  std::string name;
  int layers, hidden, heads;
};
ModelPreset model_preset(const std::string& name);  // s, b, l, xl

// Paper-scale reproduction config: 16 frames, 32x32x4 latent, patch 2,
// unconditional, S-AdaLN, depth equalized per variant.
ModelConfig paper_config(const std::string& size, int variant);

struct GaussianStats {
  std::vector<double> mean;
  std::vector<double> cov;  // row-major dim x dim
  int64_t count = 0;
  int64_t dim() const { return static_cast<int64_t>(mean.size()); }
};

GaussianStats gaussian_stats(const std::vector<std::vector<double>>& samples);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)); the matrix square root
// uses a symmetric eigendecomposition of Sa^(1/2) Sb Sa^(1/2), clamping
// eigenvalues negative beyond -1e-8 as an error.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);

// Symmetric eigenvalues via cyclic Jacobi (ascending order).
std::vector<double> sym_eigenvalues(std::vector<double> m, int64_t dim);

// Mean Pearson correlation between consecutive frames of a clip [F, H, W, C].
// Zero-variance frames: identical pairs count as 1, mixed pairs are skipped.
double temporal_coherence(const Tensor& clip);

}  // namespace latte
