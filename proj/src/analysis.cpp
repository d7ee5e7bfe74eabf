#include "latte/analysis.hpp"

#include <algorithm>
#include <cmath>

namespace latte {

namespace {

// per-block trainable parameters
int64_t block_params(BlockKind kind, CondMode mode, int64_t d) {
  const int64_t attn = 4 * d * d + 4 * d;       // qkv + output projection
  const int64_t mlp = 8 * d * d + 5 * d;        // fc1 + fc2, ratio 4
  const bool fused = kind == BlockKind::fused_sequential || kind == BlockKind::fused_parallel;
  int64_t p = (fused ? 2 * attn : attn) + mlp;
  if (mode == CondMode::s_adaln) {
    p += 6 * d * d + 6 * d;  // (gamma, beta, alpha) regressor for both sublayers
  } else {
    p += 4 * d;  // two affine layer norms
  }
  return p;
}

}  // namespace

int64_t count_params(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.hidden;
  int64_t total = 0;
  total += cfg.patch_in_dim() * d + d;                             // patch embedding
  total += kTimestepFeatureDim * d + d + d * d + d;                // timestep MLP
  if (cfg.num_classes > 0) total += static_cast<int64_t>(cfg.num_classes) * d;
  for (BlockKind kind : block_plan(cfg)) total += block_params(kind, cfg.cond_mode, d);
  if (cfg.cond_mode == CondMode::s_adaln) {
    total += 2 * d * d + 2 * d;  // final modulation
  } else {
    total += 2 * d;  // final affine norm
  }
  total += d * cfg.decode_out_dim() + cfg.decode_out_dim();  // linear decoder
  if (cfg.patch_mode == PatchMode::compression) {
    const int64_t c2 = 2 * cfg.latent_c;
    total += static_cast<int64_t>(cfg.tube_stride) * c2 * c2 + c2;  // temporal upsampling
  }
  return total;
}

CostReport estimate_flops(const ModelConfig& cfg) {
  cfg.validate();
  const double d = cfg.hidden;
  const double d2 = d * d;
  const double t = static_cast<double>(cfg.tokens_per_frame());
  const double n_f = static_cast<double>(cfg.n_f());
  const double S = n_f * t;
  const bool adaln = cfg.cond_mode == CondMode::s_adaln;
  // all-tokens mode lengthens every key/value sequence by the conditioning token
  const double kv_extra = adaln ? 0.0 : 1.0;

  CostReport r;
  r.params = count_params(cfg);
  {
    const int64_t dd = cfg.hidden;
    auto& p = r.params_by_part;
    p.patch_embed = static_cast<double>(cfg.patch_in_dim() * dd + dd);
    p.conditioning = static_cast<double>(kTimestepFeatureDim * dd + dd + dd * dd + dd);
    if (cfg.num_classes > 0) p.conditioning += static_cast<double>(cfg.num_classes * dd);
    for (BlockKind kind : block_plan(cfg)) {
      const bool fused =
          kind == BlockKind::fused_sequential || kind == BlockKind::fused_parallel;
      const double attn = 4 * d2 + 4 * d;
      const double mlp = 8 * d2 + 5 * d;
      p.blocks_attention += fused ? 2 * attn : attn;
      p.blocks_linear += mlp;
      p.conditioning += adaln ? 6 * d2 + 6 * d : 4 * d;
    }
    p.final_decode = static_cast<double>(cfg.hidden * cfg.decode_out_dim() +
                                         cfg.decode_out_dim());
    p.conditioning += adaln ? 2 * d2 + 2 * d : 2 * d;
    if (cfg.patch_mode == PatchMode::compression) {
      const double c2 = 2.0 * cfg.latent_c;
      p.final_decode += cfg.tube_stride * c2 * c2 + c2;
    }
  }

  auto& f = r.flops_by_part;
  f.patch_embed = 2.0 * S * static_cast<double>(cfg.patch_in_dim()) * d;
  f.conditioning = 2.0 * (kTimestepFeatureDim * d + d2);

  auto attn_cost = [&](double seqs, double q_len, double kv_len) {
    return 2.0 * seqs * q_len * kv_len * d   // scores
           + 2.0 * seqs * q_len * kv_len * d;  // mixing
  };

  for (BlockKind kind : block_plan(cfg)) {
    if (adaln) f.conditioning += 2.0 * 6.0 * d2;
    switch (kind) {
      case BlockKind::spatial:
        f.blocks_linear += 2.0 * S * 12.0 * d2;
        f.blocks_attention += attn_cost(n_f, t, t + kv_extra);
        break;
      case BlockKind::temporal:
        f.blocks_linear += 2.0 * S * 12.0 * d2;
        f.blocks_attention += attn_cost(t, n_f, n_f + kv_extra);
        break;
      case BlockKind::fused_sequential:
        f.blocks_linear += 2.0 * S * 16.0 * d2;
        f.blocks_attention += attn_cost(n_f, t, t + kv_extra);
        f.blocks_attention += attn_cost(t, n_f, n_f + kv_extra);
        break;
      case BlockKind::fused_parallel: {
        // split-head accounting: the two half-head components divide the
        // token grid between them, halving each axis; this reproduces the
        // roughly-quarter cost the decomposition is reported to have
        const double fr = std::ceil(n_f / 2.0);
        const double lc = std::ceil(t / 2.0);
        f.blocks_linear += 2.0 * (fr * lc) * 16.0 * d2;
        f.blocks_attention += attn_cost(fr, lc, lc + kv_extra);
        f.blocks_attention += attn_cost(lc, fr, fr + kv_extra);
        break;
      }
    }
  }

  if (adaln) f.conditioning += 2.0 * 2.0 * d2;
  f.final_decode = 2.0 * S * d * static_cast<double>(cfg.decode_out_dim());
  if (cfg.patch_mode == PatchMode::compression) {
    const double c2 = 2.0 * cfg.latent_c;
    f.final_decode += 2.0 * static_cast<double>(cfg.frames) * cfg.latent_h * cfg.latent_w *
                      c2 * c2;
  }
  r.flops_forward = f.total();
  return r;
}

int equalized_depth(int variant, int base_layers, int hidden, CondMode mode) {
  if (variant == 1 || variant == 2) return base_layers;
  const double base = static_cast<double>(block_params(BlockKind::spatial, mode, hidden));
  const double fused =
      static_cast<double>(block_params(BlockKind::fused_sequential, mode, hidden));
  return static_cast<int>(std::ceil(static_cast<double>(base_layers) * base / fused));
}

ModelPreset model_preset(const std::string& name) {
  if (name == "s" || name == "S") return {"S", 12, 384, 6};
  if (name == "b" || name == "B") return {"B", 12, 768, 12};
  if (name == "l" || name == "L") return {"L", 24, 1024, 16};
  if (name == "xl" || name == "XL") return {"XL", 28, 1152, 16};
  throw ConfigError("unknown model preset '" + name + "' (expected s, b, l or xl)");
}

ModelConfig paper_config(const std::string& size, int variant) {
  ModelPreset p = model_preset(size);
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.layers = equalized_depth(variant, p.layers, p.hidden, CondMode::s_adaln);
  cfg.hidden = p.hidden;
  cfg.heads = p.heads;
  cfg.patch_h = cfg.patch_w = 2;
  cfg.cond_mode = CondMode::s_adaln;
  cfg.temporal_pos = TemporalPos::absolute;
  cfg.patch_mode = PatchMode::uniform;
  cfg.frames = 16;
  cfg.latent_h = cfg.latent_w = 32;
  cfg.latent_c = 4;
  cfg.num_classes = 0;
  return cfg;
}

GaussianStats gaussian_stats(const std::vector<std::vector<double>>& samples) {
  if (samples.empty()) throw ConfigError("gaussian_stats: no samples");
  const int64_t n = static_cast<int64_t>(samples.size());
  const int64_t d = static_cast<int64_t>(samples[0].size());
  GaussianStats g;
  g.count = n;
  g.mean.assign(static_cast<size_t>(d), 0.0);
  for (const auto& s : samples) {
    if (static_cast<int64_t>(s.size()) != d) throw ShapeError("gaussian_stats: ragged samples");
    for (int64_t i = 0; i < d; ++i) g.mean[static_cast<size_t>(i)] += s[static_cast<size_t>(i)];
  }
  for (double& v : g.mean) v /= static_cast<double>(n);
  g.cov.assign(static_cast<size_t>(d * d), 0.0);
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  for (const auto& s : samples) {
    for (int64_t i = 0; i < d; ++i) {
      const double ci = s[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)];
      for (int64_t j = 0; j < d; ++j) {
        g.cov[static_cast<size_t>(i * d + j)] +=
            ci * (s[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)]) / denom;
      }
    }
  }
  return g;
}

std::vector<double> sym_eigenvalues(std::vector<double> m, int64_t dim) {
  auto at = [&](int64_t i, int64_t j) -> double& { return m[static_cast<size_t>(i * dim + j)]; };
  // force symmetry before sweeping
  for (int64_t i = 0; i < dim; ++i) {
    for (int64_t j = i + 1; j < dim; ++j) {
      const double v = 0.5 * (at(i, j) + at(j, i));
      at(i, j) = at(j, i) = v;
    }
  }
  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (int64_t i = 0; i < dim; ++i) {
      for (int64_t j = i + 1; j < dim; ++j) off += at(i, j) * at(i, j);
    }
    double diag = 0.0;
    for (int64_t i = 0; i < dim; ++i) diag += at(i, i) * at(i, i);
    if (off <= 1e-30 * std::max(1.0, diag)) break;
    for (int64_t p = 0; p < dim; ++p) {
      for (int64_t q = p + 1; q < dim; ++q) {
        if (at(p, q) == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double tv = sign / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(tv * tv + 1.0);
        const double s = tv * c;
        for (int64_t k = 0; k < dim; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int64_t k = 0; k < dim; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<size_t>(dim));
  for (int64_t i = 0; i < dim; ++i) ev[static_cast<size_t>(i)] = at(i, i);
  std::sort(ev.begin(), ev.end());
  return ev;
}

namespace {

// eigendecomposition with vectors (same Jacobi, tracking rotations)
void sym_eigen(std::vector<double> m, int64_t dim, std::vector<double>& values,
               std::vector<double>& vectors) {
  auto at = [&](int64_t i, int64_t j) -> double& { return m[static_cast<size_t>(i * dim + j)]; };
  vectors.assign(static_cast<size_t>(dim * dim), 0.0);
  for (int64_t i = 0; i < dim; ++i) vectors[static_cast<size_t>(i * dim + i)] = 1.0;
  auto vt = [&](int64_t i, int64_t j) -> double& {
    return vectors[static_cast<size_t>(i * dim + j)];
  };
  for (int64_t i = 0; i < dim; ++i) {
    for (int64_t j = i + 1; j < dim; ++j) {
      const double v = 0.5 * (at(i, j) + at(j, i));
      at(i, j) = at(j, i) = v;
    }
  }
  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (int64_t i = 0; i < dim; ++i) {
      diag += at(i, i) * at(i, i);
      for (int64_t j = i + 1; j < dim; ++j) off += at(i, j) * at(i, j);
    }
    if (off <= 1e-30 * std::max(1.0, diag)) break;
    for (int64_t p = 0; p < dim; ++p) {
      for (int64_t q = p + 1; q < dim; ++q) {
        if (at(p, q) == 0.0) continue;
        const double theta = (at(q, q) - at(p, p)) / (2.0 * at(p, q));
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double tv = sign / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(tv * tv + 1.0);
        const double s = tv * c;
        for (int64_t k = 0; k < dim; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
          const double vkp = vt(k, p), vkq = vt(k, q);
          vt(k, p) = c * vkp - s * vkq;
          vt(k, q) = s * vkp + c * vkq;
        }
        for (int64_t k = 0; k < dim; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  values.assign(static_cast<size_t>(dim), 0.0);
  for (int64_t i = 0; i < dim; ++i) values[static_cast<size_t>(i)] = at(i, i);
}

double clamp_eigenvalue(double v, double scale) {
  if (v < -1e-8 * std::max(1.0, scale)) {
    throw ConfigError("covariance indefinite: eigenvalue " + std::to_string(v));
  }
  return std::max(v, 0.0);
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  const int64_t d = a.dim();
  if (d != b.dim()) throw ShapeError("frechet_distance: dimension mismatch");
  double mean_term = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    const double diff = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
    mean_term += diff * diff;
  }
  double tr_a = 0.0, tr_b = 0.0;
  for (int64_t i = 0; i < d; ++i) {
    tr_a += a.cov[static_cast<size_t>(i * d + i)];
    tr_b += b.cov[static_cast<size_t>(i * d + i)];
  }
  // sqrt(A) via eigendecomposition
  std::vector<double> values, vectors;
  sym_eigen(a.cov, d, values, vectors);
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, std::fabs(v));
  std::vector<double> sqrt_a(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < d; ++i) {
    const double sv = std::sqrt(clamp_eigenvalue(values[static_cast<size_t>(i)], vmax));
    for (int64_t r = 0; r < d; ++r) {
      for (int64_t c = 0; c < d; ++c) {
        sqrt_a[static_cast<size_t>(r * d + c)] += sv * vectors[static_cast<size_t>(r * d + i)] *
                                                  vectors[static_cast<size_t>(c * d + i)];
      }
    }
  }
  // M = sqrt(A) B sqrt(A), symmetric by construction
  std::vector<double> tmp(static_cast<size_t>(d * d), 0.0), mmat(static_cast<size_t>(d * d), 0.0);
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        acc += sqrt_a[static_cast<size_t>(i * d + k)] * b.cov[static_cast<size_t>(k * d + j)];
      }
      tmp[static_cast<size_t>(i * d + j)] = acc;
    }
  }
  for (int64_t i = 0; i < d; ++i) {
    for (int64_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int64_t k = 0; k < d; ++k) {
        acc += tmp[static_cast<size_t>(i * d + k)] * sqrt_a[static_cast<size_t>(k * d + j)];
      }
      mmat[static_cast<size_t>(i * d + j)] = acc;
    }
  }
  std::vector<double> mv = sym_eigenvalues(std::move(mmat), d);
  double msum = 0.0, mmax = 0.0;
  for (double v : mv) mmax = std::max(mmax, std::fabs(v));
  for (double v : mv) msum += std::sqrt(clamp_eigenvalue(v, mmax));
  return mean_term + tr_a + tr_b - 2.0 * msum;
}

double temporal_coherence(const Tensor& clip) {
  if (clip.rank() != 4 || clip.dim(0) < 2) {
    throw ShapeError("temporal_coherence: expects [F>=2, H, W, C]");
  }
  const int64_t F = clip.dim(0);
  const int64_t n = clip.numel() / F;
  auto d = clip.data();
  double sum = 0.0;
  int counted = 0;
  for (int64_t f = 0; f + 1 < F; ++f) {
    const double* a = d.data() + f * n;
    const double* b = d.data() + (f + 1) * n;
    double ma = 0.0, mb = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double va = 0.0, vb = 0.0, cab = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      va += (a[i] - ma) * (a[i] - ma);
      vb += (b[i] - mb) * (b[i] - mb);
      cab += (a[i] - ma) * (b[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) {
      bool identical = true;
      for (int64_t i = 0; i < n && identical; ++i) identical = a[i] == b[i];
      if (identical) {
        sum += 1.0;
        ++counted;
      }
      continue;  // undefined correlation against a constant frame: skip pair
    }
    sum += cab / std::sqrt(va * vb);
    ++counted;
  }
  return counted > 0 ? sum / counted : 0.0;
}

}  // namespace latte
