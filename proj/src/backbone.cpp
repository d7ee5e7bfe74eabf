#include "latte/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace latte {

namespace {
constexpr double kLnEps = 1e-6;
constexpr int kMlpRatio = 4;

std::vector<int> frame_positions(int64_t n) {
  std::vector<int> p(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = static_cast<int>(i);
  return p;
}
}  // namespace

void ModelConfig::validate() const {
  if (variant < 1 || variant > 4) throw ConfigError("variant must be 1..4");
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (hidden < 4 || hidden % 4 != 0) throw ConfigError("hidden dim must be >= 4, divisible by 4");
  if (heads < 1 || hidden % heads != 0) throw ConfigError("hidden dim not divisible by heads");
  if (variant == 4 && heads % 2 != 0) throw ConfigError("variant 4 needs an even head count");
  if ((variant == 1 || variant == 2) && frames > 1 && layers % 2 != 0) {
    throw ConfigError("variants 1 and 2 need an even layer count");
  }
  if (frames < 1 || latent_h < 1 || latent_w < 1 || latent_c < 1) {
    throw ConfigError("latent dims must be positive");
  }
  if (patch_h < 1 || patch_w < 1 || latent_h % patch_h != 0 || latent_w % patch_w != 0) {
    throw ConfigError("latent extents not divisible by patch size");
  }
  if (patch_mode == PatchMode::compression) {
    if (tube_stride < 1 || frames % tube_stride != 0) {
      throw ConfigError("frames not divisible by tube stride");
    }
    if (extra_frames > 0) throw ConfigError("joint batches require uniform patch embedding");
  }
  if (temporal_pos == TemporalPos::rope && (hidden / heads) % 2 != 0) {
    throw ConfigError("rope needs an even per-head dim");
  }
  if (num_classes < 0 || extra_frames < 0) throw ConfigError("negative count in config");
}

std::vector<BlockKind> block_plan(const ModelConfig& cfg) {
  std::vector<BlockKind> plan(static_cast<size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i) {
    if (cfg.frames == 1) {
      plan[static_cast<size_t>(i)] = BlockKind::spatial;
    } else if (cfg.variant == 1) {
      plan[static_cast<size_t>(i)] = (i % 2 == 0) ? BlockKind::spatial : BlockKind::temporal;
    } else if (cfg.variant == 2) {
      plan[static_cast<size_t>(i)] =
          (i < cfg.layers / 2) ? BlockKind::spatial : BlockKind::temporal;
    } else if (cfg.variant == 3) {
      plan[static_cast<size_t>(i)] = BlockKind::fused_sequential;
    } else {
      plan[static_cast<size_t>(i)] = BlockKind::fused_parallel;
    }
  }
  return plan;
}

namespace {

AttnWeights make_attn(int64_t d, Rng& rng) {
  AttnWeights w;
  w.qkv_w = trunc_normal({d, 3 * d}, rng, 0.02, true);
  w.qkv_b = Tensor::zeros({3 * d}, true);
  w.proj_w = trunc_normal({d, d}, rng, 0.02, true);
  w.proj_b = Tensor::zeros({d}, true);
  return w;
}

void push_attn(std::vector<std::pair<std::string, Tensor>>& out, const std::string& prefix,
               const AttnWeights& w) {
  if (!w.qkv_w.defined()) return;
  out.emplace_back(prefix + ".qkv.weight", w.qkv_w);
  out.emplace_back(prefix + ".qkv.bias", w.qkv_b);
  out.emplace_back(prefix + ".proj.weight", w.proj_w);
  out.emplace_back(prefix + ".proj.bias", w.proj_b);
}

}  // namespace

Model build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  const int64_t d = cfg.hidden;
  Rng rng(mix_seed(seed, 0x1417));

  m.patch_w = trunc_normal({cfg.patch_in_dim(), d}, rng, 0.02, true);
  m.patch_b = Tensor::zeros({d}, true);
  m.temb_fc1_w = trunc_normal({kTimestepFeatureDim, d}, rng, 0.02, true);
  m.temb_fc1_b = Tensor::zeros({d}, true);
  m.temb_fc2_w = trunc_normal({d, d}, rng, 0.02, true);
  m.temb_fc2_b = Tensor::zeros({d}, true);
  if (cfg.num_classes > 0) {
    m.class_table = trunc_normal({cfg.num_classes, d}, rng, 0.02, true);
  }

  for (BlockKind kind : block_plan(cfg)) {
    BlockWeights bw;
    bw.kind = kind;
    if (kind != BlockKind::temporal) bw.attn_s = make_attn(d, rng);
    if (kind != BlockKind::spatial) bw.attn_t = make_attn(d, rng);
    bw.fc1_w = trunc_normal({d, kMlpRatio * d}, rng, 0.02, true);
    bw.fc1_b = Tensor::zeros({kMlpRatio * d}, true);
    bw.fc2_w = trunc_normal({kMlpRatio * d, d}, rng, 0.02, true);
    bw.fc2_b = Tensor::zeros({d}, true);
    if (cfg.cond_mode == CondMode::s_adaln) {
      bw.adaln_w = Tensor::zeros({d, 6 * d}, true);
      bw.adaln_b = Tensor::zeros({6 * d}, true);
    } else {
      bw.ln1_g = Tensor::full({d}, 1.0, true);
      bw.ln1_b = Tensor::zeros({d}, true);
      bw.ln2_g = Tensor::full({d}, 1.0, true);
      bw.ln2_b = Tensor::zeros({d}, true);
    }
    m.blocks.push_back(std::move(bw));
  }

  if (cfg.cond_mode == CondMode::s_adaln) {
    m.final_adaln_w = Tensor::zeros({d, 2 * d}, true);
    m.final_adaln_b = Tensor::zeros({2 * d}, true);
  } else {
    m.final_ln_g = Tensor::full({d}, 1.0, true);
    m.final_ln_b = Tensor::zeros({d}, true);
  }
  m.dec_w = Tensor::zeros({d, cfg.decode_out_dim()}, true);
  m.dec_b = Tensor::zeros({cfg.decode_out_dim()}, true);
  if (cfg.patch_mode == PatchMode::compression) {
    m.tups_w = temporal_upsample_init(cfg.tube_stride, 2 * cfg.latent_c);
    m.tups_w.set_requires_grad(true);
    m.tups_b = Tensor::zeros({2 * cfg.latent_c}, true);
  }

  m.pos_table = build_pos_table(cfg.n_f_max(), cfg.n_h(), cfg.n_w(), d,
                                cfg.temporal_pos == TemporalPos::absolute);
  return m;
}

std::vector<std::pair<std::string, Tensor>> Model::named_params() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("patch.weight", patch_w);
  out.emplace_back("patch.bias", patch_b);
  out.emplace_back("tembed.fc1.weight", temb_fc1_w);
  out.emplace_back("tembed.fc1.bias", temb_fc1_b);
  out.emplace_back("tembed.fc2.weight", temb_fc2_w);
  out.emplace_back("tembed.fc2.bias", temb_fc2_b);
  if (class_table.defined()) out.emplace_back("class.table", class_table);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    const BlockWeights& b = blocks[i];
    push_attn(out, p + ".attn_s", b.attn_s);
    push_attn(out, p + ".attn_t", b.attn_t);
    out.emplace_back(p + ".mlp.fc1.weight", b.fc1_w);
    out.emplace_back(p + ".mlp.fc1.bias", b.fc1_b);
    out.emplace_back(p + ".mlp.fc2.weight", b.fc2_w);
    out.emplace_back(p + ".mlp.fc2.bias", b.fc2_b);
    if (b.adaln_w.defined()) {
      out.emplace_back(p + ".adaln.weight", b.adaln_w);
      out.emplace_back(p + ".adaln.bias", b.adaln_b);
    }
    if (b.ln1_g.defined()) {
      out.emplace_back(p + ".ln1.gamma", b.ln1_g);
      out.emplace_back(p + ".ln1.beta", b.ln1_b);
      out.emplace_back(p + ".ln2.gamma", b.ln2_g);
      out.emplace_back(p + ".ln2.beta", b.ln2_b);
    }
  }
  if (final_adaln_w.defined()) {
    out.emplace_back("final.adaln.weight", final_adaln_w);
    out.emplace_back("final.adaln.bias", final_adaln_b);
  }
  if (final_ln_g.defined()) {
    out.emplace_back("final.ln.gamma", final_ln_g);
    out.emplace_back("final.ln.beta", final_ln_b);
  }
  out.emplace_back("final.decoder.weight", dec_w);
  out.emplace_back("final.decoder.bias", dec_b);
  if (tups_w.defined()) {
    out.emplace_back("tupsample.kernel", tups_w);
    out.emplace_back("tupsample.bias", tups_b);
  }
  return out;
}

std::vector<std::pair<std::string, Tensor>> Model::named_buffers() const {
  return {{"pos.table", pos_table}};
}

int64_t Model::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : named_params()) n += t.numel();
  return n;
}

Model Model::clone() const {
  Model c = build_model(cfg, 0);
  auto src = named_params();
  auto dst = c.named_params();
  for (size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].second.data().begin(), src[i].second.data().end(),
              dst[i].second.data().begin());
  }
  std::copy(pos_table.data().begin(), pos_table.data().end(), c.pos_table.data().begin());
  return c;
}

Tensor conditioning_vector(const Model& m, std::span<const Conditioning> cond) {
  return conditioning_embed(cond, m.temb_fc1_w, m.temb_fc1_b, m.temb_fc2_w, m.temb_fc2_b,
                            m.class_table);
}

namespace {

struct ModVectors {
  Tensor g1, b1, a1, g2, b2, a2;
};

ModVectors regress_modulation(const BlockWeights& bw, const Tensor& cvec, int64_t d) {
  Tensor mod = linear(gelu(cvec), bw.adaln_w, bw.adaln_b);  // [B, 6D]
  ModVectors v;
  v.g1 = slice(mod, 1, 0, d);
  v.b1 = slice(mod, 1, d, d);
  v.a1 = slice(mod, 1, 2 * d, d);
  v.g2 = slice(mod, 1, 3 * d, d);
  v.b2 = slice(mod, 1, 4 * d, d);
  v.a2 = slice(mod, 1, 5 * d, d);
  return v;
}

// [B, S, D] -> [B*n_f, t, D]
Tensor to_spatial_groups(const Tensor& x, int64_t n_f, int64_t t) {
  return reshape(x, {x.dim(0) * n_f, t, x.dim(2)});
}

Tensor from_spatial_groups(const Tensor& xg, int64_t b, int64_t n_f, int64_t t) {
  return reshape(xg, {b, n_f * t, xg.dim(2)});
}

// [B, S, D] -> [B*t, n_f, D]
Tensor to_temporal_groups(const Tensor& x, int64_t n_f, int64_t t) {
  const int64_t b = x.dim(0), d = x.dim(2);
  Tensor x4 = reshape(x, {b, n_f, t, d});
  Tensor xp = permute(x4, {0, 2, 1, 3});
  return reshape(xp, {b * t, n_f, d});
}

Tensor from_temporal_groups(const Tensor& xg, int64_t b, int64_t n_f, int64_t t) {
  const int64_t d = xg.dim(2);
  Tensor x4 = reshape(xg, {b, t, n_f, d});
  Tensor xp = permute(x4, {0, 2, 1, 3});
  return reshape(xp, {b, n_f * t, d});
}

// self-attention over token groups, optionally prepending the conditioning
// vector to the key/value sequence (all-tokens mode)
Tensor grouped_attention(const ModelConfig& cfg, const AttnWeights& aw, const Tensor& xg,
                         const Tensor& cvec, int heads, bool rope, int64_t groups_per_sample) {
  std::vector<int> rq, rk;
  if (rope) {
    rq = frame_positions(xg.dim(1));
    rk = rq;
  }
  if (cfg.cond_mode == CondMode::all_tokens) {
    Tensor ctok = repeat_groups(cvec, groups_per_sample);  // [G, 1, D]
    Tensor kv = concat({ctok, xg}, 1);
    if (rope) {
      rk.assign(1, 0);  // conditioning token sits at position 0
      for (int p : rq) rk.push_back(p);
    }
    return multi_head_attention(xg, kv, aw.qkv_w, aw.qkv_b, aw.proj_w, aw.proj_b, heads, rq, rk);
  }
  return multi_head_attention(xg, xg, aw.qkv_w, aw.qkv_b, aw.proj_w, aw.proj_b, heads, rq, rk);
}

// temporal attention with joint-batch exclusion: only the first `valid`
// frames enter the temporal pathway, the rest pass through untouched.
// `body` maps [B, S_valid, D] tokens (n_f = valid) to an update of the same
// shape; appended-frame rows receive `passthrough` semantics.
template <typename Fn>
Tensor temporal_masked(const Tensor& x, int64_t n_f, int64_t t, int64_t valid, bool zero_rest,
                       Fn&& body) {
  const int64_t b = x.dim(0), d = x.dim(2);
  if (valid >= n_f) return body(x, n_f);
  Tensor x4 = reshape(x, {b, n_f, t, d});
  Tensor head = reshape(slice(x4, 1, 0, valid), {b, valid * t, d});
  Tensor rest = slice(x4, 1, valid, n_f - valid);
  Tensor upd = body(head, valid);
  Tensor upd4 = reshape(upd, {b, valid, t, d});
  Tensor tail = zero_rest ? Tensor::zeros(rest.shape()) : rest;
  return reshape(concat({upd4, tail}, 1), {b, n_f * t, d});
}

}  // namespace

Tensor block_forward(const ModelConfig& cfg, const BlockWeights& bw, const Tensor& x,
                     const Tensor& cvec, int64_t n_f, int64_t t, int64_t temporal_valid) {
  const int64_t b = x.dim(0), d = x.dim(2);
  const bool rope = cfg.temporal_pos == TemporalPos::rope;
  const bool adaln = cfg.cond_mode == CondMode::s_adaln;
  const int64_t valid = temporal_valid < 0 ? n_f : temporal_valid;

  ModVectors mv;
  if (adaln) mv = regress_modulation(bw, cvec, d);

  auto norm1 = [&](const Tensor& h) {
    Tensor n = layer_norm(h, kLnEps);
    return adaln ? modulate(n, mv.g1, mv.b1) : affine(n, bw.ln1_g, bw.ln1_b);
  };
  auto merge1 = [&](const Tensor& h, const Tensor& branch) {
    return adaln ? gate_add(h, branch, mv.a1) : add(h, branch);
  };

  Tensor h = x;
  switch (bw.kind) {
    case BlockKind::spatial: {
      Tensor xm = norm1(h);
      Tensor out = grouped_attention(cfg, bw.attn_s, to_spatial_groups(xm, n_f, t), cvec,
                                     cfg.heads, false, n_f);
      h = merge1(h, from_spatial_groups(out, b, n_f, t));
      break;
    }
    case BlockKind::temporal: {
      Tensor xm = norm1(h);
      Tensor branch = temporal_masked(
          xm, n_f, t, valid, /*zero_rest=*/true, [&](const Tensor& xv, int64_t fv) {
            Tensor out = grouped_attention(cfg, bw.attn_t, to_temporal_groups(xv, fv, t), cvec,
                                           cfg.heads, rope, t);
            return from_temporal_groups(out, b, fv, t);
          });
      if (valid < n_f) {
        // appended frames bypass the whole temporal block, including the MLP
        Tensor x4 = reshape(h, {b, n_f, t, d});
        Tensor head = reshape(slice(x4, 1, 0, valid), {b, valid * t, d});
        Tensor rest = slice(x4, 1, valid, n_f - valid);
        Tensor br4 = reshape(branch, {b, n_f, t, d});
        Tensor br_head = reshape(slice(br4, 1, 0, valid), {b, valid * t, d});
        Tensor hv = adaln ? gate_add(head, br_head, mv.a1) : add(head, br_head);
        Tensor xm2 = layer_norm(hv, kLnEps);
        xm2 = adaln ? modulate(xm2, mv.g2, mv.b2) : affine(xm2, bw.ln2_g, bw.ln2_b);
        Tensor mlp = linear(gelu(linear(xm2, bw.fc1_w, bw.fc1_b)), bw.fc2_w, bw.fc2_b);
        hv = adaln ? gate_add(hv, mlp, mv.a2) : add(hv, mlp);
        Tensor hv4 = reshape(hv, {b, valid, t, d});
        return reshape(concat({hv4, rest}, 1), {b, n_f * t, d});
      }
      h = merge1(h, branch);
      break;
    }
    case BlockKind::fused_sequential: {
      Tensor xm = norm1(h);
      Tensor u = from_spatial_groups(
          grouped_attention(cfg, bw.attn_s, to_spatial_groups(xm, n_f, t), cvec, cfg.heads,
                            false, n_f),
          b, n_f, t);
      // inner pre-norm temporal residual; zeroing its projection leaves a
      // purely spatial block
      Tensor un = layer_norm(u, kLnEps);
      Tensor tb = temporal_masked(
          un, n_f, t, valid, /*zero_rest=*/true, [&](const Tensor& xv, int64_t fv) {
            Tensor out = grouped_attention(cfg, bw.attn_t, to_temporal_groups(xv, fv, t), cvec,
                                           cfg.heads, rope, t);
            return from_temporal_groups(out, b, fv, t);
          });
      h = merge1(h, add(u, tb));
      break;
    }
    case BlockKind::fused_parallel: {
      Tensor xm = norm1(h);
      Tensor a_s = from_spatial_groups(
          grouped_attention(cfg, bw.attn_s, to_spatial_groups(xm, n_f, t), cvec, cfg.heads / 2,
                            false, n_f),
          b, n_f, t);
      Tensor a_t = temporal_masked(
          xm, n_f, t, valid, /*zero_rest=*/true, [&](const Tensor& xv, int64_t fv) {
            Tensor out = grouped_attention(cfg, bw.attn_t, to_temporal_groups(xv, fv, t), cvec,
                                           cfg.heads / 2, rope, t);
            return from_temporal_groups(out, b, fv, t);
          });
      h = merge1(h, add(a_s, a_t));
      break;
    }
  }

  Tensor xm2 = layer_norm(h, kLnEps);
  xm2 = adaln ? modulate(xm2, mv.g2, mv.b2) : affine(xm2, bw.ln2_g, bw.ln2_b);
  Tensor mlp = linear(gelu(linear(xm2, bw.fc1_w, bw.fc1_b)), bw.fc2_w, bw.fc2_b);
  return adaln ? gate_add(h, mlp, mv.a2) : add(h, mlp);
}

DenoiserOut denoiser_forward(const Model& m, const Tensor& latents,
                             std::span<const Conditioning> cond, int temporal_valid) {
  const ModelConfig& cfg = m.cfg;
  if (latents.rank() != 5) throw ShapeError("denoiser: latents must be [B, F, H, W, C]");
  const int64_t B = latents.dim(0), F_in = latents.dim(1);
  if (latents.dim(2) != cfg.latent_h || latents.dim(3) != cfg.latent_w ||
      latents.dim(4) != cfg.latent_c) {
    throw ShapeError("denoiser: latent extents " + shape_str(latents.shape()) +
                     " do not match config");
  }
  if (static_cast<int64_t>(cond.size()) != B) {
    throw ShapeError("denoiser: conditioning count != batch");
  }
  if (temporal_valid < 0) {
    if (F_in != cfg.frames) {
      throw ShapeError("denoiser: got " + std::to_string(F_in) + " frames, config expects " +
                       std::to_string(cfg.frames));
    }
  } else {
    if (cfg.patch_mode != PatchMode::uniform || temporal_valid != cfg.frames ||
        F_in < cfg.frames || F_in > cfg.frames + cfg.extra_frames) {
      throw ShapeError("denoiser: invalid joint batch layout");
    }
  }

  const int64_t t = cfg.tokens_per_frame();
  const int64_t n_f_total = F_in / cfg.stride();
  Tensor tokens = linear(patchify(latents, cfg.patch_h, cfg.patch_w, cfg.stride()), m.patch_w,
                         m.patch_b);
  Tensor table = m.pos_table;
  if (table.dim(0) != n_f_total * t) table = slice(table, 0, 0, n_f_total * t);
  tokens = add_table(tokens, table);

  Tensor cvec = conditioning_vector(m, cond);
  const int64_t valid_frames = temporal_valid < 0 ? n_f_total : temporal_valid;
  for (const BlockWeights& bw : m.blocks) {
    tokens = block_forward(cfg, bw, tokens, cvec, n_f_total, t, valid_frames);
  }

  Tensor xm;
  if (cfg.cond_mode == CondMode::s_adaln) {
    Tensor fmod = linear(gelu(cvec), m.final_adaln_w, m.final_adaln_b);
    const int64_t d = cfg.hidden;
    xm = modulate(layer_norm(tokens, kLnEps), slice(fmod, 1, 0, d), slice(fmod, 1, d, d));
  } else {
    xm = affine(layer_norm(tokens, kLnEps), m.final_ln_g, m.final_ln_b);
  }
  Tensor dec = linear(xm, m.dec_w, m.dec_b);
  Tensor frames = unpatchify(dec, n_f_total, cfg.latent_h, cfg.latent_w, 2 * cfg.latent_c,
                             cfg.patch_h, cfg.patch_w);
  if (cfg.patch_mode == PatchMode::compression) {
    frames = temporal_upsample(frames, m.tups_w, m.tups_b);
  }
  DenoiserOut out;
  out.eps = slice(frames, 4, 0, cfg.latent_c);
  out.var_raw = slice(frames, 4, cfg.latent_c, cfg.latent_c);
  return out;
}

Model adapt_image_checkpoint(const Model& image, const ModelConfig& video_cfg, uint64_t seed) {
  const ModelConfig& ic = image.cfg;
  video_cfg.validate();
  if (ic.frames != 1) throw ConfigError("adapt: source must be a single-frame model");
  if (video_cfg.variant != 1 && video_cfg.variant != 2) {
    throw ConfigError("adapt: target must be variant 1 or 2");
  }
  if (video_cfg.cond_mode != CondMode::s_adaln || ic.cond_mode != CondMode::s_adaln) {
    throw ConfigError("adapt: both models must use s_adaln conditioning");
  }
  if (video_cfg.patch_mode != PatchMode::uniform || ic.patch_mode != PatchMode::uniform) {
    throw ConfigError("adapt: both models must use uniform patch embedding");
  }
  if (ic.hidden != video_cfg.hidden || ic.heads != video_cfg.heads ||
      ic.patch_h != video_cfg.patch_h || ic.patch_w != video_cfg.patch_w ||
      ic.latent_h != video_cfg.latent_h || ic.latent_w != video_cfg.latent_w ||
      ic.latent_c != video_cfg.latent_c) {
    throw ConfigError("adapt: image and video dimensions differ");
  }
  const int64_t spatial_needed = video_cfg.layers / 2;
  if (ic.layers != spatial_needed) {
    throw ConfigError("adapt: image model has " + std::to_string(ic.layers) +
                      " blocks, video needs " + std::to_string(spatial_needed) + " spatial");
  }

  Model video = build_model(video_cfg, seed);
  auto copy_tensor = [](const Tensor& src, Tensor& dst) {
    if (src.shape() != dst.shape()) throw ConfigError("adapt: array shape mismatch");
    std::copy(src.data().begin(), src.data().end(), dst.data().begin());
  };
  copy_tensor(image.patch_w, video.patch_w);
  copy_tensor(image.patch_b, video.patch_b);
  copy_tensor(image.temb_fc1_w, video.temb_fc1_w);
  copy_tensor(image.temb_fc1_b, video.temb_fc1_b);
  copy_tensor(image.temb_fc2_w, video.temb_fc2_w);
  copy_tensor(image.temb_fc2_b, video.temb_fc2_b);
  // the source label embedding is dropped; the target table starts at zero
  if (video.class_table.defined()) {
    std::fill(video.class_table.data().begin(), video.class_table.data().end(), 0.0);
  }
  size_t img_idx = 0;
  for (BlockWeights& bw : video.blocks) {
    if (bw.kind != BlockKind::spatial) continue;  // temporal blocks keep fresh zero-gated init
    const BlockWeights& src = image.blocks[img_idx++];
    copy_tensor(src.attn_s.qkv_w, bw.attn_s.qkv_w);
    copy_tensor(src.attn_s.qkv_b, bw.attn_s.qkv_b);
    copy_tensor(src.attn_s.proj_w, bw.attn_s.proj_w);
    copy_tensor(src.attn_s.proj_b, bw.attn_s.proj_b);
    copy_tensor(src.fc1_w, bw.fc1_w);
    copy_tensor(src.fc1_b, bw.fc1_b);
    copy_tensor(src.fc2_w, bw.fc2_w);
    copy_tensor(src.fc2_b, bw.fc2_b);
    copy_tensor(src.adaln_w, bw.adaln_w);
    copy_tensor(src.adaln_b, bw.adaln_b);
  }
  copy_tensor(image.final_adaln_w, video.final_adaln_w);
  copy_tensor(image.final_adaln_b, video.final_adaln_b);
  copy_tensor(image.dec_w, video.dec_w);
  copy_tensor(image.dec_b, video.dec_b);

  // replicate the single-frame positional table across every frame slot
  const int64_t t = video_cfg.tokens_per_frame();
  const int64_t d = video_cfg.hidden;
  auto src_tab = image.pos_table.data();
  auto dst_tab = video.pos_table.data();
  for (int64_t f = 0; f < video_cfg.n_f_max(); ++f) {
    std::copy(src_tab.begin(), src_tab.begin() + t * d, dst_tab.begin() + f * t * d);
  }
  return video;
}

}  // namespace latte
