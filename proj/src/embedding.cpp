#include "latte/embedding.hpp"

#include <cmath>
#include <memory>

namespace latte {

namespace {

// builds the flat source index for every output element of patchify
std::vector<int64_t> patch_index_map(int64_t F, int64_t H, int64_t W, int64_t C, int ph, int pw,
                                     int s) {
  const int64_t n_f = F / s, n_h = H / ph, n_w = W / pw;
  const int64_t patch_len = static_cast<int64_t>(s) * ph * pw * C;
  std::vector<int64_t> map(static_cast<size_t>(n_f * n_h * n_w * patch_len));
  int64_t oi = 0;
  for (int64_t f = 0; f < n_f; ++f) {
    for (int64_t gh = 0; gh < n_h; ++gh) {
      for (int64_t gw = 0; gw < n_w; ++gw) {
        for (int64_t df = 0; df < s; ++df) {
          for (int64_t dh = 0; dh < ph; ++dh) {
            for (int64_t dw = 0; dw < pw; ++dw) {
              for (int64_t c = 0; c < C; ++c) {
                const int64_t src =
                    (((f * s + df) * H + (gh * ph + dh)) * W + (gw * pw + dw)) * C + c;
                map[static_cast<size_t>(oi++)] = src;
              }
            }
          }
        }
      }
    }
  }
  return map;
}

Tensor gather_op(const char* name, const Tensor& x, Shape out_shape,
                 std::shared_ptr<std::vector<int64_t>> map, int64_t per_batch_in,
                 int64_t per_batch_out, int64_t batch) {
  Tensor out = Tensor::zeros(std::move(out_shape));
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int64_t b = 0; b < batch; ++b) {
    const double* src = px + b * per_batch_in;
    double* dst = po + b * per_batch_out;
    for (int64_t i = 0; i < per_batch_out; ++i) dst[i] = src[(*map)[static_cast<size_t>(i)]];
  }
  op_epilogue(name, out);
  if (op_taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc, map, per_batch_in, per_batch_out, batch]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      double* gx = xc.grad().data();
      for (int64_t b = 0; b < batch; ++b) {
        const double* src = go + b * per_batch_out;
        double* dst = gx + b * per_batch_in;
        for (int64_t i = 0; i < per_batch_out; ++i) {
          dst[(*map)[static_cast<size_t>(i)]] += src[i];
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor patchify(const Tensor& v, int ph, int pw, int stride) {
  if (v.rank() != 5) throw ShapeError("patchify: expects [B, F, H, W, C]");
  const int64_t B = v.dim(0), F = v.dim(1), H = v.dim(2), W = v.dim(3), C = v.dim(4);
  if (ph <= 0 || pw <= 0 || stride <= 0) throw ShapeError("patchify: bad patch extents");
  if (H % ph != 0 || W % pw != 0) {
    throw ShapeError("patchify: latent " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by patch " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  if (F % stride != 0) {
    throw ShapeError("patchify: frame count " + std::to_string(F) +
                     " not divisible by tube stride " + std::to_string(stride));
  }
  const int64_t n_f = F / stride, n_h = H / ph, n_w = W / pw;
  const int64_t patch_len = static_cast<int64_t>(stride) * ph * pw * C;
  auto map = std::make_shared<std::vector<int64_t>>(patch_index_map(F, H, W, C, ph, pw, stride));
  return gather_op("patchify", v, {B, n_f * n_h * n_w, patch_len}, map, F * H * W * C,
                   n_f * n_h * n_w * patch_len, B);
}

Tensor unpatchify(const Tensor& tokens, int64_t n_f, int64_t height, int64_t width,
                  int64_t c_out, int ph, int pw) {
  if (tokens.rank() != 3) throw ShapeError("unpatchify: expects [B, S, P]");
  const int64_t B = tokens.dim(0), S = tokens.dim(1), P = tokens.dim(2);
  const int64_t n_h = height / ph, n_w = width / pw;
  if (height % ph != 0 || width % pw != 0 || S != n_f * n_h * n_w ||
      P != static_cast<int64_t>(ph) * pw * c_out) {
    throw ShapeError("unpatchify: token grid " + shape_str(tokens.shape()) +
                     " does not match target " + std::to_string(n_f) + "x" +
                     std::to_string(height) + "x" + std::to_string(width) + "x" +
                     std::to_string(c_out));
  }
  // inverse of the uniform patch map: out[(f,y,x,c)] = tokens[(f,gh,gw),(dh,dw,c)]
  auto map = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(n_f * height * width * c_out));
  for (int64_t f = 0; f < n_f; ++f) {
    for (int64_t y = 0; y < height; ++y) {
      for (int64_t x = 0; x < width; ++x) {
        for (int64_t c = 0; c < c_out; ++c) {
          const int64_t token = (f * n_h + y / ph) * n_w + x / pw;
          const int64_t inner = ((y % ph) * pw + (x % pw)) * c_out + c;
          const int64_t dst = ((f * height + y) * width + x) * c_out + c;
          (*map)[static_cast<size_t>(dst)] = token * P + inner;
        }
      }
    }
  }
  return gather_op("unpatchify", tokens, {B, n_f, height, width, c_out}, map, S * P,
                   n_f * height * width * c_out, B);
}

Tensor temporal_upsample(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  if (x.rank() != 5 || kernel.rank() != 3) {
    throw ShapeError("temporal_upsample: expects x [B,F,H,W,C], kernel [s,C,C]");
  }
  const int64_t B = x.dim(0), F = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  const int64_t s = kernel.dim(0);
  if (kernel.dim(1) != C || kernel.dim(2) != C || bias.numel() != C) {
    throw ShapeError("temporal_upsample: kernel/bias channel mismatch");
  }
  Tensor out = Tensor::zeros({B, F * s, H, W, C});
  const int64_t pix = H * W;
  const double* px = x.data().data();
  const double* pk = kernel.data().data();
  const double* pb = bias.data().data();
  double* po = out.data().data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t f = 0; f < F; ++f) {
      for (int64_t k = 0; k < s; ++k) {
        const double* kk = pk + k * C * C;
        for (int64_t p = 0; p < pix; ++p) {
          const double* xin = px + ((b * F + f) * pix + p) * C;
          double* orow = po + ((b * F * s + f * s + k) * pix + p) * C;
          for (int64_t co = 0; co < C; ++co) {
            double acc = pb[co];
            for (int64_t ci = 0; ci < C; ++ci) acc += kk[ci * C + co] * xin[ci];
            orow[co] = acc;
          }
        }
      }
    }
  }
  op_epilogue("temporal_upsample", out);
  if (op_taping({&x, &kernel, &bias})) {
    out.set_requires_grad(true);
    Tensor xc = x, kc = kernel, bc = bias, oc = out;
    Tape::active()->record([xc, kc, bc, oc, B, F, s, pix, C]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double* px2 = xc.data().data();
      const double* pk2 = kc.data().data();
      for (int64_t b = 0; b < B; ++b) {
        for (int64_t f = 0; f < F; ++f) {
          for (int64_t k = 0; k < s; ++k) {
            const double* kk = pk2 + k * C * C;
            for (int64_t p = 0; p < pix; ++p) {
              const double* xin = px2 + ((b * F + f) * pix + p) * C;
              const double* grow = go + ((b * F * s + f * s + k) * pix + p) * C;
              if (xc.requires_grad()) {
                double* gx = xc.grad().data() + ((b * F + f) * pix + p) * C;
                for (int64_t ci = 0; ci < C; ++ci) {
                  double acc = 0.0;
                  for (int64_t co = 0; co < C; ++co) acc += kk[ci * C + co] * grow[co];
                  gx[ci] += acc;
                }
              }
              if (kc.requires_grad()) {
                double* gk = kc.grad().data() + k * C * C;
                for (int64_t ci = 0; ci < C; ++ci) {
                  for (int64_t co = 0; co < C; ++co) gk[ci * C + co] += xin[ci] * grow[co];
                }
              }
              if (bc.requires_grad()) {
                double* gb = bc.grad().data();
                for (int64_t co = 0; co < C; ++co) gb[co] += grow[co];
              }
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor temporal_upsample_init(int stride, int64_t channels) {
  Tensor k = Tensor::zeros({stride, channels, channels});
  const int64_t center = stride / 2;
  auto d = k.data();
  for (int64_t c = 0; c < channels; ++c) {
    d[(center * channels + c) * channels + c] = 1.0;
  }
  return k;
}

std::vector<double> sincos_table(int64_t positions, int64_t dim) {
  const int64_t n_sin = (dim + 1) / 2;
  const int64_t n_cos = dim - n_sin;
  std::vector<double> out(static_cast<size_t>(positions * dim));
  for (int64_t p = 0; p < positions; ++p) {
    for (int64_t i = 0; i < n_sin; ++i) {
      const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(n_sin));
      out[static_cast<size_t>(p * dim + i)] = std::sin(static_cast<double>(p) * w);
    }
    for (int64_t i = 0; i < n_cos; ++i) {
      const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(n_cos));
      out[static_cast<size_t>(p * dim + n_sin + i)] = std::cos(static_cast<double>(p) * w);
    }
  }
  return out;
}

Tensor build_pos_table(int64_t n_f, int64_t n_h, int64_t n_w, int64_t d,
                       bool temporal_absolute) {
  if (d % 4 != 0) {
    throw ShapeError("positional embedding dim " + std::to_string(d) +
                     " must be divisible by 4");
  }
  const int64_t d_sp = d / 2;
  const int64_t d_row = (d_sp + 1) / 2;  // n_h axis gets the extra dim when d_sp is odd
  const int64_t d_col = d_sp - d_row;
  auto rows = sincos_table(n_h, d_row);
  auto cols = sincos_table(n_w, d_col);
  auto times = sincos_table(n_f, d - d_sp);
  Tensor table = Tensor::zeros({n_f * n_h * n_w, d});
  auto out = table.data();
  int64_t idx = 0;
  for (int64_t f = 0; f < n_f; ++f) {
    for (int64_t gh = 0; gh < n_h; ++gh) {
      for (int64_t gw = 0; gw < n_w; ++gw) {
        double* row = out.data() + idx * d;
        for (int64_t i = 0; i < d_row; ++i) row[i] = rows[static_cast<size_t>(gh * d_row + i)];
        for (int64_t i = 0; i < d_col; ++i) {
          row[d_row + i] = cols[static_cast<size_t>(gw * d_col + i)];
        }
        if (temporal_absolute) {
          for (int64_t i = 0; i < d - d_sp; ++i) {
            row[d_sp + i] = times[static_cast<size_t>(f * (d - d_sp) + i)];
          }
        }
        ++idx;
      }
    }
  }
  // buffers are stored in checkpoints as f32, keep them exactly representable
  for (double& v : table.data()) v = quantize_f32(v);
  return table;
}

std::vector<double> timestep_features(int timestep) {
  const int64_t half = kTimestepFeatureDim / 2;
  std::vector<double> out(static_cast<size_t>(kTimestepFeatureDim));
  for (int64_t i = 0; i < half; ++i) {
    const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
    out[static_cast<size_t>(i)] = std::sin(timestep * w);
    out[static_cast<size_t>(half + i)] = std::cos(timestep * w);
  }
  return out;
}

Tensor conditioning_embed(std::span<const Conditioning> cond, const Tensor& fc1_w,
                          const Tensor& fc1_b, const Tensor& fc2_w, const Tensor& fc2_b,
                          const Tensor& class_table) {
  const int64_t B = static_cast<int64_t>(cond.size());
  std::vector<double> feats;
  feats.reserve(static_cast<size_t>(B * kTimestepFeatureDim));
  for (const Conditioning& c : cond) {
    auto f = timestep_features(c.timestep);
    feats.insert(feats.end(), f.begin(), f.end());
  }
  Tensor sin_feats = Tensor::from({B, kTimestepFeatureDim}, std::move(feats));
  Tensor h = linear(gelu(linear(sin_feats, fc1_w, fc1_b)), fc2_w, fc2_b);
  if (!class_table.defined()) return h;
  bool any_label = false;
  for (const Conditioning& c : cond) any_label = any_label || c.label >= 0;
  if (!any_label) return h;
  const int64_t num_classes = class_table.dim(0);
  std::vector<int> idx(cond.size());
  std::vector<double> mask(cond.size());
  for (size_t i = 0; i < cond.size(); ++i) {
    const int lbl = cond[i].label;
    if (lbl >= num_classes) {
      throw ShapeError("class label " + std::to_string(lbl) + " out of range [0," +
                       std::to_string(num_classes) + ")");
    }
    idx[i] = std::max(lbl, 0);
    mask[i] = lbl >= 0 ? 1.0 : 0.0;  // unconditional rows contribute a zero vector
  }
  Tensor cls = scale_rows(rows_select(class_table, idx), mask);
  return add(h, cls);
}

}  // namespace latte
