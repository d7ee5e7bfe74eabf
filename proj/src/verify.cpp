#include "latte/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "latte/analysis.hpp"
#include "latte/config.hpp"
#include "latte/data.hpp"
#include "latte/diffusion.hpp"

namespace latte {

namespace oracle {

namespace {

double o_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244)); }

void o_layer_norm(const double* x, double* out, int64_t d, double eps) {
  double mean = 0.0;
  for (int64_t i = 0; i < d; ++i) mean += x[i];
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (int64_t i = 0; i < d; ++i) var += (x[i] - mean) * (x[i] - mean);
  var /= static_cast<double>(d);
  const double istd = 1.0 / std::sqrt(var + eps);
  for (int64_t i = 0; i < d; ++i) out[i] = (x[i] - mean) * istd;
}

// y[0..n) = x[0..m) W[m,n] + b
void o_linear(const double* x, const double* w, const double* b, double* y, int64_t m,
              int64_t n) {
  for (int64_t j = 0; j < n; ++j) {
    double acc = b ? b[j] : 0.0;
    for (int64_t i = 0; i < m; ++i) acc += x[i] * w[i * n + j];
    y[j] = acc;
  }
}

void o_rope(double* vec, int64_t dh, int pos) {
  for (int64_t j = 0; 2 * j < dh; ++j) {
    const double theta = pos * std::pow(10000.0, -2.0 * static_cast<double>(j) /
                                                     static_cast<double>(dh));
    const double c = std::cos(theta), s = std::sin(theta);
    const double a = vec[2 * j], b = vec[2 * j + 1];
    vec[2 * j] = a * c - b * s;
    vec[2 * j + 1] = a * s + b * c;
  }
}

}  // namespace

std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                              const std::vector<double>& v, int64_t groups, int64_t sq,
                              int64_t sk, int64_t d, int heads, const std::vector<int>& rope_q,
                              const std::vector<int>& rope_k) {
  const int64_t dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> qr = q, kr = k;
  if (!rope_q.empty()) {
    for (int64_t g = 0; g < groups; ++g) {
      for (int64_t i = 0; i < sq; ++i) {
        for (int h = 0; h < heads; ++h) {
          o_rope(qr.data() + ((g * sq + i) * heads + h) * dh, dh,
                 rope_q[static_cast<size_t>(i)]);
        }
      }
      for (int64_t j = 0; j < sk; ++j) {
        for (int h = 0; h < heads; ++h) {
          o_rope(kr.data() + ((g * sk + j) * heads + h) * dh, dh,
                 rope_k[static_cast<size_t>(j)]);
        }
      }
    }
  }
  std::vector<double> out(static_cast<size_t>(groups * sq * d), 0.0);
  std::vector<double> w(static_cast<size_t>(sk));
  for (int64_t g = 0; g < groups; ++g) {
    for (int h = 0; h < heads; ++h) {
      for (int64_t i = 0; i < sq; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < sk; ++j) {
          double dot = 0.0;
          for (int64_t e = 0; e < dh; ++e) {
            dot += qr[static_cast<size_t>(((g * sq + i) * heads + h) * dh + e)] *
                   kr[static_cast<size_t>(((g * sk + j) * heads + h) * dh + e)];
          }
          w[static_cast<size_t>(j)] = dot * scl;
          mx = std::max(mx, w[static_cast<size_t>(j)]);
        }
        double sum = 0.0;
        for (int64_t j = 0; j < sk; ++j) {
          w[static_cast<size_t>(j)] = std::exp(w[static_cast<size_t>(j)] - mx);
          sum += w[static_cast<size_t>(j)];
        }
        for (int64_t j = 0; j < sk; ++j) {
          const double p = w[static_cast<size_t>(j)] / sum;
          for (int64_t e = 0; e < dh; ++e) {
            out[static_cast<size_t>((g * sq + i) * d + h * dh + e)] +=
                p * v[static_cast<size_t>((g * sk + j) * d + h * dh + e)];
          }
        }
      }
    }
  }
  return out;
}

namespace {

constexpr double kEps = 1e-6;

// full attention sublayer for one sequence (gathered rows): projects qkv,
// optionally prepends a conditioning row to keys/values, attends, projects out
void o_mha_seq(const std::vector<double>& seq, const double* cond_row, const AttnWeights& aw,
               int heads, int64_t d, const std::vector<int>& rope_pos,
               std::vector<double>& out) {
  const int64_t sq = static_cast<int64_t>(seq.size()) / d;
  const int64_t sk = sq + (cond_row ? 1 : 0);
  const double* qkv_w = aw.qkv_w.data().data();
  const double* qkv_b = aw.qkv_b.data().data();
  std::vector<double> q(static_cast<size_t>(sq * d)), k(static_cast<size_t>(sk * d)),
      v(static_cast<size_t>(sk * d));
  std::vector<double> row(static_cast<size_t>(3 * d));
  for (int64_t i = 0; i < sq; ++i) {
    o_linear(seq.data() + i * d, qkv_w, qkv_b, row.data(), d, 3 * d);
    const int64_t kv_i = cond_row ? i + 1 : i;
    std::copy(row.begin(), row.begin() + d, q.begin() + i * d);
    std::copy(row.begin() + d, row.begin() + 2 * d, k.begin() + kv_i * d);
    std::copy(row.begin() + 2 * d, row.begin() + 3 * d, v.begin() + kv_i * d);
  }
  if (cond_row) {
    o_linear(cond_row, qkv_w, qkv_b, row.data(), d, 3 * d);
    std::copy(row.begin() + d, row.begin() + 2 * d, k.begin());
    std::copy(row.begin() + 2 * d, row.begin() + 3 * d, v.begin());
  }
  std::vector<int> rq, rk;
  if (!rope_pos.empty()) {
    rq = rope_pos;
    if (cond_row) rk.push_back(0);
    for (int p : rope_pos) rk.push_back(p);
  }
  std::vector<double> mixed =
      attention(q, k, v, 1, sq, sk, d, heads, rq, rq.empty() ? rq : rk);
  out.assign(static_cast<size_t>(sq * d), 0.0);
  for (int64_t i = 0; i < sq; ++i) {
    o_linear(mixed.data() + i * d, aw.proj_w.data().data(), aw.proj_b.data().data(),
             out.data() + i * d, d, d);
  }
}

// applies the attention sublayer over either frame-grouped (spatial) or
// location-grouped (temporal) sequences of a [S, D] token buffer
void o_grouped_mha(const std::vector<double>& tokens, const double* cond_row,
                   const AttnWeights& aw, int heads, int64_t n_f, int64_t t, int64_t d,
                   bool temporal, const std::vector<int>& rope_pos, std::vector<double>& out) {
  out.assign(tokens.size(), 0.0);
  if (!temporal) {
    std::vector<double> seq(static_cast<size_t>(t * d)), res;
    for (int64_t f = 0; f < n_f; ++f) {
      std::copy(tokens.begin() + f * t * d, tokens.begin() + (f + 1) * t * d, seq.begin());
      o_mha_seq(seq, cond_row, aw, heads, d, {}, res);
      std::copy(res.begin(), res.end(), out.begin() + f * t * d);
    }
  } else {
    std::vector<double> seq(static_cast<size_t>(n_f * d)), res;
    for (int64_t loc = 0; loc < t; ++loc) {
      for (int64_t f = 0; f < n_f; ++f) {
        std::copy(tokens.begin() + (f * t + loc) * d, tokens.begin() + (f * t + loc) * d + d,
                  seq.begin() + f * d);
      }
      o_mha_seq(seq, cond_row, aw, heads, d, rope_pos, res);
      for (int64_t f = 0; f < n_f; ++f) {
        std::copy(res.begin() + f * d, res.begin() + f * d + d,
                  out.begin() + (f * t + loc) * d);
      }
    }
  }
}

}  // namespace

std::vector<double> block_forward(const ModelConfig& cfg, const BlockWeights& bw,
                                  const std::vector<double>& x, const std::vector<double>& c,
                                  int64_t batch, int64_t n_f, int64_t t) {
  const int64_t d = cfg.hidden;
  const int64_t S = n_f * t;
  const bool adaln = cfg.cond_mode == CondMode::s_adaln;
  const bool rope = cfg.temporal_pos == TemporalPos::rope;
  std::vector<int> rope_pos;
  if (rope) {
    for (int64_t f = 0; f < n_f; ++f) rope_pos.push_back(static_cast<int>(f));
  }
  std::vector<double> result(x.size());

  for (int64_t b = 0; b < batch; ++b) {
    std::vector<double> xs(x.begin() + b * S * d, x.begin() + (b + 1) * S * d);
    std::vector<double> cv(c.begin() + b * d, c.begin() + (b + 1) * d);

    std::vector<double> mod(static_cast<size_t>(6 * d), 0.0);
    if (adaln) {
      std::vector<double> cg(static_cast<size_t>(d));
      for (int64_t i = 0; i < d; ++i) cg[static_cast<size_t>(i)] = o_gelu(cv[static_cast<size_t>(i)]);
      o_linear(cg.data(), bw.adaln_w.data().data(), bw.adaln_b.data().data(), mod.data(), d,
               6 * d);
    }
    const double* g1 = mod.data();
    const double* b1 = mod.data() + d;
    const double* a1 = mod.data() + 2 * d;
    const double* g2 = mod.data() + 3 * d;
    const double* b2 = mod.data() + 4 * d;
    const double* a2 = mod.data() + 5 * d;

    auto norm_mod1 = [&](const std::vector<double>& h, std::vector<double>& out) {
      out.assign(h.size(), 0.0);
      std::vector<double> ln(static_cast<size_t>(d));
      for (int64_t r = 0; r < S; ++r) {
        o_layer_norm(h.data() + r * d, ln.data(), d, kEps);
        for (int64_t i = 0; i < d; ++i) {
          out[static_cast<size_t>(r * d + i)] =
              adaln ? ln[static_cast<size_t>(i)] * (1.0 + g1[i]) + b1[i]
                    : ln[static_cast<size_t>(i)] * bw.ln1_g.data()[i] + bw.ln1_b.data()[i];
        }
      }
    };
    const double* cond_row = adaln ? nullptr : cv.data();

    std::vector<double> xm, branch;
    norm_mod1(xs, xm);
    switch (bw.kind) {
      case BlockKind::spatial:
        o_grouped_mha(xm, cond_row, bw.attn_s, cfg.heads, n_f, t, d, false, {}, branch);
        break;
      case BlockKind::temporal:
        o_grouped_mha(xm, cond_row, bw.attn_t, cfg.heads, n_f, t, d, true, rope_pos, branch);
        break;
      case BlockKind::fused_sequential: {
        std::vector<double> u, un(static_cast<size_t>(S * d)), tb;
        o_grouped_mha(xm, cond_row, bw.attn_s, cfg.heads, n_f, t, d, false, {}, u);
        for (int64_t r = 0; r < S; ++r) o_layer_norm(u.data() + r * d, un.data() + r * d, d, kEps);
        o_grouped_mha(un, cond_row, bw.attn_t, cfg.heads, n_f, t, d, true, rope_pos, tb);
        branch = u;
        for (size_t i = 0; i < branch.size(); ++i) branch[i] += tb[i];
        break;
      }
      case BlockKind::fused_parallel: {
        std::vector<double> a_s, a_t;
        o_grouped_mha(xm, cond_row, bw.attn_s, cfg.heads / 2, n_f, t, d, false, {}, a_s);
        o_grouped_mha(xm, cond_row, bw.attn_t, cfg.heads / 2, n_f, t, d, true, rope_pos, a_t);
        branch = a_s;
        for (size_t i = 0; i < branch.size(); ++i) branch[i] += a_t[i];
        break;
      }
    }
    std::vector<double> h = xs;
    for (int64_t r = 0; r < S; ++r) {
      for (int64_t i = 0; i < d; ++i) {
        const double gate = adaln ? a1[i] : 1.0;
        h[static_cast<size_t>(r * d + i)] += gate * branch[static_cast<size_t>(r * d + i)];
      }
    }

    std::vector<double> ln(static_cast<size_t>(d)), hidden(static_cast<size_t>(4 * d)),
        mlp(static_cast<size_t>(d));
    for (int64_t r = 0; r < S; ++r) {
      o_layer_norm(h.data() + r * d, ln.data(), d, kEps);
      std::vector<double> xm2(static_cast<size_t>(d));
      for (int64_t i = 0; i < d; ++i) {
        xm2[static_cast<size_t>(i)] =
            adaln ? ln[static_cast<size_t>(i)] * (1.0 + g2[i]) + b2[i]
                  : ln[static_cast<size_t>(i)] * bw.ln2_g.data()[i] + bw.ln2_b.data()[i];
      }
      o_linear(xm2.data(), bw.fc1_w.data().data(), bw.fc1_b.data().data(), hidden.data(), d,
               4 * d);
      for (double& hv : hidden) hv = o_gelu(hv);
      o_linear(hidden.data(), bw.fc2_w.data().data(), bw.fc2_b.data().data(), mlp.data(), 4 * d,
               d);
      for (int64_t i = 0; i < d; ++i) {
        const double gate = adaln ? a2[i] : 1.0;
        h[static_cast<size_t>(r * d + i)] += gate * mlp[static_cast<size_t>(i)];
      }
    }
    std::copy(h.begin(), h.end(), result.begin() + b * S * d);
  }
  return result;
}

}  // namespace oracle

double max_rel_grad_err(const std::function<Tensor()>& fwd, std::vector<Tensor> params,
                        double h) {
  for (Tensor& p : params) p.zero_grad();
  std::vector<std::vector<double>> ad;
  {
    Tape tape;
    Tensor loss = fwd();
    tape.backward(loss);
  }
  for (Tensor& p : params) {
    auto g = p.grad_view();
    ad.emplace_back(g.begin(), g.end());
    if (ad.back().empty()) ad.back().assign(static_cast<size_t>(p.numel()), 0.0);
  }
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    auto data = p.data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double fp = fwd().item();
      data[i] = orig - h;
      const double fm = fwd().item();
      data[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double a = ad[pi][static_cast<size_t>(i)];
      // the floor keeps the check meaningful where the central-difference
      // oracle's own roundoff (~eps*|f|/h) exceeds the gradient magnitude
      const double rel = std::fabs(a - fd) / std::max({std::fabs(a), std::fabs(fd), 1e-5});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

namespace {

using Failures = std::vector<std::string>;

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

Tensor rand_tensor(Shape s, Rng& rng, double sigma = 1.0, bool grad = true) {
  Tensor t = Tensor::zeros(std::move(s), grad);
  for (double& v : t.data()) v = rng.normal() * sigma;
  return t;
}

Tensor weighted_sum(const Tensor& out, Rng& rng) {
  Tensor w = Tensor::zeros(out.shape());
  for (double& v : w.data()) v = rng.normal();
  return sum_all(mul(out, w));
}

void check_grad(Failures& fails, const std::string& name, const std::function<Tensor()>& fwd,
                std::vector<Tensor> params, double tol = 1e-4) {
  const double err = max_rel_grad_err(fwd, std::move(params), 1e-5);
  if (!(err < tol)) fails.push_back(name + ": rel grad err " + fmt(err));
}

Failures suite_grad_ops() {
  Failures fails;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(mix_seed(seed, 0x6a0b));
    const std::string tag = " (seed " + std::to_string(seed) + ")";
    {
      Tensor x = rand_tensor({3, 5}, rng);
      check_grad(fails, "softmax" + tag,
                 [&, seed] {
                   Rng wr(seed);
                   return weighted_sum(softmax(x, 1), wr);
                 },
                 {x});
    }
    {
      Tensor x = rand_tensor({4, 6}, rng);
      check_grad(fails, "layer_norm" + tag,
                 [&, seed] {
                   Rng wr(seed + 1);
                   return weighted_sum(layer_norm(x, 1e-5), wr);
                 },
                 {x});
    }
    {
      Tensor x = rand_tensor({2, 7}, rng);
      check_grad(fails, "gelu" + tag,
                 [&, seed] {
                   Rng wr(seed + 2);
                   return weighted_sum(gelu(x), wr);
                 },
                 {x});
    }
    {
      Tensor x = rand_tensor({3, 4}, rng), w = rand_tensor({4, 5}, rng),
             b = rand_tensor({5}, rng);
      check_grad(fails, "linear" + tag,
                 [&, seed] {
                   Rng wr(seed + 3);
                   return weighted_sum(linear(x, w, b), wr);
                 },
                 {x, w, b});
    }
    {
      Tensor q = rand_tensor({2, 3, 4}, rng), k = rand_tensor({2, 3, 4}, rng),
             v = rand_tensor({2, 3, 4}, rng);
      check_grad(fails, "attention" + tag,
                 [&, seed] {
                   Rng wr(seed + 4);
                   return weighted_sum(attention(q, k, v, 2), wr);
                 },
                 {q, k, v});
      check_grad(fails, "attention_rope" + tag,
                 [&, seed] {
                   Rng wr(seed + 5);
                   return weighted_sum(attention(q, k, v, 2, {0, 1, 2}, {0, 1, 2}), wr);
                 },
                 {q, k, v});
    }
    {
      Tensor x = rand_tensor({2, 3, 4}, rng), g = rand_tensor({2, 4}, rng, 0.5),
             bb = rand_tensor({2, 4}, rng, 0.5);
      check_grad(fails, "modulate" + tag,
                 [&, seed] {
                   Rng wr(seed + 6);
                   return weighted_sum(modulate(x, g, bb), wr);
                 },
                 {x, g, bb});
      Tensor br = rand_tensor({2, 3, 4}, rng);
      check_grad(fails, "gate_add" + tag,
                 [&, seed] {
                   Rng wr(seed + 7);
                   return weighted_sum(gate_add(x, br, g), wr);
                 },
                 {x, br, g});
    }
    {
      Tensor x = rand_tensor({3, 6}, rng), g = rand_tensor({6}, rng), bb = rand_tensor({6}, rng);
      check_grad(fails, "affine" + tag,
                 [&, seed] {
                   Rng wr(seed + 8);
                   return weighted_sum(affine(x, g, bb), wr);
                 },
                 {x, g, bb});
    }
    {
      Tensor a = rand_tensor({2, 5}, rng), bb = rand_tensor({2, 5}, rng);
      check_grad(fails, "mse" + tag, [&] { return mse(a, bb); }, {a, bb});
    }
    {
      Tensor x = rand_tensor({2, 3, 4}, rng);
      check_grad(fails, "structure_ops" + tag,
                 [&, seed] {
                   Rng wr(seed + 9);
                   Tensor p = permute(x, {1, 0, 2});
                   Tensor r = reshape(p, {3, 8});
                   Tensor s = slice(r, 1, 2, 5);
                   Tensor cc = concat({s, s}, 0);
                   return weighted_sum(cc, wr);
                 },
                 {x});
    }
    {
      Tensor x = rand_tensor({2, 4, 3}, rng), tab = rand_tensor({4, 3}, rng);
      check_grad(fails, "add_table" + tag,
                 [&, seed] {
                   Rng wr(seed + 10);
                   return weighted_sum(add_table(x, tab), wr);
                 },
                 {x, tab});
    }
    {
      Tensor tab = rand_tensor({5, 3}, rng);
      check_grad(fails, "rows_select" + tag,
                 [&, seed] {
                   Rng wr(seed + 11);
                   return weighted_sum(rows_select(tab, {1, 4, 1}), wr);
                 },
                 {tab});
    }
    {
      Tensor cvec = rand_tensor({2, 3}, rng);
      check_grad(fails, "repeat_groups" + tag,
                 [&, seed] {
                   Rng wr(seed + 12);
                   return weighted_sum(repeat_groups(cvec, 3), wr);
                 },
                 {cvec});
    }
    {
      Tensor x = rand_tensor({2, 6}, rng);
      check_grad(fails, "exp_clamp" + tag,
                 [&, seed] {
                   Rng wr(seed + 13);
                   return weighted_sum(exp_elem(clamp_elem(x, -5.0, 5.0)), wr);
                 },
                 {x});
    }
    {
      Tensor x = rand_tensor({1, 2, 4, 4, 3}, rng);
      Tensor kern = rand_tensor({2, 3, 3}, rng), bb = rand_tensor({3}, rng);
      check_grad(fails, "temporal_upsample" + tag,
                 [&, seed] {
                   Rng wr(seed + 14);
                   return weighted_sum(temporal_upsample(x, kern, bb), wr);
                 },
                 {x, kern, bb});
    }
    {
      Tensor v = rand_tensor({1, 4, 4, 4, 2}, rng);
      check_grad(fails, "patchify" + tag,
                 [&, seed] {
                   Rng wr(seed + 15);
                   Tensor tok = patchify(v, 2, 2, 2);
                   return weighted_sum(unpatchify(tok, 2, 4, 4, 4, 2, 2), wr);
                 },
                 {v});
    }
  }
  return fails;
}

BlockWeights make_random_block(BlockKind kind, CondMode mode, int64_t d, Rng& rng) {
  BlockWeights bw;
  bw.kind = kind;
  auto attn = [&] {
    AttnWeights w;
    w.qkv_w = rand_tensor({d, 3 * d}, rng, 0.3);
    w.qkv_b = rand_tensor({3 * d}, rng, 0.1);
    w.proj_w = rand_tensor({d, d}, rng, 0.3);
    w.proj_b = rand_tensor({d}, rng, 0.1);
    return w;
  };
  if (kind != BlockKind::temporal) bw.attn_s = attn();
  if (kind != BlockKind::spatial) bw.attn_t = attn();
  bw.fc1_w = rand_tensor({d, 4 * d}, rng, 0.3);
  bw.fc1_b = rand_tensor({4 * d}, rng, 0.1);
  bw.fc2_w = rand_tensor({4 * d, d}, rng, 0.3);
  bw.fc2_b = rand_tensor({d}, rng, 0.1);
  if (mode == CondMode::s_adaln) {
    bw.adaln_w = rand_tensor({d, 6 * d}, rng, 0.2);
    bw.adaln_b = rand_tensor({6 * d}, rng, 0.1);
  } else {
    bw.ln1_g = rand_tensor({d}, rng, 0.2);
    bw.ln1_b = rand_tensor({d}, rng, 0.1);
    bw.ln2_g = rand_tensor({d}, rng, 0.2);
    bw.ln2_b = rand_tensor({d}, rng, 0.1);
    for (int64_t i = 0; i < d; ++i) {
      bw.ln1_g.data()[i] += 1.0;
      bw.ln2_g.data()[i] += 1.0;
    }
  }
  return bw;
}

std::vector<Tensor> block_param_list(const BlockWeights& bw) {
  std::vector<Tensor> out;
  auto push_attn = [&](const AttnWeights& w) {
    if (!w.qkv_w.defined()) return;
    out.insert(out.end(), {w.qkv_w, w.qkv_b, w.proj_w, w.proj_b});
  };
  push_attn(bw.attn_s);
  push_attn(bw.attn_t);
  out.insert(out.end(), {bw.fc1_w, bw.fc1_b, bw.fc2_w, bw.fc2_b});
  if (bw.adaln_w.defined()) out.insert(out.end(), {bw.adaln_w, bw.adaln_b});
  if (bw.ln1_g.defined()) out.insert(out.end(), {bw.ln1_g, bw.ln1_b, bw.ln2_g, bw.ln2_b});
  return out;
}

ModelConfig tiny_block_cfg(CondMode mode, TemporalPos pos) {
  ModelConfig cfg;
  cfg.variant = 1;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.patch_h = cfg.patch_w = 2;
  cfg.frames = 2;
  cfg.latent_h = cfg.latent_w = 4;
  cfg.latent_c = 2;
  cfg.cond_mode = mode;
  cfg.temporal_pos = pos;
  cfg.num_classes = 0;
  return cfg;
}

Failures suite_grad_blocks() {
  Failures fails;
  const BlockKind kinds[] = {BlockKind::spatial, BlockKind::temporal,
                             BlockKind::fused_sequential, BlockKind::fused_parallel};
  const char* kind_names[] = {"spatial", "temporal", "variant3", "variant4"};
  const CondMode modes[] = {CondMode::s_adaln, CondMode::all_tokens};
  const char* mode_names[] = {"s_adaln", "all_tokens"};
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    for (int ki = 0; ki < 4; ++ki) {
      for (int mi = 0; mi < 2; ++mi) {
        Rng rng(mix_seed(seed, 0xb10c, static_cast<uint64_t>(ki), static_cast<uint64_t>(mi)));
        ModelConfig cfg = tiny_block_cfg(modes[mi], TemporalPos::absolute);
        const int64_t n_f = 2, t = 4, d = cfg.hidden;
        BlockWeights bw = make_random_block(kinds[ki], modes[mi], d, rng);
        Tensor x = rand_tensor({1, n_f * t, d}, rng, 0.7);
        Tensor cvec = rand_tensor({1, d}, rng, 0.7);
        std::vector<Tensor> params = block_param_list(bw);
        params.push_back(x);
        params.push_back(cvec);
        const std::string name = std::string("block.") + kind_names[ki] + "." + mode_names[mi] +
                                 " (seed " + std::to_string(seed) + ")";
        check_grad(fails, name,
                   [&, seed] {
                     Rng wr(mix_seed(seed, 0x3333));
                     Tensor out = block_forward(cfg, bw, x, cvec, n_f, t, n_f);
                     return weighted_sum(out, wr);
                   },
                   params);
      }
    }
    // rope pathway through a temporal block
    {
      Rng rng(mix_seed(seed, 0x20be));
      ModelConfig cfg = tiny_block_cfg(CondMode::s_adaln, TemporalPos::rope);
      BlockWeights bw = make_random_block(BlockKind::temporal, CondMode::s_adaln, 8, rng);
      Tensor x = rand_tensor({1, 8, 8}, rng, 0.7);
      Tensor cvec = rand_tensor({1, 8}, rng, 0.7);
      std::vector<Tensor> params = block_param_list(bw);
      params.push_back(x);
      params.push_back(cvec);
      check_grad(fails, "block.temporal.rope (seed " + std::to_string(seed) + ")",
                 [&, seed] {
                   Rng wr(mix_seed(seed, 0x3334));
                   return weighted_sum(block_forward(cfg, bw, x, cvec, 2, 4, 2), wr);
                 },
                 params);
    }
  }

  // both patch-embedding routes through the full denoiser, decoder included
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    for (int pm = 0; pm < 2; ++pm) {
      ModelConfig cfg = tiny_block_cfg(CondMode::s_adaln, TemporalPos::absolute);
      cfg.frames = pm == 0 ? 2 : 4;
      cfg.patch_mode = pm == 0 ? PatchMode::uniform : PatchMode::compression;
      cfg.tube_stride = 2;
      cfg.num_classes = 2;
      Model model = build_model(cfg, seed);
      Rng rng(mix_seed(seed, 0xfeed, static_cast<uint64_t>(pm)));
      std::vector<Tensor> params;
      for (auto& [name, p] : model.named_params()) {
        for (double& v : p.data()) v = rng.normal() * 0.25;
        params.push_back(p);
      }
      Tensor latents = rand_tensor({1, cfg.frames, 4, 4, 2}, rng, 0.8, false);
      std::vector<Conditioning> cond{{3, 1}};
      const std::string name = std::string("denoiser.") +
                               (pm == 0 ? "uniform" : "compression") + " (seed " +
                               std::to_string(seed) + ")";
      check_grad(fails, name,
                 [&, seed] {
                   Rng wr(mix_seed(seed, 0x3335));
                   DenoiserOut out = denoiser_forward(model, latents, cond);
                   Tensor loss = add(weighted_sum(out.eps, wr), weighted_sum(out.var_raw, wr));
                   return scale(loss, 1.0 / static_cast<double>(out.eps.numel()));
                 },
                 params);
    }
  }
  return fails;
}

Failures suite_oracle_attention() {
  Failures fails;
  Rng rng(0xa77e);
  for (int sq = 1; sq <= 4; ++sq) {
    for (int heads : {1, 2}) {
      for (int dh = 1; dh <= 4; ++dh) {
        const int64_t d = static_cast<int64_t>(heads) * dh;
        for (int cross = 0; cross < 2; ++cross) {
          const int sk = cross ? sq + 1 : sq;
          Tensor q = rand_tensor({1, sq, d}, rng, 1.0, false);
          Tensor k = rand_tensor({1, sk, d}, rng, 1.0, false);
          Tensor v = rand_tensor({1, sk, d}, rng, 1.0, false);
          Tensor got = attention(q, k, v, heads);
          auto want = oracle::attention({q.data().begin(), q.data().end()},
                                        {k.data().begin(), k.data().end()},
                                        {v.data().begin(), v.data().end()}, 1, sq, sk, d, heads);
          for (int64_t i = 0; i < got.numel(); ++i) {
            if (std::fabs(got.data()[i] - want[static_cast<size_t>(i)]) > 1e-10) {
              fails.push_back("attention sq=" + std::to_string(sq) + " sk=" +
                              std::to_string(sk) + " heads=" + std::to_string(heads) +
                              " dh=" + std::to_string(dh));
              break;
            }
          }
          if (dh % 2 == 0) {
            std::vector<int> rq, rk;
            for (int i = 0; i < sq; ++i) rq.push_back(i);
            for (int i = 0; i < sk; ++i) rk.push_back(i + 1);
            Tensor got_r = attention(q, k, v, heads, rq, rk);
            auto want_r = oracle::attention({q.data().begin(), q.data().end()},
                                            {k.data().begin(), k.data().end()},
                                            {v.data().begin(), v.data().end()}, 1, sq, sk, d,
                                            heads, rq, rk);
            for (int64_t i = 0; i < got_r.numel(); ++i) {
              if (std::fabs(got_r.data()[i] - want_r[static_cast<size_t>(i)]) > 1e-10) {
                fails.push_back("attention+rope sq=" + std::to_string(sq) +
                                " heads=" + std::to_string(heads) + " dh=" + std::to_string(dh));
                break;
              }
            }
          }
        }
      }
    }
  }
  return fails;
}

Failures suite_oracle_blocks() {
  Failures fails;
  const BlockKind kinds[] = {BlockKind::spatial, BlockKind::temporal,
                             BlockKind::fused_sequential, BlockKind::fused_parallel};
  const char* kind_names[] = {"spatial", "temporal", "variant3", "variant4"};
  const CondMode modes[] = {CondMode::s_adaln, CondMode::all_tokens};
  Rng rng(0xb0b0);
  for (int64_t n_f : {1, 2, 3, 4}) {
    for (int64_t t : {1, 2, 4}) {
      for (int heads : {1, 2}) {
        for (int ki = 0; ki < 4; ++ki) {
          if (kinds[ki] == BlockKind::fused_parallel && heads % 2 != 0) continue;
          for (int mi = 0; mi < 2; ++mi) {
            for (TemporalPos pos : {TemporalPos::absolute, TemporalPos::rope}) {
              // rope needs an even per-head dim and only matters with a
              // temporal pathway
              if (pos == TemporalPos::rope && kinds[ki] == BlockKind::spatial) continue;
              ModelConfig cfg = tiny_block_cfg(modes[mi], pos);
              cfg.hidden = heads * 4;
              cfg.heads = heads;
              const int64_t d = cfg.hidden;
              BlockWeights bw = make_random_block(kinds[ki], modes[mi], d, rng);
              Tensor x = rand_tensor({2, n_f * t, d}, rng, 0.8, false);
              Tensor cvec = rand_tensor({2, d}, rng, 0.8, false);
              Tensor got = block_forward(cfg, bw, x, cvec, n_f, t, n_f);
              auto want = oracle::block_forward(cfg, bw, {x.data().begin(), x.data().end()},
                                                {cvec.data().begin(), cvec.data().end()}, 2,
                                                n_f, t);
              double worst = 0.0;
              for (int64_t i = 0; i < got.numel(); ++i) {
                worst =
                    std::max(worst, std::fabs(got.data()[i] - want[static_cast<size_t>(i)]));
              }
              if (worst > 1e-10) {
                fails.push_back(std::string(kind_names[ki]) + " nf=" + std::to_string(n_f) +
                                " t=" + std::to_string(t) + " heads=" + std::to_string(heads) +
                                " mode=" + (mi == 0 ? "s_adaln" : "all_tokens") +
                                (pos == TemporalPos::rope ? " rope" : "") + " err " +
                                fmt(worst));
              }
            }
          }
        }
      }
    }
  }
  return fails;
}

Failures suite_prop_softmax() {
  Failures fails;
  Rng rng(0x50f7);
  // analytic cases
  {
    Tensor x = Tensor::from({3}, {0.0, 0.0, 0.0});
    Tensor y = softmax(x, 0);
    for (int i = 0; i < 3; ++i) {
      if (std::fabs(y.data()[i] - 1.0 / 3.0) > 1e-12) {
        fails.push_back("softmax uniform case");
        break;
      }
    }
  }
  {
    Tensor x = Tensor::from({2}, {0.0, std::log(2.0)});
    Tensor y = softmax(x, 0);
    if (std::fabs(y.data()[0] - 1.0 / 3.0) > 1e-12 || std::fabs(y.data()[1] - 2.0 / 3.0) > 1e-12) {
      fails.push_back("softmax analytic [0, ln2] case");
    }
  }
  for (int c = 0; c < 1000; ++c) {
    const int64_t n = 1 + rng.below(8);
    const int64_t rows = 1 + rng.below(4);
    Tensor x = rand_tensor({rows, n}, rng, 2.0, false);
    Tensor y = softmax(x, 1);
    const double shift = rng.normal() * 3.0;
    Tensor y2 = softmax(add_scalar(x, shift), 1);
    for (int64_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const double v = y.data()[r * n + i];
        sum += v;
        if (!(v > 0.0 && v < 1.0 + 1e-12)) {
          fails.push_back("softmax range violated, case " + std::to_string(c));
          return fails;
        }
      }
      if (std::fabs(sum - 1.0) > 1e-6) {
        fails.push_back("softmax rows not stochastic, case " + std::to_string(c));
        return fails;
      }
    }
    for (int64_t i = 0; i < y.numel(); ++i) {
      if (std::fabs(y.data()[i] - y2.data()[i]) > 1e-9) {
        fails.push_back("softmax shift invariance, case " + std::to_string(c));
        return fails;
      }
    }
  }
  return fails;
}

Failures suite_prop_rope() {
  Failures fails;
  Rng rng(0x20fe);
  for (int c = 0; c < 200; ++c) {
    const int64_t dh = 2 * (1 + rng.below(4));
    std::vector<double> v(static_cast<size_t>(dh));
    for (double& x : v) x = rng.normal();
    double norm0 = 0.0;
    for (double x : v) norm0 += x * x;
    std::vector<double> r = v;
    const int pos = static_cast<int>(rng.below(50));
    rope_rotate(r, pos);
    double norm1 = 0.0;
    for (double x : r) norm1 += x * x;
    if (std::fabs(std::sqrt(norm0) - std::sqrt(norm1)) > 1e-6) {
      fails.push_back("rope norm not preserved, case " + std::to_string(c));
      break;
    }
  }
  {
    std::vector<double> q = {0.3, -1.2}, k = {0.7, 0.4};
    auto dot_at = [&](int m, int n) {
      std::vector<double> qq = q, kk = k;
      rope_rotate(qq, m);
      rope_rotate(kk, n);
      return qq[0] * kk[0] + qq[1] * kk[1];
    };
    if (std::fabs(dot_at(3, 7) - dot_at(8, 12)) > 1e-9) {
      fails.push_back("rope relative-position dot product");
    }
  }
  {
    std::vector<double> v = {-0.4, 2.2, 0.9, -1.1};
    std::vector<double> r = v;
    rope_rotate(r, 0);
    for (size_t i = 0; i < v.size(); ++i) {
      if (v[i] != r[i]) {
        fails.push_back("rope position-0 identity");
        break;
      }
    }
  }
  return fails;
}

Failures suite_prop_codec() {
  Failures fails;
  Rng rng(0xc0de);
  const int factors[] = {1, 2, 4, 8};
  for (int c = 0; c < 50; ++c) {
    const int factor = factors[rng.below(4)];
    const int64_t H = factor * (1 + rng.below(3)), W = factor * (1 + rng.below(3));
    Tensor px = rand_tensor({2, H, W, 1 + rng.below(3)}, rng, 1.0, false);
    Tensor lat = codec_encode(px, factor);
    Tensor back = codec_decode(lat, factor);
    if (back.shape() != px.shape()) {
      fails.push_back("codec round-trip shape, case " + std::to_string(c));
      break;
    }
    for (int64_t i = 0; i < px.numel(); ++i) {
      if (px.data()[i] != back.data()[i]) {
        fails.push_back("codec round-trip values, case " + std::to_string(c));
        return fails;
      }
    }
    double s0 = 0.0, s1 = 0.0;
    for (int64_t i = 0; i < px.numel(); ++i) s0 += px.data()[i] * px.data()[i];
    for (int64_t i = 0; i < lat.numel(); ++i) s1 += lat.data()[i] * lat.data()[i];
    // values are a bit-exact permutation; the two sums only differ by
    // reduction order
    if (std::fabs(s0 - s1) > 1e-13 * std::max(1.0, std::fabs(s0))) {
      fails.push_back("codec sum of squares, case " + std::to_string(c));
      break;
    }
  }
  {
    Tensor px = rand_tensor({1, 32, 32, 1}, rng, 1.0, false);
    Tensor lat = codec_encode(px, 8);
    if (lat.shape() != Shape{1, 4, 4, 64}) fails.push_back("codec 32x32x1 -> 4x4x64 shape");
  }
  return fails;
}

Failures suite_prop_schedule() {
  Failures fails;
  for (int T : {1, 2, 10, 1000}) {
    DiffusionSchedule s = DiffusionSchedule::linear(T);
    for (int i = 1; i < T; ++i) {
      if (!(s.alpha_bar[static_cast<size_t>(i)] < s.alpha_bar[static_cast<size_t>(i - 1)])) {
        fails.push_back("alpha_bar not strictly decreasing at T=" + std::to_string(T));
        break;
      }
    }
    if (std::fabs(s.alpha_bar[0] - (1.0 - s.beta[0])) > 1e-15) {
      fails.push_back("alpha_bar[1] != 1 - beta[1] at T=" + std::to_string(T));
    }
    if (s.posterior_var[0] != 0.0) fails.push_back("posterior var at t=1 should be 0");
    for (int i = 1; i < T; ++i) {
      const double v = s.posterior_var[static_cast<size_t>(i)];
      if (!(v > 0.0 && v <= s.beta[static_cast<size_t>(i)])) {
        fails.push_back("posterior var outside (0, beta] at t=" + std::to_string(i + 1));
        break;
      }
    }
    for (int i = 0; i < T; ++i) {
      if (!(s.posterior_log_var[static_cast<size_t>(i)] <=
            std::log(s.beta[static_cast<size_t>(i)]) + 1e-12)) {
        fails.push_back("clipped log var exceeds log beta at t=" + std::to_string(i + 1));
        break;
      }
    }
  }
  return fails;
}

Failures suite_prop_params() {
  Failures fails;
  for (int variant = 1; variant <= 4; ++variant) {
    for (CondMode mode : {CondMode::s_adaln, CondMode::all_tokens}) {
      for (PatchMode pm : {PatchMode::uniform, PatchMode::compression}) {
        for (int classes : {0, 4}) {
          ModelConfig cfg;
          cfg.variant = variant;
          cfg.layers = variant <= 2 ? 4 : 3;
          cfg.hidden = 16;
          cfg.heads = 2;
          cfg.patch_h = cfg.patch_w = 2;
          cfg.frames = 4;
          cfg.latent_h = cfg.latent_w = 8;
          cfg.latent_c = 2;
          cfg.cond_mode = mode;
          cfg.patch_mode = pm;
          cfg.tube_stride = 2;
          cfg.num_classes = classes;
          Model m = build_model(cfg, 3);
          const int64_t want = count_params(cfg);
          const int64_t got = m.param_count();
          if (want != got) {
            fails.push_back("variant " + std::to_string(variant) + " mode " +
                            cond_mode_str(mode) + " patch " + patch_mode_str(pm) + ": counted " +
                            std::to_string(want) + ", allocated " + std::to_string(got));
          }
        }
      }
    }
  }
  return fails;
}

}  // namespace

std::vector<SuiteResult> run_verification(const std::string& filter) {
  const Precision prev = precision();
  set_precision(Precision::f64);
  struct Entry {
    const char* name;
    Failures (*fn)();
  };
  const Entry entries[] = {
      {"grad.ops", suite_grad_ops},         {"grad.blocks", suite_grad_blocks},
      {"oracle.attention", suite_oracle_attention}, {"oracle.blocks", suite_oracle_blocks},
      {"prop.softmax", suite_prop_softmax}, {"prop.rope", suite_prop_rope},
      {"prop.codec", suite_prop_codec},     {"prop.schedule", suite_prop_schedule},
      {"prop.params", suite_prop_params},
  };
  std::vector<SuiteResult> results;
  for (const Entry& e : entries) {
    if (!filter.empty() && std::string(e.name).find(filter) == std::string::npos) continue;
    SuiteResult r;
    r.name = e.name;
    try {
      r.failures = e.fn();
    } catch (const std::exception& ex) {
      r.failures.push_back(std::string("exception: ") + ex.what());
    }
    results.push_back(std::move(r));
  }
  set_precision(prev);
  return results;
}

}  // namespace latte
