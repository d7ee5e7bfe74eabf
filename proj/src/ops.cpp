#include "latte/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>

namespace latte {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

thread_local bool g_attn_stats_on = false;
thread_local std::vector<AttnCall> g_attn_stats;

bool mutation_enabled(const char* name) {
  static const char* m = std::getenv("LATTE_MUTATION");
  return m != nullptr && std::strcmp(m, name) == 0;
}

void check_finite(const char* op, const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw NumericError(op, "output shape " + shape_str(t.shape()));
  }
}

// Applies the numeric mode (f32 rounds through float) and the finite check.
void finish(const char* op, Tensor& t) {
  if (precision() == Precision::f32) {
    for (double& v : t.data()) v = quantize_f32(v);
  }
  check_finite(op, t);
}

bool taping(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

int64_t leading(const Tensor& t, int upto_axis) {
  int64_t n = 1;
  for (int i = 0; i < upto_axis; ++i) n *= t.dim(i);
  return n;
}

int64_t trailing(const Tensor& t, int from_axis) {
  int64_t n = 1;
  for (int i = from_axis; i < t.rank(); ++i) n *= t.dim(i);
  return n;
}

// shared row softmax; the optional mutation hook flips the shift sign, which
// the analytic softmax cases and the attention oracle both detect
void softmax_row(double* x, int64_t n) {
  double m = x[0];
  for (int64_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  const double sgn = mutation_enabled("softmax_sign") ? -1.0 : 1.0;
  double sum = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    x[i] = std::exp(sgn * (x[i] - m));
    sum += x[i];
  }
  for (int64_t i = 0; i < n; ++i) x[i] /= sum;
}

}  // namespace

void attn_stats_enable(bool on) { g_attn_stats_on = on; }
const std::vector<AttnCall>& attn_stats() { return g_attn_stats; }
void attn_stats_clear() { g_attn_stats.clear(); }

void op_epilogue(const char* op, Tensor& t) { finish(op, t); }
bool op_taping(std::initializer_list<const Tensor*> inputs) { return taping(inputs); }

const double* op_incoming_grad(const Tensor& t) {
  auto g = t.grad_view();
  return g.empty() ? nullptr : g.data();
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data(), pb = b.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
  finish("add", out);
  if (taping({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (int64_t i = 0; i < bc.numel(); ++i) gb[i] += go[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data(), pb = b.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  finish("sub", out);
  if (taping({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (int64_t i = 0; i < bc.numel(); ++i) gb[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data(), pb = b.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  finish("mul", out);
  if (taping({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        auto pb2 = bc.data();
        for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i] * pb2[i];
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        auto pa2 = ac.data();
        for (int64_t i = 0; i < bc.numel(); ++i) gb[i] += go[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * s;
  finish("scale", out);
  if (taping({&a})) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, s]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      auto ga = ac.grad();
      for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i] * s;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + s;
  finish("add_scalar", out);
  if (taping({&a})) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      auto ga = ac.grad();
      for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i];
    });
  }
  return out;
}

Tensor exp_elem(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::exp(pa[i]);
  finish("exp", out);
  if (taping({&a})) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      auto ga = ac.grad();
      auto pv = oc.data();
      for (int64_t i = 0; i < ac.numel(); ++i) ga[i] += go[i] * pv[i];
    });
  }
  return out;
}

Tensor clamp_elem(const Tensor& a, double lo, double hi) {
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::min(hi, std::max(lo, pa[i]));
  finish("clamp", out);
  if (taping({&a})) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc, lo, hi]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      auto ga = ac.grad();
      auto pa2 = ac.data();
      for (int64_t i = 0; i < ac.numel(); ++i) {
        if (pa2[i] > lo && pa2[i] < hi) ga[i] += go[i];
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const auto pa = a.data();
  auto po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double x = pa[i];
    po[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  }
  finish("gelu", out);
  if (taping({&a})) {
    out.set_requires_grad(true);
    Tensor ac = a, oc = out;
    Tape::active()->record([ac, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      auto ga = ac.grad();
      auto pa2 = ac.data();
      for (int64_t i = 0; i < ac.numel(); ++i) {
        const double x = pa2[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += go[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

Tensor detach(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2");
  const int64_t in = w.dim(0), out_dim = w.dim(1);
  if (x.dim(x.rank() - 1) != in) {
    throw ShapeError("linear: input last dim " + std::to_string(x.dim(x.rank() - 1)) +
                     " != weight rows " + std::to_string(in));
  }
  if (b.numel() != out_dim) throw ShapeError("linear: bias size mismatch");
  const int64_t rows = x.numel() / in;
  Shape oshape = x.shape();
  oshape.back() = out_dim;
  Tensor out = Tensor::zeros(oshape);
  const double* __restrict__ px = x.data().data();
  const double* __restrict__ pw = w.data().data();
  const double* __restrict__ pb = b.data().data();
  double* __restrict__ po = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    double* __restrict__ orow = po + r * out_dim;
    for (int64_t j = 0; j < out_dim; ++j) orow[j] = pb[j];
    const double* xrow = px + r * in;
    for (int64_t i = 0; i < in; ++i) {
      const double xv = xrow[i];
      const double* __restrict__ wrow = pw + i * out_dim;
      for (int64_t j = 0; j < out_dim; ++j) orow[j] += xv * wrow[j];
    }
  }
  finish("linear", out);
  if (taping({&x, &w, &b})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = w, bc = b, oc = out;
    Tape::active()->record([xc, wc, bc, oc, rows, in, out_dim]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      if (xc.requires_grad()) {
        double* __restrict__ gx = xc.grad().data();
        const double* __restrict__ pw2 = wc.data().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* __restrict__ grow = go + r * out_dim;
          double* gxrow = gx + r * in;
          for (int64_t i = 0; i < in; ++i) {
            const double* __restrict__ wrow = pw2 + i * out_dim;
            double acc = 0.0;
            for (int64_t j = 0; j < out_dim; ++j) acc += grow[j] * wrow[j];
            gxrow[i] += acc;
          }
        }
      }
      if (wc.requires_grad()) {
        double* __restrict__ gw = wc.grad().data();
        const double* __restrict__ px2 = xc.data().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* __restrict__ grow = go + r * out_dim;
          const double* xrow = px2 + r * in;
          for (int64_t i = 0; i < in; ++i) {
            const double xv = xrow[i];
            double* __restrict__ gwrow = gw + i * out_dim;
            for (int64_t j = 0; j < out_dim; ++j) gwrow[j] += xv * grow[j];
          }
        }
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
          const double* grow = go + r * out_dim;
          for (int64_t j = 0; j < out_dim; ++j) gb[j] += grow[j];
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor zero_bias = Tensor::zeros({b.dim(1)});
  return linear(a, b, zero_bias);
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(x.rank()));
  }
  const int64_t n = x.dim(axis);
  const int64_t outer = leading(x, axis);
  const int64_t inner = trailing(x, axis + 1);
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  double* po = out.data().data();
  std::vector<double> row(static_cast<size_t>(n));
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in_i = 0; in_i < inner; ++in_i) {
      const int64_t base = o * n * inner + in_i;
      for (int64_t i = 0; i < n; ++i) row[static_cast<size_t>(i)] = px[base + i * inner];
      softmax_row(row.data(), n);
      for (int64_t i = 0; i < n; ++i) po[base + i * inner] = row[static_cast<size_t>(i)];
    }
  }
  finish("softmax", out);
  if (taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc, n, outer, inner]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double* pv = oc.data().data();
      double* gx = xc.grad().data();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in_i = 0; in_i < inner; ++in_i) {
          const int64_t base = o * n * inner + in_i;
          double dot = 0.0;
          for (int64_t i = 0; i < n; ++i) dot += go[base + i * inner] * pv[base + i * inner];
          for (int64_t i = 0; i < n; ++i) {
            gx[base + i * inner] += pv[base + i * inner] * (go[base + i * inner] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, double eps) {
  const int64_t d = x.dim(x.rank() - 1);
  if (d < 2) throw ShapeError("layer_norm: last dim must be >= 2");
  if (eps <= 0.0) throw ShapeError("layer_norm: eps must be positive");
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  double* po = out.data().data();
  std::vector<double> inv_std(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * d;
    double mean = 0.0;
    for (int64_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t i = 0; i < d; ++i) {
      const double c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(r)] = istd;
    double* orow = po + r * d;
    for (int64_t i = 0; i < d; ++i) orow[i] = (xr[i] - mean) * istd;
  }
  finish("layer_norm", out);
  if (taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    auto istd_sh = std::make_shared<std::vector<double>>(std::move(inv_std));
    Tape::active()->record([xc, oc, istd_sh, rows, d]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double* ph = oc.data().data();  // normalized values
      double* gx = xc.grad().data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* grow = go + r * d;
        const double* hrow = ph + r * d;
        double gmean = 0.0, ghmean = 0.0;
        for (int64_t i = 0; i < d; ++i) {
          gmean += grow[i];
          ghmean += grow[i] * hrow[i];
        }
        gmean /= static_cast<double>(d);
        ghmean /= static_cast<double>(d);
        const double istd = (*istd_sh)[static_cast<size_t>(r)];
        double* gxr = gx + r * d;
        for (int64_t i = 0; i < d; ++i) {
          gxr[i] += istd * (grow[i] - gmean - hrow[i] * ghmean);
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  }
  Tensor out = Tensor::zeros(std::move(shape));
  std::copy(x.data().begin(), x.data().end(), out.data().begin());
  if (taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      auto gx = xc.grad();
      for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i];
    });
  }
  return out;
}

namespace {
// index mapping for permute: out[new_idx] = in[old_idx]
std::vector<int64_t> permute_map(const Shape& in_shape, const std::vector<int>& perm) {
  const int r = static_cast<int>(in_shape.size());
  std::vector<int64_t> in_strides(r, 1), out_dims(r), out_strides(r, 1);
  for (int i = r - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
  for (int i = 0; i < r; ++i) out_dims[i] = in_shape[static_cast<size_t>(perm[i])];
  for (int i = r - 2; i >= 0; --i) out_strides[i] = out_strides[i + 1] * out_dims[i + 1];
  const int64_t n = shape_numel(in_shape);
  std::vector<int64_t> map(static_cast<size_t>(n));
  std::vector<int64_t> coord(r, 0);
  for (int64_t oi = 0; oi < n; ++oi) {
    int64_t rem = oi, src = 0;
    for (int i = 0; i < r; ++i) {
      const int64_t c = rem / out_strides[i];
      rem -= c * out_strides[i];
      src += c * in_strides[static_cast<size_t>(perm[i])];
    }
    map[static_cast<size_t>(oi)] = src;
  }
  return map;
}
}  // namespace

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  if (static_cast<int>(perm.size()) != x.rank()) throw ShapeError("permute: rank mismatch");
  std::vector<bool> seen(perm.size(), false);
  for (int p : perm) {
    if (p < 0 || p >= x.rank() || seen[static_cast<size_t>(p)]) {
      throw ShapeError("permute: invalid permutation");
    }
    seen[static_cast<size_t>(p)] = true;
  }
  Shape oshape(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) oshape[i] = x.dim(perm[i]);
  auto map = permute_map(x.shape(), perm);
  Tensor out = Tensor::zeros(oshape);
  const auto px = x.data();
  auto po = out.data();
  for (int64_t i = 0; i < out.numel(); ++i) po[i] = px[map[static_cast<size_t>(i)]];
  if (taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    auto map_sh = std::make_shared<std::vector<int64_t>>(std::move(map));
    Tape::active()->record([xc, oc, map_sh]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      auto gx = xc.grad();
      for (int64_t i = 0; i < oc.numel(); ++i) gx[(*map_sh)[static_cast<size_t>(i)]] += go[i];
    });
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int r = xs[0].rank();
  if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
  Shape oshape = xs[0].shape();
  int64_t total = 0;
  for (const Tensor& t : xs) {
    if (t.rank() != r) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < r; ++i) {
      if (i != axis && t.dim(i) != oshape[static_cast<size_t>(i)]) {
        throw ShapeError("concat: shape mismatch on non-concat axis");
      }
    }
    total += t.dim(axis);
  }
  oshape[static_cast<size_t>(axis)] = total;
  Tensor out = Tensor::zeros(oshape);
  const int64_t outer = leading(out, axis);
  const int64_t inner = trailing(out, axis + 1);
  double* po = out.data().data();
  int64_t off = 0;
  std::vector<int64_t> offsets;
  for (const Tensor& t : xs) {
    offsets.push_back(off);
    const int64_t len = t.dim(axis);
    const double* pt = t.data().data();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(pt + o * len * inner, pt + (o + 1) * len * inner,
                po + (o * total + off) * inner);
    }
    off += len;
  }
  bool any_grad = false;
  for (const Tensor& t : xs) any_grad = any_grad || t.requires_grad();
  if (Tape::active() && any_grad) {
    out.set_requires_grad(true);
    Tensor oc = out;
    auto parts = std::make_shared<std::vector<Tensor>>(xs);
    auto offs = std::make_shared<std::vector<int64_t>>(std::move(offsets));
    Tape::active()->record([oc, parts, offs, outer, inner, total, axis]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      for (size_t pi = 0; pi < parts->size(); ++pi) {
        Tensor& t = (*parts)[pi];
        if (!t.requires_grad()) continue;
        const int64_t len = t.dim(axis);
        double* gt = t.grad().data();
        const int64_t off2 = (*offs)[pi];
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = go + (o * total + off2) * inner;
          double* dst = gt + o * len * inner;
          for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("slice: axis out of range");
  if (start < 0 || len <= 0 || start + len > x.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for dim " +
                     std::to_string(x.dim(axis)));
  }
  Shape oshape = x.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Tensor out = Tensor::zeros(oshape);
  const int64_t outer = leading(x, axis);
  const int64_t inner = trailing(x, axis + 1);
  const int64_t full = x.dim(axis);
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int64_t o = 0; o < outer; ++o) {
    std::copy(px + (o * full + start) * inner, px + (o * full + start + len) * inner,
              po + o * len * inner);
  }
  if (taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc, outer, inner, full, start, len]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      double* gx = xc.grad().data();
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = go + o * len * inner;
        double* dst = gx + (o * full + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor out = Tensor::scalar(s);
  finish("sum", out);
  if (taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    Tape::active()->record([xc, oc]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double g = go[0];
      auto gx = xc.grad();
      for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  const int64_t n = a.numel();
  double s = 0.0;
  const auto pa = a.data(), pb = b.data();
  for (int64_t i = 0; i < n; ++i) {
    const double d = pa[i] - pb[i];
    s += d * d;
  }
  Tensor out = Tensor::scalar(s / static_cast<double>(n));
  finish("mse", out);
  if (taping({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ac = a, bc = b, oc = out;
    Tape::active()->record([ac, bc, oc, n]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double g = go[0] * 2.0 / static_cast<double>(n);
      const auto pa2 = ac.data();
      const auto pb2 = bc.data();
      if (ac.requires_grad()) {
        auto ga = ac.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g * (pa2[i] - pb2[i]);
      }
      if (bc.requires_grad()) {
        auto gb = bc.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] -= g * (pa2[i] - pb2[i]);
      }
    });
  }
  return out;
}

namespace {
// shared implementation for the [B, ..., D] x [B, D] broadcast family
void check_rowvec(const char* op, const Tensor& x, const Tensor& v) {
  if (v.rank() != 2 || v.dim(0) != x.dim(0) || v.dim(1) != x.dim(x.rank() - 1)) {
    throw ShapeError(std::string(op) + ": vector shape " + shape_str(v.shape()) +
                     " incompatible with " + shape_str(x.shape()));
  }
}
}  // namespace

Tensor modulate(const Tensor& x, const Tensor& g, const Tensor& b) {
  check_rowvec("modulate", x, g);
  check_rowvec("modulate", x, b);
  const int64_t B = x.dim(0);
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t mid = x.numel() / (B * d);
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  const double* pg = g.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (int64_t s = 0; s < B; ++s) {
    const double* gs = pg + s * d;
    const double* bs = pb + s * d;
    for (int64_t m = 0; m < mid; ++m) {
      const double* xr = px + (s * mid + m) * d;
      double* orow = po + (s * mid + m) * d;
      for (int64_t i = 0; i < d; ++i) orow[i] = xr[i] * (1.0 + gs[i]) + bs[i];
    }
  }
  finish("modulate", out);
  if (taping({&x, &g, &b})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = g, bc = b, oc = out;
    Tape::active()->record([xc, gc, bc, oc, B, mid, d]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double* px2 = xc.data().data();
      const double* pg2 = gc.data().data();
      for (int64_t s = 0; s < B; ++s) {
        for (int64_t m = 0; m < mid; ++m) {
          const double* grow = go + (s * mid + m) * d;
          const double* xrow = px2 + (s * mid + m) * d;
          if (xc.requires_grad()) {
            double* gx = xc.grad().data() + (s * mid + m) * d;
            const double* gs = pg2 + s * d;
            for (int64_t i = 0; i < d; ++i) gx[i] += grow[i] * (1.0 + gs[i]);
          }
          if (gc.requires_grad()) {
            double* gg = gc.grad().data() + s * d;
            for (int64_t i = 0; i < d; ++i) gg[i] += grow[i] * xrow[i];
          }
          if (bc.requires_grad()) {
            double* gb = bc.grad().data() + s * d;
            for (int64_t i = 0; i < d; ++i) gb[i] += grow[i];
          }
        }
      }
    });
  }
  return out;
}

Tensor gate_add(const Tensor& x, const Tensor& br, const Tensor& a) {
  require_same_shape("gate_add", x, br);
  check_rowvec("gate_add", x, a);
  const int64_t B = x.dim(0);
  const int64_t d = x.dim(x.rank() - 1);
  const int64_t mid = x.numel() / (B * d);
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  const double* pr = br.data().data();
  const double* pa = a.data().data();
  double* po = out.data().data();
  for (int64_t s = 0; s < B; ++s) {
    const double* as = pa + s * d;
    for (int64_t m = 0; m < mid; ++m) {
      const int64_t base = (s * mid + m) * d;
      for (int64_t i = 0; i < d; ++i) po[base + i] = px[base + i] + as[i] * pr[base + i];
    }
  }
  finish("gate_add", out);
  if (taping({&x, &br, &a})) {
    out.set_requires_grad(true);
    Tensor xc = x, rc = br, ac = a, oc = out;
    Tape::active()->record([xc, rc, ac, oc, B, mid, d]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double* pr2 = rc.data().data();
      const double* pa2 = ac.data().data();
      if (xc.requires_grad()) {
        double* gx = xc.grad().data();
        for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i];
      }
      if (rc.requires_grad()) {
        double* gr = rc.grad().data();
        for (int64_t s = 0; s < B; ++s) {
          const double* as = pa2 + s * d;
          for (int64_t m = 0; m < mid; ++m) {
            const int64_t base = (s * mid + m) * d;
            for (int64_t i = 0; i < d; ++i) gr[base + i] += go[base + i] * as[i];
          }
        }
      }
      if (ac.requires_grad()) {
        double* ga = ac.grad().data();
        for (int64_t s = 0; s < B; ++s) {
          for (int64_t m = 0; m < mid; ++m) {
            const int64_t base = (s * mid + m) * d;
            for (int64_t i = 0; i < d; ++i) ga[s * d + i] += go[base + i] * pr2[base + i];
          }
        }
      }
    });
  }
  return out;
}

Tensor affine(const Tensor& x, const Tensor& g, const Tensor& b) {
  const int64_t d = x.dim(x.rank() - 1);
  if (g.numel() != d || b.numel() != d) throw ShapeError("affine: vector size mismatch");
  const int64_t rows = x.numel() / d;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  const double* pg = g.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = px + r * d;
    double* orow = po + r * d;
    for (int64_t i = 0; i < d; ++i) orow[i] = xr[i] * pg[i] + pb[i];
  }
  finish("affine", out);
  if (taping({&x, &g, &b})) {
    out.set_requires_grad(true);
    Tensor xc = x, gc = g, bc = b, oc = out;
    Tape::active()->record([xc, gc, bc, oc, rows, d]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double* px2 = xc.data().data();
      const double* pg2 = gc.data().data();
      if (xc.requires_grad()) {
        double* gx = xc.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t i = 0; i < d; ++i) gx[r * d + i] += go[r * d + i] * pg2[i];
        }
      }
      if (gc.requires_grad()) {
        double* gg = gc.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t i = 0; i < d; ++i) gg[i] += go[r * d + i] * px2[r * d + i];
        }
      }
      if (bc.requires_grad()) {
        double* gb = bc.grad().data();
        for (int64_t r = 0; r < rows; ++r) {
          for (int64_t i = 0; i < d; ++i) gb[i] += go[r * d + i];
        }
      }
    });
  }
  return out;
}

Tensor scale_rows(const Tensor& x, const std::vector<double>& s) {
  if (static_cast<int64_t>(s.size()) != x.dim(0)) {
    throw ShapeError("scale_rows: scale count != leading dim");
  }
  const int64_t B = x.dim(0);
  const int64_t inner = x.numel() / B;
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  double* po = out.data().data();
  for (int64_t r = 0; r < B; ++r) {
    const double sv = s[static_cast<size_t>(r)];
    for (int64_t i = 0; i < inner; ++i) po[r * inner + i] = px[r * inner + i] * sv;
  }
  finish("scale_rows", out);
  if (taping({&x})) {
    out.set_requires_grad(true);
    Tensor xc = x, oc = out;
    auto sc = std::make_shared<std::vector<double>>(s);
    Tape::active()->record([xc, oc, sc, B, inner]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      double* gx = xc.grad().data();
      for (int64_t r = 0; r < B; ++r) {
        const double sv = (*sc)[static_cast<size_t>(r)];
        for (int64_t i = 0; i < inner; ++i) gx[r * inner + i] += go[r * inner + i] * sv;
      }
    });
  }
  return out;
}

Tensor add_table(const Tensor& x, const Tensor& table) {
  if (x.rank() != 3 || table.rank() != 2 || x.dim(1) != table.dim(0) ||
      x.dim(2) != table.dim(1)) {
    throw ShapeError("add_table: x " + shape_str(x.shape()) + " vs table " +
                     shape_str(table.shape()));
  }
  const int64_t B = x.dim(0), n = table.numel();
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data().data();
  const double* pt = table.data().data();
  double* po = out.data().data();
  for (int64_t bI = 0; bI < B; ++bI) {
    for (int64_t i = 0; i < n; ++i) po[bI * n + i] = px[bI * n + i] + pt[i];
  }
  finish("add_table", out);
  if (taping({&x, &table})) {
    out.set_requires_grad(true);
    Tensor xc = x, tc = table, oc = out;
    Tape::active()->record([xc, tc, oc, B, n]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      if (xc.requires_grad()) {
        double* gx = xc.grad().data();
        for (int64_t i = 0; i < xc.numel(); ++i) gx[i] += go[i];
      }
      if (tc.requires_grad()) {
        double* gt = tc.grad().data();
        for (int64_t bI = 0; bI < B; ++bI) {
          for (int64_t i = 0; i < n; ++i) gt[i] += go[bI * n + i];
        }
      }
    });
  }
  return out;
}

Tensor rows_select(const Tensor& table, const std::vector<int>& idx) {
  if (table.rank() != 2) throw ShapeError("rows_select: table must be rank 2");
  const int64_t n = table.dim(0), d = table.dim(1);
  for (int i : idx) {
    if (i < 0 || i >= n) {
      throw ShapeError("rows_select: index " + std::to_string(i) + " out of range [0," +
                       std::to_string(n) + ")");
    }
  }
  const int64_t B = static_cast<int64_t>(idx.size());
  Tensor out = Tensor::zeros({B, d});
  const double* pt = table.data().data();
  double* po = out.data().data();
  for (int64_t r = 0; r < B; ++r) {
    std::copy(pt + idx[static_cast<size_t>(r)] * d, pt + (idx[static_cast<size_t>(r)] + 1) * d,
              po + r * d);
  }
  finish("rows_select", out);
  if (taping({&table})) {
    out.set_requires_grad(true);
    Tensor tc = table, oc = out;
    auto ic = std::make_shared<std::vector<int>>(idx);
    Tape::active()->record([tc, oc, ic, d]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      double* gt = tc.grad().data();
      for (size_t r = 0; r < ic->size(); ++r) {
        double* dst = gt + (*ic)[r] * d;
        const double* src = go + static_cast<int64_t>(r) * d;
        for (int64_t i = 0; i < d; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor repeat_groups(const Tensor& c, int64_t groups) {
  if (c.rank() != 2) throw ShapeError("repeat_groups: expects [B, D]");
  const int64_t B = c.dim(0), d = c.dim(1);
  Tensor out = Tensor::zeros({B * groups, 1, d});
  const double* pc = c.data().data();
  double* po = out.data().data();
  for (int64_t bI = 0; bI < B; ++bI) {
    for (int64_t g = 0; g < groups; ++g) {
      std::copy(pc + bI * d, pc + (bI + 1) * d, po + (bI * groups + g) * d);
    }
  }
  finish("repeat_groups", out);
  if (taping({&c})) {
    out.set_requires_grad(true);
    Tensor cc = c, oc = out;
    Tape::active()->record([cc, oc, B, groups, d]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      double* gc = cc.grad().data();
      for (int64_t bI = 0; bI < B; ++bI) {
        for (int64_t g = 0; g < groups; ++g) {
          const double* src = go + (bI * groups + g) * d;
          for (int64_t i = 0; i < d; ++i) gc[bI * d + i] += src[i];
        }
      }
    });
  }
  return out;
}

void rope_rotate(std::span<double> head_vec, int pos) {
  const int64_t dh = static_cast<int64_t>(head_vec.size());
  for (int64_t j = 0; j * 2 < dh; ++j) {
    const double theta =
        static_cast<double>(pos) * std::pow(10000.0, -2.0 * static_cast<double>(j) /
                                                         static_cast<double>(dh));
    const double c = std::cos(theta), s = std::sin(theta);
    const double x = head_vec[2 * j], y = head_vec[2 * j + 1];
    head_vec[2 * j] = x * c - y * s;
    head_vec[2 * j + 1] = x * s + y * c;
  }
}

namespace {
void rope_rotate_buf(double* buf, int64_t G, int64_t S, int64_t heads, int64_t dh,
                     const std::vector<int>& pos, bool inverse) {
  for (int64_t g = 0; g < G; ++g) {
    for (int64_t s = 0; s < S; ++s) {
      const int p = inverse ? -pos[static_cast<size_t>(s)] : pos[static_cast<size_t>(s)];
      for (int64_t h = 0; h < heads; ++h) {
        double* v = buf + ((g * S + s) * heads + h) * dh;
        rope_rotate(std::span<double>(v, static_cast<size_t>(dh)), p);
      }
    }
  }
}
}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const std::vector<int>& rope_q, const std::vector<int>& rope_k) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("attention: q/k/v must be rank 3 [groups, seq, dim]");
  }
  const int64_t G = q.dim(0), Sq = q.dim(1), D = q.dim(2);
  const int64_t Sk = k.dim(1);
  if (k.dim(0) != G || v.dim(0) != G) throw ShapeError("attention: group dims differ");
  if (k.dim(2) != D || v.dim(2) != D) throw ShapeError("attention: model dims differ");
  if (v.dim(1) != Sk) throw ShapeError("attention: k/v sequence dims differ");
  if (heads <= 0 || D % heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(D) + " not divisible by heads " +
                     std::to_string(heads));
  }
  const int64_t dh = D / heads;
  const bool use_rope = !rope_q.empty() || !rope_k.empty();
  if (use_rope) {
    if (static_cast<int64_t>(rope_q.size()) != Sq || static_cast<int64_t>(rope_k.size()) != Sk) {
      throw ShapeError("attention: rope position counts must match sequence lengths");
    }
    if (dh % 2 != 0) throw ShapeError("attention: rope requires even head dim");
  }
  if (g_attn_stats_on) g_attn_stats.push_back({G, Sq, Sk});

  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

  // rotated copies of q and k (the rotation is the identity without rope)
  auto qr = std::make_shared<std::vector<double>>(q.data().begin(), q.data().end());
  auto kr = std::make_shared<std::vector<double>>(k.data().begin(), k.data().end());
  if (use_rope) {
    rope_rotate_buf(qr->data(), G, Sq, heads, dh, rope_q, false);
    rope_rotate_buf(kr->data(), G, Sk, heads, dh, rope_k, false);
  }

  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(G * heads * Sq * Sk));
  Tensor out = Tensor::zeros({G, Sq, D});
  const double* pv = v.data().data();
  double* po = out.data().data();
  std::vector<double> row(static_cast<size_t>(Sk));
  for (int64_t g = 0; g < G; ++g) {
    for (int64_t h = 0; h < heads; ++h) {
      for (int64_t i = 0; i < Sq; ++i) {
        const double* qv = qr->data() + ((g * Sq + i) * heads + h) * dh;
        for (int64_t j = 0; j < Sk; ++j) {
          const double* kv = kr->data() + ((g * Sk + j) * heads + h) * dh;
          double dot = 0.0;
          for (int64_t e = 0; e < dh; ++e) dot += qv[e] * kv[e];
          row[static_cast<size_t>(j)] = dot * scl;
        }
        softmax_row(row.data(), Sk);
        double* prow = probs->data() + (((g * heads + h) * Sq) + i) * Sk;
        std::copy(row.begin(), row.end(), prow);
        double* orow = po + (g * Sq + i) * D + h * dh;
        for (int64_t e = 0; e < dh; ++e) orow[e] = 0.0;
        for (int64_t j = 0; j < Sk; ++j) {
          const double p = prow[j];
          const double* vv = pv + (g * Sk + j) * D + h * dh;
          for (int64_t e = 0; e < dh; ++e) orow[e] += p * vv[e];
        }
      }
    }
  }
  finish("attention", out);
  if (taping({&q, &k, &v})) {
    out.set_requires_grad(true);
    Tensor qc = q, kc = k, vc = v, oc = out;
    auto rq = std::make_shared<std::vector<int>>(rope_q);
    auto rk = std::make_shared<std::vector<int>>(rope_k);
    Tape::active()->record([qc, kc, vc, oc, qr, kr, probs, rq, rk, G, Sq, Sk, D, heads, dh, scl,
                            use_rope]() mutable {
      const double* go = op_incoming_grad(oc);
      if (!go) return;
      const double* pv2 = vc.data().data();
      std::vector<double> dqr(qc.requires_grad() ? static_cast<size_t>(G * Sq * D) : 0, 0.0);
      std::vector<double> dkr(kc.requires_grad() ? static_cast<size_t>(G * Sk * D) : 0, 0.0);
      double* gv = vc.requires_grad() ? vc.grad().data() : nullptr;
      std::vector<double> dp(static_cast<size_t>(Sk));
      for (int64_t g = 0; g < G; ++g) {
        for (int64_t h = 0; h < heads; ++h) {
          for (int64_t i = 0; i < Sq; ++i) {
            const double* grow = go + (g * Sq + i) * D + h * dh;
            const double* prow = probs->data() + (((g * heads + h) * Sq) + i) * Sk;
            // dp_j = <dout, v_j>, dv_j += p_j dout
            double pdp = 0.0;
            for (int64_t j = 0; j < Sk; ++j) {
              const double* vv = pv2 + (g * Sk + j) * D + h * dh;
              double acc = 0.0;
              for (int64_t e = 0; e < dh; ++e) acc += grow[e] * vv[e];
              dp[static_cast<size_t>(j)] = acc;
              pdp += acc * prow[j];
              if (gv) {
                double* gvr = gv + (g * Sk + j) * D + h * dh;
                for (int64_t e = 0; e < dh; ++e) gvr[e] += prow[j] * grow[e];
              }
            }
            // ds_j = p_j (dp_j - sum_k p_k dp_k); dq += scl ds_j k_j; dk_j += scl ds_j q_i
            const double* qv = qr->data() + ((g * Sq + i) * heads + h) * dh;
            for (int64_t j = 0; j < Sk; ++j) {
              const double ds = prow[j] * (dp[static_cast<size_t>(j)] - pdp) * scl;
              if (ds == 0.0) continue;
              const double* kv = kr->data() + ((g * Sk + j) * heads + h) * dh;
              if (!dqr.empty()) {
                double* dq = dqr.data() + ((g * Sq + i) * heads + h) * dh;
                for (int64_t e = 0; e < dh; ++e) dq[e] += ds * kv[e];
              }
              if (!dkr.empty()) {
                double* dk = dkr.data() + ((g * Sk + j) * heads + h) * dh;
                for (int64_t e = 0; e < dh; ++e) dk[e] += ds * qv[e];
              }
            }
          }
        }
      }
      if (!dqr.empty()) {
        if (use_rope) rope_rotate_buf(dqr.data(), G, Sq, heads, dh, *rq, true);
        double* gq = qc.grad().data();
        for (size_t i = 0; i < dqr.size(); ++i) gq[i] += dqr[i];
      }
      if (!dkr.empty()) {
        if (use_rope) rope_rotate_buf(dkr.data(), G, Sk, heads, dh, *rk, true);
        double* gk = kc.grad().data();
        for (size_t i = 0; i < dkr.size(); ++i) gk[i] += dkr[i];
      }
    });
  }
  return out;
}

Tensor multi_head_attention(const Tensor& q_src, const Tensor& kv_src, const Tensor& qkv_w,
                            const Tensor& qkv_b, const Tensor& out_w, const Tensor& out_b,
                            int heads, const std::vector<int>& rope_q,
                            const std::vector<int>& rope_kv) {
  if (q_src.rank() != 3 || kv_src.rank() != 3) {
    throw ShapeError("multi_head_attention: sources must be rank 3");
  }
  if (q_src.dim(0) != kv_src.dim(0) || q_src.dim(2) != kv_src.dim(2)) {
    throw ShapeError("multi_head_attention: batch/model dims differ between q and kv source");
  }
  const int64_t D = q_src.dim(2);
  const bool self_attn = q_src.impl() == kv_src.impl();
  Tensor q_proj = linear(q_src, qkv_w, qkv_b);
  Tensor q = slice(q_proj, 2, 0, D);
  Tensor kv_proj = self_attn ? q_proj : linear(kv_src, qkv_w, qkv_b);
  Tensor k = slice(kv_proj, 2, D, D);
  Tensor v = slice(kv_proj, 2, 2 * D, D);
  Tensor mixed = attention(q, k, v, heads, rope_q, rope_kv);
  return linear(mixed, out_w, out_b);
}

Tensor randn(Shape shape, Rng& rng, double sigma, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = quantize_f32(rng.normal() * sigma);
  return t;
}

Tensor trunc_normal(Shape shape, Rng& rng, double sigma, bool requires_grad) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.data()) v = quantize_f32(rng.trunc_normal(sigma));
  return t;
}

}  // namespace latte
