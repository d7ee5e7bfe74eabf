#pragma once

#include <optional>
#include <vector>

#include "latte/rng.hpp"
#include "latte/tensor.hpp"

namespace latte {

// Elementwise (shapes must match exactly)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor exp_elem(const Tensor& a);
Tensor clamp_elem(const Tensor& a, double lo, double hi);
Tensor gelu(const Tensor& a);  // exact erf form
Tensor detach(const Tensor& a);

// y = x W + b over the last axis; x [..., in], W [in, out], b [out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]

Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, double eps);  // last axis, no affine

// Structure
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& x, int axis, int64_t start, int64_t len);

// Reductions
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mse(const Tensor& a, const Tensor& b);  // mean((a-b)^2)

// Per-sample broadcast helpers; x has leading batch axis B, vectors are [B, D]
// with D the trailing axis of x.
Tensor modulate(const Tensor& x, const Tensor& g, const Tensor& b);   // x*(1+g)+b
Tensor gate_add(const Tensor& x, const Tensor& br, const Tensor& a);  // x + a*br
Tensor affine(const Tensor& x, const Tensor& g, const Tensor& b);     // x*g+b, g/b [D]

// x [B, ...] scaled per leading index by constants s (no gradient into s)
Tensor scale_rows(const Tensor& x, const std::vector<double>& s);
// adds a constant-per-row table [S, D] to x [B, S, D]; table may carry grad
Tensor add_table(const Tensor& x, const Tensor& table);
// gathers rows of table [N, D] at idx, producing [B, D]
Tensor rows_select(const Tensor& table, const std::vector<int>& idx);
// tiles per-sample vectors [B, D] into [B*groups, 1, D]
Tensor repeat_groups(const Tensor& c, int64_t groups);

// Fused scaled-dot-product attention.
// q [G, Sq, D], k/v [G, Sk, D]; D % heads == 0. Optional rotary positions are
// applied to q and k per head before the dot products (head dim must be even).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                 const std::vector<int>& rope_q = {}, const std::vector<int>& rope_k = {});

// Full kernel: projects q from q_src and k,v from kv_src with a fused qkv
// weight, runs attention, applies the output projection.
Tensor multi_head_attention(const Tensor& q_src, const Tensor& kv_src, const Tensor& qkv_w,
                            const Tensor& qkv_b, const Tensor& out_w, const Tensor& out_b,
                            int heads, const std::vector<int>& rope_q = {},
                            const std::vector<int>& rope_kv = {});

// Rotates one head-sized vector in place by the rotary angle for `pos`.
void rope_rotate(std::span<double> head_vec, int pos);

// Test instrumentation: when enabled, records (groups, q_len, kv_len) for
// every attention call on this thread.
struct AttnCall {
  int64_t groups, q_len, kv_len;
};
void attn_stats_enable(bool on);
const std::vector<AttnCall>& attn_stats();
void attn_stats_clear();

// Seeded initializers (leaf tensors; values quantized through f32 so that
// checkpoints round-trip bit-exactly)
Tensor randn(Shape shape, Rng& rng, double sigma, bool requires_grad = false);
Tensor trunc_normal(Shape shape, Rng& rng, double sigma, bool requires_grad = false);

// Hooks for fused ops defined outside the core: apply the numeric mode plus
// finite check, and query whether the active tape wants the op recorded.
void op_epilogue(const char* op, Tensor& t);
bool op_taping(std::initializer_list<const Tensor*> inputs);
// Incoming gradient of an op output inside a backward closure; nullptr when
// no gradient ever reached it (e.g. the output only fed a detach).
const double* op_incoming_grad(const Tensor& t);

}  // namespace latte
