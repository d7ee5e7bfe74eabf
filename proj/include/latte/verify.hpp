#pragma once

#include <functional>
#include <string>
#include <vector>

#include "latte/backbone.hpp"

namespace latte {

// Dense plain-loop recomputations, independent of the fused kernels. Used by
// the oracle-equivalence suites and by tests.
namespace oracle {

// softmax(q k^T / sqrt(dh)) v per head, with optional rotary positions.
std::vector<double> attention(const std::vector<double>& q, const std::vector<double>& k,
                              const std::vector<double>& v, int64_t groups, int64_t sq,
                              int64_t sk, int64_t d, int heads,
                              const std::vector<int>& rope_q = {},
                              const std::vector<int>& rope_k = {});

// Full block recomputation in scalar loops (reads the same weight values).
std::vector<double> block_forward(const ModelConfig& cfg, const BlockWeights& bw,
                                  const std::vector<double>& x, const std::vector<double>& c,
                                  int64_t batch, int64_t n_f, int64_t t);

}  // namespace oracle

// Max relative gradient error of autodiff vs central finite differences over
// every element of every parameter. `fwd` must rebuild the graph from the
// current parameter values on each call.
double max_rel_grad_err(const std::function<Tensor()>& fwd, std::vector<Tensor> params,
                        double h = 1e-5);

struct SuiteResult {
  std::string name;
  std::vector<std::string> failures;
  bool passed() const { return failures.empty(); }
};

// Runs verification suites whose names contain `filter` (all when empty):
// grad.ops, grad.blocks, oracle.attention, oracle.blocks, prop.softmax,
// prop.rope, prop.codec, prop.schedule, prop.params. Forces f64 mode.
std::vector<SuiteResult> run_verification(const std::string& filter = "");

}  // namespace latte
