#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "latte/ops.hpp"
#include "latte/rng.hpp"
#include "latte/tensor.hpp"

namespace latte::test {

// forces f64 for a scope; most numeric checks assume it
struct F64Scope {
  Precision prev;
  F64Scope() : prev(precision()) { set_precision(Precision::f64); }
  ~F64Scope() { set_precision(prev); }
};

inline Tensor rand_tensor(Shape s, Rng& rng, double sigma = 1.0, bool grad = false) {
  Tensor t = Tensor::zeros(std::move(s), grad);
  for (double& v : t.data()) v = rng.normal() * sigma;
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  }
  return worst;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (a.data()[i] != b.data()[i]) return false;
  }
  return true;
}

}  // namespace latte::test
