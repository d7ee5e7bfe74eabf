#include <doctest.h>

#include <cmath>

#include "latte/analysis.hpp"
#include "latte/ops.hpp"
#include "support.hpp"

using namespace latte;
using latte::test::rand_tensor;

TEST_CASE("parameter counts reproduce the published model sizes") {
  const struct {
    const char* name;
    double published_m;
  } cases[] = {{"s", 32.48}, {"b", 129.54}, {"l", 456.81}, {"xl", 673.68}};
  for (const auto& c : cases) {
    ModelConfig cfg = paper_config(c.name, 1);
    const double params_m = static_cast<double>(count_params(cfg)) / 1e6;
    CHECK(std::fabs(params_m - c.published_m) / c.published_m < 0.02);
    // the closed form lands within the table's two-decimal quantization
    CHECK(std::fabs(params_m - c.published_m) < 0.01);
  }
}

TEST_CASE("variants 1 and 2 cost exactly the same") {
  for (const char* size : {"s", "xl"}) {
    ModelConfig c1 = paper_config(size, 1);
    ModelConfig c2 = paper_config(size, 2);
    CHECK(count_params(c1) == count_params(c2));
    CostReport r1 = estimate_flops(c1);
    CostReport r2 = estimate_flops(c2);
    CHECK(r1.flops_forward == r2.flops_forward);  // byte-identical
    CHECK(r1.params == r2.params);
  }
}

TEST_CASE("variant 3 and 4 counts and ratios sit in the published bands") {
  ModelConfig c1 = paper_config("xl", 1);
  ModelConfig c3 = paper_config("xl", 3);
  ModelConfig c4 = paper_config("xl", 4);
  CHECK(c3.layers == 23);  // depth equalized against 28 interleaved blocks
  CHECK(c4.layers == 23);
  const double p1 = static_cast<double>(count_params(c1));
  const double p3 = static_cast<double>(count_params(c3));
  const double p4 = static_cast<double>(count_params(c4));
  CHECK(p3 > p1);
  CHECK(p4 > p1);
  CHECK((p3 - p1) / p1 < 0.01);
  CHECK((p4 - p1) / p1 < 0.01);

  const double f1 = estimate_flops(c1).flops_forward;
  const double f3 = estimate_flops(c3).flops_forward;
  const double f4 = estimate_flops(c4).flops_forward;
  CHECK(f3 / f1 >= 1.05);
  CHECK(f3 / f1 <= 1.16);
  CHECK(f4 / f1 >= 0.20);
  CHECK(f4 / f1 <= 0.35);
}

TEST_CASE("cost breakdowns sum to their totals") {
  for (int variant : {1, 3, 4}) {
    ModelConfig cfg = paper_config("s", variant);
    CostReport r = estimate_flops(cfg);
    CHECK(r.flops_by_part.total() == doctest::Approx(r.flops_forward).epsilon(1e-12));
    CHECK(r.params_by_part.total() == doctest::Approx(static_cast<double>(r.params)).epsilon(1e-12));
  }
}

TEST_CASE("count_params equals allocated weights for paper presets") {
  // large presets stay analytic; a scaled-down clone is allocated and counted
  ModelConfig cfg = paper_config("s", 1);
  cfg.layers = 4;
  cfg.hidden = 32;
  cfg.heads = 4;
  cfg.frames = 4;
  cfg.latent_h = cfg.latent_w = 8;
  Model m = build_model(cfg, 1);
  CHECK(m.param_count() == count_params(cfg));
}

TEST_CASE("frechet distance matches the three analytic one-dimensional cases") {
  GaussianStats std_normal{{0.0}, {1.0}, 1000};
  GaussianStats shifted{{1.0}, {1.0}, 1000};
  GaussianStats wide{{0.0}, {4.0}, 1000};
  CHECK(std::fabs(frechet_distance(std_normal, std_normal)) < 1e-6);
  CHECK(frechet_distance(std_normal, shifted) == doctest::Approx(1.0).epsilon(1e-9));
  // 1 + 4 - 2*sqrt(4) = 1
  CHECK(frechet_distance(std_normal, wide) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("frechet distance symmetry and mean-shift monotonicity properties") {
  Rng rng(51);
  for (int trial = 0; trial < 1000; ++trial) {
    const int64_t d = 1 + rng.below(5);
    // random PSD covariances via M M^T + small ridge
    auto make_stats = [&](double shift) {
      GaussianStats g;
      g.count = 100;
      g.mean.resize(static_cast<size_t>(d));
      for (double& v : g.mean) v = rng.normal() + shift;
      std::vector<double> m(static_cast<size_t>(d * d));
      for (double& v : m) v = rng.normal();
      g.cov.assign(static_cast<size_t>(d * d), 0.0);
      for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = 0; j < d; ++j) {
          double acc = i == j ? 0.05 : 0.0;
          for (int64_t k = 0; k < d; ++k) {
            acc += m[static_cast<size_t>(i * d + k)] * m[static_cast<size_t>(j * d + k)];
          }
          g.cov[static_cast<size_t>(i * d + j)] = acc;
        }
      }
      return g;
    };
    GaussianStats a = make_stats(0.0);
    GaussianStats b = make_stats(0.5);
    const double ab = frechet_distance(a, b);
    const double ba = frechet_distance(b, a);
    CHECK(std::fabs(ab - ba) < 1e-9);
    CHECK(ab > -1e-9);

    // growing the mean gap at fixed covariances grows the distance
    GaussianStats b_far = b;
    for (size_t i = 0; i < b_far.mean.size(); ++i) {
      b_far.mean[i] = a.mean[i] + 3.0 * (b.mean[i] - a.mean[i]);
    }
    CHECK(frechet_distance(a, b_far) > ab - 1e-12);
  }
}

TEST_CASE("frechet distance rejects bad inputs") {
  GaussianStats a{{0.0}, {1.0}, 10};
  GaussianStats b{{0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}, 10};
  CHECK_THROWS_AS(frechet_distance(a, b), ShapeError);
  GaussianStats indef{{0.0, 0.0}, {1.0, 0.0, 0.0, -0.5}, 10};
  CHECK_THROWS_AS(frechet_distance(indef, b), ConfigError);
}

TEST_CASE("gaussian_stats estimates mean and covariance") {
  std::vector<std::vector<double>> samples = {{1.0, 0.0}, {3.0, 2.0}, {5.0, 4.0}};
  GaussianStats g = gaussian_stats(samples);
  CHECK(g.mean[0] == doctest::Approx(3.0));
  CHECK(g.mean[1] == doctest::Approx(2.0));
  CHECK(g.cov[0] == doctest::Approx(4.0));  // unbiased
  CHECK(g.cov[3] == doctest::Approx(4.0));
  CHECK(g.cov[1] == doctest::Approx(4.0));
  CHECK(g.count == 3);
}

TEST_CASE("temporal coherence: static, noise and constant-frame edge cases") {
  Rng rng(61);
  Tensor frame = rand_tensor({1, 16, 16, 1}, rng);
  Tensor still = concat({frame, frame, frame}, 0);
  CHECK(temporal_coherence(still) == doctest::Approx(1.0));

  Tensor noise = rand_tensor({4, 32, 32, 1}, rng);
  CHECK(std::fabs(temporal_coherence(noise)) < 0.05);

  // identical constant frames count as 1
  Tensor flat = Tensor::full({2, 8, 8, 1}, 0.25);
  CHECK(temporal_coherence(flat) == doctest::Approx(1.0));

  // constant vs varying frame: the pair is skipped
  Tensor mixed = Tensor::zeros({3, 8, 8, 1});
  auto d = mixed.data();
  for (int64_t i = 0; i < 64; ++i) {
    d[64 + i] = rng.normal();   // frame 1 varies
    d[128 + i] = d[64 + i];     // frame 2 repeats it
  }
  CHECK(temporal_coherence(mixed) == doctest::Approx(1.0));  // only pair (1,2) counts

  CHECK_THROWS_AS(temporal_coherence(rand_tensor({1, 8, 8, 1}, rng)), ShapeError);
}
