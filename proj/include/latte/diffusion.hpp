#pragma once

#include <functional>
#include <span>
#include <vector>

#include "latte/backbone.hpp"
#include "latte/tensor.hpp"

namespace latte {

// Linear-beta DDPM schedule with the derived posterior coefficients.
// Vectors are indexed by t-1 for t in [1, T].
struct DiffusionSchedule {
  int steps = 0;
  std::vector<double> beta, alpha, alpha_bar;
  std::vector<double> posterior_var;          // beta_tilde; exactly 0 at t=1
  std::vector<double> posterior_log_var;      // log of beta_tilde clipped at t=1
  std::vector<double> posterior_mean_z0;      // coefficient on z0
  std::vector<double> posterior_mean_zt;      // coefficient on z_t

  static DiffusionSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 2e-2);

  void check_t(int t) const;
  double alpha_bar_prev(int t) const;  // alpha_bar at t-1, defined as 1 at t=1
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, per-sample timesteps.
Tensor q_sample(const DiffusionSchedule& sched, const Tensor& z0, std::span<const int> t,
                const Tensor& eps);

Tensor loss_simple(const Tensor& eps, const Tensor& eps_pred);

// Per-element log variance of p_theta: var_raw in [-1, 1] interpolates between
// log beta_tilde_t and log beta_t in log space.
Tensor model_log_variance(const DiffusionSchedule& sched, int t, const Tensor& var_raw);

// mu_theta via the posterior-mean substitution of the predicted noise.
Tensor model_mean_from_eps(const DiffusionSchedule& sched, int t, const Tensor& z_t,
                           const Tensor& eps_pred);

// KL(q(z_{t-1}|z_t,z0) || p_theta) for t>1, Gaussian NLL of z0 under p_theta
// for t=1; mean over elements, averaged over the batch. The mean path is
// detached: only the variance head receives gradient.
Tensor loss_vlb(const DiffusionSchedule& sched, const Tensor& z0, const Tensor& z_t,
                std::span<const int> t, const Tensor& eps_pred, const Tensor& var_raw);

// Ancestral DDPM sampling. The callback evaluates the denoiser at (z_t, t);
// the final step adds no noise. Bit-deterministic per seed; a non-finite
// value aborts with the offending step in the message.
using DenoiseFn = std::function<DenoiserOut(const Tensor& z_t, int t)>;
Tensor p_sample_loop(const DenoiseFn& model, const DiffusionSchedule& sched, Shape shape,
                     uint64_t seed);

// Exponential moving average of parameter values. Shadows are quantized
// through f32 on every update so checkpoints round-trip exactly.
struct EmaState {
  double decay = 0.9999;
  std::vector<std::vector<double>> shadow;

  static EmaState init(std::span<const std::pair<std::string, Tensor>> params, double decay);
  void update(std::span<const std::pair<std::string, Tensor>> params);
  void write_to(std::span<const std::pair<std::string, Tensor>> params) const;
};

struct AdamW {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int64_t steps_taken = 0;
  std::vector<std::vector<double>> m, v;

  void init(std::span<const std::pair<std::string, Tensor>> params);
  // applies one update from the accumulated gradients; parameters and moments
  // are quantized through f32 afterwards
  void step(std::span<const std::pair<std::string, Tensor>> params);
};

}  // namespace latte
