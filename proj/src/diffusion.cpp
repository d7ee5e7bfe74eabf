#include "latte/diffusion.hpp"

#include <cmath>

#include "latte/ops.hpp"
#include "latte/rng.hpp"

namespace latte {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule needs at least one step");
  DiffusionSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double b = steps == 1
                         ? beta_start
                         : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                               static_cast<double>(steps - 1);
    s.beta[i] = b;
    s.alpha[i] = 1.0 - b;
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  s.posterior_var.resize(steps);
  s.posterior_log_var.resize(steps);
  s.posterior_mean_z0.resize(steps);
  s.posterior_mean_zt.resize(steps);
  for (int i = 0; i < steps; ++i) {
    const double abar = s.alpha_bar[i];
    const double abar_prev = i == 0 ? 1.0 : s.alpha_bar[i - 1];
    s.posterior_var[i] = s.beta[i] * (1.0 - abar_prev) / (1.0 - abar);
    s.posterior_mean_z0[i] = s.beta[i] * std::sqrt(abar_prev) / (1.0 - abar);
    s.posterior_mean_zt[i] = std::sqrt(s.alpha[i]) * (1.0 - abar_prev) / (1.0 - abar);
  }
  // the t=1 posterior variance is exactly zero; its log slot borrows the t=2
  // value so the learned interpolation stays finite
  for (int i = 0; i < steps; ++i) {
    double v = s.posterior_var[i];
    if (i == 0) v = steps > 1 ? s.posterior_var[1] : s.beta[0];
    s.posterior_log_var[i] = std::log(v);
  }
  return s;
}

void DiffusionSchedule::check_t(int t) const {
  if (t < 1 || t > steps) {
    throw ConfigError("timestep " + std::to_string(t) + " outside [1," + std::to_string(steps) +
                      "]");
  }
}

double DiffusionSchedule::alpha_bar_prev(int t) const {
  check_t(t);
  return t == 1 ? 1.0 : alpha_bar[static_cast<size_t>(t - 2)];
}

Tensor q_sample(const DiffusionSchedule& sched, const Tensor& z0, std::span<const int> t,
                const Tensor& eps) {
  if (z0.shape() != eps.shape()) throw ShapeError("q_sample: z0/eps shapes differ");
  if (static_cast<int64_t>(t.size()) != z0.dim(0)) {
    throw ShapeError("q_sample: timestep count != batch");
  }
  std::vector<double> s0(t.size()), se(t.size());
  for (size_t i = 0; i < t.size(); ++i) {
    sched.check_t(t[i]);
    const double abar = sched.alpha_bar[static_cast<size_t>(t[i] - 1)];
    s0[i] = std::sqrt(abar);
    se[i] = std::sqrt(1.0 - abar);
  }
  return add(scale_rows(z0, s0), scale_rows(eps, se));
}

Tensor loss_simple(const Tensor& eps, const Tensor& eps_pred) { return mse(eps, eps_pred); }

Tensor model_log_variance(const DiffusionSchedule& sched, int t, const Tensor& var_raw) {
  sched.check_t(t);
  const double log_beta = std::log(sched.beta[static_cast<size_t>(t - 1)]);
  const double log_tilde = sched.posterior_log_var[static_cast<size_t>(t - 1)];
  // frac in [0,1] from raw value in [-1,1]
  Tensor frac = clamp_elem(scale(add_scalar(var_raw, 1.0), 0.5), 0.0, 1.0);
  return add_scalar(scale(frac, log_beta - log_tilde), log_tilde);
}

Tensor model_mean_from_eps(const DiffusionSchedule& sched, int t, const Tensor& z_t,
                           const Tensor& eps_pred) {
  sched.check_t(t);
  const size_t i = static_cast<size_t>(t - 1);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[i]);
  const double eps_coef = sched.beta[i] / std::sqrt(1.0 - sched.alpha_bar[i]);
  return scale(sub(z_t, scale(eps_pred, eps_coef)), inv_sqrt_alpha);
}

namespace {

// per-sample vlb term on [1, ...] slices; mean over elements
Tensor vlb_one(const DiffusionSchedule& sched, const Tensor& z0, const Tensor& z_t, int t,
               const Tensor& eps_pred, const Tensor& var_raw) {
  const size_t i = static_cast<size_t>(t - 1);
  Tensor mu_p = model_mean_from_eps(sched, t, z_t, detach(eps_pred));
  Tensor log_var_p = model_log_variance(sched, t, var_raw);
  Tensor inv_var_p = exp_elem(scale(log_var_p, -1.0));
  if (t == 1) {
    // -log p(z0 | z1), Gaussian with the learned variance
    Tensor d = sub(z0, mu_p);
    Tensor quad = mul(mul(d, d), inv_var_p);
    Tensor nll = scale(add_scalar(add(log_var_p, quad), kLog2Pi), 0.5);
    return mean_all(nll);
  }
  const double var_q = sched.posterior_var[i];
  const double log_var_q = std::log(var_q);
  Tensor mu_q =
      add(scale(z0, sched.posterior_mean_z0[i]), scale(z_t, sched.posterior_mean_zt[i]));
  Tensor dmu = sub(mu_q, mu_p);
  Tensor quad = mul(add_scalar(mul(dmu, dmu), var_q), inv_var_p);
  Tensor kl = scale(add_scalar(add(log_var_p, quad), -log_var_q - 1.0), 0.5);
  return mean_all(kl);
}

}  // namespace

Tensor loss_vlb(const DiffusionSchedule& sched, const Tensor& z0, const Tensor& z_t,
                std::span<const int> t, const Tensor& eps_pred, const Tensor& var_raw) {
  const int64_t B = z0.dim(0);
  if (static_cast<int64_t>(t.size()) != B) throw ShapeError("loss_vlb: timestep count != batch");
  Tensor total = Tensor::scalar(0.0);
  for (int64_t b = 0; b < B; ++b) {
    Tensor term = vlb_one(sched, slice(z0, 0, b, 1), slice(z_t, 0, b, 1), t[static_cast<size_t>(b)],
                          slice(eps_pred, 0, b, 1), slice(var_raw, 0, b, 1));
    total = add(total, term);
  }
  return scale(total, 1.0 / static_cast<double>(B));
}

Tensor p_sample_loop(const DenoiseFn& model, const DiffusionSchedule& sched, Shape shape,
                     uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5a3f));
  Tensor z = Tensor::zeros(shape);
  for (double& v : z.data()) v = rng.normal();
  for (int t = sched.steps; t >= 1; --t) {
    try {
      DenoiserOut out = model(z, t);
      if (out.eps.shape() != z.shape() || out.var_raw.shape() != z.shape()) {
        throw ShapeError("p_sample_loop: model output shape mismatch at step " +
                         std::to_string(t));
      }
      Tensor mu = model_mean_from_eps(sched, t, z, out.eps);
      if (t == 1) {
        z = mu;
      } else {
        Tensor log_var = model_log_variance(sched, t, out.var_raw);
        Tensor next = Tensor::zeros(shape);
        auto pm = mu.data();
        auto pl = log_var.data();
        auto pn = next.data();
        for (int64_t i = 0; i < z.numel(); ++i) {
          pn[i] = pm[i] + std::exp(0.5 * pl[i]) * rng.normal();
        }
        z = next;
      }
    } catch (const NumericError& e) {
      throw NumericError("p_sample_loop", std::string(e.what()) + " at sampling step " +
                                              std::to_string(t));
    }
    for (double v : z.data()) {
      if (!std::isfinite(v)) {
        throw NumericError("p_sample_loop",
                           "non-finite sample at sampling step " + std::to_string(t));
      }
    }
  }
  return z;
}

EmaState EmaState::init(std::span<const std::pair<std::string, Tensor>> params, double decay) {
  EmaState s;
  s.decay = decay;
  s.shadow.reserve(params.size());
  for (const auto& [name, t] : params) {
    s.shadow.emplace_back(t.data().begin(), t.data().end());
  }
  return s;
}

void EmaState::update(std::span<const std::pair<std::string, Tensor>> params) {
  if (params.size() != shadow.size()) throw ShapeError("ema: parameter count changed");
  for (size_t p = 0; p < params.size(); ++p) {
    const auto src = params[p].second.data();
    auto& sh = shadow[p];
    if (sh.size() != src.size()) throw ShapeError("ema: shape mismatch for " + params[p].first);
    for (size_t i = 0; i < sh.size(); ++i) {
      sh[i] = quantize_f32(decay * sh[i] + (1.0 - decay) * src[i]);
    }
  }
}

void EmaState::write_to(std::span<const std::pair<std::string, Tensor>> params) const {
  if (params.size() != shadow.size()) throw ShapeError("ema: parameter count changed");
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    auto dst = t.data();
    if (shadow[p].size() != dst.size()) throw ShapeError("ema: shape mismatch");
    std::copy(shadow[p].begin(), shadow[p].end(), dst.begin());
  }
}

void AdamW::init(std::span<const std::pair<std::string, Tensor>> params) {
  m.clear();
  v.clear();
  steps_taken = 0;
  for (const auto& [name, t] : params) {
    m.emplace_back(t.numel(), 0.0);
    v.emplace_back(t.numel(), 0.0);
  }
}

void AdamW::step(std::span<const std::pair<std::string, Tensor>> params) {
  if (m.size() != params.size()) throw ShapeError("adamw: optimizer not initialized");
  ++steps_taken;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps_taken));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps_taken));
  for (size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    auto g = t.grad_view();
    auto data = t.data();
    auto& mp = m[p];
    auto& vp = v[p];
    for (size_t i = 0; i < data.size(); ++i) {
      const double gi = g.empty() ? 0.0 : g[i];  // disconnected parameters have zero gradient
      mp[i] = quantize_f32(beta1 * mp[i] + (1.0 - beta1) * gi);
      vp[i] = quantize_f32(beta2 * vp[i] + (1.0 - beta2) * gi * gi);
      const double mhat = mp[i] / bc1;
      const double vhat = vp[i] / bc2;
      data[i] = quantize_f32(data[i] - lr * (mhat / (std::sqrt(vhat) + eps) +
                                             weight_decay * data[i]));
    }
  }
}

}  // namespace latte
