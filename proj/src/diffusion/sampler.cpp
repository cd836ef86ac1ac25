#include "lamino/diffusion/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "lamino/error.hpp"

namespace lamino::nn {

void validate(const SamplerConfig& c, const NoiseSchedule& sched) {
  require(c.n_steps >= 1 && c.n_steps <= sched.T, ErrorCategory::config, "sampler steps must lie in [1, T]");
  require(c.guidance_scale >= 0.0 && std::isfinite(c.guidance_scale), ErrorCategory::config,
          "guidance scale must be finite and non-negative");
  require(std::isfinite(c.clip_min) && std::isfinite(c.clip_max) && c.clip_min < c.clip_max, ErrorCategory::config,
          "clip range must be finite with clip_min < clip_max");
}

std::vector<int> ddim_timesteps(int T, int n_steps) {
  require(n_steps >= 1 && n_steps <= T, ErrorCategory::config, "sampler steps must lie in [1, T]");
  std::vector<int> ts(static_cast<std::size_t>(n_steps));
  for (int i = 0; i < n_steps; ++i)
    ts[static_cast<std::size_t>(n_steps - 1 - i)] = 1 + static_cast<int>((static_cast<long long>(i) * T) / n_steps);
  return ts;
}

Tensor rectified_noise(DenoiserNet& net, const Tensor& x_t, int t, const Tensor& x_fdk, const Tensor* x_fus, double s) {
  require(s >= 0.0, ErrorCategory::config, "guidance scale must be non-negative");
  const std::vector<double> ts(static_cast<std::size_t>(x_t.dim(0)), static_cast<double>(t));
  Tensor cond = net.predict(x_t, x_fdk, x_fus, ts);
  const Tensor zeros(x_fdk.shape, 0.0);
  Tensor out = net.predict(x_t, zeros, nullptr, ts);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += s * (cond.data[i] - out.data[i]);
  return out;
}

namespace {

std::vector<double> initial_noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = g(rng);
  return x;
}

void ddim_step(std::vector<double>& x, const std::vector<double>& eps, double ab, double ab_prev,
               const SamplerConfig& cfg) {
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  const double ap = std::sqrt(ab_prev), bp = std::sqrt(1.0 - ab_prev);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double x0 = (x[i] - b * eps[i]) / a;
    if (cfg.clip_x0) x0 = std::clamp(x0, cfg.clip_min, cfg.clip_max);
    x[i] = ap * x0 + bp * eps[i];
  }
}

}  // namespace

std::vector<double> ddim_sample(const NoiseFn& eps_fn, std::size_t n_pixels, const NoiseSchedule& sched,
                                const SamplerConfig& cfg) {
  validate(cfg, sched);
  require(n_pixels > 0, ErrorCategory::shape, "nothing to sample");
  const auto ts = ddim_timesteps(sched.T, cfg.n_steps);
  std::vector<double> x = initial_noise(n_pixels, cfg.rng_seed);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const double ab_prev = i + 1 < ts.size() ? sched.alpha_bar_at(ts[i + 1]) : 1.0;
    const auto eps = eps_fn(x, t);
    require(eps.size() == x.size(), ErrorCategory::shape, "noise predictor returned the wrong size");
    ddim_step(x, eps, sched.alpha_bar_at(t), ab_prev, cfg);
  }
  return x;
}

Tensor ddim_sample(DenoiserNet& net, const Tensor& x_fdk, const Tensor* x_fus, const NoiseSchedule& sched,
                   const SamplerConfig& cfg) {
  require(x_fdk.rank() == 4 && x_fdk.dim(1) == 1, ErrorCategory::shape, "condition must be (N, 1, H, W)");
  net.check_schedule(sched);
  NoiseFn fn = [&](const std::vector<double>& x, int t) {
    return rectified_noise(net, Tensor(x_fdk.shape, x), t, x_fdk, x_fus, cfg.guidance_scale).data;
  };
  return Tensor(x_fdk.shape, ddim_sample(fn, x_fdk.numel(), sched, cfg));
}

IntensityNormalizer IntensityNormalizer::fit(std::span<const double> values) {
  require(!values.empty(), ErrorCategory::shape, "cannot fit a normaliser to no data");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  IntensityNormalizer n{*lo, *hi};
  if (!(n.hi > n.lo)) n.hi = n.lo + 1.0;
  return n;
}

std::vector<double> IntensityNormalizer::to_unit(std::span<const double> v) const {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = to_unit(v[i]);
  return out;
}

std::vector<double> IntensityNormalizer::from_unit(std::span<const double> u) const {
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = from_unit(u[i]);
  return out;
}

}  // namespace lamino::nn
