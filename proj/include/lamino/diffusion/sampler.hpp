#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lamino/diffusion/schedule.hpp"
#include "lamino/diffusion/unet.hpp"

namespace lamino::nn {

struct SamplerConfig {
  int n_steps = 50;
  double guidance_scale = 1.5;
  std::uint64_t rng_seed = 0;
  /// Clamp each clean-image estimate to [clip_min, clip_max] before stepping.
  /// Keeps small prediction errors at high noise levels from being amplified
  /// by 1/sqrt(alpha_bar). Narrow the range when the targets occupy only part
  /// of [-1, 1]; a symmetric clamp around data sitting at one end biases the
  /// early trajectory toward 0.
  bool clip_x0 = true;
  double clip_min = -1.0;
  double clip_max = 1.0;
};

void validate(const SamplerConfig& c, const NoiseSchedule& sched);

/// Strictly decreasing timesteps 1 + floor(i T / S), i = S-1 .. 0; the last is 1.
std::vector<int> ddim_timesteps(int T, int n_steps);

/// eps_u + s (eps_c - eps_u) with eps_c conditioned on (x_fdk, x_fus or zeros)
/// and eps_u on the null condition.
Tensor rectified_noise(DenoiserNet& net, const Tensor& x_t, int t, const Tensor& x_fdk, const Tensor* x_fus, double s);

/// Noise predictor for the generic sampler: (x_t, t) -> eps_hat.
using NoiseFn = std::function<std::vector<double>(const std::vector<double>& x_t, int t)>;

/// Deterministic DDIM trajectory starting from x_T ~ N(0, I) drawn with cfg.rng_seed.
/// Each step forms x0 = (x - sqrt(1 - ab) eps) / sqrt(ab), optionally clamped,
/// then x = sqrt(ab_prev) x0 + sqrt(1 - ab_prev) eps; the final ab_prev is 1.
std::vector<double> ddim_sample(const NoiseFn& eps_fn, std::size_t n_pixels, const NoiseSchedule& sched,
                                const SamplerConfig& cfg);

/// Restores (N, 1, H, W) slices conditioned on x_fdk (and x_fus if given).
Tensor ddim_sample(DenoiserNet& net, const Tensor& x_fdk, const Tensor* x_fus, const NoiseSchedule& sched,
                   const SamplerConfig& cfg);

/// Affine map between physical attenuation [lo, hi] and the network range [-1, 1].
struct IntensityNormalizer {
  double lo = 0.0;
  double hi = 1.0;

  static IntensityNormalizer fit(std::span<const double> values);
  double to_unit(double v) const { return 2.0 * (v - lo) / (hi - lo) - 1.0; }
  double from_unit(double u) const { return lo + 0.5 * (u + 1.0) * (hi - lo); }
  std::vector<double> to_unit(std::span<const double> v) const;
  std::vector<double> from_unit(std::span<const double> u) const;
};

}  // namespace lamino::nn
