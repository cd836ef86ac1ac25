#pragma once

#include <span>
#include <vector>

namespace lamino::nn {

/// Variance schedule indexed by timestep t = 1..T. Index 0 of each vector
/// holds the t = 0 boundary (beta 0, alpha_bar 1).
struct NoiseSchedule {
  int T = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta_at(int t) const;
  /// alpha_bar(0) = 1.
  double alpha_bar_at(int t) const;
};

/// Linear beta ramp from beta_min (t = 1) to beta_max (t = T).
NoiseSchedule build_schedule(int T = 1000, double beta_min = 1e-4, double beta_max = 0.02);

/// x_t = sqrt(ab) x0 + sqrt(1 - ab) eps.
std::vector<double> forward_diffuse(std::span<const double> x0, int t, std::span<const double> eps,
                                    const NoiseSchedule& sched);
std::vector<double> forward_diffuse(std::span<const double> x0, double alpha_bar, std::span<const double> eps);

/// Interleaved (sin, cos) pairs; pair i uses frequency 10000^(-i / (d/2 - 1)).
std::vector<double> time_embedding(double t, int d);

/// -eps_hat / sqrt(1 - alpha_bar).
std::vector<double> score_estimate(std::span<const double> eps_hat, double alpha_bar);

/// Clean-image estimate (x_t - sqrt(1 - ab) eps) / sqrt(ab).
std::vector<double> predict_x0(std::span<const double> x_t, std::span<const double> eps_hat, double alpha_bar);

/// One-step reverse mean from the noise prediction:
/// (x_t - beta_t / sqrt(1 - ab_t) eps) / sqrt(alpha_t).
std::vector<double> reverse_mean(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                                 const NoiseSchedule& sched);

/// Gaussian posterior mean of q(x_{t-1} | x_t, x0) evaluated at x0 = predict_x0(x_t, eps_hat).
std::vector<double> posterior_mean(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                                   const NoiseSchedule& sched);

}  // namespace lamino::nn
