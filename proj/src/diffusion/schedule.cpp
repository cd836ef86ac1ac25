#include "lamino/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "lamino/error.hpp"

namespace lamino::nn {

namespace {

void check_t(const NoiseSchedule& s, int t, int lo) {
  require(t >= lo && t <= s.T, ErrorCategory::numeric,
          "timestep " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " + std::to_string(s.T) + "]");
}

void same_len(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCategory::shape, "image and noise differ in size");
}

}  // namespace

double NoiseSchedule::beta_at(int t) const {
  check_t(*this, t, 1);
  return beta[static_cast<std::size_t>(t)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  check_t(*this, t, 0);
  return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule build_schedule(int T, double beta_min, double beta_max) {
  require(T >= 1, ErrorCategory::config, "schedule needs at least one step");
  require(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0, ErrorCategory::config,
          "beta range must satisfy 0 < beta_min <= beta_max < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(static_cast<std::size_t>(T) + 1, 0.0);
  s.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
  s.alpha_bar.assign(static_cast<std::size_t>(T) + 1, 1.0);
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    s.beta[t] = beta_min + frac * (beta_max - beta_min);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

std::vector<double> forward_diffuse(std::span<const double> x0, double alpha_bar, std::span<const double> eps) {
  same_len(x0, eps);
  require(alpha_bar >= 0.0 && alpha_bar <= 1.0, ErrorCategory::numeric, "alpha_bar must lie in [0, 1]");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<double> forward_diffuse(std::span<const double> x0, int t, std::span<const double> eps,
                                    const NoiseSchedule& sched) {
  check_t(sched, t, 1);
  return forward_diffuse(x0, sched.alpha_bar[static_cast<std::size_t>(t)], eps);
}

std::vector<double> time_embedding(double t, int d) {
  require(d >= 2 && d % 2 == 0, ErrorCategory::config, "time embedding dimension must be even");
  const int half = d / 2;
  std::vector<double> e(static_cast<std::size_t>(d));
  for (int i = 0; i < half; ++i) {
    const double w = half == 1 ? 1.0 : std::pow(10000.0, -static_cast<double>(i) / (half - 1));
    e[2 * i] = std::sin(t * w);
    e[2 * i + 1] = std::cos(t * w);
  }
  return e;
}

std::vector<double> score_estimate(std::span<const double> eps_hat, double alpha_bar) {
  require(alpha_bar < 1.0 && alpha_bar >= 0.0, ErrorCategory::numeric, "score undefined for alpha_bar = 1");
  const double k = -1.0 / std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(eps_hat.size());
  for (std::size_t i = 0; i < eps_hat.size(); ++i) out[i] = k * eps_hat[i];
  return out;
}

std::vector<double> predict_x0(std::span<const double> x_t, std::span<const double> eps_hat, double alpha_bar) {
  same_len(x_t, eps_hat);
  require(alpha_bar > 0.0 && alpha_bar <= 1.0, ErrorCategory::numeric, "alpha_bar must lie in (0, 1]");
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = (x_t[i] - b * eps_hat[i]) / a;
  return out;
}

std::vector<double> reverse_mean(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                                 const NoiseSchedule& sched) {
  same_len(x_t, eps_hat);
  check_t(sched, t, 1);
  const double beta = sched.beta[t], ab = sched.alpha_bar[t];
  const double k = beta / std::sqrt(1.0 - ab), inv = 1.0 / std::sqrt(sched.alpha[t]);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = inv * (x_t[i] - k * eps_hat[i]);
  return out;
}

std::vector<double> posterior_mean(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                                   const NoiseSchedule& sched) {
  check_t(sched, t, 1);
  const double ab = sched.alpha_bar[t], ab_prev = sched.alpha_bar[t - 1], beta = sched.beta[t];
  const auto x0 = predict_x0(x_t, eps_hat, ab);
  const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
  const double ct = std::sqrt(sched.alpha[t]) * (1.0 - ab_prev) / (1.0 - ab);
  std::vector<double> out(x_t.size());
  for (std::size_t i = 0; i < x_t.size(); ++i) out[i] = c0 * x0[i] + ct * x_t[i];
  return out;
}

}  // namespace lamino::nn
