#include "lamino/diffusion/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "lamino/error.hpp"

namespace lamino::nn {

void validate(const TrainConfig& c) {
  require(c.lr > 0.0, ErrorCategory::config, "learning rate must be positive");
  require(c.batch_size >= 1, ErrorCategory::config, "batch size must be positive");
  require(c.iterations >= 0, ErrorCategory::config, "iterations must be non-negative");
  require(c.uncond_prob >= 0.0 && c.uncond_prob < 1.0, ErrorCategory::config, "uncond_prob must lie in [0, 1)");
  require(c.fus_drop_prob >= 0.0 && c.fus_drop_prob <= 1.0, ErrorCategory::config, "fus_drop_prob must lie in [0, 1]");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0, ErrorCategory::config,
          "Adam betas must lie in [0, 1)");
  require(c.adam_eps > 0.0 && c.weight_decay >= 0.0, ErrorCategory::config, "invalid Adam eps or weight decay");
  require(c.final_lr_fraction >= 0.0 && c.final_lr_fraction <= 1.0, ErrorCategory::config,
          "final_lr_fraction must lie in [0, 1]");
}

double learning_rate_at(const TrainConfig& cfg, long step) {
  if (cfg.final_lr_fraction == 1.0 || cfg.iterations <= 1) return cfg.lr;
  const double progress = std::clamp(static_cast<double>(step - 1) / (cfg.iterations - 1), 0.0, 1.0);
  const double f = cfg.final_lr_fraction;
  return cfg.lr * (f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

void validate(const TrainingSet& s) {
  require(!s.pairs.empty(), ErrorCategory::shape, "training set is empty");
  require(s.rows > 0 && s.cols > 0, ErrorCategory::shape, "training images have no pixels");
  const std::size_t n = static_cast<std::size_t>(s.rows) * s.cols;
  for (const auto& p : s.pairs)
    require(p.x_fus.size() == n && p.x_fdk.size() == n, ErrorCategory::shape, "training pair size mismatch");
}

AdamW::AdamW(const TrainConfig& cfg, const ParameterStore& params)
    : b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.adam_eps), wd_(cfg.weight_decay) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params.value(i).numel(), 0.0);
    v_.emplace_back(params.value(i).numel(), 0.0);
  }
}

void AdamW::step(ParameterStore& params, double lr) {
  require(params.size() == m_.size(), ErrorCategory::shape, "optimizer state does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params.value(i).data;
    const auto& g = params.grad(i).data;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1_ * m[k] + (1.0 - b1_) * g[k];
      v[k] = b2_ * v[k] + (1.0 - b2_) * g[k] * g[k];
      const double upd = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      w[k] = static_cast<float>(w[k] - lr * (upd + wd_ * w[k]));
    }
  }
}

Trainer::Trainer(DenoiserNet& net, const NoiseSchedule& sched, const TrainConfig& cfg)
    : net_(net), sched_(sched), cfg_(cfg), opt_(cfg, net.params()), rng_(cfg.rng_seed) {
  validate(cfg_);
  net_.check_schedule(sched_);
}

double Trainer::loss_and_grad(const Tensor& x0, const Tensor& x_fdk, const Tensor& x_fus,
                              const std::vector<int>& timesteps, const Tensor& eps,
                              const std::vector<bool>& mask_cond, const std::vector<bool>& drop_fus) {
  require(x0.rank() == 4 && x0.dim(1) == 1, ErrorCategory::shape, "targets must be (N, 1, H, W)");
  require(x0.shape == eps.shape && x0.shape == x_fdk.shape && x0.shape == x_fus.shape, ErrorCategory::shape,
          "batch tensors differ in shape");
  const int N = x0.dim(0);
  require(N >= 1, ErrorCategory::shape, "empty batch");
  require(timesteps.size() == static_cast<std::size_t>(N) && mask_cond.size() == timesteps.size() &&
              drop_fus.size() == timesteps.size(),
          ErrorCategory::shape, "per-sample arrays must have batch length");
  const std::size_t HW = static_cast<std::size_t>(x0.dim(2)) * x0.dim(3);

  Tensor xt(x0.shape), fdk = x_fdk, fus = x_fus;
  std::vector<double> tvals(static_cast<std::size_t>(N));
  for (int n = 0; n < N; ++n) {
    const double ab = sched_.alpha_bar_at(timesteps[n]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < HW; ++i) xt.data[n * HW + i] = a * x0.data[n * HW + i] + b * eps.data[n * HW + i];
    if (mask_cond[n]) std::fill_n(fdk.data.begin() + static_cast<std::ptrdiff_t>(n * HW), HW, 0.0);
    if (mask_cond[n] || drop_fus[n]) std::fill_n(fus.data.begin() + static_cast<std::ptrdiff_t>(n * HW), HW, 0.0);
    tvals[n] = timesteps[n];
  }

  net_.params().zero_grad();
  Tape t;
  Var in = t.constant(stack_inputs(xt, fdk, &fus));
  Var pred = net_.forward(t, in, tvals, true);
  Var loss = mse_loss(t, pred, t.constant(eps));
  t.backward(loss);
  return t.value(loss).data[0];
}

StepStats Trainer::step(const TrainingSet& data) {
  validate(data);
  const int N = cfg_.batch_size, H = data.rows, W = data.cols;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor x0({N, 1, H, W}), fdk({N, 1, H, W}), fus({N, 1, H, W}), eps({N, 1, H, W});
  std::vector<int> ts(static_cast<std::size_t>(N));
  std::vector<bool> mask(static_cast<std::size_t>(N)), drop(static_cast<std::size_t>(N));

  std::uniform_int_distribution<std::size_t> pick(0, data.pairs.size() - 1);
  std::uniform_int_distribution<int> tdist(1, sched_.T);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  StepStats st;
  for (int n = 0; n < N; ++n) {
    const TrainingPair& p = data.pairs[pick(rng_)];
    std::copy(p.x_fus.begin(), p.x_fus.end(), x0.data.begin() + static_cast<std::ptrdiff_t>(n * HW));
    std::copy(p.x_fus.begin(), p.x_fus.end(), fus.data.begin() + static_cast<std::ptrdiff_t>(n * HW));
    std::copy(p.x_fdk.begin(), p.x_fdk.end(), fdk.data.begin() + static_cast<std::ptrdiff_t>(n * HW));
    ts[n] = tdist(rng_);
    for (std::size_t i = 0; i < HW; ++i) eps.data[n * HW + i] = gauss(rng_);
    mask[n] = u01(rng_) < cfg_.uncond_prob;
    const bool d = u01(rng_) < cfg_.fus_drop_prob;
    drop[n] = !mask[n] && d;
    st.masked += mask[n] ? 1 : 0;
  }
  st.samples = N;
  st.loss = loss_and_grad(x0, fdk, fus, ts, eps, mask, drop);
  opt_.step(net_.params(), learning_rate_at(cfg_, opt_.steps() + 1));
  masked_total_ += st.masked;
  sample_total_ += st.samples;
  return st;
}

double train_step(Trainer& trainer, const TrainingSet& data) { return trainer.step(data).loss; }

std::string train_log_header() { return "step,loss,lr,masked_fraction"; }

std::string train_log_row(const TrainLogRow& r) {
  std::ostringstream os;
  os.precision(10);
  os << r.step << ',' << r.loss << ',' << r.lr << ',' << r.masked_fraction;
  return os.str();
}

}  // namespace lamino::nn
