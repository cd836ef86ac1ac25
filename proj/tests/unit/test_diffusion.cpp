#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

#include "lamino/diffusion/sampler.hpp"
#include "lamino/diffusion/schedule.hpp"
#include "lamino/diffusion/train.hpp"
#include "lamino/diffusion/unet.hpp"
#include "lamino/error.hpp"

using namespace lamino;
using namespace lamino::nn;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.base_channels = 4;
  c.n_resolutions = 2;
  c.embed_dim = 8;
  c.groups = 2;
  return c;
}

Tensor random_image(int n, int h, int w, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Tensor t({n, 1, h, w});
  for (double& x : t.data) x = g(rng);
  return t;
}

}  // namespace

TEST_CASE("linear variance schedule", "[diffusion][schedule]") {
  const NoiseSchedule s = build_schedule(1000, 1e-4, 0.02);
  CHECK(s.T == 1000);
  CHECK(s.beta_at(1) == 1e-4);
  CHECK_THAT(s.beta_at(1000), WithinAbs(0.02, 1e-15));
  CHECK_THAT(s.beta_at(500), WithinAbs(1e-4 + 499.0 / 999.0 * (0.02 - 1e-4), 1e-15));
  CHECK(s.alpha_bar_at(0) == 1.0);
  CHECK_THAT(s.alpha_bar_at(1), WithinAbs(0.9999, 1e-15));
  // Independent log-domain product.
  double log_ab = 0;
  for (int t = 1; t <= 1000; ++t) log_ab += std::log1p(-(1e-4 + (t - 1) / 999.0 * (0.02 - 1e-4)));
  CHECK_THAT(s.alpha_bar_at(1000), WithinRel(std::exp(log_ab), 1e-9));
  CHECK_THAT(s.alpha_bar_at(1000), WithinRel(4.04e-5, 0.01));
  for (int t = 1; t <= 1000; ++t) CHECK(s.alpha_bar_at(t) < s.alpha_bar_at(t - 1));
  CHECK_THROWS_AS(s.alpha_bar_at(1001), Error);
  CHECK_THROWS_AS(s.beta_at(0), Error);
  CHECK_THROWS_AS(build_schedule(0), Error);
  CHECK_THROWS_AS(build_schedule(10, 0.5, 0.1), Error);
  CHECK_THROWS_AS(build_schedule(10, 1e-4, 1.0), Error);
}

TEST_CASE("forward diffusion has the closed-form marginal moments", "[diffusion][schedule]") {
  const NoiseSchedule s = build_schedule();
  const int t = 300;
  const double ab = s.alpha_bar_at(t);
  const std::size_t n = 200000;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  std::vector<double> x0(n, 0.8), eps(n);
  for (double& e : eps) e = g(rng);
  const auto xt = forward_diffuse(x0, t, eps, s);
  double mean = 0, var = 0;
  for (double v : xt) mean += v;
  mean /= n;
  for (double v : xt) var += (v - mean) * (v - mean);
  var /= n - 1;
  CHECK_THAT(mean, WithinAbs(std::sqrt(ab) * 0.8, 4 * std::sqrt((1 - ab) / n)));
  CHECK_THAT(var, WithinRel(1 - ab, 0.02));
  CHECK(forward_diffuse(x0, 1.0, eps) == x0);
  CHECK_THROWS_AS(forward_diffuse(x0, 0, eps, s), Error);
  CHECK_THROWS_AS(forward_diffuse(x0, 1001, eps, s), Error);
}

TEST_CASE("sinusoidal time embedding", "[diffusion]") {
  const auto e = time_embedding(7.0, 8);
  REQUIRE(e.size() == 8);
  for (int i = 0; i < 4; ++i) {
    const double f = std::pow(10000.0, -i / 3.0);
    CHECK_THAT(e[2 * i], WithinAbs(std::sin(7.0 * f), 1e-12));
    CHECK_THAT(e[2 * i + 1], WithinAbs(std::cos(7.0 * f), 1e-12));
  }
  CHECK(time_embedding(3.0, 8) != time_embedding(4.0, 8));
  CHECK_THROWS_AS(time_embedding(1.0, 7), Error);
  CHECK_THROWS_AS(time_embedding(1.0, 0), Error);
}

TEST_CASE("score, clean estimate and reverse mean", "[diffusion]") {
  const std::vector<double> eps{0.5, -1.0};
  const auto sc = score_estimate(eps, 0.75);
  CHECK_THAT(sc[0], WithinAbs(-1.0, 1e-12));
  CHECK_THAT(sc[1], WithinAbs(2.0, 1e-12));
  CHECK_THROWS_AS(score_estimate(eps, 1.0), Error);

  const std::vector<double> x0{0.3, -0.2}, e{1.1, 0.4};
  const auto xt = forward_diffuse(x0, 0.6, e);
  const auto back = predict_x0(xt, e, 0.6);
  CHECK_THAT(back[0], WithinAbs(0.3, 1e-12));
  CHECK_THAT(back[1], WithinAbs(-0.2, 1e-12));

  const NoiseSchedule s = build_schedule();
  for (int t : {1, 2, 50, 500, 1000}) {
    const auto a = reverse_mean(xt, e, t, s), b = posterior_mean(xt, e, t, s);
    CHECK_THAT(a[0], WithinAbs(b[0], 1e-9));
    CHECK_THAT(a[1], WithinAbs(b[1], 1e-9));
  }
}

TEST_CASE("denoiser network shapes and parameter layout", "[diffusion][unet]") {
  const DenoiserConfig cfg = tiny_config();
  DenoiserNet net(cfg, 3);
  CHECK(net.params().contains("enc.1.attn.q.w"));
  CHECK(net.params().contains("time.fc1.w"));
  CHECK(net.params().parameter_count() > 0);
  CHECK(net.all_finite());
  const Tensor xt = random_image(2, 8, 12, 1), fdk = random_image(2, 8, 12, 2);
  const Tensor eps = net.predict(xt, fdk, nullptr, {10.0, 500.0});
  CHECK(eps.shape == std::vector<int>{2, 1, 8, 12});
  // Same seed, same network.
  DenoiserNet twin(cfg, 3);
  CHECK(twin.predict(xt, fdk, nullptr, {10.0, 500.0}).data == eps.data);
  // Null fusion condition is a zero channel.
  const Tensor zeros({2, 1, 8, 12}, 0.0);
  CHECK(net.predict(xt, fdk, &zeros, {10.0, 500.0}).data == eps.data);
  CHECK(net.time_features(10.0) != net.time_features(11.0));
  CHECK_THROWS_AS(net.predict(random_image(1, 7, 8, 3), random_image(1, 7, 8, 4), nullptr, {1.0}), Error);
  DenoiserConfig bad = cfg;
  bad.groups = 3;
  CHECK_THROWS_AS(DenoiserNet(bad), Error);
}

TEST_CASE("network gradients agree with central differences", "[diffusion][unet]") {
  DenoiserNet net(tiny_config(), 5);
  const NoiseSchedule sched = build_schedule(100);
  Trainer trainer(net, sched, TrainConfig{});
  const Tensor x0 = random_image(2, 4, 4, 6, 0.5), fdk = random_image(2, 4, 4, 7, 0.5), fus = random_image(2, 4, 4, 8, 0.5);
  const Tensor eps = random_image(2, 4, 4, 9);
  const std::vector<int> ts{20, 70};
  const std::vector<bool> mask{false, false}, drop{false, true};
  trainer.loss_and_grad(x0, fdk, fus, ts, eps, mask, drop);

  std::vector<std::pair<std::size_t, std::size_t>> picks;
  std::mt19937_64 rng(11);
  for (std::size_t p = 0; p < net.params().size() && picks.size() < 50; ++p) {
    const std::size_t n = net.params().value(p).numel();
    picks.emplace_back(p, rng() % n);
  }
  std::vector<double> analytic;
  for (auto [p, k] : picks) analytic.push_back(net.params().grad(p).data[k]);
  const double h = 1e-6;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    auto [p, k] = picks[i];
    double& w = net.params().value(p).data[k];
    const double w0 = w;
    w = w0 + h;
    const double lp = trainer.loss_and_grad(x0, fdk, fus, ts, eps, mask, drop);
    w = w0 - h;
    const double lm = trainer.loss_and_grad(x0, fdk, fus, ts, eps, mask, drop);
    w = w0;
    const double fd = (lp - lm) / (2 * h);
    INFO(net.params().name(p) << "[" << k << "]");
    CHECK_THAT(analytic[i], WithinAbs(fd, 1e-6 * std::max(1.0, std::abs(fd))));
  }
}

TEST_CASE("velocity head converts to a noise prediction", "[diffusion][unet]") {
  DenoiserConfig vc = tiny_config();
  vc.velocity_head = true;
  vc.schedule_steps = 100;
  DenoiserNet eps_net(tiny_config(), 5), vel_net(vc, 5);
  const NoiseSchedule sched = build_schedule(100);
  const Tensor xt = random_image(2, 4, 4, 1), fdk = random_image(2, 4, 4, 2, 0.5);
  const std::vector<double> ts{3, 90};
  // Same seed, same parameters: the velocity net's output is the eps net's
  // head mixed with x_t.
  const Tensor head = eps_net.predict(xt, fdk, nullptr, ts);
  const Tensor eps = vel_net.predict(xt, fdk, nullptr, ts);
  for (int n = 0; n < 2; ++n) {
    const double ab = sched.alpha_bar_at(static_cast<int>(ts[n]));
    for (int i = 0; i < 16; ++i)
      CHECK_THAT(eps.data[n * 16 + i],
                 WithinAbs(std::sqrt(1 - ab) * xt.data[n * 16 + i] + std::sqrt(ab) * head.data[n * 16 + i], 1e-12));
  }
  CHECK_THROWS_AS(vel_net.predict(xt, fdk, nullptr, {2.5, 3.0}), Error);
  CHECK_THROWS_AS(Trainer(vel_net, build_schedule(100, 1e-4, 0.03), TrainConfig{}), Error);
  CHECK_NOTHROW(Trainer(vel_net, sched, TrainConfig{}));
}

TEST_CASE("velocity-head gradients agree with central differences", "[diffusion][unet]") {
  DenoiserConfig vc = tiny_config();
  vc.velocity_head = true;
  vc.schedule_steps = 100;
  DenoiserNet net(vc, 5);
  const NoiseSchedule sched = build_schedule(100);
  Trainer trainer(net, sched, TrainConfig{});
  const Tensor x0 = random_image(2, 4, 4, 6, 0.5), fdk = random_image(2, 4, 4, 7, 0.5), fus = random_image(2, 4, 4, 8, 0.5);
  const Tensor eps = random_image(2, 4, 4, 9);
  const std::vector<int> ts{20, 70};
  const std::vector<bool> mask{false, false}, drop{false, true};
  trainer.loss_and_grad(x0, fdk, fus, ts, eps, mask, drop);
  const double h = 1e-6;
  for (std::size_t p = 0; p < net.params().size(); p += 3) {
    const std::size_t k = net.params().value(p).numel() / 2;
    const double analytic = net.params().grad(p).data[k];
    double& w = net.params().value(p).data[k];
    const double w0 = w;
    w = w0 + h;
    const double lp = trainer.loss_and_grad(x0, fdk, fus, ts, eps, mask, drop);
    w = w0 - h;
    const double lm = trainer.loss_and_grad(x0, fdk, fus, ts, eps, mask, drop);
    w = w0;
    const double fd = (lp - lm) / (2 * h);
    INFO(net.params().name(p) << "[" << k << "]");
    CHECK_THAT(analytic, WithinAbs(fd, 1e-6 * std::max(1.0, std::abs(fd))));
  }
}

TEST_CASE("training loss is non-negative and the condition mask rate matches", "[diffusion][train]") {
  DenoiserConfig cfg = tiny_config();
  DenoiserNet net(cfg, 1);
  const NoiseSchedule sched = build_schedule(50);
  TrainConfig tc;
  tc.batch_size = 1;
  tc.rng_seed = 4;
  Trainer trainer(net, sched, tc);
  TrainingSet data{4, 4, {{std::vector<double>(16, 0.2), std::vector<double>(16, 0.1)}}};
  const int steps = 10000;
  for (int i = 0; i < steps; ++i) CHECK(trainer.step(data).loss >= 0.0);
  CHECK(trainer.sample_total() == steps);
  const double rate = static_cast<double>(trainer.masked_total()) / steps;
  // Binomial standard deviation is 0.003.
  CHECK_THAT(rate, WithinAbs(0.1, 0.015));
}

TEST_CASE("the network can overfit a fixed batch", "[diffusion][train]") {
  DenoiserNet net(tiny_config(), 2);
  const NoiseSchedule sched = build_schedule(100);
  TrainConfig tc;
  tc.weight_decay = 0.0;
  Trainer trainer(net, sched, tc);
  AdamW opt(tc, net.params());
  const Tensor x0 = random_image(2, 8, 8, 1, 0.5), fdk = random_image(2, 8, 8, 2, 0.5), eps = random_image(2, 8, 8, 3);
  const std::vector<int> ts{30, 60};
  const std::vector<bool> no(2, false);
  const double first = trainer.loss_and_grad(x0, fdk, x0, ts, eps, no, no);
  double last = first;
  for (int i = 0; i < 300; ++i) {
    opt.step(net.params(), 3e-3);
    last = trainer.loss_and_grad(x0, fdk, x0, ts, eps, no, no);
  }
  CHECK(last < 0.1 * first);
  CHECK(net.all_finite());
}

TEST_CASE("AdamW keeps parameters at float precision", "[diffusion][train]") {
  DenoiserNet net(tiny_config(), 2);
  for (std::size_t p = 0; p < net.params().size(); ++p)
    for (double w : net.params().value(p).data) REQUIRE(static_cast<double>(static_cast<float>(w)) == w);
  TrainConfig tc;
  AdamW opt(tc, net.params());
  for (std::size_t p = 0; p < net.params().size(); ++p)
    for (double& g : net.params().grad(p).data) g = 0.37;
  opt.step(net.params(), 1e-3);
  CHECK(opt.steps() == 1);
  for (std::size_t p = 0; p < net.params().size(); ++p)
    for (double w : net.params().value(p).data) CHECK(static_cast<double>(static_cast<float>(w)) == w);
}

TEST_CASE("cosine learning-rate decay", "[diffusion][train]") {
  TrainConfig tc;
  tc.lr = 1e-3;
  tc.iterations = 101;
  CHECK(learning_rate_at(tc, 1) == 1e-3);
  CHECK(learning_rate_at(tc, 101) == 1e-3);
  tc.final_lr_fraction = 0.1;
  CHECK_THAT(learning_rate_at(tc, 1), WithinRel(1e-3, 1e-12));
  CHECK_THAT(learning_rate_at(tc, 51), WithinRel(0.55e-3, 1e-12));
  CHECK_THAT(learning_rate_at(tc, 101), WithinRel(1e-4, 1e-12));
  for (long s = 2; s <= 101; ++s) CHECK(learning_rate_at(tc, s) < learning_rate_at(tc, s - 1));

  DenoiserNet net(tiny_config(), 4);
  const NoiseSchedule sched = build_schedule(50);
  tc.iterations = 3;
  Trainer trainer(net, sched, tc);
  TrainingSet set{4, 4, {{std::vector<double>(16, 0.1), std::vector<double>(16, -0.2)}}};
  trainer.step(set);
  CHECK(trainer.steps_taken() == 1);

  tc.final_lr_fraction = 1.5;
  CHECK_THROWS_AS(validate(tc), Error);
}

TEST_CASE("rectified noise interpolates conditional and unconditional predictions", "[diffusion][sampler]") {
  DenoiserNet net(tiny_config(), 8);
  const Tensor xt = random_image(1, 4, 4, 1), fdk = random_image(1, 4, 4, 2), fus = random_image(1, 4, 4, 3);
  const Tensor zeros({1, 1, 4, 4}, 0.0);
  const Tensor uncond = net.predict(xt, zeros, nullptr, {40.0});
  const Tensor cond = net.predict(xt, fdk, &fus, {40.0});
  CHECK(rectified_noise(net, xt, 40, fdk, &fus, 0.0).data == uncond.data);
  const Tensor r1 = rectified_noise(net, xt, 40, fdk, &fus, 1.0);
  for (std::size_t i = 0; i < r1.numel(); ++i) CHECK_THAT(r1.data[i], WithinAbs(cond.data[i], 1e-12));
  for (double s : {0.37, 1.5, 3.0}) {
    const Tensor r = rectified_noise(net, xt, 40, fdk, &fus, s);
    for (std::size_t i = 0; i < r.numel(); ++i)
      CHECK_THAT(r.data[i], WithinAbs(uncond.data[i] + s * (cond.data[i] - uncond.data[i]), 1e-12));
  }
  // FDK-only mode feeds zeros for the fusion channel.
  const Tensor fdk_only = net.predict(xt, fdk, nullptr, {40.0});
  const Tensor r = rectified_noise(net, xt, 40, fdk, nullptr, 2.0);
  for (std::size_t i = 0; i < r.numel(); ++i)
    CHECK_THAT(r.data[i], WithinAbs(uncond.data[i] + 2.0 * (fdk_only.data[i] - uncond.data[i]), 1e-12));
  CHECK_THROWS_AS(rectified_noise(net, xt, 40, fdk, nullptr, -1.0), Error);
}

TEST_CASE("DDIM timesteps", "[diffusion][sampler]") {
  const auto ts = ddim_timesteps(1000, 50);
  REQUIRE(ts.size() == 50);
  CHECK(ts.front() == 981);
  CHECK(ts.back() == 1);
  for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
  CHECK(ddim_timesteps(10, 10) == std::vector<int>{10, 9, 8, 7, 6, 5, 4, 3, 2, 1});
  CHECK_THROWS_AS(ddim_timesteps(10, 11), Error);
  CHECK_THROWS_AS(ddim_timesteps(10, 0), Error);
}

TEST_CASE("DDIM with an exact noise oracle lands on the clean image", "[diffusion][sampler]") {
  const NoiseSchedule s = build_schedule();
  const std::vector<double> target{0.3, -0.7, 0.1, 0.9};
  // The true noise of x_t given a known x0.
  NoiseFn oracle = [&](const std::vector<double>& x, int t) {
    const double ab = s.alpha_bar_at(t);
    std::vector<double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) e[i] = (x[i] - std::sqrt(ab) * target[i]) / std::sqrt(1 - ab);
    return e;
  };
  for (int steps : {1, 10, 50})
    for (bool clip : {false, true}) {
      const auto x = ddim_sample(oracle, 4, s, SamplerConfig{steps, 1.0, 3, clip});
      for (int i = 0; i < 4; ++i) CHECK_THAT(x[i], WithinAbs(target[i], 1e-9));
    }
}

TEST_CASE("DDIM with a zero predictor rescales the initial noise", "[diffusion][sampler]") {
  const NoiseSchedule s = build_schedule(100);
  NoiseFn zero = [](const std::vector<double>& x, int) { return std::vector<double>(x.size(), 0.0); };
  const SamplerConfig cfg{5, 1.0, 17, false};
  const auto x = ddim_sample(zero, 6, s, cfg);
  CHECK(x == ddim_sample(zero, 6, s, cfg));
  std::mt19937_64 rng(17);
  std::normal_distribution<double> g(0.0, 1.0);
  const int t_first = ddim_timesteps(100, 5).front();
  for (int i = 0; i < 6; ++i) CHECK_THAT(x[i], WithinAbs(g(rng) / std::sqrt(s.alpha_bar_at(t_first)), 1e-12));
  CHECK_FALSE(ddim_sample(zero, 6, s, SamplerConfig{5, 1.0, 18, false}) == x);
  // With clamping every estimate lies in [-1, 1], so the output does too.
  for (double v : ddim_sample(zero, 6, s, SamplerConfig{5, 1.0, 17, true})) CHECK(std::abs(v) <= 1.0);
  const auto clipped = ddim_sample(zero, 6, s, SamplerConfig{1, 1.0, 17, true});
  for (int i = 0; i < 6; ++i) CHECK(clipped[i] == std::clamp(x[i] * std::sqrt(s.alpha_bar_at(t_first)) /
                                                                 std::sqrt(s.alpha_bar_at(ddim_timesteps(100, 1).front())),
                                                             -1.0, 1.0));
}

TEST_CASE("network DDIM sampling is deterministic in the seed", "[diffusion][sampler]") {
  DenoiserNet net(tiny_config(), 8);
  const NoiseSchedule s = build_schedule(50);
  const Tensor fdk = random_image(1, 4, 4, 2);
  const SamplerConfig cfg{4, 1.5, 9};
  const Tensor a = ddim_sample(net, fdk, nullptr, s, cfg), b = ddim_sample(net, fdk, nullptr, s, cfg);
  CHECK(a.shape == fdk.shape);
  CHECK(a.data == b.data);
  for (double v : a.data) CHECK(std::isfinite(v));
}

TEST_CASE("intensity normaliser", "[diffusion]") {
  const std::vector<double> v{0.2, 1.0, 0.6};
  const auto n = IntensityNormalizer::fit(v);
  CHECK(n.to_unit(0.2) == -1.0);
  CHECK(n.to_unit(1.0) == 1.0);
  CHECK_THAT(n.from_unit(n.to_unit(0.6)), WithinAbs(0.6, 1e-15));
  const auto c = IntensityNormalizer::fit(std::vector<double>{3.0, 3.0});
  CHECK(c.hi > c.lo);
}
