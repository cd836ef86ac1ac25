#include "lamino/diffusion/unet.hpp"

#include <cmath>
#include <random>

#include "lamino/diffusion/schedule.hpp"
#include "lamino/error.hpp"

namespace lamino::nn {

void validate(const DenoiserConfig& c) {
  require(c.base_channels >= 1 && c.n_resolutions >= 1 && c.n_resolutions <= 8, ErrorCategory::config,
          "network needs base_channels >= 1 and 1..8 resolutions");
  require(c.embed_dim >= 2 && c.embed_dim % 2 == 0, ErrorCategory::config, "embed_dim must be even");
  require(c.groups >= 1, ErrorCategory::config, "groups must be positive");
  auto divisible = [&](int ch) {
    require(ch % c.groups == 0, ErrorCategory::config,
            "group norm groups (" + std::to_string(c.groups) + ") must divide " + std::to_string(ch) + " channels");
  };
  const int R = c.n_resolutions;
  for (int l = 0; l < R; ++l) {
    divisible(c.channels_at(l));
    if (l + 1 < R) divisible(c.channels_at(l) + c.channels_at(l + 1));
  }
}

// ---------------------------------------------------------------------------

Tensor& ParameterStore::add(const std::string& name, std::vector<int> shape) {
  require(!contains(name), ErrorCategory::config, "duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(name);
  grads_.emplace_back(shape, 0.0);
  values_.emplace_back(std::move(shape), 0.0);
  return values_.back();
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCategory::format, "unknown parameter " + name);
  return values_[it->second];
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCategory::format, "unknown parameter " + name);
  return values_[it->second];
}

Tensor& ParameterStore::grad(const std::string& name) {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorCategory::format, "unknown parameter " + name);
  return grads_[it->second];
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& g : grads_) std::fill(g.data.begin(), g.data.end(), 0.0);
}

// ---------------------------------------------------------------------------

struct DenoiserNet::Ctx {
  Tape& tape;
  bool track;
  std::map<std::string, Var> vars;
};

DenoiserNet::DenoiserNet(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg_);
  if (cfg_.velocity_head) head_sched_ = build_schedule(cfg_.schedule_steps, cfg_.beta_min, cfg_.beta_max);
  build_parameters(seed);
}

void DenoiserNet::check_schedule(const NoiseSchedule& sched) const {
  if (!cfg_.velocity_head) return;
  bool same = sched.T == head_sched_.T && sched.alpha_bar.size() == head_sched_.alpha_bar.size();
  for (std::size_t i = 0; same && i < sched.alpha_bar.size(); ++i)
    same = std::abs(sched.alpha_bar[i] - head_sched_.alpha_bar[i]) <= 1e-12;
  require(same, ErrorCategory::config, "noise schedule differs from the one the network's velocity head was built with");
}

void DenoiserNet::build_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  // Uniform(+-1/sqrt(fan_in)), stored at float precision so checkpoints are exact.
  auto fill = [&](Tensor& t, int fan_in) {
    const double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-b, b);
    for (double& v : t.data) v = static_cast<float>(u(rng));
  };
  auto conv = [&](const std::string& n, int in, int out, int k) {
    fill(params_.add(n + ".w", {out, in, k, k}), in * k * k);
    fill(params_.add(n + ".b", {out}), in * k * k);
  };
  auto lin = [&](const std::string& n, int in, int out) {
    fill(params_.add(n + ".w", {out, in}), in);
    fill(params_.add(n + ".b", {out}), in);
  };
  auto gn = [&](const std::string& n, int ch) {
    Tensor& g = params_.add(n + ".g", {ch});
    std::fill(g.data.begin(), g.data.end(), 1.0);
    params_.add(n + ".b", {ch});
  };
  auto rb = [&](const std::string& p, int in, int out) {
    gn(p + ".gn", in);
    conv(p + ".conv", in, out, 3);
    lin(p + ".temb", cfg_.embed_dim, out);
    if (in != out) conv(p + ".skip", in, out, 1);
  };
  auto attn = [&](const std::string& p, int ch) {
    gn(p + ".gn", ch);
    for (const char* s : {".q", ".k", ".v", ".proj"}) conv(p + s, ch, ch, 1);
  };

  const int R = cfg_.n_resolutions, d = cfg_.embed_dim;
  lin("time.fc1", d, d);
  lin("time.fc2", d, d);
  conv("in_conv", DenoiserConfig::in_channels, cfg_.channels_at(0), 3);
  int prev = cfg_.channels_at(0);
  for (int l = 0; l < R; ++l) {
    const std::string p = "enc." + std::to_string(l);
    const int ch = cfg_.channels_at(l);
    rb(p + ".rb0", prev, ch);
    if (l == R - 1) attn(p + ".attn", ch);
    rb(p + ".rb1", ch, ch);
    prev = ch;
  }
  for (int l = R - 2; l >= 0; --l) {
    const std::string p = "dec." + std::to_string(l);
    const int ch = cfg_.channels_at(l);
    rb(p + ".rb0", prev + ch, ch);
    rb(p + ".rb1", ch, ch);
    prev = ch;
  }
  gn("out.gn", prev);
  conv("out.conv", prev, DenoiserConfig::out_channels, 3);
}

Var DenoiserNet::param(Ctx& c, const std::string& name) {
  auto it = c.vars.find(name);
  if (it != c.vars.end()) return it->second;
  Var v = c.track ? c.tape.leaf(params_.get(name), &params_.grad(name)) : c.tape.constant(params_.get(name));
  c.vars.emplace(name, v);
  return v;
}

Var DenoiserNet::res_block(Ctx& c, const std::string& p, Var h, Var emb, int in_ch, int out_ch) {
  Tape& t = c.tape;
  Var n = group_norm(t, h, param(c, p + ".gn.g"), param(c, p + ".gn.b"), cfg_.groups);
  Var r = conv2d(t, silu(t, n), param(c, p + ".conv.w"), param(c, p + ".conv.b"));
  r = add_channel_bias(t, r, linear(t, emb, param(c, p + ".temb.w"), param(c, p + ".temb.b")));
  Var skip = in_ch == out_ch ? h : conv2d(t, h, param(c, p + ".skip.w"), param(c, p + ".skip.b"));
  return add(t, skip, r);
}

Var DenoiserNet::attn_block(Ctx& c, const std::string& p, Var h, int) {
  Tape& t = c.tape;
  Var n = group_norm(t, h, param(c, p + ".gn.g"), param(c, p + ".gn.b"), cfg_.groups);
  Var q = conv2d(t, n, param(c, p + ".q.w"), param(c, p + ".q.b"));
  Var k = conv2d(t, n, param(c, p + ".k.w"), param(c, p + ".k.b"));
  Var v = conv2d(t, n, param(c, p + ".v.w"), param(c, p + ".v.b"));
  Var o = conv2d(t, attention(t, q, k, v), param(c, p + ".proj.w"), param(c, p + ".proj.b"));
  return add(t, h, o);
}

Var DenoiserNet::forward(Tape& t, Var input, const std::vector<double>& timesteps, bool track_grads) {
  const Tensor& x = t.value(input);
  require(x.rank() == 4 && x.dim(1) == DenoiserConfig::in_channels, ErrorCategory::shape,
          "network input must be (N, 3, H, W)");
  const int N = x.dim(0), H = x.dim(2), W = x.dim(3), m = cfg_.size_multiple();
  require(H % m == 0 && W % m == 0, ErrorCategory::shape,
          "image size must be a multiple of " + std::to_string(m) + " for this network depth");
  require(timesteps.size() == static_cast<std::size_t>(N), ErrorCategory::shape, "one timestep per sample required");

  Ctx c{t, track_grads, {}};
  const int d = cfg_.embed_dim, R = cfg_.n_resolutions;
  Tensor epos({N, d});
  for (int n = 0; n < N; ++n) {
    const auto e = time_embedding(timesteps[static_cast<std::size_t>(n)], d);
    std::copy(e.begin(), e.end(), epos.data.begin() + static_cast<std::ptrdiff_t>(n) * d);
  }
  Var emb = t.constant(std::move(epos));
  emb = linear(t, silu(t, linear(t, emb, param(c, "time.fc1.w"), param(c, "time.fc1.b"))), param(c, "time.fc2.w"),
               param(c, "time.fc2.b"));

  Var h = conv2d(t, input, param(c, "in_conv.w"), param(c, "in_conv.b"));
  std::vector<Var> skips;
  int prev = cfg_.channels_at(0);
  for (int l = 0; l < R; ++l) {
    const std::string p = "enc." + std::to_string(l);
    const int ch = cfg_.channels_at(l);
    h = res_block(c, p + ".rb0", h, emb, prev, ch);
    if (l == R - 1) h = attn_block(c, p + ".attn", h, ch);
    h = res_block(c, p + ".rb1", h, emb, ch, ch);
    prev = ch;
    if (l < R - 1) {
      skips.push_back(h);
      h = avg_pool2(t, h);
    }
  }
  for (int l = R - 2; l >= 0; --l) {
    const std::string p = "dec." + std::to_string(l);
    const int ch = cfg_.channels_at(l);
    h = concat_channels(t, upsample_nearest2(t, h), skips[static_cast<std::size_t>(l)]);
    h = res_block(c, p + ".rb0", h, emb, prev + ch, ch);
    h = res_block(c, p + ".rb1", h, emb, ch, ch);
    prev = ch;
  }
  h = silu(t, group_norm(t, h, param(c, "out.gn.g"), param(c, "out.gn.b"), cfg_.groups));
  Var head = conv2d(t, h, param(c, "out.conv.w"), param(c, "out.conv.b"));
  if (!cfg_.velocity_head) return head;

  std::vector<double> sa(static_cast<std::size_t>(N)), sb(sa.size());
  for (std::size_t n = 0; n < sa.size(); ++n) {
    const double tn = timesteps[n];
    require(tn == std::round(tn) && tn >= 1 && tn <= head_sched_.T, ErrorCategory::shape,
            "velocity head needs integer timesteps in [1, T]");
    const double ab = head_sched_.alpha_bar_at(static_cast<int>(tn));
    sa[n] = std::sqrt(1.0 - ab);
    sb[n] = std::sqrt(ab);
  }
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor xt({N, 1, H, W});
  for (int n = 0; n < N; ++n)
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(n * 3 * HW), HW,
                xt.data.begin() + static_cast<std::ptrdiff_t>(n * HW));
  return add(t, scale_samples(t, t.constant(std::move(xt)), std::move(sa)), scale_samples(t, head, std::move(sb)));
}

Tensor stack_inputs(const Tensor& x_t, const Tensor& x_fdk, const Tensor* x_fus) {
  require(x_t.rank() == 4 && x_t.dim(1) == 1, ErrorCategory::shape, "x_t must be (N, 1, H, W)");
  require(x_fdk.shape == x_t.shape, ErrorCategory::shape, "FDK condition shape differs from x_t");
  if (x_fus != nullptr) require(x_fus->shape == x_t.shape, ErrorCategory::shape, "fusion condition shape differs from x_t");
  const int N = x_t.dim(0), H = x_t.dim(2), W = x_t.dim(3);
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  Tensor in({N, 3, H, W});
  for (int n = 0; n < N; ++n) {
    double* dst = in.data.data() + static_cast<std::size_t>(n) * 3 * HW;
    std::copy_n(x_t.data.data() + n * HW, HW, dst);
    std::copy_n(x_fdk.data.data() + n * HW, HW, dst + HW);
    if (x_fus != nullptr) std::copy_n(x_fus->data.data() + n * HW, HW, dst + 2 * HW);
  }
  return in;
}

Tensor DenoiserNet::predict(const Tensor& x_t, const Tensor& x_fdk, const Tensor* x_fus,
                            const std::vector<double>& timesteps) {
  Tape t;
  Var in = t.constant(stack_inputs(x_t, x_fdk, x_fus));
  Var out = forward(t, in, timesteps, false);
  return t.value(out);
}

std::vector<double> DenoiserNet::time_features(double timestep) {
  Tape t;
  Ctx c{t, false, {}};
  Var e = t.constant(Tensor({1, cfg_.embed_dim}, time_embedding(timestep, cfg_.embed_dim)));
  e = linear(t, silu(t, linear(t, e, param(c, "time.fc1.w"), param(c, "time.fc1.b"))), param(c, "time.fc2.w"),
             param(c, "time.fc2.b"));
  return t.value(e).data;
}

bool DenoiserNet::all_finite() const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    for (double v : params_.value(i).data)
      if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace lamino::nn
