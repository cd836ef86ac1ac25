#include "lamino/diffusion/autograd.hpp"

#include <Eigen/Dense>

#include <cmath>

#include "lamino/error.hpp"

namespace lamino::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void check(bool ok, const char* msg) { require(ok, ErrorCategory::shape, msg); }

void im2col(const double* x, int C, int H, int W, int k, double* cols) {
  const int p = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * HW;
        const double* plane = x + c * HW;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - p;
          double* dst = row + static_cast<std::size_t>(y) * W;
          if (sy < 0 || sy >= H) {
            std::fill(dst, dst + W, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sy) * W;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + kx - p;
            dst[xx] = (sx >= 0 && sx < W) ? src[sx] : 0.0;
          }
        }
      }
}

void col2im_add(const double* cols, int C, int H, int W, int k, double* dx) {
  const int p = k / 2;
  const std::size_t HW = static_cast<std::size_t>(H) * W;
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = cols + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * HW;
        double* plane = dx + c * HW;
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - p;
          if (sy < 0 || sy >= H) continue;
          const double* src = row + static_cast<std::size_t>(y) * W;
          double* dst = plane + static_cast<std::size_t>(sy) * W;
          for (int xx = 0; xx < W; ++xx) {
            const int sx = xx + kx - p;
            if (sx >= 0 && sx < W) dst[sx] += src[xx];
          }
        }
      }
}

}  // namespace

std::size_t numel_of(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

Tensor::Tensor(std::vector<int> s, double fill) : shape(std::move(s)), data(numel_of(shape), fill) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  check(data.size() == numel_of(shape), "tensor data does not match shape");
}

Tape::Id Tape::leaf(const Tensor& value, Tensor* grad_sink) {
  auto n = std::make_unique<Node>();
  n->value = value;
  n->needs_grad = grad_sink != nullptr;
  n->sink = grad_sink;
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::constant(Tensor value) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::push(Tensor value, std::function<void(Tape&, Id)> backward_fn) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->needs_grad = static_cast<bool>(backward_fn);
  n->backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tensor& Tape::grad(Id id) {
  Node& n = *nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape, 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Id loss) {
  check(value(loss).numel() == 1, "backward() needs a scalar loss");
  grad(loss).data[0] = 1.0;
  for (Id i = loss; i >= 0; --i) {
    Node& n = *nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad) continue;
    if (n.backward_fn) n.backward_fn(*this, i);
    if (n.sink != nullptr) {
      if (n.sink->data.size() != n.grad.data.size()) *n.sink = Tensor(n.value.shape, 0.0);
      for (std::size_t k = 0; k < n.grad.data.size(); ++k) n.sink->data[k] += n.grad.data[k];
    }
  }
}

// ---------------------------------------------------------------------------

Var conv2d(Tape& t, Var xv, Var wv, Var bv) {
  const Tensor& x = t.value(xv);
  const Tensor& w = t.value(wv);
  const Tensor& b = t.value(bv);
  check(x.rank() == 4 && w.rank() == 4 && w.dim(2) == w.dim(3), "conv2d: bad ranks");
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), k = w.dim(2);
  check(w.dim(1) == Cin && k % 2 == 1 && b.numel() == static_cast<std::size_t>(Cout), "conv2d: shape mismatch");
  const int HW = H * W, K = Cin * k * k;

  Tensor y({N, Cout, H, W});
  std::vector<double> cols(k == 1 ? 0 : static_cast<std::size_t>(K) * HW);
  ConstMapMat wm(w.data.data(), Cout, K);
  for (int n = 0; n < N; ++n) {
    const double* xn = x.data.data() + static_cast<std::size_t>(n) * Cin * HW;
    const double* cp = xn;
    if (k != 1) {
      im2col(xn, Cin, H, W, k, cols.data());
      cp = cols.data();
    }
    MapMat ym(y.data.data() + static_cast<std::size_t>(n) * Cout * HW, Cout, HW);
    ym.noalias() = wm * ConstMapMat(cp, K, HW);
    for (int c = 0; c < Cout; ++c) ym.row(c).array() += b.data[c];
  }
  const bool ng = t.requires_grad(xv) || t.requires_grad(wv) || t.requires_grad(bv);
  if (!ng) return t.push(std::move(y));
  return t.push(std::move(y), [xv, wv, bv, N, Cin, Cout, H, W, k, HW, K](Tape& tp, Var self) {
    const Tensor& x = tp.value(xv);
    const Tensor& w = tp.value(wv);
    const Tensor& gy = tp.grad(self);
    const bool gx = tp.requires_grad(xv), gw = tp.requires_grad(wv), gb = tp.requires_grad(bv);
    std::vector<double> cols(k == 1 ? 0 : static_cast<std::size_t>(K) * HW);
    std::vector<double> dcols(static_cast<std::size_t>(K) * HW);
    ConstMapMat wm(w.data.data(), Cout, K);
    for (int n = 0; n < N; ++n) {
      const double* xn = x.data.data() + static_cast<std::size_t>(n) * Cin * HW;
      ConstMapMat gym(gy.data.data() + static_cast<std::size_t>(n) * Cout * HW, Cout, HW);
      if (gw) {
        const double* cp = xn;
        if (k != 1) {
          im2col(xn, Cin, H, W, k, cols.data());
          cp = cols.data();
        }
        MapMat(tp.grad(wv).data.data(), Cout, K).noalias() += gym * ConstMapMat(cp, K, HW).transpose();
      }
      if (gb) {
        Tensor& db = tp.grad(bv);
        for (int c = 0; c < Cout; ++c) db.data[c] += gym.row(c).sum();
      }
      if (gx) {
        double* dxn = tp.grad(xv).data.data() + static_cast<std::size_t>(n) * Cin * HW;
        if (k == 1) {
          MapMat(dxn, Cin, HW).noalias() += wm.transpose() * gym;
        } else {
          MapMat(dcols.data(), K, HW).noalias() = wm.transpose() * gym;
          col2im_add(dcols.data(), Cin, H, W, k, dxn);
        }
      }
    }
  });
}

Var group_norm(Tape& t, Var xv, Var gv, Var bv, int groups, double eps) {
  const Tensor& x = t.value(xv);
  const Tensor& gamma = t.value(gv);
  const Tensor& beta = t.value(bv);
  check(x.rank() == 4, "group_norm: expected NCHW");
  const int N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  check(groups >= 1 && C % groups == 0, "group_norm: groups must divide channels");
  check(gamma.numel() == static_cast<std::size_t>(C) && beta.numel() == static_cast<std::size_t>(C),
        "group_norm: affine size mismatch");
  const int cpg = C / groups;
  const std::size_t gsize = static_cast<std::size_t>(cpg) * HW;

  Tensor y(x.shape);
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * groups);
  for (int n = 0; n < N; ++n)
    for (int g = 0; g < groups; ++g) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + static_cast<std::size_t>(g) * cpg) * HW;
      double mean = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) mean += x.data[off + i];
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) {
        const double d = x.data[off + i] - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(n) * groups + g] = is;
      for (int c = 0; c < cpg; ++c) {
        const int ch = g * cpg + c;
        for (int i = 0; i < HW; ++i) {
          const std::size_t idx = off + static_cast<std::size_t>(c) * HW + i;
          const double xh = (x.data[idx] - mean) * is;
          (*xhat)[idx] = xh;
          y.data[idx] = gamma.data[ch] * xh + beta.data[ch];
        }
      }
    }
  const bool ng = t.requires_grad(xv) || t.requires_grad(gv) || t.requires_grad(bv);
  if (!ng) return t.push(std::move(y));
  return t.push(std::move(y), [xv, gv, bv, N, C, HW, groups, cpg, gsize, xhat, inv_std](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    const Tensor& gamma = tp.value(gv);
    const bool gx = tp.requires_grad(xv), gg = tp.requires_grad(gv), gb = tp.requires_grad(bv);
    for (int n = 0; n < N; ++n)
      for (int g = 0; g < groups; ++g) {
        const std::size_t off = (static_cast<std::size_t>(n) * C + static_cast<std::size_t>(g) * cpg) * HW;
        double sum_d = 0.0, sum_dx = 0.0;
        for (int c = 0; c < cpg; ++c) {
          const int ch = g * cpg + c;
          double dg = 0.0, db = 0.0;
          for (int i = 0; i < HW; ++i) {
            const std::size_t idx = off + static_cast<std::size_t>(c) * HW + i;
            const double d = gy.data[idx];
            dg += d * (*xhat)[idx];
            db += d;
            const double dxh = d * gamma.data[ch];
            sum_d += dxh;
            sum_dx += dxh * (*xhat)[idx];
          }
          if (gg) tp.grad(gv).data[ch] += dg;
          if (gb) tp.grad(bv).data[ch] += db;
        }
        if (!gx) continue;
        const double mean_d = sum_d / static_cast<double>(gsize);
        const double mean_dx = sum_dx / static_cast<double>(gsize);
        const double is = (*inv_std)[static_cast<std::size_t>(n) * groups + g];
        Tensor& dx = tp.grad(xv);
        for (int c = 0; c < cpg; ++c) {
          const int ch = g * cpg + c;
          for (int i = 0; i < HW; ++i) {
            const std::size_t idx = off + static_cast<std::size_t>(c) * HW + i;
            const double dxh = gy.data[idx] * gamma.data[ch];
            dx.data[idx] += is * (dxh - mean_d - (*xhat)[idx] * mean_dx);
          }
        }
      }
  });
}

Var silu(Tape& t, Var xv) {
  const Tensor& x = t.value(xv);
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = x.data[i] / (1.0 + std::exp(-x.data[i]));
  if (!t.requires_grad(xv)) return t.push(std::move(y));
  return t.push(std::move(y), [xv](Tape& tp, Var self) {
    const Tensor& x = tp.value(xv);
    const Tensor& gy = tp.grad(self);
    Tensor& dx = tp.grad(xv);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x.data[i]));
      dx.data[i] += gy.data[i] * s * (1.0 + x.data[i] * (1.0 - s));
    }
  });
}

Var linear(Tape& t, Var xv, Var wv, Var bv) {
  const Tensor& x = t.value(xv);
  const Tensor& w = t.value(wv);
  const Tensor& b = t.value(bv);
  check(x.rank() == 2 && w.rank() == 2 && w.dim(1) == x.dim(1) && b.numel() == static_cast<std::size_t>(w.dim(0)),
        "linear: shape mismatch");
  const int N = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor y({N, out});
  MapMat ym(y.data.data(), N, out);
  ym.noalias() = ConstMapMat(x.data.data(), N, in) * ConstMapMat(w.data.data(), out, in).transpose();
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < out; ++o) ym(n, o) += b.data[o];
  const bool ng = t.requires_grad(xv) || t.requires_grad(wv) || t.requires_grad(bv);
  if (!ng) return t.push(std::move(y));
  return t.push(std::move(y), [xv, wv, bv, N, in, out](Tape& tp, Var self) {
    ConstMapMat gy(tp.grad(self).data.data(), N, out);
    if (tp.requires_grad(wv))
      MapMat(tp.grad(wv).data.data(), out, in).noalias() += gy.transpose() * ConstMapMat(tp.value(xv).data.data(), N, in);
    if (tp.requires_grad(bv)) {
      Tensor& db = tp.grad(bv);
      for (int o = 0; o < out; ++o) db.data[o] += gy.col(o).sum();
    }
    if (tp.requires_grad(xv))
      MapMat(tp.grad(xv).data.data(), N, in).noalias() += gy * ConstMapMat(tp.value(wv).data.data(), out, in);
  });
}

Var add(Tape& t, Var av, Var bv) {
  const Tensor& a = t.value(av);
  const Tensor& b = t.value(bv);
  check(a.shape == b.shape, "add: shape mismatch");
  Tensor y(a.shape);
  for (std::size_t i = 0; i < a.numel(); ++i) y.data[i] = a.data[i] + b.data[i];
  const bool ng = t.requires_grad(av) || t.requires_grad(bv);
  if (!ng) return t.push(std::move(y));
  return t.push(std::move(y), [av, bv](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    for (Var v : {av, bv}) {
      if (!tp.requires_grad(v)) continue;
      Tensor& d = tp.grad(v);
      for (std::size_t i = 0; i < gy.numel(); ++i) d.data[i] += gy.data[i];
    }
  });
}

Var scale_samples(Tape& t, Var xv, std::vector<double> s) {
  const Tensor& x = t.value(xv);
  check(x.rank() >= 1 && static_cast<std::size_t>(x.dim(0)) == s.size(), "scale_samples: one factor per sample");
  const std::size_t per = s.empty() ? 0 : x.numel() / s.size();
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) y.data[i] = s[i / per] * x.data[i];
  if (!t.requires_grad(xv)) return t.push(std::move(y));
  return t.push(std::move(y), [xv, s = std::move(s), per](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    Tensor& d = tp.grad(xv);
    for (std::size_t i = 0; i < gy.numel(); ++i) d.data[i] += s[i / per] * gy.data[i];
  });
}

Var add_channel_bias(Tape& t, Var xv, Var biasv) {
  const Tensor& x = t.value(xv);
  const Tensor& bias = t.value(biasv);
  check(x.rank() == 4 && bias.rank() == 2 && bias.dim(0) == x.dim(0) && bias.dim(1) == x.dim(1),
        "add_channel_bias: shape mismatch");
  const int NC = x.dim(0) * x.dim(1), HW = x.dim(2) * x.dim(3);
  Tensor y = x;
  for (int nc = 0; nc < NC; ++nc)
    for (int i = 0; i < HW; ++i) y.data[static_cast<std::size_t>(nc) * HW + i] += bias.data[nc];
  const bool ng = t.requires_grad(xv) || t.requires_grad(biasv);
  if (!ng) return t.push(std::move(y));
  return t.push(std::move(y), [xv, biasv, NC, HW](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    if (tp.requires_grad(xv)) {
      Tensor& dx = tp.grad(xv);
      for (std::size_t i = 0; i < gy.numel(); ++i) dx.data[i] += gy.data[i];
    }
    if (tp.requires_grad(biasv)) {
      Tensor& db = tp.grad(biasv);
      for (int nc = 0; nc < NC; ++nc) {
        double s = 0.0;
        for (int i = 0; i < HW; ++i) s += gy.data[static_cast<std::size_t>(nc) * HW + i];
        db.data[nc] += s;
      }
    }
  });
}

Var concat_channels(Tape& t, Var av, Var bv) {
  const Tensor& a = t.value(av);
  const Tensor& b = t.value(bv);
  check(a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3),
        "concat_channels: shape mismatch");
  const int N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
  const std::size_t HW = static_cast<std::size_t>(a.dim(2)) * a.dim(3);
  Tensor y({N, Ca + Cb, a.dim(2), a.dim(3)});
  for (int n = 0; n < N; ++n) {
    std::copy_n(a.data.data() + n * Ca * HW, Ca * HW, y.data.data() + n * (Ca + Cb) * HW);
    std::copy_n(b.data.data() + n * Cb * HW, Cb * HW, y.data.data() + (n * (Ca + Cb) + Ca) * HW);
  }
  const bool ng = t.requires_grad(av) || t.requires_grad(bv);
  if (!ng) return t.push(std::move(y));
  return t.push(std::move(y), [av, bv, N, Ca, Cb, HW](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    for (int n = 0; n < N; ++n) {
      if (tp.requires_grad(av)) {
        double* d = tp.grad(av).data.data() + n * Ca * HW;
        const double* s = gy.data.data() + n * (Ca + Cb) * HW;
        for (std::size_t i = 0; i < Ca * HW; ++i) d[i] += s[i];
      }
      if (tp.requires_grad(bv)) {
        double* d = tp.grad(bv).data.data() + n * Cb * HW;
        const double* s = gy.data.data() + (n * (Ca + Cb) + Ca) * HW;
        for (std::size_t i = 0; i < Cb * HW; ++i) d[i] += s[i];
      }
    }
  });
}

Var avg_pool2(Tape& t, Var xv) {
  const Tensor& x = t.value(xv);
  check(x.rank() == 4 && x.dim(2) % 2 == 0 && x.dim(3) % 2 == 0, "avg_pool2: spatial dims must be even");
  const int NC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3), h = H / 2, w = W / 2;
  Tensor y({x.dim(0), x.dim(1), h, w});
  for (int nc = 0; nc < NC; ++nc)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const double* p = x.data.data() + (static_cast<std::size_t>(nc) * H + 2 * r) * W + 2 * c;
        y.data[(static_cast<std::size_t>(nc) * h + r) * w + c] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
  if (!t.requires_grad(xv)) return t.push(std::move(y));
  return t.push(std::move(y), [xv, NC, H, W, h, w](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    Tensor& dx = tp.grad(xv);
    for (int nc = 0; nc < NC; ++nc)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          const double g = 0.25 * gy.data[(static_cast<std::size_t>(nc) * h + r) * w + c];
          double* p = dx.data.data() + (static_cast<std::size_t>(nc) * H + 2 * r) * W + 2 * c;
          p[0] += g;
          p[1] += g;
          p[W] += g;
          p[W + 1] += g;
        }
  });
}

Var upsample_nearest2(Tape& t, Var xv) {
  const Tensor& x = t.value(xv);
  check(x.rank() == 4, "upsample_nearest2: expected NCHW");
  const int NC = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), H = 2 * h, W = 2 * w;
  Tensor y({x.dim(0), x.dim(1), H, W});
  for (int nc = 0; nc < NC; ++nc)
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        y.data[(static_cast<std::size_t>(nc) * H + r) * W + c] = x.data[(static_cast<std::size_t>(nc) * h + r / 2) * w + c / 2];
  if (!t.requires_grad(xv)) return t.push(std::move(y));
  return t.push(std::move(y), [xv, NC, H, W, h, w](Tape& tp, Var self) {
    const Tensor& gy = tp.grad(self);
    Tensor& dx = tp.grad(xv);
    for (int nc = 0; nc < NC; ++nc)
      for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
          dx.data[(static_cast<std::size_t>(nc) * h + r / 2) * w + c / 2] += gy.data[(static_cast<std::size_t>(nc) * H + r) * W + c];
  });
}

std::vector<double> attention_weights(std::span<const double> q, std::span<const double> k, int C, int L) {
  check(q.size() == static_cast<std::size_t>(C) * L && k.size() == q.size(), "attention_weights: size mismatch");
  ConstMapMat qm(q.data(), C, L), km(k.data(), C, L);
  RowMat s = (qm.transpose() * km) / std::sqrt(static_cast<double>(C));
  for (int i = 0; i < L; ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
  return std::vector<double>(s.data(), s.data() + s.size());
}

Var attention(Tape& t, Var qv, Var kv, Var vv) {
  const Tensor& q = t.value(qv);
  const Tensor& k = t.value(kv);
  const Tensor& v = t.value(vv);
  check(q.rank() == 4 && q.shape == k.shape && q.shape == v.shape, "attention: shape mismatch");
  const int N = q.dim(0), C = q.dim(1), L = q.dim(2) * q.dim(3);
  const std::size_t per = static_cast<std::size_t>(C) * L;
  Tensor y(q.shape);
  auto weights = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * L * L);
  for (int n = 0; n < N; ++n) {
    const auto a = attention_weights({q.data.data() + n * per, per}, {k.data.data() + n * per, per}, C, L);
    std::copy(a.begin(), a.end(), weights->begin() + static_cast<std::ptrdiff_t>(n) * L * L);
    // out (C, L) = V (C, L) * A^T
    MapMat(y.data.data() + n * per, C, L).noalias() =
        ConstMapMat(v.data.data() + n * per, C, L) * ConstMapMat(a.data(), L, L).transpose();
  }
  const bool ng = t.requires_grad(qv) || t.requires_grad(kv) || t.requires_grad(vv);
  if (!ng) return t.push(std::move(y));
  return t.push(std::move(y), [qv, kv, vv, N, C, L, per, weights](Tape& tp, Var self) {
    const Tensor& q = tp.value(qv);
    const Tensor& k = tp.value(kv);
    const Tensor& v = tp.value(vv);
    const Tensor& gy = tp.grad(self);
    const double scale = 1.0 / std::sqrt(static_cast<double>(C));
    for (int n = 0; n < N; ++n) {
      ConstMapMat A(weights->data() + static_cast<std::size_t>(n) * L * L, L, L);
      ConstMapMat dO(gy.data.data() + n * per, C, L);
      ConstMapMat V(v.data.data() + n * per, C, L);
      if (tp.requires_grad(vv)) MapMat(tp.grad(vv).data.data() + n * per, C, L).noalias() += dO * A;
      // dA (L, L) = dO^T V
      RowMat dA = dO.transpose() * V;
      RowMat dS(L, L);
      for (int i = 0; i < L; ++i) {
        const double r = (dA.row(i).array() * A.row(i).array()).sum();
        dS.row(i) = A.row(i).array() * (dA.row(i).array() - r);
      }
      dS *= scale;
      ConstMapMat Q(q.data.data() + n * per, C, L), K(k.data.data() + n * per, C, L);
      // S = Q^T K: dQ (C, L) = K dS^T, dK = Q dS
      if (tp.requires_grad(qv)) MapMat(tp.grad(qv).data.data() + n * per, C, L).noalias() += K * dS.transpose();
      if (tp.requires_grad(kv)) MapMat(tp.grad(kv).data.data() + n * per, C, L).noalias() += Q * dS;
    }
  });
}

Var mse_loss(Tape& t, Var pv, Var tv) {
  const Tensor& p = t.value(pv);
  const Tensor& target = t.value(tv);
  check(p.shape == target.shape, "mse_loss: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = p.data[i] - target.data[i];
    s += d * d;
  }
  const double n = static_cast<double>(p.numel());
  Tensor y({1}, s / n);
  if (!t.requires_grad(pv) && !t.requires_grad(tv)) return t.push(std::move(y));
  return t.push(std::move(y), [pv, tv, n](Tape& tp, Var self) {
    const double g = tp.grad(self).data[0];
    const Tensor& p = tp.value(pv);
    const Tensor& target = tp.value(tv);
    for (Var v : {pv, tv}) {
      if (!tp.requires_grad(v)) continue;
      const double sign = v == pv ? 1.0 : -1.0;
      Tensor& d = tp.grad(v);
      for (std::size_t i = 0; i < p.numel(); ++i) d.data[i] += sign * 2.0 * g * (p.data[i] - target.data[i]) / n;
    }
  });
}

}  // namespace lamino::nn
