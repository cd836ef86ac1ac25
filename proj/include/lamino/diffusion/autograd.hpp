#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace lamino::nn {

/// Dense row-major tensor. Image tensors are (N, C, H, W).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, double fill = 0.0);
  Tensor(std::vector<int> s, std::vector<double> d);

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }
};

std::size_t numel_of(const std::vector<int>& shape);

/// Reverse-mode tape. Every op appends a node holding its value and a
/// closure that pushes the node's gradient back to its inputs. Nodes are
/// released with the tape.
class Tape {
 public:
  using Id = int;

  /// Leaf whose gradient is accumulated into `grad_sink` (if non-null) by backward().
  Id leaf(const Tensor& value, Tensor* grad_sink = nullptr);
  Id constant(Tensor value);

  const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)]->value; }
  Tensor& grad(Id id);

  /// Seeds d(loss)/d(loss) = 1 for a scalar node and runs every closure in reverse.
  void backward(Id loss);

  /// Internal: appends a computed node.
  Id push(Tensor value, std::function<void(Tape&, Id)> backward_fn = {});
  bool requires_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)]->needs_grad; }
  void set_requires_grad(Id id, bool v) { nodes_[static_cast<std::size_t>(id)]->needs_grad = v; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    Tensor* sink = nullptr;
    std::function<void(Tape&, Id)> backward_fn;
  };
  std::vector<std::unique_ptr<Node>> nodes_;
};

using Var = Tape::Id;

// ---- ops ---------------------------------------------------------------

/// 2D convolution, stride 1, zero padding k/2. x (N,Cin,H,W), w (Cout,Cin,k,k), b (Cout).
Var conv2d(Tape& t, Var x, Var w, Var b);
/// Group normalisation with affine gamma/beta (C).
Var group_norm(Tape& t, Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
Var silu(Tape& t, Var x);
/// x (N, in), w (out, in), b (out) -> (N, out).
Var linear(Tape& t, Var x, Var w, Var b);
Var add(Tape& t, Var a, Var b);
/// Multiplies sample n of x (N, ...) by s[n].
Var scale_samples(Tape& t, Var x, std::vector<double> s);
/// x (N,C,H,W) + bias (N,C) broadcast over H, W.
Var add_channel_bias(Tape& t, Var x, Var bias);
Var concat_channels(Tape& t, Var a, Var b);
Var avg_pool2(Tape& t, Var x);
Var upsample_nearest2(Tape& t, Var x);
/// Single-head spatial self-attention core: q, k, v (N,C,H,W) ->
/// softmax(Q K^T / sqrt(C)) V with tokens = pixels, returned as (N,C,H,W).
Var attention(Tape& t, Var q, Var k, Var v);
/// Mean of squared differences over all elements; scalar (shape {1}).
Var mse_loss(Tape& t, Var pred, Var target);

/// Row-stochastic attention weights for one sample: q, k given as (C, L)
/// channel-major arrays; returns L x L row-major.
std::vector<double> attention_weights(std::span<const double> q, std::span<const double> k, int channels, int tokens);

}  // namespace lamino::nn
