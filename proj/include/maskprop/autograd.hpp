#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "maskprop/rng.hpp"
#include "maskprop/tensor.hpp"

namespace maskprop::ag {

// Reverse-mode autodiff over Tensor. Parameters are long-lived leaves; every
// intermediate is recorded on a Tape and freed when the tape is cleared.
struct Node {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

using NodeP = std::shared_ptr<Node>;

NodeP make_param(Tensor t);
NodeP make_const(Tensor t);
void zero_grad(const NodeP& n);

class Tape {
 public:
  // grad_enabled=false gives a pure forward pass: no gradients, no parent
  // links, no replay list, so intermediates free as soon as they go out of
  // scope.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  NodeP record(Tensor val, std::vector<NodeP> parents, std::function<void(Node&)> bw);
  NodeP constant(Tensor t);  // convenience; constants are not replayed

  // Accumulates d(root)/d(leaf) into .grad of every reachable node that
  // requires grad. root must be a scalar recorded on this tape.
  void backward(const NodeP& root);

  void clear() { order_.clear(); }
  std::size_t size() const { return order_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  bool grad_enabled_ = true;
  std::vector<NodeP> order_;
};

// --- elementwise / shape ---
NodeP add(Tape& tp, NodeP a, NodeP b);
NodeP sub(Tape& tp, NodeP a, NodeP b);
NodeP mul(Tape& tp, NodeP a, NodeP b);
NodeP scale(Tape& tp, NodeP a, double s);
NodeP add_scalar(Tape& tp, NodeP a, double s);
NodeP elu(Tape& tp, NodeP x);
NodeP sigmoid(Tape& tp, NodeP x);
NodeP tanh_op(Tape& tp, NodeP x);
NodeP softmax_c(Tape& tp, NodeP x);  // softmax over the channel (last) axis

NodeP concat_c(Tape& tp, NodeP a, NodeP b);
NodeP slice_c(Tape& tp, NodeP x, int c0, int c1);
NodeP slice_t(Tape& tp, NodeP x, int t);  // rank-4, keeps a depth axis of 1
NodeP concat_t(Tape& tp, const std::vector<NodeP>& xs);
NodeP pad_channels_to(Tape& tp, NodeP x, int c_total);

// --- reductions (scalar results, shape {1}) ---
NodeP dot(Tape& tp, NodeP a, NodeP b);
NodeP sum_sq(Tape& tp, NodeP a);

// --- scalar (1-element) arithmetic ---
NodeP s_add(Tape& tp, NodeP a, NodeP b);
NodeP s_sub(Tape& tp, NodeP a, NodeP b);
NodeP s_mul(Tape& tp, NodeP a, NodeP b);
NodeP s_div(Tape& tp, NodeP a, NodeP b);

// --- convolution / pooling; inputs are rank-4 (t, y, x, c) ---

// Dense conv, kernel (kt, ky, kx), stride 1, 'same' zero padding.
// w dims (kt, ky, kx, cin, cout), b dims (cout).
NodeP conv_full(Tape& tp, NodeP x, NodeP w, NodeP b, int kt, int ky, int kx);

// Depthwise 3x3x3 conv with dilation `dil` on all axes, 'same' padding.
// w dims (c, 3, 3, 3).
NodeP conv_dw3(Tape& tp, NodeP x, NodeP w, int dil);

// Pointwise 1x1x1 conv. w dims (cin, cout), b dims (cout).
NodeP conv_pw(Tape& tp, NodeP x, NodeP w, NodeP b);

// Transposed conv, kernel (1,2,2), stride (1,2,2): doubles y/x, keeps t.
// w dims (cin, 2, 2, cout), b dims (cout).
NodeP conv_tr22(Tape& tp, NodeP x, NodeP w, NodeP b);

// 2x2 max pool over (y, x); t and c preserved. y and x must be even.
NodeP maxpool_hw(Tape& tp, NodeP x);

// Whole-channel (spatial) dropout with inverted scaling. Consumes rng only
// when training; identity otherwise.
NodeP dropout_channels(Tape& tp, NodeP x, double p, Rng& rng, bool training);

}  // namespace maskprop::ag
