#pragma once

#include <utility>
#include <vector>

#include "maskprop/autograd.hpp"
#include "maskprop/tensor.hpp"

namespace maskprop {

// Learnable class-penalty parameters. (alpha, beta) = softmax(a, b), so the
// pair always sums to 1 and stays inside (0,1) no matter how a and b move.
struct LossParams {
  double a = 0.0;
  double b = 0.0;
  double lambda = 1e-5;  // l2 decay
};

// How the per-step index is folded into the total objective: `literal` keeps
// the 1/w factor next to each window term; `off` drops it.
enum class WindowFactor { literal, off };

std::pair<double, double> alpha_beta(const LossParams& params);
std::pair<double, double> alpha_beta(double a, double b);

// 2*sum(p*y) / (sum(p^2) + sum(y^2)); both-empty pairs score 1.
double dice_coeff(const Tensor& y_hat_fg, const Tensor& y_fg);

// Tversky index on 2-channel tensors (channel 0 = foreground). Smoothing
// epsilon 1e-7 keeps empty-mask gradients finite and makes empty/empty -> 1.
// alpha + beta must equal 1 within 1e-6.
double tversky_index(const Tensor& y_hat, const Tensor& y, double alpha, double beta);

// Window-wide accumulation: one ratio whose numerator and denominator sum
// over the whole (w,H,W) extent; NOT a mean of per-slice ratios.
double tversky_index_window(const Tensor& y_hat, const Tensor& y, double alpha, double beta);

// 1 - (1/n) * sum_t (TI_t / w (or TI_t)) + lambda * l2
double total_loss(const std::vector<double>& per_step_tis, int w, double params_l2_norm_sq,
                  double lambda, WindowFactor factor = WindowFactor::literal);

// ---------------------------------------------------------------------------
// Differentiable graph pieces used by training (and by the gradient checks).
// ---------------------------------------------------------------------------

// alpha = sigmoid(a - b), beta = 1 - alpha: softmax of (a,b) with the sum
// pinned to exactly 1.
std::pair<ag::NodeP, ag::NodeP> alpha_beta_node(ag::Tape& tape, ag::NodeP a, ag::NodeP b);

// Window-accumulated Tversky index of prediction vs one-hot target.
ag::NodeP tversky_index_node(ag::Tape& tape, ag::NodeP y_hat, ag::NodeP y, ag::NodeP alpha,
                             ag::NodeP beta);

// Scalar objective from per-step index nodes. n_steps_total is the
// normalizing count (the full number of recurrence steps, even when only a
// chunk's terms are present).
ag::NodeP total_loss_node(ag::Tape& tape, const std::vector<ag::NodeP>& tis, int w,
                          long n_steps_total, ag::NodeP params_l2, double lambda,
                          WindowFactor factor);

constexpr double kTverskyEps = 1e-7;

}  // namespace maskprop
