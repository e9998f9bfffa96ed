#include "maskprop/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace maskprop {

namespace {

void check_two_channel(const Tensor& t, const char* who) {
  require(t.rank() >= 1 && t.dims.back() == 2,
          std::string(who) + ": expected 2-channel tensor, got " + t.shape_str());
}

struct TverskyTerms {
  double tp = 0.0, fp = 0.0, fn = 0.0;
};

TverskyTerms tversky_terms(const Tensor& y_hat, const Tensor& y) {
  require(y_hat.same_shape(y), "tversky_index: shape mismatch");
  TverskyTerms s;
  for (long i = 0; i < y_hat.numel(); i += 2) {
    const double p0 = y_hat.v[i], p1 = y_hat.v[i + 1];
    const double y0 = y.v[i], y1 = y.v[i + 1];
    s.tp += p0 * y0;
    s.fp += p0 * y1;
    s.fn += p1 * y0;
  }
  return s;
}

}  // namespace

std::pair<double, double> alpha_beta(double a, double b) {
  double alpha = 1.0 / (1.0 + std::exp(b - a));
  // keep the pair strictly inside (0,1) even when the sigmoid saturates
  alpha = std::min(std::max(alpha, std::nextafter(0.0, 1.0)), std::nextafter(1.0, 0.0));
  return {alpha, 1.0 - alpha};
}

std::pair<double, double> alpha_beta(const LossParams& params) {
  return alpha_beta(params.a, params.b);
}

double dice_coeff(const Tensor& y_hat_fg, const Tensor& y_fg) {
  require(y_hat_fg.same_shape(y_fg), "dice_coeff: shape mismatch");
  double num = 0.0, den = 0.0;
  for (long i = 0; i < y_hat_fg.numel(); ++i) {
    const double p = y_hat_fg.v[i], y = y_fg.v[i];
    require(y == 0.0 || y == 1.0, "dice_coeff: target must be binary");
    num += p * y;
    den += p * p + y * y;
  }
  if (den == 0.0) return 1.0;  // both empty
  return 2.0 * num / den;
}

double tversky_index(const Tensor& y_hat, const Tensor& y, double alpha, double beta) {
  check_two_channel(y_hat, "tversky_index");
  check_two_channel(y, "tversky_index");
  require(std::fabs(alpha + beta - 1.0) <= 1e-6,
          "tversky_index: alpha + beta must equal 1 (use alpha_beta)");
  const auto s = tversky_terms(y_hat, y);
  return (s.tp + kTverskyEps) / (s.tp + alpha * s.fp + beta * s.fn + kTverskyEps);
}

double tversky_index_window(const Tensor& y_hat, const Tensor& y, double alpha, double beta) {
  require(y_hat.rank() == 4, "tversky_index_window: expected (w,H,W,2)");
  return tversky_index(y_hat, y, alpha, beta);
}

double total_loss(const std::vector<double>& per_step_tis, int w, double params_l2_norm_sq,
                  double lambda, WindowFactor factor) {
  require(!per_step_tis.empty(), "total_loss: empty index list");
  require(w >= 1, "total_loss: w must be >= 1");
  const double wf = factor == WindowFactor::literal ? 1.0 / w : 1.0;
  double acc = 0.0;
  for (double ti : per_step_tis) acc += wf * ti;
  return 1.0 - acc / static_cast<double>(per_step_tis.size()) + lambda * params_l2_norm_sq;
}

// ---------------------------------------------------------------------------
// graph pieces
// ---------------------------------------------------------------------------

std::pair<ag::NodeP, ag::NodeP> alpha_beta_node(ag::Tape& tape, ag::NodeP a, ag::NodeP b) {
  auto alpha = ag::sigmoid(tape, ag::s_sub(tape, a, b));
  auto beta = ag::s_sub(tape, tape.constant(Tensor::scalar(1.0)), alpha);
  return {alpha, beta};
}

ag::NodeP tversky_index_node(ag::Tape& tape, ag::NodeP y_hat, ag::NodeP y, ag::NodeP alpha,
                             ag::NodeP beta) {
  check_two_channel(y_hat->val, "tversky_index_node");
  require(y_hat->val.same_shape(y->val), "tversky_index_node: shape mismatch");
  const int c = 2;
  auto p0 = ag::slice_c(tape, y_hat, 0, 1);
  auto p1 = ag::slice_c(tape, y_hat, 1, c);
  auto y0 = ag::slice_c(tape, y, 0, 1);
  auto y1 = ag::slice_c(tape, y, 1, c);
  auto tp = ag::dot(tape, p0, y0);
  auto fp = ag::dot(tape, p0, y1);
  auto fn = ag::dot(tape, p1, y0);
  auto num = ag::add_scalar(tape, tp, kTverskyEps);
  auto den = ag::add_scalar(
      tape,
      ag::s_add(tape, tp, ag::s_add(tape, ag::s_mul(tape, alpha, fp), ag::s_mul(tape, beta, fn))),
      kTverskyEps);
  return ag::s_div(tape, num, den);
}

ag::NodeP total_loss_node(ag::Tape& tape, const std::vector<ag::NodeP>& tis, int w,
                          long n_steps_total, ag::NodeP params_l2, double lambda,
                          WindowFactor factor) {
  require(!tis.empty(), "total_loss_node: empty index list");
  const double wf = factor == WindowFactor::literal ? 1.0 / w : 1.0;
  ag::NodeP acc = tis[0];
  for (std::size_t i = 1; i < tis.size(); ++i) acc = ag::s_add(tape, acc, tis[i]);
  acc = ag::scale(tape, acc, -wf / static_cast<double>(n_steps_total));
  auto loss = ag::add_scalar(tape, acc, 1.0);
  return ag::s_add(tape, loss, ag::scale(tape, params_l2, lambda));
}

}  // namespace maskprop
