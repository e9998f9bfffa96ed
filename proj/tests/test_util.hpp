#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "maskprop/autograd.hpp"
#include "maskprop/rng.hpp"
#include "maskprop/tensor.hpp"

namespace testutil {

inline maskprop::Tensor random_tensor(std::vector<int> dims, maskprop::Rng& rng, double lo = -1.0,
                                      double hi = 1.0) {
  maskprop::Tensor t(std::move(dims));
  for (auto& x : t.v) x = rng.uniform(lo, hi);
  return t;
}

// Builds a scalar graph from leaf values and compares autodiff gradients
// against central finite differences for every element of every leaf marked
// differentiable. builder must be pure given the leaf values.
struct FdReport {
  double max_rel = 0.0;
  double max_abs = 0.0;
};

inline FdReport fd_check(
    const std::function<double(const std::vector<maskprop::Tensor>&)>& eval,
    const std::function<std::vector<maskprop::Tensor>(const std::vector<maskprop::Tensor>&)>& grads,
    std::vector<maskprop::Tensor> leaves, double eps = 1e-6) {
  FdReport rep;
  const auto analytic = grads(leaves);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    for (long i = 0; i < leaves[li].numel(); ++i) {
      const double keep = leaves[li].v[i];
      leaves[li].v[i] = keep + eps;
      const double fp = eval(leaves);
      leaves[li].v[i] = keep - eps;
      const double fm = eval(leaves);
      leaves[li].v[i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double ad = analytic[li].v[i];
      const double abs_err = std::fabs(fd - ad);
      const double rel = abs_err / std::max({std::fabs(fd), std::fabs(ad), 1e-8});
      rep.max_abs = std::max(rep.max_abs, abs_err);
      rep.max_rel = std::max(rep.max_rel, rel);
    }
  }
  return rep;
}

// Convenience wrapper for ops: leaves are all differentiable, objective is
// dot(out, probe) with a fixed probe so every output element matters.
inline FdReport fd_check_op(
    const std::function<maskprop::ag::NodeP(maskprop::ag::Tape&, const std::vector<maskprop::ag::NodeP>&)>&
        build,
    const std::vector<maskprop::Tensor>& leaf_vals, maskprop::Rng& rng, double eps = 1e-6) {
  using namespace maskprop;
  // probe fixed across evaluations
  Tensor probe;
  {
    ag::Tape tp;
    std::vector<ag::NodeP> ins;
    for (const auto& t : leaf_vals) ins.push_back(ag::make_param(t));
    auto out = build(tp, ins);
    probe = random_tensor(out->val.dims, rng, -1.0, 1.0);
  }
  auto eval = [&](const std::vector<Tensor>& vals) {
    ag::Tape tp;
    std::vector<ag::NodeP> ins;
    for (const auto& t : vals) ins.push_back(ag::make_param(t));
    auto out = build(tp, ins);
    auto loss = ag::dot(tp, out, tp.constant(probe));
    return loss->val.v[0];
  };
  auto grads = [&](const std::vector<Tensor>& vals) {
    ag::Tape tp;
    std::vector<ag::NodeP> ins;
    for (const auto& t : vals) ins.push_back(ag::make_param(t));
    auto out = build(tp, ins);
    auto loss = ag::dot(tp, out, tp.constant(probe));
    tp.backward(loss);
    std::vector<Tensor> gs;
    for (auto& n : ins) gs.push_back(n->grad);
    return gs;
  };
  return fd_check(eval, grads, leaf_vals, eps);
}

}  // namespace testutil
