#include "maskprop/propagate.hpp"

#include <algorithm>
#include <stdexcept>

namespace maskprop {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

Tensor one_hot_feedback(const Tensor& probs) {
  Tensor out(probs.dims);
  for (long i = 0; i < probs.numel(); i += 2) {
    const double fg = probs.v[i] > 0.5 ? 1.0 : 0.0;
    out.v[i] = fg;
    out.v[i + 1] = 1.0 - fg;
  }
  return out;
}

}  // namespace

FusePolicy fuse_policy_from_string(const std::string& s) {
  if (s == "last") return FusePolicy::last;
  if (s == "mean") return FusePolicy::mean;
  fail("unknown fuse policy '" + s + "' (expected last or mean)");
}

std::string to_string(FusePolicy p) { return p == FusePolicy::last ? "last" : "mean"; }

std::vector<Tensor> fuse_overlaps(const std::vector<Tensor>& windows, int depth, int w,
                                  FusePolicy policy) {
  require(!windows.empty(), "fuse_overlaps: no windows");
  require(static_cast<int>(windows.size()) == depth - w + 1,
          "fuse_overlaps: expected " + std::to_string(depth - w + 1) + " windows");
  const int h = windows[0].dims[1], x = windows[0].dims[2];
  for (const auto& win : windows)
    require(win.rank() == 4 && win.dims[0] == w && win.dims[3] == 2,
            "fuse_overlaps: windows must be (w,H,W,2)");

  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(depth));
  if (policy == FusePolicy::last) {
    for (int t = 0; t < depth; ++t) {
      // window where t is the final slice; slices earlier than w-1 are never
      // final, so they read from the first window
      const int k = std::max(0, t - w + 1);
      const int pos = t - k;
      Tensor slice({h, x});
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < x; ++xx) slice.v[static_cast<long>(yy) * x + xx] =
            windows[static_cast<std::size_t>(k)].at4(pos, yy, xx, 0);
      out.push_back(std::move(slice));
    }
    return out;
  }
  for (int t = 0; t < depth; ++t) {
    const int k_lo = std::max(0, t - w + 1);
    const int k_hi = std::min(t, depth - w);
    Tensor slice({h, x});
    for (int k = k_lo; k <= k_hi; ++k) {
      const int pos = t - k;
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < x; ++xx)
          slice.v[static_cast<long>(yy) * x + xx] +=
              windows[static_cast<std::size_t>(k)].at4(pos, yy, xx, 0);
    }
    const double inv = 1.0 / static_cast<double>(k_hi - k_lo + 1);
    for (auto& v : slice.v) v *= inv;
    out.push_back(std::move(slice));
  }
  return out;
}

PropagationResult propagate(const Checkpoint& ckpt, const Volume& volume, const MaskVolume& seeds,
                            FusePolicy policy) {
  ModelState state = restore(ckpt);
  const auto& cfg = state.cfg;
  const int w = cfg.w;
  if (volume.height != cfg.in_hw || volume.width != cfg.in_hw)
    fail("propagate: volume " + std::to_string(volume.height) + "x" +
         std::to_string(volume.width) + " does not match checkpoint in_hw=" +
         std::to_string(cfg.in_hw));
  if (volume.depth < w) fail("propagate: volume shallower than the window");
  if (seeds.height != volume.height || seeds.width != volume.width)
    fail("propagate: seed masks do not align with the volume");
  if (seeds.depth != w && seeds.depth != volume.depth)
    fail("propagate: seeds must provide the first " + std::to_string(w) + " slices");

  state.training = false;
  state.reset_carry();

  MaskVolume seed_head(w, seeds.height, seeds.width, seeds.spacing);
  std::copy_n(seeds.data.begin(), seed_head.size(), seed_head.data.begin());

  const int n_steps = volume.depth - w + 1;
  std::vector<Tensor> window_preds;
  window_preds.reserve(static_cast<std::size_t>(n_steps));

  Tensor m_prev = mask_window(seed_head, 0, w);
  for (int k = 0; k < n_steps; ++k) {
    ag::Tape tape(false);  // pure forward pass
    auto probs = model_step(tape, state, image_window(volume, k, w), m_prev);
    window_preds.push_back(probs->val);
    m_prev = one_hot_feedback(probs->val);
    state.detach_carry();
  }

  const auto fused = fuse_overlaps(window_preds, volume.depth, w, policy);

  PropagationResult res;
  res.policy = policy;
  res.mask = MaskVolume(volume.depth, volume.height, volume.width, volume.spacing);
  for (int t = 0; t < volume.depth; ++t)
    for (int y = 0; y < volume.height; ++y)
      for (int x = 0; x < volume.width; ++x)
        res.mask.at(t, y, x) = fused[static_cast<std::size_t>(t)].v[static_cast<long>(y) * volume.width + x] > 0.5
                                   ? 1
                                   : 0;
  // seed slices pass through untouched
  for (int t = 0; t < w; ++t)
    for (int y = 0; y < volume.height; ++y)
      for (int x = 0; x < volume.width; ++x) res.mask.at(t, y, x) = seed_head.at(t, y, x);
  return res;
}

}  // namespace maskprop
