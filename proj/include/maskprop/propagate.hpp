#pragma once

#include <string>
#include <vector>

#include "maskprop/net.hpp"
#include "maskprop/volume.hpp"

namespace maskprop {

enum class FusePolicy { last, mean };

FusePolicy fuse_policy_from_string(const std::string& s);
std::string to_string(FusePolicy p);

// Combines overlapping per-window foreground-probability predictions into a
// per-slice probability map. `last` takes slice t from the window where t is
// the final (newest) slice; `mean` averages every window covering t.
// windows[k] is the (w,H,W,2) prediction for the window starting at slice k.
std::vector<Tensor> fuse_overlaps(const std::vector<Tensor>& windows, int depth, int w,
                                  FusePolicy policy);  // per-slice (H,W) fg maps

struct PropagationResult {
  MaskVolume mask;
  FusePolicy policy = FusePolicy::last;
};

// Sequential inference: seeds are the w expert slices at [0, w-1]; the
// prediction at step t feeds step t+1; output slices [0, w-1] equal the
// seeds exactly. Deterministic (no dropout).
PropagationResult propagate(const Checkpoint& ckpt, const Volume& volume, const MaskVolume& seeds,
                            FusePolicy policy = FusePolicy::last);

}  // namespace maskprop
