#pragma once

#include <array>
#include <string>
#include <vector>

#include "maskprop/volume.hpp"

namespace maskprop {

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  double precision() const;  // empty prediction -> 1 by convention
  double recall() const;     // empty ground truth -> 1 by convention
};

ConfusionCounts confusion_counts(const MaskVolume& pred, const MaskVolume& gt);

using Voxel = std::array<int, 3>;  // (t, y, x)

// Foreground voxels with at least one 6-neighbor that is background or out
// of bounds, in sorted (t, y, x) order.
std::vector<Voxel> surface_voxels(const MaskVolume& mask);

// Exact symmetric Hausdorff / average surface distance between the two
// surface voxel sets under anisotropic spacing, in mm. Errors on empty masks.
std::pair<double, double> hausdorff_asd(const MaskVolume& pred, const MaskVolume& gt,
                                        const Spacing& spacing);

// Distance of every pred surface voxel to the nearest gt surface voxel (mm),
// aligned with surface_voxels(pred). The max equals the directed Hausdorff.
std::vector<double> surface_error_map(const MaskVolume& pred, const MaskVolume& gt,
                                      const Spacing& spacing);

double volume_mm3(const MaskVolume& mask, const Spacing& spacing);
double volume_error_pct(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing);

struct MetricsReport {
  double dice = 0.0;
  double miou = 0.0;
  double hdd_mm = 0.0;
  double asd_mm = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double vol_pred_mm3 = 0.0;
  double vol_gt_mm3 = 0.0;
  double vol_err_pct = 0.0;
  bool distances_defined = false;  // false when either surface is empty
};

struct SliceScores {
  std::vector<double> dice;    // per-slice 2D dice
  std::vector<double> hdd_mm;  // per-slice 2D Hausdorff; NaN where undefined
};

MetricsReport evaluate(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing,
                       SliceScores* per_slice = nullptr);

// CSV row with the fixed header
//   structure,dice,miou,hdd_mm,asd_mm,precision,recall,vol_pred_mm3,vol_gt_mm3,vol_err_pct
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& structure, const MetricsReport& r);

}  // namespace maskprop
