#include "maskprop/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace maskprop {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void check_aligned(const MaskVolume& a, const MaskVolume& b, const char* who) {
  if (a.depth != b.depth || a.height != b.height || a.width != b.width)
    fail(std::string(who) + ": mask shape mismatch");
}

// Canonical squared distance between voxel centers; the brute-force oracle
// in the tests uses the same expression, so min/max/sum results agree
// bitwise as long as both sides consider the true nearest site.
inline double dist2(const Voxel& p, const Voxel& q, const Spacing& s) {
  const double dz = (p[0] - q[0]) * s.z;
  const double dy = (p[1] - q[1]) * s.y;
  const double dx = (p[2] - q[2]) * s.x;
  return dz * dz + dy * dy + dx * dx;
}

// Nearest-site distances from each query voxel to the site set, found by
// scanning Chebyshev shells around the query until the shell lower bound
// exceeds the best squared distance seen.
std::vector<double> directed_distances(const std::vector<Voxel>& queries,
                                       const std::vector<Voxel>& sites,
                                       const MaskVolume& site_grid_shape, const Spacing& sp) {
  const int T = site_grid_shape.depth, H = site_grid_shape.height, W = site_grid_shape.width;
  std::vector<std::uint8_t> site_map(static_cast<std::size_t>(T) * H * W, 0);
  for (const auto& s : sites)
    site_map[(static_cast<long>(s[0]) * H + s[1]) * W + s[2]] = 1;
  const double min_sp = std::min({sp.z, sp.y, sp.x});
  const int max_radius = std::max({T, H, W});

  std::vector<double> out;
  out.reserve(queries.size());
  for (const auto& q : queries) {
    double best = std::numeric_limits<double>::infinity();
    for (int rad = 0; rad <= max_radius; ++rad) {
      const double lower = rad * min_sp;
      if (lower * lower > best) break;
      const int z0 = q[0] - rad, z1 = q[0] + rad;
      const int y0 = q[1] - rad, y1 = q[1] + rad;
      const int x0 = q[2] - rad, x1 = q[2] + rad;
      for (int z = std::max(z0, 0); z <= std::min(z1, T - 1); ++z) {
        const bool z_face = (z == z0 || z == z1);
        for (int y = std::max(y0, 0); y <= std::min(y1, H - 1); ++y) {
          const bool y_face = (y == y0 || y == y1);
          int xa = std::max(x0, 0), xb = std::min(x1, W - 1);
          int step = 1;
          if (!z_face && !y_face) {
            // interior rows of the shell only touch the two x faces
            if (x0 >= 0 && x0 < W) {
              if (site_map[(static_cast<long>(z) * H + y) * W + x0]) {
                const double d2 = dist2(q, {z, y, x0}, sp);
                if (d2 < best) best = d2;
              }
            }
            if (x1 >= 0 && x1 < W && x1 != x0) {
              if (site_map[(static_cast<long>(z) * H + y) * W + x1]) {
                const double d2 = dist2(q, {z, y, x1}, sp);
                if (d2 < best) best = d2;
              }
            }
            continue;
          }
          for (int x = xa; x <= xb; x += step) {
            if (site_map[(static_cast<long>(z) * H + y) * W + x]) {
              const double d2 = dist2(q, {z, y, x}, sp);
              if (d2 < best) best = d2;
            }
          }
        }
      }
    }
    out.push_back(std::sqrt(best));
  }
  return out;
}

}  // namespace

double ConfusionCounts::precision() const {
  return tp + fp == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double ConfusionCounts::recall() const {
  return tp + fn == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

ConfusionCounts confusion_counts(const MaskVolume& pred, const MaskVolume& gt) {
  check_aligned(pred, gt, "confusion_counts");
  ConfusionCounts c;
  for (long i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[static_cast<std::size_t>(i)] != 0;
    const bool g = gt.data[static_cast<std::size_t>(i)] != 0;
    if (p && g)
      ++c.tp;
    else if (p)
      ++c.fp;
    else if (g)
      ++c.fn;
    else
      ++c.tn;
  }
  return c;
}

std::vector<Voxel> surface_voxels(const MaskVolume& mask) {
  std::vector<Voxel> out;
  const int T = mask.depth, H = mask.height, W = mask.width;
  auto bg_or_oob = [&](int t, int y, int x) {
    if (t < 0 || t >= T || y < 0 || y >= H || x < 0 || x >= W) return true;
    return mask.at(t, y, x) == 0;
  };
  for (int t = 0; t < T; ++t)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        if (!mask.at(t, y, x)) continue;
        if (bg_or_oob(t - 1, y, x) || bg_or_oob(t + 1, y, x) || bg_or_oob(t, y - 1, x) ||
            bg_or_oob(t, y + 1, x) || bg_or_oob(t, y, x - 1) || bg_or_oob(t, y, x + 1))
          out.push_back({t, y, x});
      }
  return out;
}

std::pair<double, double> hausdorff_asd(const MaskVolume& pred, const MaskVolume& gt,
                                        const Spacing& spacing) {
  check_aligned(pred, gt, "hausdorff_asd");
  const auto sp_pred = surface_voxels(pred);
  const auto sp_gt = surface_voxels(gt);
  if (sp_pred.empty() || sp_gt.empty())
    fail("hausdorff_asd: undefined surface distance (empty mask)");

  const auto d_pg = directed_distances(sp_pred, sp_gt, pred, spacing);
  const auto d_gp = directed_distances(sp_gt, sp_pred, pred, spacing);

  double max_pg = 0.0, max_gp = 0.0, sum_pg = 0.0, sum_gp = 0.0;
  for (double d : d_pg) {
    max_pg = std::max(max_pg, d);
    sum_pg += d;
  }
  for (double d : d_gp) {
    max_gp = std::max(max_gp, d);
    sum_gp += d;
  }
  const double hdd = std::max(max_pg, max_gp);
  const double asd =
      0.5 * (sum_pg / static_cast<double>(d_pg.size()) + sum_gp / static_cast<double>(d_gp.size()));
  return {hdd, asd};
}

std::vector<double> surface_error_map(const MaskVolume& pred, const MaskVolume& gt,
                                      const Spacing& spacing) {
  check_aligned(pred, gt, "surface_error_map");
  const auto sp_pred = surface_voxels(pred);
  const auto sp_gt = surface_voxels(gt);
  if (sp_pred.empty() || sp_gt.empty())
    fail("surface_error_map: undefined surface distance (empty mask)");
  return directed_distances(sp_pred, sp_gt, pred, spacing);
}

double volume_mm3(const MaskVolume& mask, const Spacing& spacing) {
  return static_cast<double>(mask.count_fg()) * spacing.voxel_mm3();
}

double volume_error_pct(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing) {
  check_aligned(pred, gt, "volume_error_pct");
  const double vg = volume_mm3(gt, spacing);
  if (vg == 0.0) fail("volume_error_pct: ground-truth volume is empty");
  const double vp = volume_mm3(pred, spacing);
  return std::fabs(vp - vg) / vg * 100.0;
}

namespace {

// per-slice 2D variants used for score-distribution reporting
double slice_dice(const MaskVolume& pred, const MaskVolume& gt, int t) {
  long tp = 0, fp = 0, fn = 0;
  for (int y = 0; y < pred.height; ++y)
    for (int x = 0; x < pred.width; ++x) {
      const bool p = pred.at(t, y, x) != 0, g = gt.at(t, y, x) != 0;
      tp += p && g;
      fp += p && !g;
      fn += !p && g;
    }
  if (2 * tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::vector<Voxel> slice_surface(const MaskVolume& m, int t) {
  std::vector<Voxel> out;
  auto bg = [&](int y, int x) {
    if (y < 0 || y >= m.height || x < 0 || x >= m.width) return true;
    return m.at(t, y, x) == 0;
  };
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(t, y, x) && (bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1)))
        out.push_back({0, y, x});
  return out;
}

double slice_hdd(const MaskVolume& pred, const MaskVolume& gt, int t, const Spacing& sp) {
  const auto a = slice_surface(pred, t);
  const auto b = slice_surface(gt, t);
  if (a.empty() || b.empty()) return std::numeric_limits<double>::quiet_NaN();
  double hdd = 0.0;
  auto directed = [&](const std::vector<Voxel>& from, const std::vector<Voxel>& to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, dist2(p, q, sp));
      worst = std::max(worst, best);
    }
    return worst;
  };
  hdd = std::sqrt(std::max(directed(a, b), directed(b, a)));
  return hdd;
}

}  // namespace

MetricsReport evaluate(const MaskVolume& pred, const MaskVolume& gt, const Spacing& spacing,
                       SliceScores* per_slice) {
  check_aligned(pred, gt, "evaluate");
  MetricsReport r;
  const auto c = confusion_counts(pred, gt);
  const long dice_den = 2 * c.tp + c.fp + c.fn;
  r.dice = dice_den == 0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(dice_den);
  const long union_count = c.tp + c.fp + c.fn;
  r.miou = union_count == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(union_count);
  r.precision = c.precision();
  r.recall = c.recall();
  r.vol_pred_mm3 = volume_mm3(pred, spacing);
  r.vol_gt_mm3 = volume_mm3(gt, spacing);
  r.vol_err_pct = volume_error_pct(pred, gt, spacing);
  if (pred.count_fg() > 0 && gt.count_fg() > 0) {
    const auto [hdd, asd] = hausdorff_asd(pred, gt, spacing);
    r.hdd_mm = hdd;
    r.asd_mm = asd;
    r.distances_defined = true;
  } else {
    r.hdd_mm = std::numeric_limits<double>::quiet_NaN();
    r.asd_mm = std::numeric_limits<double>::quiet_NaN();
    r.distances_defined = false;
  }
  if (per_slice) {
    per_slice->dice.clear();
    per_slice->hdd_mm.clear();
    for (int t = 0; t < pred.depth; ++t) {
      per_slice->dice.push_back(slice_dice(pred, gt, t));
      per_slice->hdd_mm.push_back(slice_hdd(pred, gt, t, spacing));
    }
  }
  return r;
}

std::string metrics_csv_header() {
  return "structure,dice,miou,hdd_mm,asd_mm,precision,recall,vol_pred_mm3,vol_gt_mm3,vol_err_pct";
}

std::string metrics_csv_row(const std::string& structure, const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                structure.c_str(), r.dice, r.miou, r.hdd_mm, r.asd_mm, r.precision, r.recall,
                r.vol_pred_mm3, r.vol_gt_mm3, r.vol_err_pct);
  return buf;
}

}  // namespace maskprop
