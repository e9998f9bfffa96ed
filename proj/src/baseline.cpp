#include "maskprop/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace maskprop {

namespace {

// Large finite sentinel for "no site"; keeps the parabola envelope free of
// inf-inf arithmetic while never beating a real candidate (grid squared
// distances stay far below it).
constexpr double kBig = 1e20;

// Felzenszwalb-Huttenlocher 1D squared distance transform (unit spacing).
void dt1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::vector<double> z(static_cast<std::size_t>(n) + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kBig;
  z[1] = kBig;
  for (int q = 1; q < n; ++q) {
    double s;
    while (true) {
      const int p = v[static_cast<std::size_t>(k)];
      s = ((f[static_cast<std::size_t>(q)] + q * q) - (f[static_cast<std::size_t>(p)] + p * p)) /
          (2.0 * q - 2.0 * p);
      if (k > 0 && s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = s;
    z[static_cast<std::size_t>(k) + 1] = kBig;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    d[static_cast<std::size_t>(q)] =
        (q - p) * static_cast<double>(q - p) + f[static_cast<std::size_t>(p)];
  }
}

// 2D Euclidean distance (voxel units) to the nearest set pixel; ~sqrt(kBig)
// when the set is empty.
std::vector<double> edt2d(const std::vector<std::uint8_t>& set, int h, int w) {
  std::vector<double> d(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = set[i] ? 0.0 : kBig;
  std::vector<double> f(static_cast<std::size_t>(std::max(h, w)));
  std::vector<double> tmp(static_cast<std::size_t>(std::max(h, w)));
  // columns
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[static_cast<std::size_t>(y)] = d[static_cast<std::size_t>(y) * w + x];
    dt1d(f, tmp, h);
    for (int y = 0; y < h; ++y) d[static_cast<std::size_t>(y) * w + x] = tmp[static_cast<std::size_t>(y)];
  }
  // rows
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) f[static_cast<std::size_t>(x)] = d[static_cast<std::size_t>(y) * w + x];
    dt1d(f, tmp, w);
    for (int x = 0; x < w; ++x) d[static_cast<std::size_t>(y) * w + x] = std::sqrt(tmp[static_cast<std::size_t>(x)]);
  }
  return d;
}

// Signed distance, positive inside the mask.
std::vector<double> sdt2d(const MaskVolume& m, int t) {
  const int h = m.height, w = m.width;
  std::vector<std::uint8_t> fg(static_cast<std::size_t>(h) * w), bg(static_cast<std::size_t>(h) * w);
  bool any_fg = false, any_bg = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const bool v = m.at(t, y, x) != 0;
      fg[static_cast<std::size_t>(y) * w + x] = v;
      bg[static_cast<std::size_t>(y) * w + x] = !v;
      any_fg |= v;
      any_bg |= !v;
    }
  std::vector<double> out(static_cast<std::size_t>(h) * w);
  if (!any_fg) {
    std::fill(out.begin(), out.end(), -1e6);
    return out;
  }
  if (!any_bg) {
    std::fill(out.begin(), out.end(), 1e6);
    return out;
  }
  const auto d_fg = edt2d(fg, h, w);
  const auto d_bg = edt2d(bg, h, w);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d_bg[i] - d_fg[i];
  return out;
}

int nearest_annotated(const AnnotationSchedule& s, int t) {
  int best = s.indices.front();
  int best_d = std::abs(t - best);
  for (int idx : s.indices) {
    const int d = std::abs(t - idx);
    if (d < best_d) {  // strict: ties keep the lower index
      best_d = d;
      best = idx;
    }
  }
  return best;
}

void copy_slice(const MaskVolume& src, int ts, MaskVolume& dst, int td) {
  std::copy_n(&src.data[static_cast<long>(ts) * src.slice_size()], src.slice_size(),
              &dst.data[static_cast<long>(td) * dst.slice_size()]);
}

}  // namespace

MaskVolume zero_order_propagate(const MaskVolume& annotated, const AnnotationSchedule& schedule) {
  require(!schedule.indices.empty(), "zero_order_propagate: no annotated slices");
  for (int idx : schedule.indices)
    require(idx >= 0 && idx < annotated.depth, "zero_order_propagate: schedule index out of range");
  MaskVolume out(annotated.depth, annotated.height, annotated.width, annotated.spacing);
  for (int t = 0; t < out.depth; ++t) copy_slice(annotated, nearest_annotated(schedule, t), out, t);
  return out;
}

FillBetweenResult fill_between_slices(const MaskVolume& annotated,
                                      const AnnotationSchedule& schedule) {
  require(!schedule.indices.empty(), "fill_between_slices: no annotated slices");
  FillBetweenResult res;
  if (schedule.indices.size() < 2) {
    res.mask = zero_order_propagate(annotated, schedule);
    res.fell_back_to_zero_order = true;
    return res;
  }
  const int h = annotated.height, w = annotated.width;
  res.mask = MaskVolume(annotated.depth, h, w, annotated.spacing);

  for (int idx : schedule.indices) copy_slice(annotated, idx, res.mask, idx);
  // before the first / after the last annotation: nearest copy
  for (int t = 0; t < schedule.indices.front(); ++t)
    copy_slice(annotated, schedule.indices.front(), res.mask, t);
  for (int t = schedule.indices.back() + 1; t < annotated.depth; ++t)
    copy_slice(annotated, schedule.indices.back(), res.mask, t);

  for (std::size_t i = 0; i + 1 < schedule.indices.size(); ++i) {
    const int k = schedule.indices[i];
    const int m = schedule.indices[i + 1];
    if (m - k <= 1) continue;
    const auto sk = sdt2d(annotated, k);
    const auto sm = sdt2d(annotated, m);
    for (int j = k + 1; j < m; ++j) {
      const double t = static_cast<double>(j - k) / static_cast<double>(m - k);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const double s = (1.0 - t) * sk[static_cast<std::size_t>(y) * w + x] +
                           t * sm[static_cast<std::size_t>(y) * w + x];
          res.mask.at(j, y, x) = s >= 0.0 ? 1 : 0;
        }
    }
  }
  return res;
}

}  // namespace maskprop
