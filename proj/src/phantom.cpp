#include "maskprop/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "maskprop/rng.hpp"

namespace maskprop {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

// Low-order angular harmonics with slowly varying coefficients: the radius at
// angle theta and normalized depth tau is
//   r(theta, tau) = base(tau) * (1 + sum_m amp_m sin(tau f_m + ph_m) cos(m theta + ps_m)).
struct Harmonic {
  double amp, freq, phase, ang_phase;
  int order;
};

struct StructureParams {
  double cy0, cx0;          // resting center
  double drift_amp;         // center oscillation amplitude (voxels)
  double drift_fy, drift_fx, drift_py, drift_px;
  double r0;                // base radius (voxels)
  double base_amp, base_freq, base_phase;
  std::vector<Harmonic> harmonics;
  double intensity;         // mean interior brightness

  double radius(double theta, double tau) const {
    double wig = 0.0;
    for (const auto& h : harmonics)
      wig += h.amp * std::sin(kTau * h.freq * tau + h.phase) *
             std::cos(h.order * theta + h.ang_phase);
    const double base = r0 * (1.0 + base_amp * std::sin(kTau * base_freq * tau + base_phase));
    return base * (1.0 + wig);
  }

  void center(double tau, double& cy, double& cx) const {
    cy = cy0 + drift_amp * std::sin(kTau * drift_fy * tau + drift_py);
    cx = cx0 + drift_amp * std::sin(kTau * drift_fx * tau + drift_px);
  }
};

struct Cell {
  int y0, y1, x0, x1;
};

// Disjoint placement regions per structure count.
std::vector<Cell> layout_cells(int h, int w, int n) {
  if (n == 1) return {{0, h, 0, w}};
  if (n == 2) return {{0, h, 0, w / 2}, {0, h, w / 2, w}};
  return {{0, h / 2, 0, w / 2}, {0, h / 2, w / 2, w}, {h / 2, h, 0, w}};
}

StructureParams draw_structure(Rng& rng, const Cell& cell, const PhantomSpec& spec, int index) {
  StructureParams p;
  const double margin = 2.0;
  const double drift = std::min(2.0, 0.04 * std::min(spec.height, spec.width));
  const double half = 0.5 * std::min(cell.y1 - cell.y0, cell.x1 - cell.x0);
  // max radius keeps the blob inside its cell for every drift and wiggle
  const double max_r = half - margin - drift - 1.0;
  require(max_r >= 4.0, "generate_phantom: dimensions too small for requested structures");
  // keep per-slice foreground fraction of the whole slice above 1%
  const double r_floor = std::sqrt(0.012 * spec.height * spec.width / std::numbers::pi) / 0.62;
  p.r0 = std::max(0.5 * max_r, r_floor);
  require(p.r0 * 1.38 <= max_r + 1e-9,
          "generate_phantom: cannot satisfy area bounds; enlarge the volume");
  p.cy0 = 0.5 * (cell.y0 + cell.y1) + rng.uniform(-1.0, 1.0);
  p.cx0 = 0.5 * (cell.x0 + cell.x1) + rng.uniform(-1.0, 1.0);
  p.drift_amp = drift;
  const double s = spec.deform_smoothness;
  p.drift_fy = rng.uniform(0.3, 0.8) / s;
  p.drift_fx = rng.uniform(0.3, 0.8) / s;
  p.drift_py = rng.uniform(0.0, kTau);
  p.drift_px = rng.uniform(0.0, kTau);
  p.base_amp = 0.08;
  p.base_freq = rng.uniform(0.4, 1.0) / s;
  p.base_phase = rng.uniform(0.0, kTau);
  for (int m = 2; m <= 4; ++m) {
    Harmonic h;
    h.order = m;
    h.amp = rng.uniform(0.03, 0.10);
    h.freq = rng.uniform(0.5, 1.5) / s;
    h.phase = rng.uniform(0.0, kTau);
    h.ang_phase = rng.uniform(0.0, kTau);
    p.harmonics.push_back(h);
  }
  p.intensity = 0.62 + 0.08 * index + rng.uniform(-0.04, 0.04);
  return p;
}

// 5-tap binomial blur along one in-plane axis
void blur_slice(std::vector<float>& img, int h, int w) {
  static const double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d) {
        int xs = std::clamp(x + d, 0, w - 1);
        acc += k[d + 2] * img[static_cast<std::size_t>(y) * w + xs];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  for (int x = 0; x < w; ++x)
    for (int y = 0; y < h; ++y) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d) {
        int ys = std::clamp(y + d, 0, h - 1);
        acc += k[d + 2] * tmp[static_cast<std::size_t>(ys) * w + x];
      }
      img[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
}

}  // namespace

void PhantomSpec::validate() const {
  require(depth >= 8, "phantom spec: depth must be >= 8");
  require(height % 32 == 0 && height > 0, "phantom spec: height must be a positive multiple of 32");
  require(width % 32 == 0 && width > 0, "phantom spec: width must be a positive multiple of 32");
  require(n_structures >= 1 && n_structures <= 3, "phantom spec: n_structures must be in [1,3]");
  require(spacing.z > 0 && spacing.y > 0 && spacing.x > 0, "phantom spec: spacing must be positive");
  require(noise_level >= 0.0, "phantom spec: noise_level must be non-negative");
  require(deform_smoothness > 0.0, "phantom spec: deform_smoothness must be positive");
}

Phantom generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int T = spec.depth, H = spec.height, W = spec.width;

  const auto cells = layout_cells(H, W, spec.n_structures);
  std::vector<StructureParams> structures;
  for (int s = 0; s < spec.n_structures; ++s)
    structures.push_back(draw_structure(rng, cells[s], spec, s));

  Phantom ph;
  ph.volume = Volume(T, H, W, spec.spacing);
  for (int s = 0; s < spec.n_structures; ++s) ph.masks.emplace_back(T, H, W, spec.spacing);

  const double bg_level = 0.25;
  const double ray_mean = std::sqrt(std::numbers::pi / 2.0);
  std::vector<float> slice(static_cast<std::size_t>(H) * W);

  for (int t = 0; t < T; ++t) {
    const double tau = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
    // exact analytic masks
    for (int s = 0; s < spec.n_structures; ++s) {
      const auto& sp = structures[s];
      double cy, cx;
      sp.center(tau, cy, cx);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double dy = y - cy, dx = x - cx;
          const double rr = std::sqrt(dy * dy + dx * dx);
          const double theta = std::atan2(dy, dx);
          ph.masks[s].at(t, y, x) = rr <= sp.radius(theta, tau) ? 1 : 0;
        }
    }
    // clean intensities
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double v = bg_level;
        for (int s = 0; s < spec.n_structures; ++s)
          if (ph.masks[s].at(t, y, x)) v = structures[s].intensity;
        slice[static_cast<std::size_t>(y) * W + x] = static_cast<float>(v);
      }
    // multiplicative Rayleigh-like speckle, then a mild blur
    if (spec.noise_level > 0.0) {
      for (auto& px : slice) {
        const double f = 1.0 + spec.noise_level * (rng.rayleigh(1.0) / ray_mean - 1.0);
        px = static_cast<float>(px * f);
      }
    }
    blur_slice(slice, H, W);
    float* dst = &ph.volume.data[static_cast<long>(t) * ph.volume.slice_size()];
    for (long i = 0; i < ph.volume.slice_size(); ++i)
      dst[i] = std::clamp(slice[static_cast<std::size_t>(i)], 0.0f, 1.0f);
  }
  return ph;
}

std::array<std::vector<std::size_t>, 3> split_indices(std::size_t n,
                                                      const std::array<double, 3>& ratios) {
  require(n > 0, "split_dataset: empty spec list");
  double sum = ratios[0] + ratios[1] + ratios[2];
  require(std::fabs(sum - 1.0) < 1e-9, "split_dataset: ratios must sum to 1");
  for (double r : ratios) require(r >= 0.0, "split_dataset: negative ratio");

  std::array<std::size_t, 3> counts{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double target = ratios[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(target + 1e-9));
    frac[i] = target - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  while (assigned < n) {  // largest remainder, ties to the earlier part
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (frac[i] > frac[best] + 1e-12) best = i;
    ++counts[best];
    frac[best] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i)
    if (ratios[i] > 0.0 && counts[i] == 0)
      throw std::runtime_error("split_dataset: nonzero ratio produced an empty part");

  std::array<std::vector<std::size_t>, 3> out;
  std::size_t idx = 0;
  for (int part = 0; part < 3; ++part)
    for (std::size_t k = 0; k < counts[part]; ++k) out[part].push_back(idx++);
  return out;
}

std::array<std::vector<PhantomSpec>, 3> split_dataset(const std::vector<PhantomSpec>& specs,
                                                      const std::array<double, 3>& ratios) {
  auto idx = split_indices(specs.size(), ratios);
  std::array<std::vector<PhantomSpec>, 3> out;
  for (int p = 0; p < 3; ++p)
    for (auto i : idx[p]) out[p].push_back(specs[i]);
  return out;
}

}  // namespace maskprop
