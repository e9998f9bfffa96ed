#include "maskprop/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace maskprop {

namespace {

std::string g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

static_assert(std::endian::native == std::endian::little,
              "MVOL payloads are little-endian; big-endian hosts are unsupported");

}  // namespace

std::vector<SubVolumeWindow> make_windows(int depth, int w) {
  require(w >= 1, "make_windows: window width must be >= 1");
  require(w <= depth, "make_windows: window width " + std::to_string(w) +
                          " exceeds depth " + std::to_string(depth));
  std::vector<SubVolumeWindow> out;
  out.reserve(static_cast<std::size_t>(depth - w + 1));
  for (int k = 0; k + w <= depth; ++k) out.push_back({k, w});
  return out;
}

bool AnnotationSchedule::is_annotated(int t) const {
  return std::binary_search(indices.begin(), indices.end(), t);
}

bool AnnotationSchedule::covers_seed(int w) const {
  for (int t = 0; t < w; ++t)
    if (!is_annotated(t)) return false;
  return true;
}

AnnotationSchedule fixed_interval_schedule(int depth, int period, int k_consecutive) {
  require(k_consecutive >= 1, "fixed_interval_schedule: k must be >= 1");
  require(period >= k_consecutive, "fixed_interval_schedule: period must be >= k");
  require(depth >= 1, "fixed_interval_schedule: depth must be >= 1");
  AnnotationSchedule s;
  for (int base = 0; base < depth; base += period)
    for (int j = 0; j < k_consecutive && base + j < depth; ++j) s.indices.push_back(base + j);
  return s;
}

namespace {

// Consecutive runs of `run` slices spread evenly over [0, depth), always
// starting with the run at 0; total annotated count is exactly `count`.
std::vector<int> spread_runs(int depth, int count, int run) {
  std::set<int> out;
  const int n_runs = (count + run - 1) / run;
  for (int j = 0; j < n_runs; ++j) {
    int start = 0;
    if (n_runs > 1) {
      const double f = static_cast<double>(j) / (n_runs - 1);
      start = static_cast<int>(std::lround(f * (depth - run)));
    }
    const int len = std::min(run, count - j * run);
    for (int i = 0; i < len; ++i) {
      int idx = start + i;
      // shift forward past indices an earlier run already took
      while (out.count(idx)) ++idx;
      if (idx < depth) out.insert(idx);
    }
  }
  // collisions near the end can drop indices; refill from the front
  for (int idx = 0; static_cast<int>(out.size()) < count && idx < depth; ++idx) out.insert(idx);
  return {out.begin(), out.end()};
}

}  // namespace

std::vector<AnnotationSchedule> decremental_schedule(const std::vector<int>& depths,
                                                     double budget_frac, double floor_frac,
                                                     double init_frac) {
  require(!depths.empty(), "decremental_schedule: no patients");
  require(budget_frac > 0.0 && budget_frac < 1.0, "decremental_schedule: budget_frac in (0,1)");
  require(floor_frac > 0.0 && floor_frac < 1.0, "decremental_schedule: floor_frac in (0,1)");
  require(init_frac > 0.0 && init_frac < 1.0, "decremental_schedule: init_frac in (0,1)");
  constexpr int kRun = 3;  // annotations come in consecutive triples
  std::vector<AnnotationSchedule> out;
  out.reserve(depths.size());
  double decay = 1.0;
  for (std::size_t i = 0; i < depths.size(); ++i, decay *= 0.5) {
    const int depth = depths[i];
    require(depth >= 1, "decremental_schedule: bad depth");
    const long floor_count = std::lround(floor_frac * depth);
    long c = std::max(std::lround(init_frac * depth * decay), floor_count);
    c = std::max(c, static_cast<long>(kRun));  // must at least cover the seed triple
    if (c > depth)
      fail("decremental_schedule: patient " + std::to_string(i) +
           " cannot meet the seed requirement (count " + std::to_string(c) + " > depth " +
           std::to_string(depth) + ")");
    AnnotationSchedule s;
    s.indices = spread_runs(depth, static_cast<int>(c), kRun);
    if (!s.covers_seed(kRun))
      fail("decremental_schedule: patient " + std::to_string(i) +
           " schedule does not cover the seed slices [0,2]");
    out.push_back(std::move(s));
  }
  return out;
}

double annotation_fraction(const std::vector<AnnotationSchedule>& schedules,
                           const std::vector<int>& depths) {
  require(schedules.size() == depths.size(), "annotation_fraction: length mismatch");
  long ann = 0, total = 0;
  for (std::size_t i = 0; i < schedules.size(); ++i) {
    ann += schedules[i].count();
    total += depths[i];
  }
  require(total > 0, "annotation_fraction: empty cohort");
  return static_cast<double>(ann) / static_cast<double>(total);
}

void write_schedules(const std::vector<AnnotationSchedule>& schedules, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail("cannot open for writing: " + path);
  for (const auto& s : schedules) {
    for (std::size_t i = 0; i < s.indices.size(); ++i) {
      if (i) f << ' ';
      f << s.indices[i];
    }
    f << '\n';
  }
}

std::vector<AnnotationSchedule> read_schedules(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail("cannot open: " + path);
  std::vector<AnnotationSchedule> out;
  std::string line;
  while (std::getline(f, line)) {
    AnnotationSchedule s;
    std::istringstream ss(line);
    int idx;
    while (ss >> idx) s.indices.push_back(idx);
    if (!std::is_sorted(s.indices.begin(), s.indices.end()))
      fail("schedule line not sorted in " + path);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// MVOL
// ---------------------------------------------------------------------------

namespace {

void write_mvol_impl(const std::string& path, const char* dtype, int t, int h, int w,
                     const Spacing& sp, const void* payload, std::size_t bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("cannot open for writing: " + path);
  f << "MVOL1 " << dtype << ' ' << t << ' ' << h << ' ' << w << ' ' << g17(sp.z) << ' '
    << g17(sp.y) << ' ' << g17(sp.x) << '\n';
  f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
  if (!f) fail("write failed: " + path);
}

}  // namespace

void write_mvol(const Volume& vol, const std::string& path) {
  write_mvol_impl(path, "f32", vol.depth, vol.height, vol.width, vol.spacing, vol.data.data(),
                  vol.data.size() * sizeof(float));
}

void write_mvol(const MaskVolume& mask, const std::string& path) {
  for (auto v : mask.data)
    if (v > 1) fail("mask not binary");
  write_mvol_impl(path, "u8", mask.depth, mask.height, mask.width, mask.spacing, mask.data.data(),
                  mask.data.size());
}

std::variant<Volume, MaskVolume> read_mvol(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open: " + path);
  std::string header;
  if (!std::getline(f, header)) fail("truncated header in " + path);
  std::istringstream hs(header);
  std::string magic, dtype;
  long t = 0, h = 0, w = 0;
  Spacing sp;
  hs >> magic >> dtype >> t >> h >> w >> sp.z >> sp.y >> sp.x;
  if (magic != "MVOL1") fail("bad magic in " + path);
  if (hs.fail()) fail("malformed header in " + path);
  if (t < 1 || h < 1 || w < 1) fail("bad dims in header of " + path);
  if (!(sp.z > 0.0 && sp.y > 0.0 && sp.x > 0.0)) fail("non-positive spacing in " + path);
  const long n = t * h * w;

  std::vector<char> payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (dtype == "f32") {
    if (payload.size() != static_cast<std::size_t>(n) * sizeof(float))
      fail("payload size mismatch in " + path);
    Volume vol(static_cast<int>(t), static_cast<int>(h), static_cast<int>(w), sp);
    std::memcpy(vol.data.data(), payload.data(), payload.size());
    for (float x : vol.data)
      if (!(x >= 0.0f && x <= 1.0f)) fail("volume intensity outside [0,1] in " + path);
    return vol;
  }
  if (dtype == "u8") {
    if (payload.size() != static_cast<std::size_t>(n))
      fail("payload size mismatch in " + path);
    MaskVolume mask(static_cast<int>(t), static_cast<int>(h), static_cast<int>(w), sp);
    std::memcpy(mask.data.data(), payload.data(), payload.size());
    for (auto v : mask.data)
      if (v > 1) fail("mask not binary in " + path);
    return mask;
  }
  fail("unknown dtype '" + dtype + "' in " + path);
}

Volume read_mvol_volume(const std::string& path) {
  auto var = read_mvol(path);
  if (!std::holds_alternative<Volume>(var)) fail("expected image volume (f32) in " + path);
  return std::get<Volume>(std::move(var));
}

MaskVolume read_mvol_mask(const std::string& path) {
  auto var = read_mvol(path);
  if (!std::holds_alternative<MaskVolume>(var)) fail("expected mask volume (u8) in " + path);
  return std::get<MaskVolume>(std::move(var));
}

// ---------------------------------------------------------------------------
// windows <-> tensors
// ---------------------------------------------------------------------------

Tensor image_window(const Volume& vol, int start, int w) {
  require(start >= 0 && start + w <= vol.depth, "image_window: window out of range");
  Tensor t({w, vol.height, vol.width, 1});
  long o = 0;
  for (int k = 0; k < w; ++k) {
    const float* src = &vol.data[static_cast<long>(start + k) * vol.slice_size()];
    for (long i = 0; i < vol.slice_size(); ++i) t.v[o++] = static_cast<double>(src[i]);
  }
  return t;
}

Tensor mask_window(const MaskVolume& mask, int start, int w) {
  require(start >= 0 && start + w <= mask.depth, "mask_window: window out of range");
  Tensor t({w, mask.height, mask.width, 2});
  long o = 0;
  for (int k = 0; k < w; ++k) {
    const std::uint8_t* src = &mask.data[static_cast<long>(start + k) * mask.slice_size()];
    for (long i = 0; i < mask.slice_size(); ++i) {
      const double fg = src[i] ? 1.0 : 0.0;
      t.v[o++] = fg;
      t.v[o++] = 1.0 - fg;
    }
  }
  return t;
}

void binarize_window(const Tensor& probs, MaskVolume& out, int start) {
  require(probs.rank() == 4 && probs.dims[3] == 2, "binarize_window: expected (w,H,W,2)");
  const int w = probs.dims[0];
  require(probs.dims[1] == out.height && probs.dims[2] == out.width,
          "binarize_window: spatial shape mismatch");
  require(start >= 0 && start + w <= out.depth, "binarize_window: window out of range");
  for (int k = 0; k < w; ++k)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(start + k, y, x) = probs.at4(k, y, x, 0) > 0.5 ? 1 : 0;
}

}  // namespace maskprop
