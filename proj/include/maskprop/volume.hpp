#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "maskprop/tensor.hpp"

namespace maskprop {

// Physical voxel edge lengths in mm, ordered like the array axes (z = slice
// direction, then rows, then cols).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;
  double voxel_mm3() const { return z * y * x; }
};

// Grayscale image stack, intensities in [0,1], slice-major storage.
struct Volume {
  int depth = 0;
  int height = 0;
  int width = 0;
  Spacing spacing;
  std::vector<float> data;  // depth*height*width

  Volume() = default;
  Volume(int t, int h, int w, Spacing s = {})
      : depth(t), height(h), width(w), spacing(s),
        data(static_cast<std::size_t>(t) * h * w, 0.0f) {}

  long slice_size() const { return static_cast<long>(height) * width; }
  long size() const { return static_cast<long>(depth) * height * width; }
  float& at(int t, int y, int x) { return data[(static_cast<long>(t) * height + y) * width + x]; }
  float at(int t, int y, int x) const {
    return data[(static_cast<long>(t) * height + y) * width + x];
  }
};

// Binary foreground labels aligned with a Volume.
struct MaskVolume {
  int depth = 0;
  int height = 0;
  int width = 0;
  Spacing spacing;
  std::vector<std::uint8_t> data;

  MaskVolume() = default;
  MaskVolume(int t, int h, int w, Spacing s = {})
      : depth(t), height(h), width(w), spacing(s),
        data(static_cast<std::size_t>(t) * h * w, 0) {}

  long slice_size() const { return static_cast<long>(height) * width; }
  long size() const { return static_cast<long>(depth) * height * width; }
  std::uint8_t& at(int t, int y, int x) {
    return data[(static_cast<long>(t) * height + y) * width + x];
  }
  std::uint8_t at(int t, int y, int x) const {
    return data[(static_cast<long>(t) * height + y) * width + x];
  }
  long count_fg() const {
    long n = 0;
    for (auto v : data) n += v;
    return n;
  }
};

// One recurrence step: w consecutive slices starting at `start`.
struct SubVolumeWindow {
  int start = 0;
  int width = 0;
};

// T-w+1 windows with starts 0..T-w, step 1.
std::vector<SubVolumeWindow> make_windows(int depth, int w);

// Slice indices carrying expert labels.
struct AnnotationSchedule {
  std::vector<int> indices;  // sorted, unique, within [0, depth)

  bool is_annotated(int t) const;
  // inference/training seeding needs the first w slices labelled
  bool covers_seed(int w) const;
  int count() const { return static_cast<int>(indices.size()); }
};

// k consecutive annotated slices at the start of every `period` block.
AnnotationSchedule fixed_interval_schedule(int depth, int period, int k_consecutive);

// Exponentially decaying per-patient annotation counts under a global
// budget; counts are laid out as evenly spread consecutive triples that
// always include slices [0, 2].
std::vector<AnnotationSchedule> decremental_schedule(const std::vector<int>& depths,
                                                     double budget_frac = 0.035,
                                                     double floor_frac = 0.03,
                                                     double init_frac = 0.164);

// Achieved fraction of annotated slices over a cohort.
double annotation_fraction(const std::vector<AnnotationSchedule>& schedules,
                           const std::vector<int>& depths);

// Plain-text serialization: one sorted index list per line.
void write_schedules(const std::vector<AnnotationSchedule>& schedules, const std::string& path);
std::vector<AnnotationSchedule> read_schedules(const std::string& path);

// ---------------------------------------------------------------------------
// MVOL container: ASCII header
//   MVOL1 <dtype:u8|f32> <T> <H> <W> <sz> <sy> <sx>\n
// followed by the raw little-endian row-major payload (slice-major).
// ---------------------------------------------------------------------------
void write_mvol(const Volume& vol, const std::string& path);
void write_mvol(const MaskVolume& mask, const std::string& path);
std::variant<Volume, MaskVolume> read_mvol(const std::string& path);
Volume read_mvol_volume(const std::string& path);      // error if the file holds a mask
MaskVolume read_mvol_mask(const std::string& path);    // error if the file holds an image

// ---------------------------------------------------------------------------
// Window tensor extraction
// ---------------------------------------------------------------------------

// (w, H, W, 1) double tensor of image intensities for slices [start, start+w).
Tensor image_window(const Volume& vol, int start, int w);

// (w, H, W, 2) one-hot tensor, channel 0 = foreground, channel 1 = background.
Tensor mask_window(const MaskVolume& mask, int start, int w);

// Writes channel-0 probabilities of a (w, H, W, 2) tensor back as binary
// slices using threshold > 0.5 (exact ties go to background).
void binarize_window(const Tensor& probs, MaskVolume& out, int start);

}  // namespace maskprop
