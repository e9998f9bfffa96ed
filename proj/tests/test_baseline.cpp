#include <doctest.h>

#include <cmath>
#include <numbers>

#include "maskprop/baseline.hpp"

using namespace maskprop;

namespace {

MaskVolume disc_stack(int depth, int h, int w) { return MaskVolume(depth, h, w); }

void draw_disc(MaskVolume& m, int t, double cy, double cx, double r) {
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const double dy = y - cy, dx = x - cx;
      if (dy * dy + dx * dx <= r * r) m.at(t, y, x) = 1;
    }
}

double slice_area(const MaskVolume& m, int t) {
  long n = 0;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) n += m.at(t, y, x);
  return static_cast<double>(n);
}

bool slices_equal(const MaskVolume& a, int ta, const MaskVolume& b, int tb) {
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x)
      if (a.at(ta, y, x) != b.at(tb, y, x)) return false;
  return true;
}

}  // namespace

TEST_CASE("zero-order copies the nearest annotation with ties to the lower index") {
  auto m = disc_stack(12, 16, 16);
  draw_disc(m, 0, 8, 8, 3);
  draw_disc(m, 10, 8, 8, 6);
  AnnotationSchedule sched;
  sched.indices = {0, 10};
  const auto out = zero_order_propagate(m, sched);
  CHECK(slices_equal(out, 4, m, 0));   // closer to 0
  CHECK(slices_equal(out, 6, m, 10));  // closer to 10
  CHECK(slices_equal(out, 5, m, 0));   // tie -> lower index
  CHECK(slices_equal(out, 11, m, 10));
  CHECK(slices_equal(out, 0, m, 0));
  CHECK(slices_equal(out, 10, m, 10));
}

TEST_CASE("zero-order with one annotation yields a constant stack") {
  auto m = disc_stack(6, 8, 8);
  draw_disc(m, 2, 4, 4, 2);
  AnnotationSchedule sched;
  sched.indices = {2};
  const auto out = zero_order_propagate(m, sched);
  for (int t = 0; t < 6; ++t) CHECK(slices_equal(out, t, m, 2));
}

TEST_CASE("zero-order with every slice annotated is the identity") {
  auto m = disc_stack(4, 8, 8);
  for (int t = 0; t < 4; ++t) draw_disc(m, t, 4, 4, 1.5 + t * 0.5);
  AnnotationSchedule sched;
  sched.indices = {0, 1, 2, 3};
  const auto out = zero_order_propagate(m, sched);
  CHECK(out.data == m.data);
}

TEST_CASE("zero-order requires at least one annotation") {
  auto m = disc_stack(4, 8, 8);
  AnnotationSchedule empty;
  CHECK_THROWS(zero_order_propagate(m, empty));
}

TEST_CASE("fill-between interpolates concentric discs to the mid radius") {
  auto m = disc_stack(9, 32, 32);
  draw_disc(m, 0, 16, 16, 4);
  draw_disc(m, 8, 16, 16, 8);
  AnnotationSchedule sched;
  sched.indices = {0, 8};
  const auto res = fill_between_slices(m, sched);
  CHECK(!res.fell_back_to_zero_order);
  // slice 4 should be a disc of radius ~6 (+-0.5 voxels)
  const double r4 = std::sqrt(slice_area(res.mask, 4) / std::numbers::pi);
  CHECK(r4 == doctest::Approx(6.0).epsilon(0.5 / 6.0));
  // annotated slices are reproduced exactly
  CHECK(slices_equal(res.mask, 0, m, 0));
  CHECK(slices_equal(res.mask, 8, m, 8));
}

TEST_CASE("fill-between area grows monotonically between nested discs") {
  auto m = disc_stack(9, 32, 32);
  draw_disc(m, 0, 16, 16, 4);
  draw_disc(m, 8, 16, 16, 8);
  AnnotationSchedule sched;
  sched.indices = {0, 8};
  const auto res = fill_between_slices(m, sched);
  for (int t = 0; t + 1 <= 8; ++t)
    CHECK(slice_area(res.mask, t) <= slice_area(res.mask, t + 1) + 1e-9);
}

TEST_CASE("fill-between with identical annotated masks keeps them constant") {
  auto m = disc_stack(7, 16, 16);
  draw_disc(m, 0, 8, 8, 4);
  draw_disc(m, 6, 8, 8, 4);
  AnnotationSchedule sched;
  sched.indices = {0, 6};
  const auto res = fill_between_slices(m, sched);
  for (int t = 1; t < 6; ++t) CHECK(slices_equal(res.mask, t, m, 0));
}

TEST_CASE("fill-between with every slice annotated is the identity") {
  auto m = disc_stack(4, 16, 16);
  for (int t = 0; t < 4; ++t) draw_disc(m, t, 8, 8, 2 + t);
  AnnotationSchedule sched;
  sched.indices = {0, 1, 2, 3};
  const auto res = fill_between_slices(m, sched);
  CHECK(res.mask.data == m.data);
}

TEST_CASE("fill-between falls back to zero-order below two annotations") {
  auto m = disc_stack(5, 16, 16);
  draw_disc(m, 1, 8, 8, 3);
  AnnotationSchedule sched;
  sched.indices = {1};
  const auto res = fill_between_slices(m, sched);
  CHECK(res.fell_back_to_zero_order);
  for (int t = 0; t < 5; ++t) CHECK(slices_equal(res.mask, t, m, 1));
}

TEST_CASE("fill-between copies the nearest annotation outside the annotated range") {
  auto m = disc_stack(10, 16, 16);
  draw_disc(m, 3, 8, 8, 3);
  draw_disc(m, 6, 8, 8, 5);
  AnnotationSchedule sched;
  sched.indices = {3, 6};
  const auto res = fill_between_slices(m, sched);
  for (int t = 0; t < 3; ++t) CHECK(slices_equal(res.mask, t, m, 3));
  for (int t = 7; t < 10; ++t) CHECK(slices_equal(res.mask, t, m, 6));
}
