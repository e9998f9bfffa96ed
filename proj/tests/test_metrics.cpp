#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "maskprop/metrics.hpp"
#include "maskprop/rng.hpp"

using namespace maskprop;

namespace {

// Independent all-pairs oracle. Uses the same canonical per-pair distance
// expression as the implementation, so agreement must be exact.
double oracle_d2(const Voxel& p, const Voxel& q, const Spacing& s) {
  const double dz = (p[0] - q[0]) * s.z;
  const double dy = (p[1] - q[1]) * s.y;
  const double dx = (p[2] - q[2]) * s.x;
  return dz * dz + dy * dy + dx * dx;
}

std::pair<double, double> oracle_hausdorff_asd(const MaskVolume& a, const MaskVolume& b,
                                               const Spacing& sp) {
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  REQUIRE(!sa.empty());
  REQUIRE(!sb.empty());
  auto directed = [&](const std::vector<Voxel>& from, const std::vector<Voxel>& to, double& mx) {
    double sum = 0.0;
    mx = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, oracle_d2(p, q, sp));
      const double d = std::sqrt(best);
      mx = std::max(mx, d);
      sum += d;
    }
    return sum;
  };
  double max_ab = 0, max_ba = 0;
  const double sum_ab = directed(sa, sb, max_ab);
  const double sum_ba = directed(sb, sa, max_ba);
  const double hdd = std::max(max_ab, max_ba);
  const double asd = 0.5 * (sum_ab / static_cast<double>(sa.size()) +
                            sum_ba / static_cast<double>(sb.size()));
  return {hdd, asd};
}

MaskVolume random_mask(Rng& rng, int t, int h, int w, double density, const Spacing& sp) {
  MaskVolume m(t, h, w, sp);
  for (auto& v : m.data) v = rng.bernoulli(density) ? 1 : 0;
  if (m.count_fg() == 0) m.data[0] = 1;
  return m;
}

}  // namespace

TEST_CASE("confusion counts on the enumerated 2x2x1 case") {
  MaskVolume pred(1, 2, 2), gt(1, 2, 2);
  pred.at(0, 0, 0) = 1;
  gt.at(0, 0, 0) = 1;
  gt.at(0, 1, 0) = 1;
  const auto c = confusion_counts(pred, gt);
  CHECK(c.tp == 1);
  CHECK(c.fp == 0);
  CHECK(c.fn == 1);
  CHECK(c.tn == 2);
  CHECK(c.precision() == 1.0);
  CHECK(c.recall() == 0.5);
}

TEST_CASE("confusion conventions for empty masks") {
  MaskVolume pred(1, 2, 2), gt(1, 2, 2);
  gt.at(0, 0, 0) = 1;
  const auto c = confusion_counts(pred, gt);
  CHECK(c.precision() == 1.0);  // empty prediction convention
  CHECK(c.recall() == 0.0);

  const auto same = confusion_counts(gt, gt);
  CHECK(same.precision() == 1.0);
  CHECK(same.recall() == 1.0);
}

TEST_CASE("surface voxels of a solid cube are its shell") {
  MaskVolume m(5, 5, 5);
  for (int t = 1; t <= 3; ++t)
    for (int y = 1; y <= 3; ++y)
      for (int x = 1; x <= 3; ++x) m.at(t, y, x) = 1;
  const auto surf = surface_voxels(m);
  CHECK(surf.size() == 26);  // all but the center
  CHECK(std::find(surf.begin(), surf.end(), Voxel{2, 2, 2}) == surf.end());

  MaskVolume single(3, 3, 3);
  single.at(1, 1, 1) = 1;
  const auto s1 = surface_voxels(single);
  REQUIRE(s1.size() == 1);
  CHECK(s1[0] == Voxel{1, 1, 1});

  MaskVolume empty(2, 2, 2);
  CHECK(surface_voxels(empty).empty());
}

TEST_CASE("two singletons at distance 4 voxels and half-mm spacing") {
  MaskVolume a(8, 2, 2, {0.5, 0.5, 0.5}), b(8, 2, 2, {0.5, 0.5, 0.5});
  a.at(0, 0, 0) = 1;
  b.at(4, 0, 0) = 1;
  const auto [hdd, asd] = hausdorff_asd(a, b, a.spacing);
  CHECK(hdd == doctest::Approx(2.0));
  CHECK(asd == doctest::Approx(2.0));
  const auto m = surface_error_map(a, b, a.spacing);
  REQUIRE(m.size() == 1);
  CHECK(m[0] == doctest::Approx(2.0));
}

TEST_CASE("hausdorff/asd match the all-pairs oracle exactly on random masks") {
  Rng rng(42);
  const Spacing anis{0.7, 0.31, 1.13};
  for (int trial = 0; trial < 30; ++trial) {
    const int t = 4 + static_cast<int>(rng.raw() % 9);
    const int h = 4 + static_cast<int>(rng.raw() % 9);
    const int w = 4 + static_cast<int>(rng.raw() % 9);
    const auto a = random_mask(rng, t, h, w, 0.15, anis);
    const auto b = random_mask(rng, t, h, w, 0.15, anis);
    const auto got = hausdorff_asd(a, b, anis);
    const auto want = oracle_hausdorff_asd(a, b, anis);
    CHECK(got.first == want.first);
    CHECK(got.second == want.second);
  }
}

TEST_CASE("distance metrics are symmetric, translation invariant, spacing homogeneous") {
  Rng rng(9);
  const Spacing sp{0.5, 0.6, 0.7};
  const auto a = random_mask(rng, 8, 8, 8, 0.1, sp);
  const auto b = random_mask(rng, 8, 8, 8, 0.1, sp);
  const auto fwd = hausdorff_asd(a, b, sp);
  const auto rev = hausdorff_asd(b, a, sp);
  CHECK(fwd.first == rev.first);
  CHECK(fwd.second == rev.second);

  // shift both masks by (1,2,1) inside a larger grid
  MaskVolume as(12, 12, 12, sp), bs(12, 12, 12, sp);
  for (int t = 0; t < 8; ++t)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        as.at(t + 1, y + 2, x + 1) = a.at(t, y, x);
        bs.at(t + 1, y + 2, x + 1) = b.at(t, y, x);
      }
  const auto shifted = hausdorff_asd(as, bs, sp);
  CHECK(shifted.first == doctest::Approx(fwd.first).epsilon(1e-12));
  CHECK(shifted.second == doctest::Approx(fwd.second).epsilon(1e-12));

  const Spacing scaled{sp.z * 3, sp.y * 3, sp.x * 3};
  const auto big = hausdorff_asd(a, b, scaled);
  CHECK(big.first == doctest::Approx(3 * fwd.first).epsilon(1e-12));
  CHECK(big.second == doctest::Approx(3 * fwd.second).epsilon(1e-12));

  CHECK(volume_mm3(a, scaled) == doctest::Approx(27 * volume_mm3(a, sp)).epsilon(1e-12));
}

TEST_CASE("hausdorff errors on empty masks") {
  MaskVolume a(2, 2, 2), b(2, 2, 2);
  b.at(0, 0, 0) = 1;
  CHECK_THROWS_WITH_AS(hausdorff_asd(a, b, a.spacing), doctest::Contains("undefined"),
                       std::runtime_error);
}

TEST_CASE("surface error map maximum equals the directed hausdorff") {
  Rng rng(10);
  const Spacing sp{1, 1, 1};
  const auto a = random_mask(rng, 6, 6, 6, 0.2, sp);
  const auto b = random_mask(rng, 6, 6, 6, 0.2, sp);
  const auto m = surface_error_map(a, b, sp);
  const auto sa = surface_voxels(a);
  const auto sb = surface_voxels(b);
  double directed = 0.0;
  for (const auto& p : sa) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : sb) best = std::min(best, oracle_d2(p, q, sp));
    directed = std::max(directed, std::sqrt(best));
  }
  CHECK(*std::max_element(m.begin(), m.end()) == directed);
  // identical masks give an all-zero map
  const auto zeros = surface_error_map(a, a, sp);
  for (double d : zeros) CHECK(d == 0.0);
}

TEST_CASE("volume math at the reference spacing") {
  MaskVolume m(10, 10, 10, {0.276993, 0.276993, 0.276993});
  int placed = 0;
  for (int t = 0; t < 10 && placed < 1000; ++t)
    for (int y = 0; y < 10 && placed < 1000; ++y)
      for (int x = 0; x < 10 && placed < 1000; ++x) {
        m.at(t, y, x) = 1;
        ++placed;
      }
  REQUIRE(m.count_fg() == 1000);
  CHECK(volume_mm3(m, m.spacing) == doctest::Approx(21.252).epsilon(1e-4));
  CHECK(volume_error_pct(m, m, m.spacing) == 0.0);

  // Vp = 1.1 Vg -> 10%
  MaskVolume gt(1, 10, 10), pred(1, 10, 10);
  for (int x = 0; x < 10; ++x) gt.at(0, 0, x) = 1;
  for (int x = 0; x < 10; ++x) pred.at(0, 0, x) = 1;
  pred.at(0, 1, 0) = 1;
  CHECK(volume_error_pct(pred, gt, {1, 1, 1}) == doctest::Approx(10.0));

  MaskVolume empty(1, 2, 2);
  CHECK_THROWS(volume_error_pct(pred, empty, {1, 1, 1}));
}

TEST_CASE("evaluate on identical masks is perfect") {
  Rng rng(11);
  const Spacing sp{0.5, 0.5, 0.5};
  const auto m = random_mask(rng, 6, 6, 6, 0.3, sp);
  const auto r = evaluate(m, m, sp);
  CHECK(r.dice == 1.0);
  CHECK(r.miou == 1.0);
  CHECK(r.precision == 1.0);
  CHECK(r.recall == 1.0);
  CHECK(r.hdd_mm == 0.0);
  CHECK(r.asd_mm == 0.0);
  CHECK(r.vol_err_pct == 0.0);
  CHECK(r.distances_defined);
}

TEST_CASE("IoU = D/(2-D) identity on random pairs") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_mask(rng, 5, 6, 7, 0.3, {1, 1, 1});
    const auto b = random_mask(rng, 5, 6, 7, 0.3, {1, 1, 1});
    const auto r = evaluate(a, b, {1, 1, 1});
    CHECK(r.miou == doctest::Approx(r.dice / (2.0 - r.dice)).epsilon(1e-9));
  }
}

TEST_CASE("evaluate flags undefined distances for an empty prediction") {
  MaskVolume pred(3, 4, 4), gt(3, 4, 4);
  gt.at(1, 2, 2) = 1;
  const auto r = evaluate(pred, gt, {1, 1, 1});
  CHECK(r.dice == 0.0);
  CHECK(!r.distances_defined);
  CHECK(std::isnan(r.hdd_mm));
  CHECK(r.vol_err_pct == doctest::Approx(100.0));
}

TEST_CASE("per-slice series lengths and definedness markers") {
  MaskVolume pred(4, 8, 8), gt(4, 8, 8);
  for (int y = 2; y < 5; ++y)
    for (int x = 2; x < 5; ++x) {
      pred.at(0, y, x) = 1;
      gt.at(0, y, x) = 1;
      gt.at(1, y, x) = 1;
    }
  SliceScores s;
  evaluate(pred, gt, {1, 1, 1}, &s);
  REQUIRE(s.dice.size() == 4);
  REQUIRE(s.hdd_mm.size() == 4);
  CHECK(s.dice[0] == 1.0);
  CHECK(s.hdd_mm[0] == 0.0);
  CHECK(s.dice[1] == 0.0);
  CHECK(std::isnan(s.hdd_mm[1]));  // empty pred slice
  CHECK(s.dice[2] == 1.0);         // both empty
  CHECK(std::isnan(s.hdd_mm[2]));
}

TEST_CASE("csv row format is stable") {
  CHECK(metrics_csv_header() ==
        "structure,dice,miou,hdd_mm,asd_mm,precision,recall,vol_pred_mm3,vol_gt_mm3,vol_err_pct");
  MetricsReport r;
  r.dice = 1.0;
  const auto row = metrics_csv_row("gm", r);
  CHECK(row.substr(0, 5) == "gm,1,");
}
