#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "maskprop/volume.hpp"

using namespace maskprop;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("make_windows produces T-w+1 windows with unit step") {
  CHECK(make_windows(1400, 3).size() == 1398);

  auto single = make_windows(3, 3);
  REQUIRE(single.size() == 1);
  CHECK(single[0].start == 0);

  auto small = make_windows(5, 3);
  REQUIRE(small.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(small[static_cast<std::size_t>(i)].start == i);
    CHECK(small[static_cast<std::size_t>(i)].width == 3);
  }

  CHECK_THROWS(make_windows(2, 3));
  CHECK_THROWS(make_windows(5, 0));
}

TEST_CASE("every late slice is the final slice of exactly one window") {
  const int T = 23, w = 4;
  auto windows = make_windows(T, w);
  std::vector<int> final_count(static_cast<std::size_t>(T), 0);
  for (const auto& win : windows) ++final_count[static_cast<std::size_t>(win.start + win.width - 1)];
  for (int t = 0; t < T; ++t) CHECK(final_count[static_cast<std::size_t>(t)] == (t >= w - 1 ? 1 : 0));
}

TEST_CASE("fixed interval schedule matches the 42-annotation layout") {
  auto s = fixed_interval_schedule(1400, 100, 3);
  CHECK(s.count() == 42);
  CHECK(static_cast<double>(s.count()) / 1400.0 == doctest::Approx(0.03));

  auto one_block = fixed_interval_schedule(100, 100, 3);
  CHECK(one_block.indices == std::vector<int>{0, 1, 2});

  // blocks at 0, 100, 200 with full triples
  auto clipped = fixed_interval_schedule(250, 100, 3);
  CHECK(clipped.count() == 9);
  CHECK(clipped.indices == std::vector<int>{0, 1, 2, 100, 101, 102, 200, 201, 202});
}

TEST_CASE("decremental schedule reproduces the 230/115 counts and the budget") {
  std::vector<int> depths(29, 1400);
  auto schedules = decremental_schedule(depths);
  REQUIRE(schedules.size() == 29);
  CHECK(schedules[0].count() == 230);
  CHECK(schedules[1].count() == 115);
  const double frac = annotation_fraction(schedules, depths);
  CHECK(frac >= 0.03);
  CHECK(frac <= 0.04);
  for (const auto& s : schedules) CHECK(s.covers_seed(3));
}

TEST_CASE("decremental schedule with one patient applies no decay") {
  std::vector<int> depths{1400};
  auto schedules = decremental_schedule(depths);
  REQUIRE(schedules.size() == 1);
  CHECK(schedules[0].count() == 230);  // round(0.164 * 1400)
}

TEST_CASE("decremental schedule rejects depths that cannot hold the seed triple") {
  CHECK_THROWS(decremental_schedule({2}));
}

TEST_CASE("schedules serialize one line per patient") {
  std::vector<int> depths{80, 80};
  auto schedules = decremental_schedule(depths);
  const auto path = temp_path("sched_roundtrip.txt");
  write_schedules(schedules, path);
  auto back = read_schedules(path);
  REQUIRE(back.size() == schedules.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i].indices == schedules[i].indices);
  std::filesystem::remove(path);
}

TEST_CASE("mvol round-trips volumes bit-exactly") {
  Volume vol(5, 4, 6, {0.5, 0.25, 0.125});
  for (std::size_t i = 0; i < vol.data.size(); ++i)
    vol.data[i] = static_cast<float>(i % 97) / 97.0f;
  const auto path = temp_path("roundtrip.mvol");
  write_mvol(vol, path);
  auto back = read_mvol_volume(path);
  CHECK(back.depth == vol.depth);
  CHECK(back.height == vol.height);
  CHECK(back.width == vol.width);
  CHECK(back.spacing.z == vol.spacing.z);
  CHECK(back.spacing.y == vol.spacing.y);
  CHECK(back.spacing.x == vol.spacing.x);
  CHECK(back.data == vol.data);
  std::filesystem::remove(path);
}

TEST_CASE("mvol round-trips masks and validates binariness") {
  MaskVolume mask(3, 4, 4, {1, 1, 1});
  mask.at(1, 2, 2) = 1;
  const auto path = temp_path("mask_roundtrip.mvol");
  write_mvol(mask, path);
  auto back = read_mvol_mask(path);
  CHECK(back.data == mask.data);

  // corrupt one payload byte to 2
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    std::string header;
    std::getline(f, header);
    f.seekp(static_cast<std::streamoff>(header.size()) + 1);
    char two = 2;
    f.write(&two, 1);
  }
  CHECK_THROWS_WITH_AS(read_mvol(path), doctest::Contains("mask not binary"),
                       std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("mvol rejects bad magic, truncation, unknown dtype") {
  const auto path = temp_path("bad.mvol");
  {
    std::ofstream f(path, std::ios::binary);
    f << "MVOL9 u8 1 1 1 1 1 1\n";
    f.put(0);
  }
  CHECK_THROWS_WITH_AS(read_mvol(path), doctest::Contains("bad magic"), std::runtime_error);
  {
    std::ofstream f(path, std::ios::binary);
    f << "MVOL1 u8 2 2 2 1 1 1\n";
    f.put(0);  // 1 byte instead of 8
  }
  CHECK_THROWS_WITH_AS(read_mvol(path), doctest::Contains("payload size mismatch"),
                       std::runtime_error);
  {
    std::ofstream f(path, std::ios::binary);
    f << "MVOL1 i16 1 1 1 1 1 1\n";
    f.put(0);
    f.put(0);
  }
  CHECK_THROWS_WITH_AS(read_mvol(path), doctest::Contains("unknown dtype"), std::runtime_error);
  std::filesystem::remove(path);
}

TEST_CASE("two-channel mask windows sum to one everywhere") {
  MaskVolume mask(4, 4, 4, {1, 1, 1});
  mask.at(0, 1, 1) = 1;
  mask.at(1, 2, 2) = 1;
  auto t = mask_window(mask, 0, 3);
  CHECK(t.dims == std::vector<int>{3, 4, 4, 2});
  for (long i = 0; i < t.numel(); i += 2) CHECK(t.v[i] + t.v[i + 1] == 1.0);
  CHECK(t.at4(0, 1, 1, 0) == 1.0);
  CHECK(t.at4(1, 2, 2, 0) == 1.0);
  CHECK(t.at4(2, 0, 0, 0) == 0.0);
}

TEST_CASE("binarize_window sends exact 0.5 to background") {
  Tensor probs({1, 2, 2, 2});
  probs.at4(0, 0, 0, 0) = 0.5;
  probs.at4(0, 0, 0, 1) = 0.5;
  probs.at4(0, 0, 1, 0) = 0.500001;
  probs.at4(0, 0, 1, 1) = 0.499999;
  MaskVolume out(1, 2, 2);
  binarize_window(probs, out, 0);
  CHECK(out.at(0, 0, 0) == 0);
  CHECK(out.at(0, 0, 1) == 1);
}
