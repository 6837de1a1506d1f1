#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "grpg/geometry.hpp"

using namespace grpg;

namespace {

// independent cumulative-rounding oracle for boundary columns
std::vector<int> brute_force_cuts(const std::vector<double>& ratios, int width) {
  std::vector<int> cuts{0};
  double cum = 0.0;
  for (double r : ratios) {
    cum += r;
    cuts.push_back(static_cast<int>(std::floor(width * cum + 0.5)));
  }
  cuts.back() = width;
  return cuts;
}

std::vector<double> random_ratios(RandomStream& rng, int k) {
  std::vector<double> r(k);
  double sum = 0.0;
  for (double& v : r) {
    v = 0.2 + rng.u01();
    sum += v;
  }
  for (double& v : r) v /= sum;
  // force the exact-sum invariant
  double acc = 0.0;
  for (int i = 0; i + 1 < k; ++i) acc += r[i];
  r[k - 1] = 1.0 - acc;
  return r;
}

}  // namespace

TEST_CASE("K=2 even split on a 4-wide canvas") {
  auto layout = RegionLayout::make({0.5, 0.5}, 4, 4);
  auto hm = masks_from_ratios(layout);
  CHECK(hm.col_lo == std::vector<int>{0, 2});
  CHECK(hm.col_hi == std::vector<int>{2, 4});
  CHECK(hm.boundaries == std::vector<int>{2});
}

TEST_CASE("K=1 gives a single all-ones mask") {
  auto hm = masks_from_ratios(RegionLayout::make({1.0}, 3, 5));
  REQUIRE(hm.k == 1);
  for (double v : hm.masks[0].data) CHECK(v == 1.0);
}

TEST_CASE("K=3 ratios (0.2,0.3,0.5) on width 10 cut at 2 and 5") {
  auto hm = masks_from_ratios(RegionLayout::make({0.2, 0.3, 0.5}, 4, 10));
  auto cuts = brute_force_cuts({0.2, 0.3, 0.5}, 10);
  CHECK(hm.boundaries == std::vector<int>{cuts[1], cuts[2]});
  CHECK(hm.boundaries == std::vector<int>{2, 5});
}

TEST_CASE("zero-column region is rejected with its index") {
  auto layout = RegionLayout::make({0.001, 0.999}, 4, 8);
  CHECK_THROWS_WITH_AS(masks_from_ratios(layout), doctest::Contains("region 1"),
                       std::runtime_error);
}

TEST_CASE("layout invariants are validated") {
  CHECK_THROWS_AS(RegionLayout::make({0.5, 0.4}, 4, 8), std::runtime_error);   // sum != 1
  CHECK_THROWS_AS(RegionLayout::make({0.5, 0.5, -0.0}, 4, 8), std::runtime_error);
  CHECK_THROWS_AS(RegionLayout::make({0.25, 0.25, 0.25, 0.25}, 4, 3), std::runtime_error);
}

TEST_CASE("hard masks partition the canvas for random layouts") {
  RandomStream rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    int k = rng.uniform_int(1, 8);
    int w = rng.uniform_int(6 * k, 6 * k + 40);  // wide enough for one column per region
    int h = rng.uniform_int(2, 16);
    auto hm = masks_from_ratios(RegionLayout::make(random_ratios(rng, k), h, w));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double sum = 0.0;
        for (const auto& m : hm.masks) sum += m.at2(y, x);
        CHECK(sum == 1.0);
      }
    // contiguity: each mask is one column band
    for (int r = 0; r < k; ++r)
      for (int x = 0; x < w; ++x) {
        bool inside = x >= hm.col_lo[r] && x < hm.col_hi[r];
        CHECK(hm.masks[r].at2(0, x) == (inside ? 1.0 : 0.0));
      }
  }
}

TEST_CASE("soften with sigma 0 returns hard masks") {
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 4, 8));
  auto sm = soften_masks(hm, 0.0);
  for (int k = 0; k < 2; ++k)
    for (size_t i = 0; i < sm.masks[k].numel(); ++i)
      CHECK(sm.masks[k][i] == hm.masks[k][i]);
}

TEST_CASE("soft masks sum to one pixelwise and interpolate across the seam") {
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 4, 8));
  auto sm = soften_masks(hm, 1.0);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = sm.masks[0].at2(y, x) + sm.masks[1].at2(y, x);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    }
  double m1_left = sm.masks[0].at2(0, 3);
  double m1_right = sm.masks[0].at2(0, 4);
  CHECK(m1_left > 0.5);
  CHECK(m1_left < 1.0);
  CHECK(m1_right > 0.0);
  CHECK(m1_right < 0.5);
  CHECK(sm.masks[1].at2(0, 4) == doctest::Approx(m1_left));
  CHECK(sm.masks[1].at2(0, 3) == doctest::Approx(m1_right));

  // direct 1-D convolution oracle at column 3
  double sigma = 1.0;
  double z = 0.0, acc = 0.0;
  for (int i = -3; i <= 3; ++i) {
    double kv = std::exp(-0.5 * i * i / (sigma * sigma));
    z += kv;
    if (3 - i <= 3) acc += kv;  // source column inside region 1
  }
  CHECK(m1_left == doctest::Approx(acc / z).epsilon(1e-9));
}

TEST_CASE("soft masks equal hard masks far from the boundary") {
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 2, 32));
  double sigma = 2.0;
  auto sm = soften_masks(hm, sigma);
  int radius = static_cast<int>(std::ceil(3 * sigma));
  for (int x = 0; x < 32; ++x) {
    if (std::abs(x - 16) > radius && std::abs(x - 15) > radius) {
      CHECK(sm.masks[0].at2(0, x) == doctest::Approx(hm.masks[0].at2(0, x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("soft masks converge to hard masks as sigma shrinks") {
  auto hm = masks_from_ratios(RegionLayout::make({0.3, 0.7}, 2, 20));
  double prev = 1.0;
  for (double sigma : {0.5, 0.25, 0.1, 0.01}) {
    auto sm = soften_masks(hm, sigma);
    double worst = 0.0;
    for (int k = 0; k < 2; ++k)
      for (size_t i = 0; i < sm.masks[k].numel(); ++i)
        worst = std::max(worst, std::abs(sm.masks[k][i] - hm.masks[k][i]));
    CHECK(worst <= prev + 1e-12);
    prev = worst;
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("region index map round-trips the masks") {
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 4, 4));
  auto map = region_index_map(hm);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      CHECK(map.index[y * 4 + x] == (x < 2 ? 1 : 2));

  auto hm3 = masks_from_ratios(RegionLayout::make({0.2, 0.3, 0.5}, 3, 10));
  auto map3 = region_index_map(hm3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 10; ++x) {
      int k = map3.index[y * 10 + x];
      CHECK(hm3.masks[k - 1].at2(y, x) == 1.0);
      for (int other = 0; other < 3; ++other)
        if (other != k - 1) CHECK(hm3.masks[other].at2(y, x) == 0.0);
    }

  auto hm1 = masks_from_ratios(RegionLayout::make({1.0}, 2, 2));
  auto map1 = region_index_map(hm1);
  for (int v : map1.index) CHECK(v == 1);
}

TEST_CASE("region index map rejects violated mask invariants") {
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 2, 4));
  hm.masks[1].at2(0, 0) = 1.0;  // overlap with region 1
  CHECK_THROWS_AS(region_index_map(hm), std::runtime_error);
  hm.masks[1].at2(0, 0) = 0.0;
  hm.masks[0].at2(1, 1) = 0.0;  // hole
  CHECK_THROWS_AS(region_index_map(hm), std::runtime_error);
}

TEST_CASE("downsample: all-ones stays all-ones, single pixel becomes area fraction") {
  Tensor ones({6, 6}, 1.0);
  Tensor d = downsample_mask(ones, 3, 2);
  for (double v : d.data) CHECK(v == doctest::Approx(1.0));

  Tensor single({4, 4});
  single.at2(0, 0) = 1.0;
  Tensor d2 = downsample_mask(single, 2, 2);
  CHECK(d2.at2(0, 0) == doctest::Approx(0.25));
  CHECK(d2.at2(0, 1) == doctest::Approx(0.0));
  CHECK(d2.at2(1, 0) == doctest::Approx(0.0));
  CHECK(d2.at2(1, 1) == doctest::Approx(0.0));
}

TEST_CASE("downsample preserves partition of unity, including fractional pooling") {
  RandomStream rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    int k = rng.uniform_int(2, 6);
    auto hm = masks_from_ratios(RegionLayout::make(random_ratios(rng, k), 128, 128));
    auto sm = soften_masks(hm, 2.0);
    int oh = rng.uniform_int(3, 14);
    int ow = rng.uniform_int(3, 14);
    std::vector<Tensor> down;
    for (const auto& m : sm.masks) down.push_back(downsample_mask(m, oh, ow));
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double s = 0.0;
        for (const auto& m : down) {
          s += m.at2(y, x);
          CHECK(m.at2(y, x) >= -1e-9);
          CHECK(m.at2(y, x) <= 1.0 + 1e-9);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
  }
}

TEST_CASE("two-region even split at 128 downsampled to 14x14 keeps row sums") {
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 128, 128));
  Tensor a = downsample_mask(hm.masks[0], 14, 14);
  Tensor b = downsample_mask(hm.masks[1], 14, 14);
  for (int y = 0; y < 14; ++y) {
    double row = 0.0;
    for (int x = 0; x < 14; ++x) row += a.at2(y, x) + b.at2(y, x);
    CHECK(row == doctest::Approx(14.0).epsilon(1e-6));
  }
}

TEST_CASE("boundary bands: paper-scale 32px band at a 64-column boundary") {
  auto hm = masks_from_ratios(RegionLayout::make({0.5, 0.5}, 8, 128));
  auto bands = boundary_bands(hm, 32);
  REQUIRE(bands.bands.size() == 1);
  CHECK(bands.bands[0].left_lo == 32);
  CHECK(bands.bands[0].left_hi == 64);
  CHECK(bands.bands[0].right_lo == 64);
  CHECK(bands.bands[0].right_hi == 96);
  CHECK(bands.warnings.empty());
}

TEST_CASE("boundary bands: K=1 yields no bands; K=3 width 10 band 2") {
  auto hm1 = masks_from_ratios(RegionLayout::make({1.0}, 4, 8));
  CHECK(boundary_bands(hm1, 2).bands.empty());

  auto hm3 = masks_from_ratios(RegionLayout::make({0.2, 0.3, 0.5}, 4, 10));
  auto bands = boundary_bands(hm3, 2);
  REQUIRE(bands.bands.size() == 2);
  CHECK(bands.bands[0].left_lo == 0);
  CHECK(bands.bands[0].left_hi == 2);
  CHECK(bands.bands[0].right_lo == 2);
  CHECK(bands.bands[0].right_hi == 4);
  CHECK(bands.bands[1].left_lo == 3);
  CHECK(bands.bands[1].left_hi == 5);
  CHECK(bands.bands[1].right_lo == 5);
  CHECK(bands.bands[1].right_hi == 7);
}

TEST_CASE("bands clip at region extents with a warning") {
  auto hm = masks_from_ratios(RegionLayout::make({0.25, 0.75}, 4, 8));
  auto bands = boundary_bands(hm, 4);
  REQUIRE(bands.bands.size() == 1);
  CHECK(bands.bands[0].left_lo == 0);  // clipped: region 1 is only 2 wide
  CHECK(bands.bands[0].left_hi == 2);
  CHECK_FALSE(bands.warnings.empty());
}

TEST_CASE("band pairs are disjoint and sit on opposite sides of the boundary") {
  RandomStream rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    int k = rng.uniform_int(2, 8);
    auto hm = masks_from_ratios(RegionLayout::make(random_ratios(rng, k), 8, 64));
    int band_px = rng.uniform_int(1, 8);
    auto bands = boundary_bands(hm, band_px);
    for (const auto& b : bands.bands) {
      CHECK(b.left_hi <= b.right_lo);           // disjoint
      CHECK(b.left_hi == b.boundary_col);       // left band ends at the boundary
      CHECK(b.right_lo == b.boundary_col);      // right band starts at it
      CHECK(b.left_hi - b.left_lo >= 1);
      CHECK(b.right_hi - b.right_lo >= 1);
      CHECK(b.left_hi - b.left_lo <= band_px);
      CHECK(b.right_hi - b.right_lo <= band_px);
    }
  }
}
