#pragma once

#include <string>
#include <vector>

#include "grpg/tensor.hpp"

namespace grpg {

// K split ratios over a W-wide canvas, horizontal split axis (column bands).
struct RegionLayout {
  int k = 1;
  std::vector<double> ratios;  // positive, sums to 1 within 1e-9
  int height = 0;
  int width = 0;

  static RegionLayout make(std::vector<double> ratios, int height, int width);
};

struct HardMasks {
  int k = 0;
  int height = 0;
  int width = 0;
  std::vector<Tensor> masks;        // K binary H x W masks, disjoint cover
  std::vector<int> boundaries;      // K-1 internal boundary columns
  std::vector<int> col_lo, col_hi;  // region k occupies columns [lo, hi)
};

struct SoftMasks {
  int k = 0;
  int height = 0;
  int width = 0;
  double sigma = 0.0;
  std::vector<Tensor> masks;  // K real masks, pixelwise partition of unity
};

struct RegionIndexMap {
  int height = 0;
  int width = 0;
  std::vector<int> index;  // 1-based region index per pixel, row-major
};

struct BoundaryBand {
  int boundary_col = 0;
  int left_lo = 0, left_hi = 0;    // left band columns [lo, hi)
  int right_lo = 0, right_hi = 0;  // right band columns [lo, hi)
};

struct BoundaryBandPair {
  int band_px = 0;
  std::vector<BoundaryBand> bands;  // one per internal boundary
  std::vector<std::string> warnings;
};

// Region k gets columns [round(W*cum_{k-1}), round(W*cum_k)), rounding
// half-away-from-zero on the cumulative sums so no column is lost.
HardMasks masks_from_ratios(const RegionLayout& layout);

// 1-D Gaussian blur along the split axis (kernel truncated at 3*sigma,
// renormalized), then pixelwise renormalization across the K masks.
SoftMasks soften_masks(const HardMasks& hard, double sigma);

RegionIndexMap region_index_map(const HardMasks& hard);

// Fractional-area average pooling; output values stay in [0,1] for masks.
Tensor downsample_mask(const Tensor& mask, int out_h, int out_w);

BoundaryBandPair boundary_bands(const HardMasks& hard, int band_px);

// Binary H x W tensor (1 inside the band's columns).
Tensor band_mask(const HardMasks& hard, int lo, int hi);

}  // namespace grpg
