#include "grpg/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace grpg {

RegionLayout RegionLayout::make(std::vector<double> ratios, int height, int width) {
  RegionLayout l;
  l.k = static_cast<int>(ratios.size());
  l.ratios = std::move(ratios);
  l.height = height;
  l.width = width;
  if (l.k < 1) fail("RegionLayout: needs at least one region");
  if (height < 1 || width < 1) fail("RegionLayout: canvas dimensions must be positive");
  if (l.k > width)
    fail("RegionLayout: " + std::to_string(l.k) + " regions cannot fit a width-" +
         std::to_string(width) + " canvas");
  double sum = 0.0;
  for (double r : l.ratios) {
    if (r <= 0.0) fail("RegionLayout: ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    fail("RegionLayout: ratios sum to " + std::to_string(sum) + ", expected 1");
  return l;
}

namespace {
long long round_half_away(double x) {
  return static_cast<long long>(x >= 0.0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}
}  // namespace

HardMasks masks_from_ratios(const RegionLayout& layout) {
  HardMasks hm;
  hm.k = layout.k;
  hm.height = layout.height;
  hm.width = layout.width;
  std::vector<int> cuts(layout.k + 1, 0);
  double cum = 0.0;
  for (int k = 0; k < layout.k; ++k) {
    cum += layout.ratios[k];
    cuts[k + 1] = static_cast<int>(round_half_away(layout.width * cum));
  }
  cuts[layout.k] = layout.width;  // guard against residual rounding drift
  for (int k = 0; k < layout.k; ++k) {
    if (cuts[k + 1] <= cuts[k])
      fail("masks_from_ratios: region " + std::to_string(k + 1) + " receives zero columns");
    hm.col_lo.push_back(cuts[k]);
    hm.col_hi.push_back(cuts[k + 1]);
    Tensor m({layout.height, layout.width});
    for (int y = 0; y < layout.height; ++y)
      for (int x = cuts[k]; x < cuts[k + 1]; ++x) m.at2(y, x) = 1.0;
    hm.masks.push_back(std::move(m));
    if (k > 0) hm.boundaries.push_back(cuts[k]);
  }
  return hm;
}

SoftMasks soften_masks(const HardMasks& hard, double sigma) {
  if (sigma < 0.0) fail("soften_masks: sigma must be nonnegative");
  SoftMasks sm;
  sm.k = hard.k;
  sm.height = hard.height;
  sm.width = hard.width;
  sm.sigma = sigma;

  int radius = sigma > 0.0 ? static_cast<int>(std::ceil(3.0 * sigma)) : 0;
  std::vector<double> kernel(2 * radius + 1, 1.0);
  if (radius > 0) {
    double z = 0.0;
    for (int i = -radius; i <= radius; ++i) {
      kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
      z += kernel[i + radius];
    }
    for (double& v : kernel) v /= z;
  }

  std::vector<Tensor> blurred;
  for (int k = 0; k < hard.k; ++k) {
    Tensor out({hard.height, hard.width});
    const Tensor& m = hard.masks[k];
    for (int y = 0; y < hard.height; ++y)
      for (int x = 0; x < hard.width; ++x) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i) {
          int sx = x - i;
          if (sx < 0 || sx >= hard.width) continue;  // zero padding
          acc += kernel[i + radius] * m.at2(y, sx);
        }
        out.at2(y, x) = acc;
      }
    blurred.push_back(std::move(out));
  }
  // pixelwise renormalization to a partition of unity
  for (int y = 0; y < hard.height; ++y)
    for (int x = 0; x < hard.width; ++x) {
      double s = 0.0;
      for (int k = 0; k < hard.k; ++k) s += blurred[k].at2(y, x);
      for (int k = 0; k < hard.k; ++k) blurred[k].at2(y, x) /= s;
    }
  sm.masks = std::move(blurred);
  return sm;
}

RegionIndexMap region_index_map(const HardMasks& hard) {
  RegionIndexMap map;
  map.height = hard.height;
  map.width = hard.width;
  map.index.assign(static_cast<size_t>(hard.height) * hard.width, 0);
  for (int y = 0; y < hard.height; ++y)
    for (int x = 0; x < hard.width; ++x) {
      int owner = 0;
      for (int k = 0; k < hard.k; ++k) {
        if (hard.masks[k].at2(y, x) == 1.0) {
          if (owner != 0)
            fail("region_index_map: pixel (" + std::to_string(x) + "," + std::to_string(y) +
                 ") covered by regions " + std::to_string(owner) + " and " +
                 std::to_string(k + 1));
          owner = k + 1;
        }
      }
      if (owner == 0)
        fail("region_index_map: pixel (" + std::to_string(x) + "," + std::to_string(y) +
             ") not covered by any region");
      map.index[static_cast<size_t>(y) * hard.width + x] = owner;
    }
  return map;
}

Tensor downsample_mask(const Tensor& mask, int out_h, int out_w) {
  if (mask.ndim() != 2) fail("downsample_mask: mask is not 2-D: " + mask.shape_str());
  int in_h = mask.shape[0], in_w = mask.shape[1];
  if (out_h > in_h || out_w > in_w)
    fail("downsample_mask: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
         " exceeds source " + mask.shape_str());
  Tensor out({out_h, out_w});
  double sy = static_cast<double>(in_h) / out_h;
  double sx = static_cast<double>(in_w) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < out_w; ++ox) {
      double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0.0;
      for (int y = static_cast<int>(std::floor(y0)); y < static_cast<int>(std::ceil(y1)); ++y) {
        double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (wy <= 0.0) continue;
        for (int x = static_cast<int>(std::floor(x0)); x < static_cast<int>(std::ceil(x1)); ++x) {
          double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (wx <= 0.0) continue;
          acc += wy * wx * mask.at2(y, x);
        }
      }
      out.at2(oy, ox) = acc / (sy * sx);
    }
  }
  return out;
}

BoundaryBandPair boundary_bands(const HardMasks& hard, int band_px) {
  if (band_px < 1) fail("boundary_bands: band width must be at least 1 pixel");
  BoundaryBandPair pair;
  pair.band_px = band_px;
  for (size_t b = 0; b < hard.boundaries.size(); ++b) {
    int c = hard.boundaries[b];
    BoundaryBand band;
    band.boundary_col = c;
    int left_region_lo = hard.col_lo[b];
    int right_region_hi = hard.col_hi[b + 1];
    band.left_lo = std::max(left_region_lo, c - band_px);
    band.left_hi = c;
    band.right_lo = c;
    band.right_hi = std::min(right_region_hi, c + band_px);
    if (band.left_hi - band.left_lo < band_px || band.right_hi - band.right_lo < band_px)
      pair.warnings.push_back("boundary at column " + std::to_string(c) +
                              ": band clipped to region extents");
    pair.bands.push_back(band);
  }
  return pair;
}

Tensor band_mask(const HardMasks& hard, int lo, int hi) {
  Tensor m({hard.height, hard.width});
  for (int y = 0; y < hard.height; ++y)
    for (int x = lo; x < hi; ++x) m.at2(y, x) = 1.0;
  return m;
}

}  // namespace grpg
