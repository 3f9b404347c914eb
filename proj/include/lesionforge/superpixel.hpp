#pragma once

#include <cstdint>

#include "lesionforge/image.hpp"

namespace lf {

struct SlicConfig {
  int target_count = 10000;
  double compactness = 100.0;
  int iterations = 10;
  /// Carried for provenance; grid seeding is deterministic.
  std::uint64_t seed = 0;
};

/// Partition of an image into `count` superpixels with ids 0..count-1.
struct SuperpixelMap {
  LabelMap labels;
  int count = 0;

  std::size_t width() const { return labels.width; }
  std::size_t height() const { return labels.height; }
  double mean_size() const {
    return count > 0 ? static_cast<double>(labels.pixel_count()) / static_cast<double>(count) : 0.0;
  }
};

/// SLIC in (R, G, B, x, y): centers start on a regular grid with spacing
/// S = sqrt(pixels / target_count) and are refined k-means style within a
/// 2S x 2S window using D = sqrt(d_rgb^2 + (d_xy / S)^2 * m^2). Ties go to
/// the lowest center index. Connectivity is enforced before returning.
SuperpixelMap slic_segment(const RgbImage& image, const SlicConfig& config);

/// Splits every label into 4-connected components, merges components smaller
/// than a quarter of the mean label size into their largest 4-adjacent
/// neighbour, and renumbers ids in raster order of first appearance.
SuperpixelMap enforce_connectivity(const SuperpixelMap& map);

}  // namespace lf
