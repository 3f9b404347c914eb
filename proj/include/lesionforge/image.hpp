#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lesionforge/nn/tensor.hpp"

namespace lf {

/// Integer pixel position; x is the column, y the row.
struct PixelCoord {
  int x = 0;
  int y = 0;
  bool operator==(const PixelCoord&) const = default;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// 8-bit RGB raster, interleaved row-major.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::size_t pixel_count() const { return width * height; }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  bool operator==(const RgbImage&) const = default;
};

/// Row-major binary raster (0 or 1 per pixel).
struct BinaryMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(std::size_t w, std::size_t h) : width(w), height(h), bits(w * h, 0) {}

  std::size_t pixel_count() const { return width * height; }
  bool at(std::size_t x, std::size_t y) const { return bits[y * width + x] != 0; }
  void set(std::size_t x, std::size_t y, bool v = true) { bits[y * width + x] = v ? 1 : 0; }
  /// True when `p` lies within the extents and is set.
  bool contains(PixelCoord p) const;
  std::size_t count() const;
  BinaryMask complement() const;
  bool operator==(const BinaryMask&) const = default;
};

/// Row-major integer label raster.
struct LabelMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t w, std::size_t h, std::int32_t fill = 0) : width(w), height(h), labels(w * h, fill) {}

  std::size_t pixel_count() const { return width * height; }
  std::int32_t at(std::size_t x, std::size_t y) const { return labels[y * width + x]; }
  std::int32_t& at(std::size_t x, std::size_t y) { return labels[y * width + x]; }
  /// Mask of pixels carrying `label`.
  BinaryMask region(std::int32_t label) const;
  /// Number of distinct labels present.
  std::size_t distinct_count() const;
  bool operator==(const LabelMap&) const = default;
};

/// 1 x 3 x H x W tensor with channel values scaled to [0, 1].
nn::Tensor4<float> to_tensor(const RgbImage& image);

void require_same_extents(std::size_t w1, std::size_t h1, std::size_t w2, std::size_t h2, const std::string& what);

}  // namespace lf
