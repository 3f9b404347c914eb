#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "lesionforge/image.hpp"

namespace lf::io {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoded file with its original extents.
struct LoadedImage {
  RgbImage image;
  std::size_t original_width = 0;
  std::size_t original_height = 0;
};

/// Decodes any format OpenCV reads, converts to RGB and, when `size` is
/// nonzero, resizes bilinearly to size x size.
LoadedImage load_rgb(const std::filesystem::path& path, std::size_t size = 0);

/// Nearest-neighbour resize to width x height, then v >= 128 is foreground.
/// Reports the file's original extents through `original`.
BinaryMask load_mask(const std::filesystem::path& path, std::size_t width, std::size_t height,
                     std::pair<std::size_t, std::size_t>* original = nullptr);

RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height);
BinaryMask resize_nearest(const BinaryMask& mask, std::size_t width, std::size_t height);

void save_rgb(const std::filesystem::path& path, const RgbImage& image);
/// Foreground 255, background 0, 8-bit grayscale.
void save_mask(const std::filesystem::path& path, const BinaryMask& mask);

/// 16-bit grayscale PNG; labels must lie in [0, 65535].
void save_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap load_labels(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const RgbImage& image);

/// Copy of `image` with `alpha` of `color` blended over the pixels of `mask`.
RgbImage overlay(const RgbImage& image, const BinaryMask& mask, std::array<std::uint8_t, 3> color, double alpha);

}  // namespace lf::io
