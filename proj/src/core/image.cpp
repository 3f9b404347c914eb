#include "lesionforge/image.hpp"

#include <algorithm>
#include <unordered_set>

namespace lf {

bool BinaryMask::contains(PixelCoord p) const {
  if (p.x < 0 || p.y < 0 || static_cast<std::size_t>(p.x) >= width || static_cast<std::size_t>(p.y) >= height) {
    return false;
  }
  return at(static_cast<std::size_t>(p.x), static_cast<std::size_t>(p.y));
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

BinaryMask BinaryMask::complement() const {
  BinaryMask out(width, height);
  for (std::size_t i = 0; i < bits.size(); ++i) out.bits[i] = bits[i] != 0 ? 0 : 1;
  return out;
}

BinaryMask LabelMap::region(std::int32_t label) const {
  BinaryMask out(width, height);
  for (std::size_t i = 0; i < labels.size(); ++i) out.bits[i] = labels[i] == label ? 1 : 0;
  return out;
}

std::size_t LabelMap::distinct_count() const {
  std::unordered_set<std::int32_t> seen(labels.begin(), labels.end());
  return seen.size();
}

nn::Tensor4<float> to_tensor(const RgbImage& image) {
  nn::Tensor4<float> t(nn::Shape4{1, 3, image.height, image.width});
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < image.height; ++y) {
      for (std::size_t x = 0; x < image.width; ++x) {
        t(0, c, y, x) = static_cast<float>(image.at(x, y, c)) / 255.0f;
      }
    }
  }
  return t;
}

void require_same_extents(std::size_t w1, std::size_t h1, std::size_t w2, std::size_t h2, const std::string& what) {
  if (w1 != w2 || h1 != h2) {
    throw nn::ShapeError(what + ": extents " + std::to_string(w1) + "x" + std::to_string(h1) + " vs " +
                         std::to_string(w2) + "x" + std::to_string(h2));
  }
}

}  // namespace lf
