#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lesionforge/image.hpp"

namespace lf {

/// One generated image with its lesion ground truth and a click at the
/// lesion centre.
struct SynthCase {
  std::string id;
  RgbImage image;
  BinaryMask ground_truth;
  PixelCoord click;
};

struct SynthOptions {
  std::size_t size = 240;
  double min_axis = 35.0;
  double max_axis = 60.0;
};

/// Grayscale phantoms: a dark background with smooth low-frequency noise, one
/// bright rotated ellipse with a soft edge (the lesion), and one to three
/// dimmer round distractors that do not touch it. The mask is the ellipse
/// interior. Output depends only on (count, seed, options).
std::vector<SynthCase> synth_generate(std::size_t count, std::uint64_t seed, const SynthOptions& options = {});

}  // namespace lf
