#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lesionforge/image.hpp"
#include "lesionforge/synth.hpp"

namespace lf::pipeline {

using Warn = std::function<void(const std::string&)>;

struct ImageRecord {
  std::string id;
  RgbImage image;
  std::filesystem::path source;
  std::size_t original_width = 0;
  std::size_t original_height = 0;
  std::optional<BinaryMask> ground_truth;
  /// In working-resolution coordinates.
  std::optional<PixelCoord> click;
};

struct Dataset {
  std::vector<ImageRecord> records;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;

  const ImageRecord& at(const std::string& id) const;
  const ImageRecord* find(const std::string& id) const;
};

/// Reads every decodable image in `dir` (sidecar masks `<id>.mask.png`
/// excluded), resized to size x size, ordered by id. Optional files:
/// clicks.json mapping id -> {"x", "y"} in original pixel coordinates, and
/// split.json {"train": [...], "test": [...]}. Without a split file the first
/// half of the ids (rounded up) is the training set.
Dataset ingest(const std::filesystem::path& dir, std::size_t size, const Warn& warn = {});

/// Maps a click in original coordinates to the working resolution.
PixelCoord scale_click(PixelCoord click, std::size_t original_width, std::size_t original_height, std::size_t size);

/// Writes synthetic cases as `<id>.png`, `<id>.mask.png`, clicks.json and
/// split.json (first half train).
void write_synth_dataset(const std::filesystem::path& dir, const std::vector<SynthCase>& cases);

}  // namespace lf::pipeline
