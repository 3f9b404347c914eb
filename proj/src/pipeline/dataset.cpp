#include "lesionforge/pipeline/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "lesionforge/pipeline/image_io.hpp"

namespace lf::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  static const std::set<std::string> exts{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  return exts.count(ext) > 0;
}

bool is_mask_file(const fs::path& p) { return p.stem().extension() == ".mask"; }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

}  // namespace

const ImageRecord* Dataset::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

const ImageRecord& Dataset::at(const std::string& id) const {
  const ImageRecord* r = find(id);
  if (!r) throw std::out_of_range("no image with id '" + id + "' in the dataset");
  return *r;
}

PixelCoord scale_click(PixelCoord click, std::size_t original_width, std::size_t original_height, std::size_t size) {
  auto scale = [size](int v, std::size_t extent) {
    const double s = (static_cast<double>(v) + 0.5) * static_cast<double>(size) / static_cast<double>(extent);
    return std::clamp(static_cast<int>(std::floor(s)), 0, static_cast<int>(size) - 1);
  };
  return {scale(click.x, original_width), scale(click.y, original_height)};
}

Dataset ingest(const fs::path& dir, std::size_t size, const Warn& warn) {
  if (!fs::is_directory(dir)) throw std::runtime_error("data directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path()) && !is_mask_file(entry.path())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.stem().string() < b.stem().string(); });

  json clicks = json::object();
  if (fs::exists(dir / "clicks.json")) clicks = read_json(dir / "clicks.json");

  Dataset ds;
  std::set<std::string> seen;
  for (const auto& path : files) {
    ImageRecord rec;
    rec.id = path.stem().string();
    if (!seen.insert(rec.id).second) {
      if (warn) warn("skipping " + path.string() + ": duplicate id '" + rec.id + "'");
      continue;
    }
    try {
      io::LoadedImage loaded = io::load_rgb(path, size);
      rec.image = std::move(loaded.image);
      rec.original_width = loaded.original_width;
      rec.original_height = loaded.original_height;
    } catch (const io::ImageIoError& e) {
      if (warn) warn("skipping " + path.string() + ": " + e.what());
      continue;
    }
    rec.source = path;
    const fs::path mask_path = dir / (rec.id + ".mask.png");
    if (fs::exists(mask_path)) {
      std::pair<std::size_t, std::size_t> original;
      BinaryMask mask = io::load_mask(mask_path, size, size, &original);
      if (original.first != rec.original_width || original.second != rec.original_height) {
        throw std::runtime_error("mask " + mask_path.string() + " is " + std::to_string(original.first) + "x" +
                                 std::to_string(original.second) + " but its image is " +
                                 std::to_string(rec.original_width) + "x" + std::to_string(rec.original_height));
      }
      rec.ground_truth = std::move(mask);
    }
    if (auto it = clicks.find(rec.id); it != clicks.end()) {
      const PixelCoord raw{it->at("x").get<int>(), it->at("y").get<int>()};
      rec.click = scale_click(raw, rec.original_width, rec.original_height, size);
    }
    ds.records.push_back(std::move(rec));
  }

  std::vector<std::string> ids;
  for (const auto& r : ds.records) ids.push_back(r.id);
  if (fs::exists(dir / "split.json")) {
    const json split = read_json(dir / "split.json");
    ds.train_ids = split.at("train").get<std::vector<std::string>>();
    ds.test_ids = split.at("test").get<std::vector<std::string>>();
    std::set<std::string> all(ids.begin(), ids.end());
    std::set<std::string> listed;
    for (const auto* part : {&ds.train_ids, &ds.test_ids}) {
      for (const auto& id : *part) {
        if (!all.count(id)) throw std::runtime_error("split.json names unknown image '" + id + "'");
        if (!listed.insert(id).second) throw std::runtime_error("split.json lists '" + id + "' more than once");
      }
    }
    if (listed.size() != all.size()) {
      for (const auto& id : ids) {
        if (!listed.count(id)) throw std::runtime_error("split.json does not assign image '" + id + "'");
      }
    }
  } else {
    const std::size_t n_train = (ids.size() + 1) / 2;
    ds.train_ids.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    ds.test_ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  }
  return ds;
}

void write_synth_dataset(const fs::path& dir, const std::vector<SynthCase>& cases) {
  fs::create_directories(dir);
  json clicks = json::object();
  json train = json::array();
  json test = json::array();
  const std::size_t n_train = (cases.size() + 1) / 2;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const SynthCase& c = cases[i];
    io::save_rgb(dir / (c.id + ".png"), c.image);
    io::save_mask(dir / (c.id + ".mask.png"), c.ground_truth);
    clicks[c.id] = {{"x", c.click.x}, {"y", c.click.y}};
    (i < n_train ? train : test).push_back(c.id);
  }
  write_json(dir / "clicks.json", clicks);
  write_json(dir / "split.json", {{"train", train}, {"test", test}});
}

}  // namespace lf::pipeline
