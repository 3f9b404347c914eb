#include "lesionforge/mask_candidates.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>

namespace lf {

namespace {

struct Moments {
  std::int64_t count = 0;
  std::int64_t sum_x = 0;
  std::int64_t sum_y = 0;
};

Moments moments(const BinaryMask& mask) {
  Moments m;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      ++m.count;
      m.sum_x += static_cast<std::int64_t>(x);
      m.sum_y += static_cast<std::int64_t>(y);
    }
  }
  return m;
}

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

// Member nearest to the mean. Distances are compared scaled by the member
// count so the comparison is exact in integers.
PixelCoord snap_to_member(const BinaryMask& mask, const Moments& m) {
  PixelCoord best{};
  std::int64_t best_d = -1;
  for (std::size_t y = 0; y < mask.height; ++y) {
    for (std::size_t x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      const std::int64_t dx = m.sum_x - m.count * static_cast<std::int64_t>(x);
      const std::int64_t dy = m.sum_y - m.count * static_cast<std::int64_t>(y);
      const std::int64_t d = dx * dx + dy * dy;
      if (best_d < 0 || d < best_d) {
        best_d = d;
        best = {static_cast<int>(x), static_cast<int>(y)};
      }
    }
  }
  return best;
}

}  // namespace

std::vector<MaskCandidate> extract_candidates(const LabelMap& labeling, const CandidateFilter& filter) {
  const std::size_t total = labeling.pixel_count();
  std::map<std::int32_t, std::size_t> sizes;
  for (auto l : labeling.labels) ++sizes[l];

  std::vector<MaskCandidate> out;
  for (const auto& [label, size] : sizes) {
    if (size <= filter.margin || size + filter.margin >= total) continue;
    MaskCandidate c;
    c.cluster_id = label;
    c.pixels = labeling.region(label);
    c.size = size;
    c.center_of_mass = center_of_mass(c.pixels);
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(), [](const MaskCandidate& a, const MaskCandidate& b) {
    return a.size != b.size ? a.size > b.size : a.cluster_id < b.cluster_id;
  });
  return out;
}

Point2 center_of_mass(const BinaryMask& mask) {
  const Moments m = moments(mask);
  if (m.count == 0) throw std::invalid_argument("center_of_mass: empty mask");
  const Point2 mean{static_cast<double>(m.sum_x) / static_cast<double>(m.count),
                    static_cast<double>(m.sum_y) / static_cast<double>(m.count)};
  if (mask.contains({round_half_up(mean.x), round_half_up(mean.y)})) return mean;
  const PixelCoord snapped = snap_to_member(mask, m);
  return {static_cast<double>(snapped.x), static_cast<double>(snapped.y)};
}

PixelCoord fiducial_point(const BinaryMask& mask) {
  const Point2 c = center_of_mass(mask);
  return {round_half_up(c.x), round_half_up(c.y)};
}

MaskPair build_mask_pair(const LabelMap& labeling, int cluster_id, std::optional<PixelCoord> fiducial,
                         std::string image_id) {
  MaskPair pair;
  pair.image_id = std::move(image_id);
  pair.mask = labeling.region(cluster_id);
  if (pair.mask.count() == 0) {
    throw std::invalid_argument("build_mask_pair: cluster " + std::to_string(cluster_id) + " is not present");
  }
  if (pair.mask.count() == pair.mask.pixel_count()) {
    throw std::invalid_argument("build_mask_pair: cluster " + std::to_string(cluster_id) + " covers the whole image");
  }
  pair.complement = pair.mask.complement();
  pair.fiducial = fiducial.value_or(fiducial_point(pair.mask));
  if (!pair.mask.contains(pair.fiducial)) {
    throw std::invalid_argument("build_mask_pair: fiducial (" + std::to_string(pair.fiducial.x) + ", " +
                                std::to_string(pair.fiducial.y) + ") lies outside cluster " +
                                std::to_string(cluster_id));
  }
  return pair;
}

}  // namespace lf
