#include "lesionforge/superpixel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <stdexcept>

namespace lf {

namespace {

struct Center {
  double r, g, b, x, y;
};

// Labels 4-connected runs of equal label; returns component id per pixel.
std::vector<int> connected_components(const LabelMap& in, std::vector<std::size_t>& sizes) {
  const std::size_t w = in.width;
  const std::size_t h = in.height;
  std::vector<int> comp(in.pixel_count(), -1);
  std::vector<std::size_t> stack;
  sizes.clear();
  for (std::size_t start = 0; start < comp.size(); ++start) {
    if (comp[start] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    const std::int32_t label = in.labels[start];
    std::size_t size = 0;
    comp[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++size;
      const std::size_t x = p % w;
      const std::size_t y = p / w;
      auto visit = [&](std::size_t q) {
        if (comp[q] < 0 && in.labels[q] == label) {
          comp[q] = id;
          stack.push_back(q);
        }
      };
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
    }
    sizes.push_back(size);
  }
  return comp;
}

// Grid of nx * ny seeds: count close to the target, cells close to square.
// Rounding each axis separately can lose half the seeds on tiny targets.
std::pair<std::size_t, std::size_t> seed_grid(std::size_t w, std::size_t h, int target) {
  const double k = target;
  std::pair<std::size_t, std::size_t> best{1, 1};
  double best_cost = std::numeric_limits<double>::infinity();
  for (std::size_t ny = 1; ny <= h; ++ny) {
    const auto ideal = static_cast<std::size_t>(std::max(1.0, std::floor(k / static_cast<double>(ny))));
    for (std::size_t nx : {ideal, ideal + 1}) {
      if (nx > w) continue;
      const double count_err = std::abs(static_cast<double>(nx * ny) - k) / k;
      const double aspect = std::abs(std::log((static_cast<double>(w) / nx) / (static_cast<double>(h) / ny)));
      const double cost = 4.0 * count_err + aspect;
      if (cost < best_cost) {
        best_cost = cost;
        best = {nx, ny};
      }
    }
  }
  return best;
}

}  // namespace


SuperpixelMap slic_segment(const RgbImage& image, const SlicConfig& config) {
  const std::size_t w = image.width;
  const std::size_t h = image.height;
  const std::size_t n = w * h;
  if (w == 0 || h == 0) throw std::invalid_argument("slic_segment: empty image");
  if (image.pixels.size() != n * 3) throw std::invalid_argument("slic_segment: pixel buffer size mismatch");
  if (config.target_count < 1) throw std::invalid_argument("slic_segment: target_count must be positive");
  if (static_cast<std::size_t>(config.target_count) > n) {
    throw std::invalid_argument("slic_segment: target_count " + std::to_string(config.target_count) +
                                " exceeds pixel count " + std::to_string(n));
  }
  if (!(config.compactness > 0.0)) throw std::invalid_argument("slic_segment: compactness must be positive");
  if (config.iterations < 1) throw std::invalid_argument("slic_segment: iterations must be positive");

  const double step = std::sqrt(static_cast<double>(n) / config.target_count);
  const auto [nx, ny] = seed_grid(w, h, config.target_count);

  std::vector<Center> centers;
  centers.reserve(nx * ny);
  for (std::size_t j = 0; j < ny; ++j) {
    for (std::size_t i = 0; i < nx; ++i) {
      const double cx = (i + 0.5) * static_cast<double>(w) / nx - 0.5;
      const double cy = (j + 0.5) * static_cast<double>(h) / ny - 0.5;
      const auto px = static_cast<std::size_t>(std::clamp<long>(std::lround(cx), 0, static_cast<long>(w) - 1));
      const auto py = static_cast<std::size_t>(std::clamp<long>(std::lround(cy), 0, static_cast<long>(h) - 1));
      centers.push_back({double(image.at(px, py, 0)), double(image.at(px, py, 1)), double(image.at(px, py, 2)), cx, cy});
    }
  }

  // Grid-cell labels cover pixels that no search window reaches.
  LabelMap labels(w, h);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t gi = std::min(nx - 1, x * nx / w);
      const std::size_t gj = std::min(ny - 1, y * ny / h);
      labels.at(x, y) = static_cast<std::int32_t>(gj * nx + gi);
    }
  }

  const double spatial_weight = config.compactness * config.compactness / (step * step);
  std::vector<double> dist(n);
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (int iter = 0; iter < config.iterations; ++iter) {
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (std::size_t k = 0; k < centers.size(); ++k) {
      const Center& c = centers[k];
      const long x0 = std::max<long>(0, static_cast<long>(std::ceil(c.x - step)));
      const long x1 = std::min<long>(static_cast<long>(w) - 1, static_cast<long>(std::floor(c.x + step)));
      const long y0 = std::max<long>(0, static_cast<long>(std::ceil(c.y - step)));
      const long y1 = std::min<long>(static_cast<long>(h) - 1, static_cast<long>(std::floor(c.y + step)));
      for (long y = y0; y <= y1; ++y) {
        for (long x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x);
          const std::uint8_t* px = &image.pixels[p * 3];
          const double dr = px[0] - c.r;
          const double dg = px[1] - c.g;
          const double db = px[2] - c.b;
          const double dx = static_cast<double>(x) - c.x;
          const double dy = static_cast<double>(y) - c.y;
          const double d = dr * dr + dg * dg + db * db + (dx * dx + dy * dy) * spatial_weight;
          if (d < dist[p]) {
            dist[p] = d;
            labels.labels[p] = static_cast<std::int32_t>(k);
          }
        }
      }
    }
    sums.assign(centers.size() * 5, 0.0);
    counts.assign(centers.size(), 0);
    for (std::size_t p = 0; p < n; ++p) {
      const auto k = static_cast<std::size_t>(labels.labels[p]);
      double* s = &sums[k * 5];
      s[0] += image.pixels[p * 3];
      s[1] += image.pixels[p * 3 + 1];
      s[2] += image.pixels[p * 3 + 2];
      s[3] += static_cast<double>(p % w);
      s[4] += static_cast<double>(p / w);
      ++counts[k];
    }
    for (std::size_t k = 0; k < centers.size(); ++k) {
      if (counts[k] == 0) continue;
      const double inv = 1.0 / static_cast<double>(counts[k]);
      const double* s = &sums[k * 5];
      centers[k] = {s[0] * inv, s[1] * inv, s[2] * inv, s[3] * inv, s[4] * inv};
    }
  }

  SuperpixelMap raw;
  raw.labels = std::move(labels);
  raw.count = static_cast<int>(centers.size());
  return enforce_connectivity(raw);
}

SuperpixelMap enforce_connectivity(const SuperpixelMap& map) {
  const LabelMap& in = map.labels;
  const std::size_t w = in.width;
  const std::size_t n = in.pixel_count();
  SuperpixelMap out;
  out.labels = LabelMap(in.width, in.height);
  if (n == 0) return out;

  std::vector<std::size_t> sizes;
  const std::vector<int> comp = connected_components(in, sizes);
  const std::size_t comps = sizes.size();

  std::vector<std::set<int>> adjacent(comps);
  for (std::size_t p = 0; p < n; ++p) {
    const std::size_t x = p % w;
    if (x + 1 < w && comp[p] != comp[p + 1]) {
      adjacent[comp[p]].insert(comp[p + 1]);
      adjacent[comp[p + 1]].insert(comp[p]);
    }
    if (p + w < n && comp[p] != comp[p + w]) {
      adjacent[comp[p]].insert(comp[p + w]);
      adjacent[comp[p + w]].insert(comp[p]);
    }
  }

  std::vector<int> parent(comps);
  for (std::size_t i = 0; i < comps; ++i) parent[i] = static_cast<int>(i);
  auto find = [&](int c) {
    while (parent[c] != c) {
      parent[c] = parent[parent[c]];
      c = parent[c];
    }
    return c;
  };

  const double threshold = static_cast<double>(n) / static_cast<double>(in.distinct_count()) / 4.0;
  for (std::size_t i = 0; i < comps; ++i) {
    const int c = static_cast<int>(i);
    if (find(c) != c || static_cast<double>(sizes[i]) >= threshold) continue;
    int best = -1;
    for (int nb : adjacent[i]) {
      const int r = find(nb);
      if (r == c) continue;
      if (best < 0 || sizes[r] > sizes[best] || (sizes[r] == sizes[best] && r < best)) best = r;
    }
    if (best < 0) continue;
    parent[c] = best;
    sizes[best] += sizes[i];
    for (int nb : adjacent[i]) {
      if (find(nb) != best) adjacent[best].insert(nb);
    }
    adjacent[i].clear();
  }

  std::vector<int> remap(comps, -1);
  int next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const int r = find(comp[p]);
    if (remap[r] < 0) remap[r] = next++;
    out.labels.labels[p] = remap[r];
  }
  out.count = next;
  return out;
}

}  // namespace lf
