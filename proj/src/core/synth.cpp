#include "lesionforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace lf {

namespace {

struct Blob {
  double cx, cy, radius, intensity;
};

// Bilinearly upsampled coarse random grid in [-1, 1].
std::vector<double> smooth_noise(std::size_t size, std::size_t cells, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const std::size_t g = cells + 1;
  std::vector<double> grid(g * g);
  for (auto& v : grid) v = u(rng);
  std::vector<double> out(size * size);
  const double scale = static_cast<double>(cells) / static_cast<double>(size - 1);
  for (std::size_t y = 0; y < size; ++y) {
    const double gy = y * scale;
    const auto y0 = std::min<std::size_t>(static_cast<std::size_t>(gy), cells - 1);
    const double fy = gy - y0;
    for (std::size_t x = 0; x < size; ++x) {
      const double gx = x * scale;
      const auto x0 = std::min<std::size_t>(static_cast<std::size_t>(gx), cells - 1);
      const double fx = gx - x0;
      const double a = grid[y0 * g + x0] * (1 - fx) + grid[y0 * g + x0 + 1] * fx;
      const double b = grid[(y0 + 1) * g + x0] * (1 - fx) + grid[(y0 + 1) * g + x0 + 1] * fx;
      out[y * size + x] = a * (1 - fy) + b * fy;
    }
  }
  return out;
}

double soft_step(double signed_distance) { return 1.0 / (1.0 + std::exp(-signed_distance / 0.7)); }

}  // namespace

std::vector<SynthCase> synth_generate(std::size_t count, std::uint64_t seed, const SynthOptions& options) {
  if (count < 1) throw std::invalid_argument("synth_generate: count must be at least 1");
  const std::size_t n = options.size;
  if (n < 64) throw std::invalid_argument("synth_generate: image size must be at least 64");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<SynthCase> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SynthCase sc;
    std::ostringstream id;
    id << "synth_" << std::setw(3) << std::setfill('0') << i;
    sc.id = id.str();

    const double background = uniform(25.0, 45.0);
    const std::vector<double> noise = smooth_noise(n, 4, rng);
    const double noise_amp = uniform(6.0, 12.0);

    const double a = uniform(options.min_axis, options.max_axis);
    const double b = uniform(options.min_axis, options.max_axis);
    const double margin = std::max(a, b) + 8.0;
    const double cx = uniform(margin, static_cast<double>(n) - margin);
    const double cy = uniform(margin, static_cast<double>(n) - margin);
    const double theta = uniform(0.0, std::numbers::pi);
    const double lesion = uniform(185.0, 225.0);
    const double ct = std::cos(theta);
    const double st = std::sin(theta);

    std::vector<Blob> blobs;
    const int distractors = 1 + static_cast<int>(unit(rng) * 3.0);
    for (int attempt = 0; static_cast<int>(blobs.size()) < distractors && attempt < 200; ++attempt) {
      Blob bl{uniform(20.0, n - 20.0), uniform(20.0, n - 20.0), uniform(8.0, 16.0), uniform(85.0, 125.0)};
      const double gap = std::hypot(bl.cx - cx, bl.cy - cy) - std::max(a, b) - bl.radius;
      if (gap < 10.0) continue;
      blobs.push_back(bl);
    }

    sc.image = RgbImage(n, n);
    sc.ground_truth = BinaryMask(n, n);
    for (std::size_t y = 0; y < n; ++y) {
      for (std::size_t x = 0; x < n; ++x) {
        double v = background + noise_amp * noise[y * n + x];
        for (const Blob& bl : blobs) {
          const double d = bl.radius - std::hypot(x - bl.cx, y - bl.cy);
          v += (bl.intensity - v) * soft_step(d);
        }
        const double dx = x - cx;
        const double dy = y - cy;
        const double u = (dx * ct + dy * st) / a;
        const double w = (-dx * st + dy * ct) / b;
        const double r = std::sqrt(u * u + w * w);
        // Signed distance approximated along the normalized radius.
        const double sd = (1.0 - r) * std::min(a, b);
        v += (lesion - v) * soft_step(sd);
        if (r <= 1.0) sc.ground_truth.set(x, y);
        const auto g = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        for (std::size_t c = 0; c < 3; ++c) sc.image.at(x, y, c) = g;
      }
    }
    sc.click = {static_cast<int>(std::lround(cx)), static_cast<int>(std::lround(cy))};
    out.push_back(std::move(sc));
  }
  return out;
}

}  // namespace lf
