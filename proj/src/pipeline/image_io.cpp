#include "lesionforge/pipeline/image_io.hpp"

#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace lf::io {

namespace {

RgbImage from_bgr(const cv::Mat& bgr) {
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  RgbImage out(static_cast<std::size_t>(rgb.cols), static_cast<std::size_t>(rgb.rows));
  for (int y = 0; y < rgb.rows; ++y) {
    const auto* row = rgb.ptr<std::uint8_t>(y);
    std::copy(row, row + rgb.cols * 3, out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * rgb.cols * 3);
  }
  return out;
}

cv::Mat to_mat(const RgbImage& image) {
  cv::Mat rgb(static_cast<int>(image.height), static_cast<int>(image.width), CV_8UC3,
              const_cast<std::uint8_t*>(image.pixels.data()));
  return rgb;
}

void write_or_throw(const std::filesystem::path& path, const cv::Mat& mat) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw ImageIoError("could not write " + path.string());
}

}  // namespace

LoadedImage load_rgb(const std::filesystem::path& path, std::size_t size) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw ImageIoError("could not decode " + path.string());
  LoadedImage out;
  out.original_width = static_cast<std::size_t>(bgr.cols);
  out.original_height = static_cast<std::size_t>(bgr.rows);
  out.image = from_bgr(bgr);
  if (size != 0 && (out.image.width != size || out.image.height != size)) {
    out.image = resize_bilinear(out.image, size, size);
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, std::size_t width, std::size_t height) {
  if (image.width == width && image.height == height) return image;
  cv::Mat resized;
  cv::resize(to_mat(image), resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             cv::INTER_LINEAR);
  RgbImage out(width, height);
  std::copy(resized.data, resized.data + out.pixels.size(), out.pixels.begin());
  return out;
}

BinaryMask resize_nearest(const BinaryMask& mask, std::size_t width, std::size_t height) {
  if (mask.width == width && mask.height == height) return mask;
  cv::Mat src(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8UC1,
              const_cast<std::uint8_t*>(mask.bits.data()));
  cv::Mat resized;
  cv::resize(src, resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_NEAREST);
  BinaryMask out(width, height);
  std::copy(resized.data, resized.data + out.bits.size(), out.bits.begin());
  return out;
}

BinaryMask load_mask(const std::filesystem::path& path, std::size_t width, std::size_t height,
                     std::pair<std::size_t, std::size_t>* original) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw ImageIoError("could not decode mask " + path.string());
  if (original) *original = {static_cast<std::size_t>(gray.cols), static_cast<std::size_t>(gray.rows)};
  cv::Mat resized = gray;
  if (static_cast<std::size_t>(gray.cols) != width || static_cast<std::size_t>(gray.rows) != height) {
    cv::resize(gray, resized, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0, cv::INTER_NEAREST);
  }
  BinaryMask out(width, height);
  for (std::size_t y = 0; y < height; ++y) {
    const auto* row = resized.ptr<std::uint8_t>(static_cast<int>(y));
    for (std::size_t x = 0; x < width; ++x) out.set(x, y, row[x] >= 128);
  }
  return out;
}

void save_rgb(const std::filesystem::path& path, const RgbImage& image) {
  cv::Mat bgr;
  cv::cvtColor(to_mat(image), bgr, cv::COLOR_RGB2BGR);
  write_or_throw(path, bgr);
}

void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  cv::Mat m(static_cast<int>(mask.height), static_cast<int>(mask.width), CV_8UC1);
  for (std::size_t i = 0; i < mask.bits.size(); ++i) m.data[i] = mask.bits[i] ? 255 : 0;
  write_or_throw(path, m);
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
  cv::Mat m(static_cast<int>(labels.height), static_cast<int>(labels.width), CV_16UC1);
  auto* dst = reinterpret_cast<std::uint16_t*>(m.data);
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const std::int32_t v = labels.labels[i];
    if (v < 0 || v > 65535) throw ImageIoError("label " + std::to_string(v) + " does not fit a 16-bit PNG");
    dst[i] = static_cast<std::uint16_t>(v);
  }
  write_or_throw(path, m);
}

LabelMap load_labels(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw ImageIoError("could not decode label map " + path.string());
  if (m.type() != CV_16UC1) throw ImageIoError(path.string() + " is not a 16-bit single-channel label map");
  LabelMap out(static_cast<std::size_t>(m.cols), static_cast<std::size_t>(m.rows));
  const auto* src = reinterpret_cast<const std::uint16_t*>(m.data);
  for (std::size_t i = 0; i < out.labels.size(); ++i) out.labels[i] = src[i];
  return out;
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  cv::Mat bgr;
  cv::cvtColor(to_mat(image), bgr, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", bgr, buf)) throw ImageIoError("PNG encoding failed");
  return buf;
}

RgbImage overlay(const RgbImage& image, const BinaryMask& mask, std::array<std::uint8_t, 3> color, double alpha) {
  require_same_extents(image.width, image.height, mask.width, mask.height, "overlay");
  RgbImage out = image;
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      if (!mask.at(x, y)) continue;
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = alpha * color[c] + (1.0 - alpha) * image.at(x, y, c);
        out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

}  // namespace lf::io
