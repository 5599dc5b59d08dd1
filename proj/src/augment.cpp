#include "cxr/augment.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cxr/error.hpp"

namespace cxr {

GrayImage::GrayImage(std::size_t height, std::size_t width, std::vector<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height == 0 || width == 0 || pixels_.size() != height * width) {
    throw ShapeError("gray_image", Shape{height, width}, Shape{pixels_.size()}, "pixel count does not match dims");
  }
  for (float v : pixels_) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DegenerateInputError("gray_image", "pixel outside [0, 1]");
  }
}

GrayImage GrayImage::filled(std::size_t height, std::size_t width, float value) {
  return GrayImage(height, width, std::vector<float>(height * width, value));
}

void GrayImage::set(std::size_t r, std::size_t c, float v) { pixels_[r * width_ + c] = std::clamp(v, 0.0f, 1.0f); }

LungMask::LungMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (height == 0 || width == 0 || pixels_.size() != height * width) {
    throw ShapeError("lung_mask", Shape{height, width}, Shape{pixels_.size()}, "pixel count does not match dims");
  }
  for (auto v : pixels_) {
    if (v > 1) throw DegenerateInputError("lung_mask", "mask must be binary");
  }
}

LungMask LungMask::filled(std::size_t height, std::size_t width, bool value) {
  return LungMask(height, width, std::vector<std::uint8_t>(height * width, value ? 1 : 0));
}

std::size_t LungMask::count() const { return static_cast<std::size_t>(std::count(pixels_.begin(), pixels_.end(), 1)); }

void AugmentConfig::validate() const {
  if (!(crop_scale_lo > 0.0 && crop_scale_lo <= crop_scale_hi && crop_scale_hi <= 1.0)) {
    throw ConfigError("augment: crop scale range must satisfy 0 < lo <= hi <= 1");
  }
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0) || !(mask_prob >= 0.0 && mask_prob <= 1.0)) {
    throw ConfigError("augment: probabilities must lie in [0, 1]");
  }
  if (out_height == 0 || out_width == 0) throw ConfigError("augment: output size must be positive");
}

GrayImage resize_window(const GrayImage& img, double top, double left, double h, double w, std::size_t out_height,
                        std::size_t out_width) {
  const auto H = static_cast<std::ptrdiff_t>(img.height()), W = static_cast<std::ptrdiff_t>(img.width());
  auto clamp_row = [H](std::ptrdiff_t r) { return std::clamp<std::ptrdiff_t>(r, 0, H - 1); };
  auto clamp_col = [W](std::ptrdiff_t c) { return std::clamp<std::ptrdiff_t>(c, 0, W - 1); };
  std::vector<float> out(out_height * out_width);
  for (std::size_t i = 0; i < out_height; ++i) {
    const double y = top + (static_cast<double>(i) + 0.5) * h / static_cast<double>(out_height) - 0.5;
    const double y0 = std::floor(y);
    const double fy = y - y0;
    const auto r0 = clamp_row(static_cast<std::ptrdiff_t>(y0)), r1 = clamp_row(static_cast<std::ptrdiff_t>(y0) + 1);
    for (std::size_t j = 0; j < out_width; ++j) {
      const double x = left + (static_cast<double>(j) + 0.5) * w / static_cast<double>(out_width) - 0.5;
      const double x0 = std::floor(x);
      const double fx = x - x0;
      const auto c0 = clamp_col(static_cast<std::ptrdiff_t>(x0)), c1 = clamp_col(static_cast<std::ptrdiff_t>(x0) + 1);
      const double top_row = (1.0 - fx) * img.at(r0, c0) + fx * img.at(r0, c1);
      const double bottom_row = (1.0 - fx) * img.at(r1, c0) + fx * img.at(r1, c1);
      const double v = (1.0 - fy) * top_row + fy * bottom_row;
      out[i * out_width + j] = std::clamp(static_cast<float>(v), 0.0f, 1.0f);
    }
  }
  return GrayImage(out_height, out_width, std::move(out));
}

GrayImage random_resized_crop(const GrayImage& img, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  if (img.empty()) throw DegenerateInputError("random_resized_crop", "empty image");
  const double H = static_cast<double>(img.height()), W = static_cast<double>(img.width());
  constexpr int kMaxAttempts = 10;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    const double area = uniform(rng, cfg.crop_scale_lo, cfg.crop_scale_hi);
    const double side = std::sqrt(area);
    const double h = side * H, w = side * W;
    const double top = uniform(rng, 0.0, H - h);
    const double left = uniform(rng, 0.0, W - w);
    if (h < 2.0 || w < 2.0) continue;
    return resize_window(img, top, left, h, w, cfg.out_height, cfg.out_width);
  }
  throw DegenerateInputError("random_resized_crop", "crop window below 2x2 after " + std::to_string(kMaxAttempts) +
                                                        " attempts");
}

GrayImage horizontal_flip(const GrayImage& img) {
  std::vector<float> out(img.pixels().size());
  const std::size_t W = img.width();
  for (std::size_t r = 0; r < img.height(); ++r)
    for (std::size_t c = 0; c < W; ++c) out[r * W + c] = img.at(r, W - 1 - c);
  return GrayImage(img.height(), W, std::move(out));
}

GrayImage apply_lung_mask(const GrayImage& img, const LungMask& mask) {
  if (img.height() != mask.height() || img.width() != mask.width()) {
    throw ShapeError("apply_lung_mask", Shape{img.height(), img.width()}, Shape{mask.height(), mask.width()});
  }
  std::vector<float> out(img.pixels());
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!mask.pixels()[i]) out[i] = 0.0f;
  return GrayImage(img.height(), img.width(), std::move(out));
}

LungMask threshold_segmenter(const GrayImage& img, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold_segmenter: threshold must lie in (0, 1)");
  std::vector<std::uint8_t> out(img.pixels().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img.pixels()[i] > threshold ? 1 : 0;
  return LungMask(img.height(), img.width(), std::move(out));
}

double mask_iou(const LungMask& a, const LungMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw ShapeError("mask_iou", Shape{a.height(), a.width()}, Shape{b.height(), b.width()});
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) {
    inter += a.pixels()[i] & b.pixels()[i];
    uni += a.pixels()[i] | b.pixels()[i];
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {
GrayImage augment_view(const GrayImage& img, const LungMask& mask, bool masked, const AugmentConfig& cfg, Rng& rng) {
  GrayImage view = masked ? apply_lung_mask(img, mask) : img;
  view = random_resized_crop(view, cfg, rng);
  if (bernoulli(rng, cfg.flip_prob)) view = horizontal_flip(view);
  return view;
}
}  // namespace

PositivePair make_positive_pair(const GrayImage& img, const LungMask& mask, const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  PositivePair pair;
  if (cfg.paired_mask) {
    pair.first_masked = true;
    pair.second_masked = false;
  } else {
    pair.first_masked = bernoulli(rng, cfg.mask_prob);
    pair.second_masked = bernoulli(rng, cfg.mask_prob);
  }
  pair.first = augment_view(img, mask, pair.first_masked, cfg, rng);
  pair.second = augment_view(img, mask, pair.second_masked, cfg, rng);
  return pair;
}

}  // namespace cxr
