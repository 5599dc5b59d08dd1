#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "cxr/random.hpp"

namespace cxr {

// Single-channel image, row-major, every pixel in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(std::size_t height, std::size_t width, std::vector<float> pixels);
  static GrayImage filled(std::size_t height, std::size_t width, float value);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool empty() const { return pixels_.empty(); }
  const std::vector<float>& pixels() const { return pixels_; }
  float at(std::size_t r, std::size_t c) const { return pixels_[r * width_ + c]; }
  void set(std::size_t r, std::size_t c, float v);

  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<float> pixels_;
};

// Binary lung-region mask with the same dims as its image.
class LungMask {
 public:
  LungMask() = default;
  LungMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> pixels);
  static LungMask filled(std::size_t height, std::size_t width, bool value);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  bool at(std::size_t r, std::size_t c) const { return pixels_[r * width_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { pixels_[r * width_ + c] = v ? 1 : 0; }
  std::size_t count() const;

  bool operator==(const LungMask&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<std::uint8_t> pixels_;
};

struct AugmentConfig {
  // Sampled crop area as a fraction of the image; crops keep the image aspect.
  double crop_scale_lo = 0.85;
  double crop_scale_hi = 1.0;
  double flip_prob = 0.5;
  double mask_prob = 0.5;
  std::size_t out_height = 64;
  std::size_t out_width = 64;
  // First view always masked, second never (instead of independent draws).
  bool paired_mask = false;

  void validate() const;
};

GrayImage random_resized_crop(const GrayImage& img, const AugmentConfig& cfg, Rng& rng);

// Bilinear resize of the window [top, top + h) x [left, left + w) (real-valued,
// half-pixel centers, edge-clamped sampling).
GrayImage resize_window(const GrayImage& img, double top, double left, double h, double w, std::size_t out_height,
                        std::size_t out_width);

GrayImage horizontal_flip(const GrayImage& img);
GrayImage apply_lung_mask(const GrayImage& img, const LungMask& mask);
LungMask threshold_segmenter(const GrayImage& img, double threshold);
double mask_iou(const LungMask& a, const LungMask& b);

struct PositivePair {
  GrayImage first;
  GrayImage second;
  bool first_masked = false;
  bool second_masked = false;
};

// Two independently augmented views of one image. Each view is lung-masked
// (before crop/flip) with probability mask_prob.
PositivePair make_positive_pair(const GrayImage& img, const LungMask& mask, const AugmentConfig& cfg, Rng& rng);

}  // namespace cxr
