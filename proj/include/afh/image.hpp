#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "afh/error.hpp"

namespace afh {

/// Row-major (y, x, channel) grid of values in [0,1].
///
/// Every image-producing operation in this module clamps on write so the
/// [0,1] invariant holds for anything handed back to callers.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int y, int x, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  double at(int y, int x, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  bool operator==(const Image&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> data_;
};

/// Patch center in 1-based image coordinates: 1 <= x <= width, 1 <= y <= height.
struct PatchLocation {
  int x = 1;
  int y = 1;
  bool operator==(const PatchLocation&) const = default;
};

struct PatchGeometry {
  int patch_height = 60;
  int patch_width = 45;
  double pad_value = 0.5;
  bool operator==(const PatchGeometry&) const = default;
};

/// Source-window origin of a patch, 0-based.
///
/// Patch pixel (i, j) reads source pixel (top + i, left + j) where
///   top  = (y - 1) - patch_height / 2
///   left = (x - 1) - patch_width / 2
/// so the center sits at patch index (patch_height / 2, patch_width / 2),
/// integer division. For a 60x45 patch that is (30, 22); for 24x18, (12, 9).
struct PatchWindow {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};

void check_location(const Image& img, PatchLocation loc);
void check_geometry(const Image& img, const PatchGeometry& geom);
PatchWindow patch_window(PatchLocation loc, const PatchGeometry& geom);

Image crop_patch(const Image& img, PatchLocation loc, const PatchGeometry& geom);
Image replace_patch(const Image& img, PatchLocation loc, const Image& patch,
                    const PatchGeometry& geom);

/// Catmull-Rom (a = -0.5) bicubic resampling with edge replication, using the
/// pixel-center mapping src = (dst + 0.5) * in / out - 0.5. No anti-alias
/// prefilter when shrinking.
Image resize_bicubic(const Image& img, int out_height, int out_width);

/// BT.601 luma for 3-channel input, identity for 1-channel input.
Image to_luminance(const Image& img);

/// Replicates a 1-channel image into 3 channels; 3-channel input is returned as is.
Image to_rgb(const Image& img);

Image flip_horizontal(const Image& img);

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace afh
