#include "afh/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

namespace afh {

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 1 || width < 1) {
    throw ShapeError("image dimensions must be positive, got " + std::to_string(height) +
                     "x" + std::to_string(width));
  }
  if (channels < 1) {
    throw ShapeError("image needs at least one channel");
  }
  data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

void check_location(const Image& img, PatchLocation loc) {
  if (loc.x < 1 || loc.x > img.width() || loc.y < 1 || loc.y > img.height()) {
    throw LocationError("patch location (" + std::to_string(loc.x) + "," +
                        std::to_string(loc.y) + ") outside " + std::to_string(img.width()) +
                        "x" + std::to_string(img.height()) + " image");
  }
}

void check_geometry(const Image& img, const PatchGeometry& geom) {
  if (geom.patch_height < 1 || geom.patch_width < 1) {
    throw GeometryError("patch geometry must be non-empty");
  }
  if (geom.patch_height > 2 * img.height() || geom.patch_width > 2 * img.width()) {
    throw GeometryError("patch " + std::to_string(geom.patch_height) + "x" +
                        std::to_string(geom.patch_width) + " exceeds twice the image size");
  }
  if (!(geom.pad_value >= 0.0 && geom.pad_value <= 1.0)) {
    throw GeometryError("pad value must lie in [0,1]");
  }
}

PatchWindow patch_window(PatchLocation loc, const PatchGeometry& geom) {
  return {(loc.y - 1) - geom.patch_height / 2, (loc.x - 1) - geom.patch_width / 2,
          geom.patch_height, geom.patch_width};
}

Image crop_patch(const Image& img, PatchLocation loc, const PatchGeometry& geom) {
  check_geometry(img, geom);
  check_location(img, loc);
  const PatchWindow win = patch_window(loc, geom);
  const int channels = img.channels();
  Image patch(win.height, win.width, channels, geom.pad_value);
  for (int i = 0; i < win.height; ++i) {
    const int sy = win.top + i;
    if (sy < 0 || sy >= img.height()) continue;
    for (int j = 0; j < win.width; ++j) {
      const int sx = win.left + j;
      if (sx < 0 || sx >= img.width()) continue;
      for (int c = 0; c < channels; ++c) patch.at(i, j, c) = img.at(sy, sx, c);
    }
  }
  return patch;
}

Image replace_patch(const Image& img, PatchLocation loc, const Image& patch,
                    const PatchGeometry& geom) {
  check_geometry(img, geom);
  if (patch.height() != geom.patch_height || patch.width() != geom.patch_width ||
      patch.channels() != img.channels()) {
    throw GeometryError("patch is " + std::to_string(patch.height()) + "x" +
                        std::to_string(patch.width()) + "x" + std::to_string(patch.channels()) +
                        ", geometry expects " + std::to_string(geom.patch_height) + "x" +
                        std::to_string(geom.patch_width) + "x" +
                        std::to_string(img.channels()));
  }
  check_location(img, loc);
  const PatchWindow win = patch_window(loc, geom);
  Image out = img;
  for (int i = 0; i < win.height; ++i) {
    const int ty = win.top + i;
    if (ty < 0 || ty >= img.height()) continue;
    for (int j = 0; j < win.width; ++j) {
      const int tx = win.left + j;
      if (tx < 0 || tx >= img.width()) continue;
      for (int c = 0; c < img.channels(); ++c) out.at(ty, tx, c) = clamp01(patch.at(i, j, c));
    }
  }
  return out;
}

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
  int anchor;  // tap nearest to the sample point
};

std::vector<Taps> build_taps(int in_size, int out_size) {
  std::vector<Taps> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    Taps& t = taps[o];
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
      t.index[k] = std::clamp(base - 1 + k, 0, in_size - 1);
      t.weight[k] = cubic_weight(frac - (k - 1));
      total += t.weight[k];
    }
    for (double& w : t.weight) w /= total;
    t.anchor = frac < 0.5 ? 1 : 2;
  }
  return taps;
}

// Anchored form: v[anchor] + sum w_k (v_k - v[anchor]). Equal to sum w_k v_k
// for normalized weights and exact on constant input.
template <typename Get>
double interpolate(const Taps& t, Get&& get) {
  const double center = get(t.index[t.anchor]);
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) acc += t.weight[k] * (get(t.index[k]) - center);
  return center + acc;
}

}  // namespace

Image resize_bicubic(const Image& img, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) {
    throw ShapeError("resize target must be at least 1x1");
  }
  const int channels = img.channels();
  const auto row_taps = build_taps(img.height(), out_height);
  const auto col_taps = build_taps(img.width(), out_width);

  // Horizontal pass keeps full precision; clamping happens once at the end.
  std::vector<double> tmp(static_cast<std::size_t>(img.height()) * out_width * channels);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < out_width; ++x) {
      for (int c = 0; c < channels; ++c) {
        tmp[(static_cast<std::size_t>(y) * out_width + x) * channels + c] =
            interpolate(col_taps[x], [&](int sx) { return img.at(y, sx, c); });
      }
    }
  }
  Image out(out_height, out_width, channels);
  for (int y = 0; y < out_height; ++y) {
    for (int x = 0; x < out_width; ++x) {
      for (int c = 0; c < channels; ++c) {
        out.at(y, x, c) = clamp01(interpolate(row_taps[y], [&](int sy) {
          return tmp[(static_cast<std::size_t>(sy) * out_width + x) * channels + c];
        }));
      }
    }
  }
  return out;
}

Image to_luminance(const Image& img) {
  if (img.channels() == 1) return img;
  if (img.channels() != 3) {
    throw ShapeError("luminance needs 1 or 3 channels, got " + std::to_string(img.channels()));
  }
  Image out(img.height(), img.width(), 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      out.at(y, x) = clamp01(0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                             0.114 * img.at(y, x, 2));
    }
  }
  return out;
}

Image to_rgb(const Image& img) {
  if (img.channels() == 3) return img;
  if (img.channels() != 1) {
    throw ShapeError("cannot promote a " + std::to_string(img.channels()) +
                     "-channel image to RGB");
  }
  Image out(img.height(), img.width(), 3);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x);
  return out;
}

Image flip_horizontal(const Image& img) {
  Image out(img.height(), img.width(), img.channels());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c)
        out.at(y, x, c) = img.at(y, img.width() - 1 - x, c);
  return out;
}

}  // namespace afh
