#include "afh/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "afh/png_io.hpp"
#include "afh/random.hpp"

namespace afh {

void validate(const DatasetSpec& spec) {
  if (spec.scale != 4 && spec.scale != 8) {
    throw ConfigError("dataset.scale must be 4 or 8, got " + std::to_string(spec.scale));
  }
  if (spec.crop_height < 1 || spec.crop_width < 1) {
    throw ConfigError("dataset.crop must be positive");
  }
  if (spec.crop_height % spec.scale != 0) {
    throw ConfigError("dataset.crop_height (" + std::to_string(spec.crop_height) +
                      ") is not divisible by dataset.scale (" + std::to_string(spec.scale) + ")");
  }
  if (spec.crop_width % spec.scale != 0) {
    throw ConfigError("dataset.crop_width (" + std::to_string(spec.crop_width) +
                      ") is not divisible by dataset.scale (" + std::to_string(spec.scale) + ")");
  }
}

SamplePair make_pair(std::string id, Image hr, int scale) {
  if (scale < 1 || hr.height() % scale != 0 || hr.width() % scale != 0) {
    throw ShapeError("image " + id + " (" + std::to_string(hr.height()) + "x" +
                     std::to_string(hr.width()) + ") is not divisible by scale " +
                     std::to_string(scale));
  }
  SamplePair pair;
  pair.id = std::move(id);
  pair.lr = resize_bicubic(hr, hr.height() / scale, hr.width() / scale);
  pair.lr_up = resize_bicubic(pair.lr, hr.height(), hr.width());
  pair.hr = std::move(hr);
  return pair;
}

Image center_crop(const Image& img, int height, int width) {
  if (height > img.height() || width > img.width()) {
    throw ShapeError("crop " + std::to_string(height) + "x" + std::to_string(width) +
                     " larger than image " + std::to_string(img.height()) + "x" +
                     std::to_string(img.width()));
  }
  const int top = (img.height() - height) / 2;
  const int left = (img.width() - width) / 2;
  Image out(height, width, img.channels());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(top + y, left + x, c);
  return out;
}

std::vector<std::string> read_split_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split file " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    ids.push_back(line);
  }
  return ids;
}

std::vector<SamplePair> load_dataset(const DatasetSpec& spec) {
  validate(spec);
  std::vector<std::string> ids = spec.image_list;
  if (ids.empty()) {
    const auto split = spec.split_file.is_absolute() ? spec.split_file
                                                     : spec.root_dir / spec.split_file;
    ids = read_split_file(split);
  }
  std::set<std::string> seen;
  std::vector<SamplePair> pairs;
  pairs.reserve(ids.size());
  for (const std::string& id : ids) {
    if (!seen.insert(id).second) throw Error("duplicate id '" + id + "' in split");
    const auto path = spec.root_dir / "images" / (id + ".png");
    if (!std::filesystem::exists(path)) throw IoError("missing image " + path.string());
    Image img = to_rgb(read_png(path));
    pairs.push_back(make_pair(id, center_crop(img, spec.crop_height, spec.crop_width), spec.scale));
  }
  return pairs;
}

void check_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> left(a.begin(), a.end());
  for (const std::string& id : b) {
    if (left.contains(id)) throw Error("id '" + id + "' appears in both train and test splits");
  }
}

namespace {

struct Rgb {
  double r, g, b;
};

Rgb random_color(Rng& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

// Paints `color` blended by `alpha` (0..1) at one pixel and marks it as detail.
void paint(ToyImage& toy, int y, int x, const Rgb& color, double alpha = 1.0) {
  Image& img = toy.hr;
  if (y < 0 || y >= img.height() || x < 0 || x >= img.width()) return;
  const double values[3] = {color.r, color.g, color.b};
  for (int c = 0; c < 3; ++c) {
    img.at(y, x, c) = clamp01((1.0 - alpha) * img.at(y, x, c) + alpha * values[c]);
  }
  toy.detail_mask[static_cast<std::size_t>(y) * img.width() + x] = 1;
}

// Striped rectangle: steep sinusoidal grating of the given period and
// orientation between two colors, hard-edged at the rectangle border.
void striped_rect(ToyImage& toy, double cy, double cx, double half_h, double half_w,
                  double period, double angle, const Rgb& a, const Rgb& b) {
  const double kx = std::cos(angle) * 2.0 * std::numbers::pi / period;
  const double ky = std::sin(angle) * 2.0 * std::numbers::pi / period;
  for (int y = static_cast<int>(std::floor(cy - half_h)); y <= static_cast<int>(std::ceil(cy + half_h)); ++y) {
    for (int x = static_cast<int>(std::floor(cx - half_w)); x <= static_cast<int>(std::ceil(cx + half_w)); ++x) {
      if (std::abs(y + 0.5 - cy) > half_h || std::abs(x + 0.5 - cx) > half_w) continue;
      const double t = 0.5 + 0.5 * std::tanh(2.5 * std::sin(kx * (x - cx) + ky * (y - cy))) / std::tanh(2.5);
      paint(toy, y, x, {a.r + t * (b.r - a.r), a.g + t * (b.g - a.g), a.b + t * (b.b - a.b)});
    }
  }
}

void ellipse(ToyImage& toy, double cy, double cx, double ry, double rx, const Rgb& color) {
  for (int y = static_cast<int>(std::floor(cy - ry)); y <= static_cast<int>(std::ceil(cy + ry)); ++y) {
    for (int x = static_cast<int>(std::floor(cx - rx)); x <= static_cast<int>(std::ceil(cx + rx)); ++x) {
      const double dy = (y + 0.5 - cy) / ry;
      const double dx = (x + 0.5 - cx) / rx;
      if (dx * dx + dy * dy <= 1.0) paint(toy, y, x, color);
    }
  }
}

ToyImage toy_image(int height, int width, Rng& rng) {
  ToyImage toy{Image(height, width, 3),
               std::vector<unsigned char>(static_cast<std::size_t>(height) * width, 0)};
  // Smooth background: base color, linear ramp and one slow bump per channel.
  const Rgb base = random_color(rng, 0.35, 0.65);
  const double base_c[3] = {base.r, base.g, base.b};
  double gx[3], gy[3], bump[3];
  for (int c = 0; c < 3; ++c) {
    gx[c] = uniform(rng, -0.12, 0.12);
    gy[c] = uniform(rng, -0.12, 0.12);
    bump[c] = uniform(rng, -0.08, 0.08);
  }
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width - 0.5;
      const double v = (y + 0.5) / height - 0.5;
      for (int c = 0; c < 3; ++c) {
        toy.hr.at(y, x, c) = clamp01(base_c[c] + gx[c] * u + gy[c] * v +
                                     bump[c] * std::cos(std::numbers::pi * (u + v) + phase));
      }
    }
  }

  const double jitter = 0.05;
  // Eyes: bright sclera ellipse, dark pupil, striped brow above.
  const Rgb sclera = random_color(rng, 0.82, 0.95);
  const Rgb pupil = random_color(rng, 0.03, 0.18);
  const Rgb brow_a = random_color(rng, 0.05, 0.25);
  const Rgb brow_b = random_color(rng, 0.6, 0.8);
  const double brow_period = uniform(rng, 10.0, 14.0);
  for (double side : {0.3, 0.7}) {
    const double cx = (side + uniform(rng, -jitter, jitter)) * width;
    const double cy = (0.36 + uniform(rng, -jitter, jitter)) * height;
    ellipse(toy, cy, cx, 0.075 * height, 0.12 * width, sclera);
    ellipse(toy, cy + uniform(rng, -0.01, 0.01) * height,
            cx + uniform(rng, -0.03, 0.03) * width, 0.055 * height, 0.055 * width, pupil);
    striped_rect(toy, cy - 0.14 * height, cx, 0.035 * height, 0.12 * width, brow_period,
                 uniform(rng, -0.5, 0.5), brow_a, brow_b);
  }
  // Mouth: striped bar with near-vertical stripes.
  const double mx = (0.5 + uniform(rng, -jitter, jitter)) * width;
  const double my = (0.74 + uniform(rng, -jitter, jitter)) * height;
  striped_rect(toy, my, mx, 0.05 * height, 0.17 * width, uniform(rng, 10.0, 14.0),
               uniform(rng, -0.3, 0.3), random_color(rng, 0.05, 0.3),
               random_color(rng, 0.7, 0.95));
  return toy;
}

}  // namespace

std::vector<ToyImage> make_toy_images(int n, int height, int width, std::uint64_t seed) {
  std::vector<ToyImage> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(toy_image(height, width, rng));
  }
  return out;
}

std::vector<SamplePair> make_toy_dataset(int n, int height, int width, int scale,
                                         std::uint64_t seed) {
  if (scale < 1 || height % scale != 0 || width % scale != 0) {
    throw ConfigError("toy dims " + std::to_string(height) + "x" + std::to_string(width) +
                      " not divisible by scale " + std::to_string(scale));
  }
  std::vector<SamplePair> pairs;
  pairs.reserve(n);
  auto images = make_toy_images(n, height, width, seed);
  for (int i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "toy_%05d", i);
    pairs.push_back(make_pair(id, std::move(images[i].hr), scale));
  }
  return pairs;
}

void write_dataset(const std::vector<SamplePair>& pairs, const std::filesystem::path& root,
                   const std::string& split_name) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "splits");
  std::ofstream split(root / "splits" / (split_name + ".txt"));
  if (!split) throw IoError("cannot write split file under " + root.string());
  for (const SamplePair& p : pairs) {
    write_png(p.hr, root / "images" / (p.id + ".png"));
    split << p.id << '\n';
  }
}

BatchIterator::BatchIterator(std::size_t count, int batch_size, std::uint64_t shuffle_seed)
    : count_(count), batch_size_(batch_size), seed_(shuffle_seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (count == 0) throw Error("cannot iterate over an empty dataset");
  reshuffle();
}

void BatchIterator::reshuffle() {
  ++epoch_;
  order_.resize(count_);
  for (std::size_t i = 0; i < count_; ++i) order_[i] = i;
  Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(epoch_)));
  for (std::size_t i = count_ - 1; i > 0; --i) {
    std::swap(order_[i], order_[uniform_index(rng, i + 1)]);
  }
  cursor_ = 0;
}

std::vector<std::size_t> BatchIterator::next() {
  if (cursor_ >= count_) reshuffle();
  const std::size_t end = std::min(count_, cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<std::size_t> batch(order_.begin() + cursor_, order_.begin() + end);
  cursor_ = end;
  return batch;
}

std::vector<std::vector<std::size_t>> BatchIterator::epoch_batches() {
  if (cursor_ >= count_) reshuffle();
  std::vector<std::vector<std::size_t>> out;
  while (cursor_ < count_) out.push_back(next());
  return out;
}

}  // namespace afh
