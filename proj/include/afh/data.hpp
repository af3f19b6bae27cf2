#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "afh/image.hpp"

namespace afh {

struct DatasetSpec {
  std::filesystem::path root_dir;
  std::filesystem::path split_file;  // relative paths resolve against root_dir
  int crop_height = 128;
  int crop_width = 128;
  int scale = 4;
  /// Filled from split_file by load_dataset when empty.
  std::vector<std::string> image_list;

  bool operator==(const DatasetSpec&) const = default;
};

void validate(const DatasetSpec& spec);

/// HR crop plus its bicubic degradation (lr) and re-upsampling (lr_up).
struct SamplePair {
  std::string id;
  Image hr;
  Image lr_up;
  Image lr;
};

/// Builds lr = resize(hr, hr / scale) and lr_up = resize(lr, hr size).
SamplePair make_pair(std::string id, Image hr, int scale);

Image center_crop(const Image& img, int height, int width);

/// Reads one id per line (blank lines and '#' comments skipped).
std::vector<std::string> read_split_file(const std::filesystem::path& path);

/// Loads root/images/<id>.png for each listed id, in list order.
std::vector<SamplePair> load_dataset(const DatasetSpec& spec);

/// Throws when the two id lists share an entry.
void check_disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b);

struct ToyImage {
  Image hr;
  /// Row-major 0/1 mask of the pixels belonging to textured features.
  std::vector<unsigned char> detail_mask;
};

/// Procedural stand-in for aligned faces: a smooth colored background with three
/// sharp, textured features (two "eyes" with striped brows and a striped
/// "mouth") at jittered canonical positions. Deterministic in `seed`.
std::vector<ToyImage> make_toy_images(int n, int height, int width, std::uint64_t seed);

std::vector<SamplePair> make_toy_dataset(int n, int height, int width, int scale,
                                         std::uint64_t seed);

/// Writes root/images/<id>.png and root/splits/<split_name>.txt.
void write_dataset(const std::vector<SamplePair>& pairs, const std::filesystem::path& root,
                   const std::string& split_name);

/// Deterministic minibatches over a fixed set of pairs. Each epoch is a fresh
/// shuffle seeded by derive_seed(shuffle_seed, epoch); the last partial batch
/// of an epoch is emitted as is.
class BatchIterator {
 public:
  BatchIterator(std::size_t count, int batch_size, std::uint64_t shuffle_seed);

  /// Indices of the next batch; rolls over to a new epoch when exhausted.
  std::vector<std::size_t> next();

  /// Batches of the current epoch in order (the next epoch starts afterwards).
  std::vector<std::vector<std::size_t>> epoch_batches();

  int epoch() const { return epoch_; }

 private:
  void reshuffle();

  std::size_t count_;
  int batch_size_;
  std::uint64_t seed_;
  int epoch_ = -1;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace afh
