#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "afh/config.hpp"
#include "afh/metrics.hpp"
#include "afh/training.hpp"

namespace afh {

/// Paths written by a command, relative to its output directory.
class OutputManifest {
 public:
  OutputManifest(std::filesystem::path root, std::string command);

  const std::filesystem::path& root() const { return root_; }
  /// Registers `path` (absolute or relative to root) and returns the absolute path.
  std::filesystem::path add(const std::filesystem::path& path);
  const std::vector<std::filesystem::path>& entries() const { return entries_; }

  /// Throws IoError naming the first registered file that is missing or empty.
  void verify() const;
  /// Writes root/manifest.json and registers it.
  void write();

 private:
  std::filesystem::path root_;
  std::string command_;
  std::vector<std::filesystem::path> entries_;
};

struct RunData {
  std::vector<SamplePair> train;
  std::vector<SamplePair> test;
};

/// Toy data is generated; folder data is loaded from the two split files,
/// which must not share ids.
RunData load_run_data(const RunConfig& cfg);

struct TrainRunResult {
  TrainState<float> state;
  std::optional<double> final_val_psnr;
  double seconds = 0;
};

/// Trains under `out`: train_log.csv, config.json, checkpoints/iter_NNNNNN.afh
/// every checkpoint_every iterations and final.afh. Starts from `resume` when
/// given. Validation is greedy mean PSNR on the test split.
TrainRunResult run_training(const RunConfig& cfg, const RunData& data, const std::filesystem::path& out,
                            OutputManifest& manifest, std::ostream& log,
                            std::optional<TrainState<float>> resume = std::nullopt);

/// Greedy evaluation episode settings for a config (patches are not kept).
EpisodeConfig eval_episode(const RunConfig& cfg);

struct AblationRow {
  std::string variant;
  int steps = 0;
  int patch_height = 0;
  int patch_width = 0;
  std::string policy;
  std::string context;
  int iterations = 0;
  double coverage = 0;  // mean fraction of pixels attended, greedy episodes
  double psnr = 0;
  double ssim = 0;
  double fsim = 0;
};

std::vector<std::string> ablation_suites();

/// Runs one suite and writes out/ablation_<suite>.csv. Every trained variant
/// gets its own subdirectory. `learned` (a trained Attention-FH state) replaces
/// the reference training run when supplied.
std::vector<AblationRow> run_ablation(const RunConfig& cfg, const std::string& suite,
                                      const std::filesystem::path& out, OutputManifest& manifest,
                                      std::ostream& log,
                                      const std::optional<TrainState<float>>& learned = std::nullopt);

void write_ablation_csv(const std::vector<AblationRow>& rows, const std::filesystem::path& path);

/// Grid layout of a rendered trajectory. Columns are steps; row 0 is the image
/// after the step with the attended window outlined, rows 1 and 2 are the
/// patch before and after enhancement.
struct GridLayout {
  int gap = 2;
  int image_height = 0;
  int image_width = 0;
  int patch_height = 0;
  int patch_width = 0;
  int steps = 0;

  int cell_width() const { return std::max(image_width, patch_width); }
  int column_x(int step_index) const { return gap + step_index * (cell_width() + gap); }
  int image_row_y() const { return gap; }
  int before_row_y() const { return image_row_y() + image_height + gap; }
  int after_row_y() const { return before_row_y() + patch_height + gap; }
  int width() const { return gap + steps * (cell_width() + gap); }
  int height() const { return after_row_y() + patch_height + gap; }
};

inline constexpr double kBoxColor[3] = {1.0, 0.0, 0.0};

/// Renders the trajectory directory written by export_trajectory. Window edges
/// that fall outside the image are not drawn.
Image render_trajectory(const std::filesystem::path& dir, GridLayout* layout = nullptr);

}  // namespace afh
