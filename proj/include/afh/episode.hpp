#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "afh/image.hpp"
#include "afh/nets.hpp"
#include "afh/random.hpp"

namespace afh {

enum class SelectionMode { sample, greedy };

/// Who picks the patch location. `learned` runs the policy network; the other
/// two exist for the ablations (uniform random centers, or one fixed center
/// that makes a full-image patch cover the whole image).
enum class LocationPolicy { learned, uniform_random, fixed_center };

/// Which image the global encoders see at step t: the current I_{t-1}, or I_0.
enum class ContextSource { current, initial };

struct EpisodeConfig {
  int steps = 25;
  PatchGeometry geom;
  SelectionMode mode = SelectionMode::greedy;
  LocationPolicy policy = LocationPolicy::learned;
  ContextSource context = ContextSource::current;
  /// Store patch_before / patch_after in each record. Required for training.
  bool keep_patches = true;
  /// Learned and random policies skip locations inside an already attended
  /// window. Everything is allowed again once nothing is left.
  bool mask_visited = false;

  bool operator==(const EpisodeConfig&) const = default;
};

struct StepRecord {
  int step = 0;  // 1-based
  PatchLocation loc;
  std::optional<double> log_prob;  // sample mode with the learned policy only
  Image patch_before;
  Image patch_after;
};

struct Trajectory {
  Image initial_image;
  Image final_image;
  std::vector<StepRecord> records;
  PatchGeometry geom;
  ContextSource context = ContextSource::current;
  bool mask_visited = false;
};

/// Draws a location with probability pm[y, x]; returns it with ln pm[y, x].
std::pair<PatchLocation, double> sample_location(const ProbMap& pm, Rng& rng);

/// Highest-probability location; ties go to the smallest row-major index.
PatchLocation argmax_location(const ProbMap& pm);

/// Row-major flags over the location grid, 1 where a location is not inside
/// the window of any visited location. All ones when that would leave none.
std::vector<unsigned char> allowed_locations(const std::vector<PatchLocation>& visited, int height,
                                             int width, const PatchGeometry& geom);

/// pm restricted to `allowed` and renormalized.
ProbMap restrict_probmap(const ProbMap& pm, const std::vector<unsigned char>& allowed);

void validate_probmap(const ProbMap& pm);

template <typename T>
Trajectory run_episode(const ParamSet<T>& params, const Image& input, const EpisodeConfig& cfg,
                       Rng& rng);

/// Image states I_0 .. I_{T-1} seen by each step, rebuilt from the stored patches.
std::vector<Image> replay_states(const Trajectory& traj);

/// Binary grid (row-major, 0-based) of in-bounds pixels touched by any step.
struct CoverageMask {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> bits;

  bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t covered() const;
  double density() const { return bits.empty() ? 0.0 : static_cast<double>(covered()) / bits.size(); }
};

CoverageMask coverage_mask(const Trajectory& traj, int height, int width);

/// Writes input.png, step_NN.png (image after step NN), patch_NN_before.png,
/// patch_NN_after.png, manifest.csv (step,x,y,log_prob) and geometry.csv.
void export_trajectory(const Trajectory& traj, const std::filesystem::path& dir);

struct ManifestRow {
  int step = 0;
  PatchLocation loc;
  std::optional<double> log_prob;
};

struct TrajectoryManifest {
  std::vector<ManifestRow> rows;
  PatchGeometry geom;
};

TrajectoryManifest read_trajectory_manifest(const std::filesystem::path& dir);

std::string to_string(SelectionMode m);
std::string to_string(LocationPolicy p);
std::string to_string(ContextSource c);
SelectionMode parse_selection_mode(const std::string& s);
LocationPolicy parse_location_policy(const std::string& s);
ContextSource parse_context_source(const std::string& s);

}  // namespace afh
