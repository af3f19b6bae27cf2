#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "afh/data.hpp"
#include "afh/episode.hpp"
#include "afh/nets.hpp"
#include "afh/training.hpp"

namespace afh {

/// Where training and evaluation images come from.
struct DataConfig {
  std::string source = "toy";  // "toy" or "folder"
  std::string root_dir;        // folder: root/images/*.png + split files
  std::string train_split = "splits/train.txt";
  std::string test_split = "splits/test.txt";
  int crop_height = 128;
  int crop_width = 128;
  int scale = 4;
  int toy_train_count = 500;
  int toy_test_count = 100;
  std::uint64_t toy_train_seed = 1;
  std::uint64_t toy_test_seed = 2;

  DatasetSpec spec(const std::string& split) const;
  bool operator==(const DataConfig&) const = default;
};

struct AblationConfig {
  std::vector<int> tsweep_steps{5, 15, 25, 35};
  int no_attention_steps = 5;
  bool operator==(const AblationConfig&) const = default;
};

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  std::string resume_checkpoint;  // empty: start from init_params
  PolicyConfig policy;
  EnhancerConfig enhancer;
  TrainConfig train;
  DataConfig data;
  AblationConfig ablation;

  bool operator==(const RunConfig&) const = default;
};

/// "paper" or "toy"; throws ConfigError for anything else.
RunConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

/// Throws ConfigError naming the first offending field (dotted JSON path).
void validate(const RunConfig& cfg);

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const PolicyConfig& cfg);
nlohmann::json to_json(const EnhancerConfig& cfg);

/// Starts from the preset named by the "preset" key (default "paper") and
/// applies every other key on top. Unknown keys and wrong types are errors.
RunConfig config_from_json(const nlohmann::json& j);
PolicyConfig policy_config_from_json(const nlohmann::json& j, const std::string& where);
EnhancerConfig enhancer_config_from_json(const nlohmann::json& j, const std::string& where);

/// Parses and validates a config file. JSON syntax errors report line and column.
RunConfig load_config(const std::filesystem::path& path);
/// `spec` is either a preset name or a path to a JSON file.
RunConfig resolve_config(const std::string& spec);
void save_config(const RunConfig& cfg, const std::filesystem::path& path);
std::string dump_config(const RunConfig& cfg);

}  // namespace afh
