#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "afh/autodiff.hpp"
#include "afh/image.hpp"
#include "afh/tensor.hpp"

namespace afh {

/// Recurrent policy: image -> FC -> ReLU -> [concat prev action] -> LSTM -> linear -> softmax
/// over every pixel of the action grid (which is the image grid).
struct PolicyConfig {
  int image_height = 128;
  int image_width = 128;
  int image_channels = 3;
  int encoder_width = 256;
  int lstm_hidden = 512;
  bool feed_prev_action = true;

  int action_count() const { return image_height * image_width; }
  int image_size() const { return image_height * image_width * image_channels; }
  bool operator==(const PolicyConfig&) const = default;
};

struct ConvLayerSpec {
  int out_channels = 0;
  int kernel = 0;
  bool operator==(const ConvLayerSpec&) const = default;
};

/// The 8-layer cascade (16,3) (32,7) (64,7) (64,7) (64,7) (32,7) (16,3) (C,5).
std::vector<ConvLayerSpec> default_conv_spec(int channels);

/// Local enhancer: whole image -> FC -> ReLU -> FC(patch area) as one context
/// channel, concatenated to the patch, then a same-size conv cascade that
/// predicts a residual added to the patch.
struct EnhancerConfig {
  int image_height = 128;
  int image_width = 128;
  int image_channels = 3;
  int patch_height = 60;
  int patch_width = 45;
  int global_fc_width = 256;
  std::vector<ConvLayerSpec> conv_spec = default_conv_spec(3);

  int image_size() const { return image_height * image_width * image_channels; }
  int patch_area() const { return patch_height * patch_width; }
  bool operator==(const EnhancerConfig&) const = default;
};

void validate(const PolicyConfig& cfg);
void validate(const EnhancerConfig& cfg);

enum class ParamGroup { policy, enhancer };

template <typename T>
struct ParamSet {
  PolicyConfig policy_config;
  EnhancerConfig enhancer_config;
  NamedTensors<T> policy;
  NamedTensors<T> enhancer;

  NamedTensors<T>& group(ParamGroup g) { return g == ParamGroup::policy ? policy : enhancer; }
  const NamedTensors<T>& group(ParamGroup g) const {
    return g == ParamGroup::policy ? policy : enhancer;
  }
  std::size_t parameter_count() const;

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out{policy_config, enhancer_config, {}, {}};
    for (const auto& [k, v] : policy) out.policy.emplace(k, v.template cast<U>());
    for (const auto& [k, v] : enhancer) out.enhancer.emplace(k, v.template cast<U>());
    return out;
  }

  bool operator==(const ParamSet&) const = default;
};

/// Gradients keyed like ParamSet.
template <typename T>
struct Gradients {
  NamedTensors<T> policy;
  NamedTensors<T> enhancer;
};

/// LSTM state carried across the steps of one episode.
struct RecurrentMemory {
  std::vector<double> hidden;
  std::vector<double> cell;

  static RecurrentMemory zeros(int size) {
    return {std::vector<double>(size, 0.0), std::vector<double>(size, 0.0)};
  }
  bool operator==(const RecurrentMemory&) const = default;
};

/// Action distribution over the H x W grid, row-major (index = y * width + x, 0-based).
struct ProbMap {
  int height = 0;
  int width = 0;
  std::vector<double> p;

  double at(PatchLocation loc) const {
    return p[static_cast<std::size_t>(loc.y - 1) * width + (loc.x - 1)];
  }
  int index_of(PatchLocation loc) const { return (loc.y - 1) * width + (loc.x - 1); }
  PatchLocation location_of(int index) const { return {index % width + 1, index / width + 1}; }
};

template <typename T>
ParamSet<T> init_params(const PolicyConfig& policy_cfg, const EnhancerConfig& enhancer_cfg,
                        std::uint64_t seed);

/// Checks that every tensor in `params` has the shape its configs imply.
template <typename T>
void check_param_shapes(const ParamSet<T>& params);

// ---------------------------------------------------------------------------
// Graph builders. Parameters are bound on the tape as "policy/<name>" and
// "enhancer/<name>"; images enter as constants.

template <typename T>
struct PolicyStep {
  ad::Var<T> log_probs;  // [H*W]
  ad::Var<T> hidden;
  ad::Var<T> cell;
};

template <typename T>
PolicyStep<T> policy_graph(ad::Tape<T>& tape, const ParamSet<T>& params, const Image& img,
                           ad::Var<T> hidden, ad::Var<T> cell,
                           std::optional<PatchLocation> prev_loc);

/// Clamped enhanced patch as [C, ph, pw] plus the unclamped residual.
template <typename T>
struct EnhanceStep {
  ad::Var<T> output;
  ad::Var<T> residual;
};

template <typename T>
EnhanceStep<T> enhancer_graph(ad::Tape<T>& tape, const ParamSet<T>& params, const Image& patch,
                              const Image& whole);

template <typename T>
ad::Var<T> memory_var(ad::Tape<T>& tape, const std::vector<double>& values);

// ---------------------------------------------------------------------------
// Plain forward passes.

template <typename T>
std::pair<ProbMap, RecurrentMemory> policy_forward(const ParamSet<T>& params, const Image& img,
                                                   const RecurrentMemory& mem,
                                                   std::optional<PatchLocation> prev_loc);

template <typename T>
Image enhance_forward(const ParamSet<T>& params, const Image& patch, const Image& whole);

/// Reverse-mode gradients of the scalar built by `loss_fn` with respect to all
/// parameters in `params`. Parameters the loss never touches get zero tensors.
template <typename T>
Gradients<T> gradients(const ParamSet<T>& params,
                       const std::function<ad::Var<T>(ad::Tape<T>&)>& loss_fn);

/// Binds a parameter tensor on a tape under its group prefix.
template <typename T>
ad::Var<T> bind(ad::Tape<T>& tape, const ParamSet<T>& params, ParamGroup group,
                const std::string& name);

/// Channel-major [C, H, W] tensor from an interleaved image, and back.
template <typename T>
Tensor<T> to_chw(const Image& img);
template <typename T>
Image from_chw(const Tensor<T>& t, int height, int width, int channels);

}  // namespace afh
