#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "afh/data.hpp"
#include "afh/episode.hpp"
#include "afh/nets.hpp"

namespace afh {

/// Terminal-only reward with discount 1: r_t = 0 for t < T, r_T = -MSE(final, truth).
struct RewardSpec {
  double discount = 1.0;
  bool terminal_only = true;

  double reward_at(int step, int steps, double terminal) const {
    return step < steps ? 0.0 : terminal;
  }
  /// Discounted return of a terminal-only episode.
  double episode_return(int steps, double terminal) const {
    return steps == 0 ? 0.0 : std::pow(discount, steps - 1) * terminal;
  }
};

/// Scalar exponential moving average of batch-mean returns.
struct BaselineState {
  double value = 0.0;
  double decay = 0.9;
  bool initialized = false;

  bool operator==(const BaselineState&) const = default;
};

BaselineState update_baseline(BaselineState baseline, double batch_mean_return);

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int batch_size = 8;
  int iterations = 1000;

  bool operator==(const OptimizerConfig&) const = default;
};

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  Gradients<T> m;
  Gradients<T> v;
};

/// Standard bias-corrected ADAM on every tensor that has a gradient entry.
/// Groups with an empty gradient map are left untouched (their step count
/// still advances with the shared counter).
template <typename T>
void adam_step(ParamSet<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const OptimizerConfig& cfg);

/// -mean over pixels and channels of (truth - final)^2.
double terminal_reward(const Image& final_image, const Image& truth);

/// (1/T) sum_t MSE(patch_after_t, crop(truth, l_t)) over in-bounds pixels; 0 for T = 0.
double enhancement_loss(const Trajectory& traj, const Image& truth);

/// Differentiable version of enhancement_loss: replays every step's enhancer
/// pass on `tape` with the stored pre-patches and reconstructed context images.
template <typename T>
ad::Var<T> enhancement_loss_graph(ad::Tape<T>& tape, const ParamSet<T>& params,
                                  const Trajectory& traj, const Image& truth);

/// Gradient of the batch-mean enhancement loss with respect to the enhancer.
template <typename T>
NamedTensors<T> enhancement_gradient(const ParamSet<T>& params,
                                     const std::vector<const Trajectory*>& batch,
                                     const std::vector<const Image*>& truths);

/// Score-function estimate of the gradient of -E[R] with respect to the policy:
/// mean over trajectories of -(R_i - b) * sum_t grad log pi(l_t | s_{t-1}), with
/// log-probabilities recomputed by replaying the stored states and actions.
template <typename T>
NamedTensors<T> reinforce_gradient(const std::vector<const Trajectory*>& batch,
                                   const std::vector<double>& returns, double baseline,
                                   const ParamSet<T>& params);

/// Sum over steps of log pi(l_t | s_{t-1}) replayed on a tape.
template <typename T>
ad::Var<T> trajectory_log_prob(ad::Tape<T>& tape, const ParamSet<T>& params,
                               const Trajectory& traj);

enum class Schedule { joint, alternating };

struct TrainConfig {
  OptimizerConfig optimizer;
  EpisodeConfig episode;  // mode is forced to sample during training
  double baseline_decay = 0.9;
  bool train_policy = true;
  bool train_enhancer = true;
  Schedule schedule = Schedule::joint;
  /// Measure each REINFORCE return against the reward of the episode's own
  /// input image, R - R(I_0). The offset does not depend on the actions.
  bool input_relative_return = true;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  int validate_every = 0;    // 0 disables periodic validation

  bool operator==(const TrainConfig&) const = default;
};

template <typename T>
struct TrainState {
  ParamSet<T> params;
  AdamState<T> adam;
  BaselineState baseline;
  int iteration = 0;  // completed iterations
};

struct IterationLog {
  int iteration = 0;
  double enh_loss = 0;
  double mean_return = 0;
  double baseline = 0;
  std::optional<double> val_psnr;
};

template <typename T>
struct TrainCallbacks {
  std::function<void(const IterationLog&)> on_iteration;
  /// Returns validation PSNR; called every validate_every iterations.
  std::function<double(const TrainState<T>&)> validate;
  std::function<void(const TrainState<T>&)> on_checkpoint;
};

/// Runs iterations state.iteration + 1 .. cfg.optimizer.iterations. Every random
/// draw derives from (seed, iteration), so a resumed run matches an uninterrupted one.
template <typename T>
void train(TrainState<T>& state, const std::vector<SamplePair>& dataset, const TrainConfig& cfg,
           std::uint64_t seed, const TrainCallbacks<T>& callbacks = {});

}  // namespace afh
