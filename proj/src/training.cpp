#include "afh/training.hpp"

#include <cmath>
#include <string>

#include "afh/random.hpp"

namespace afh {

BaselineState update_baseline(BaselineState baseline, double batch_mean_return) {
  if (!baseline.initialized) {
    baseline.value = batch_mean_return;
    baseline.initialized = true;
  } else {
    baseline.value = baseline.decay * baseline.value + (1.0 - baseline.decay) * batch_mean_return;
  }
  return baseline;
}

template <typename T>
void adam_step(ParamSet<T>& params, const Gradients<T>& grads, AdamState<T>& state,
               const OptimizerConfig& cfg) {
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  // Validate every shape before touching anything.
  for (ParamGroup group : {ParamGroup::policy, ParamGroup::enhancer}) {
    const auto& g = group == ParamGroup::policy ? grads.policy : grads.enhancer;
    for (const auto& [name, tensor] : g) {
      const auto it = params.group(group).find(name);
      if (it == params.group(group).end()) throw ShapeError("gradient for unknown tensor " + name);
      if (it->second.shape != tensor.shape || it->second.numel() != tensor.numel()) {
        throw ShapeError("gradient for " + name + " has shape " + shape_string(tensor.shape) +
                         ", parameter is " + shape_string(it->second.shape));
      }
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step_size = static_cast<T>(cfg.learning_rate / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(cfg.epsilon);
  for (ParamGroup group : {ParamGroup::policy, ParamGroup::enhancer}) {
    const auto& g = group == ParamGroup::policy ? grads.policy : grads.enhancer;
    auto& m_group = group == ParamGroup::policy ? state.m.policy : state.m.enhancer;
    auto& v_group = group == ParamGroup::policy ? state.v.policy : state.v.enhancer;
    for (const auto& [name, grad] : g) {
      Tensor<T>& p = params.group(group).at(name);
      auto [m_it, m_new] = m_group.try_emplace(name, Tensor<T>(p.shape));
      auto [v_it, v_new] = v_group.try_emplace(name, Tensor<T>(p.shape));
      auto& m = m_it->second.data;
      auto& v = v_it->second.data;
      for (std::size_t i = 0; i < p.numel(); ++i) {
        const T gi = grad.data[i];
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        p.data[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
      }
    }
  }
}

double terminal_reward(const Image& final_image, const Image& truth) {
  if (!final_image.same_shape(truth)) throw ShapeError("reward inputs differ in shape");
  double sse = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth.data()[i] - final_image.data()[i];
    sse += d * d;
  }
  return -sse / static_cast<double>(truth.size());
}

double enhancement_loss(const Trajectory& traj, const Image& truth) {
  if (!traj.initial_image.same_shape(truth)) {
    throw ShapeError("trajectory and ground truth differ in shape");
  }
  if (traj.records.empty()) return 0.0;
  double total = 0.0;
  for (const StepRecord& rec : traj.records) {
    if (rec.patch_after.empty()) throw Error("trajectory was recorded without patches");
    const PatchWindow win = patch_window(rec.loc, traj.geom);
    double sse = 0.0;
    std::size_t count = 0;
    for (int i = 0; i < win.height; ++i) {
      const int y = win.top + i;
      if (y < 0 || y >= truth.height()) continue;
      for (int j = 0; j < win.width; ++j) {
        const int x = win.left + j;
        if (x < 0 || x >= truth.width()) continue;
        for (int c = 0; c < truth.channels(); ++c) {
          const double d = rec.patch_after.at(i, j, c) - truth.at(y, x, c);
          sse += d * d;
          ++count;
        }
      }
    }
    total += count ? sse / static_cast<double>(count) : 0.0;
  }
  return total / static_cast<double>(traj.records.size());
}

namespace {

// [C, ph, pw] mask of patch pixels whose source lies inside the image.
std::vector<unsigned char> inbounds_mask(PatchLocation loc, const PatchGeometry& geom, int height,
                                         int width, int channels) {
  const PatchWindow win = patch_window(loc, geom);
  std::vector<unsigned char> mask(static_cast<std::size_t>(channels) * win.height * win.width, 0);
  for (int c = 0; c < channels; ++c)
    for (int i = 0; i < win.height; ++i) {
      const int y = win.top + i;
      if (y < 0 || y >= height) continue;
      for (int j = 0; j < win.width; ++j) {
        const int x = win.left + j;
        if (x < 0 || x >= width) continue;
        mask[(static_cast<std::size_t>(c) * win.height + i) * win.width + j] = 1;
      }
    }
  return mask;
}

// Gradient of a scalar with respect to one parameter group only.
template <typename T>
NamedTensors<T> group_gradient(const ParamSet<T>& params, ParamGroup group,
                               const std::function<ad::Var<T>(ad::Tape<T>&)>& loss_fn,
                               bool& touched) {
  ad::Tape<T> tape;
  for (const auto& [name, t] : params.group(group)) bind(tape, params, group, name);
  tape.set_track_params(false);
  const ad::Var<T> loss = loss_fn(tape);
  tape.backward(loss);
  touched = tape.needs_grad(loss);
  NamedTensors<T> out;
  const std::size_t prefix = group == ParamGroup::policy ? 7 : 9;
  for (auto& [name, g] : tape.param_grads()) out.emplace(name.substr(prefix), std::move(g));
  return out;
}

template <typename T>
void accumulate(NamedTensors<T>& into, NamedTensors<T>&& grads) {
  if (into.empty()) {
    into = std::move(grads);
    return;
  }
  for (auto& [name, g] : grads) {
    auto& dst = into.at(name).data;
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g.data[i];
  }
}

template <typename T>
NamedTensors<T> zeros_like(const NamedTensors<T>& tensors) {
  NamedTensors<T> out;
  for (const auto& [name, t] : tensors) out.emplace(name, Tensor<T>(t.shape));
  return out;
}

}  // namespace

template <typename T>
ad::Var<T> enhancement_loss_graph(ad::Tape<T>& tape, const ParamSet<T>& params,
                                  const Trajectory& traj, const Image& truth) {
  if (!traj.initial_image.same_shape(truth)) {
    throw ShapeError("trajectory and ground truth differ in shape");
  }
  if (traj.records.empty()) return tape.constant(Tensor<T>({1}, T(0)));
  const std::vector<Image> states = replay_states(traj);
  std::vector<ad::Var<T>> terms;
  terms.reserve(traj.records.size());
  for (std::size_t t = 0; t < traj.records.size(); ++t) {
    const StepRecord& rec = traj.records[t];
    const Image& context = traj.context == ContextSource::current ? states[t] : traj.initial_image;
    const EnhanceStep<T> step = enhancer_graph(tape, params, rec.patch_before, context);
    const Tensor<T> target = to_chw<T>(crop_patch(truth, rec.loc, traj.geom));
    terms.push_back(ad::masked_mse(step.output, target,
                                   inbounds_mask(rec.loc, traj.geom, truth.height(),
                                                 truth.width(), truth.channels())));
  }
  return ad::scale(ad::add_scalars(tape, terms), T(1) / static_cast<T>(terms.size()));
}

template <typename T>
NamedTensors<T> enhancement_gradient(const ParamSet<T>& params,
                                     const std::vector<const Trajectory*>& batch,
                                     const std::vector<const Image*>& truths) {
  if (batch.size() != truths.size()) throw ShapeError("batch and ground truth counts differ");
  NamedTensors<T> total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    bool touched = false;
    accumulate(total, group_gradient<T>(
                          params, ParamGroup::enhancer,
                          [&](ad::Tape<T>& tape) {
                            return enhancement_loss_graph(tape, params, *batch[i], *truths[i]);
                          },
                          touched));
  }
  if (total.empty()) return zeros_like(params.enhancer);
  const T inv = T(1) / static_cast<T>(batch.size());
  for (auto& [name, g] : total)
    for (T& v : g.data) v *= inv;
  return total;
}

template <typename T>
ad::Var<T> trajectory_log_prob(ad::Tape<T>& tape, const ParamSet<T>& params,
                               const Trajectory& traj) {
  const std::vector<Image> states = replay_states(traj);
  const int hidden = params.policy_config.lstm_hidden;
  ad::Var<T> h = tape.constant(Tensor<T>({hidden}));
  ad::Var<T> c = tape.constant(Tensor<T>({hidden}));
  std::optional<PatchLocation> prev;
  std::vector<PatchLocation> visited;
  std::vector<ad::Var<T>> terms;
  for (std::size_t t = 0; t < traj.records.size(); ++t) {
    const StepRecord& rec = traj.records[t];
    const Image& context = traj.context == ContextSource::current ? states[t] : traj.initial_image;
    const PolicyStep<T> step = policy_graph(tape, params, context, h, c, prev);
    const int index = (rec.loc.y - 1) * params.policy_config.image_width + (rec.loc.x - 1);
    ad::Var<T> log_probs = step.log_probs;
    if (traj.mask_visited) {
      log_probs = ad::log_renormalize(
          log_probs, allowed_locations(visited, params.policy_config.image_height,
                                       params.policy_config.image_width, traj.geom));
    }
    terms.push_back(ad::pick(log_probs, index));
    visited.push_back(rec.loc);
    h = step.hidden;
    c = step.cell;
    prev = rec.loc;
  }
  return ad::add_scalars(tape, terms);
}

template <typename T>
NamedTensors<T> reinforce_gradient(const std::vector<const Trajectory*>& batch,
                                   const std::vector<double>& returns, double baseline,
                                   const ParamSet<T>& params) {
  if (batch.size() != returns.size()) throw ShapeError("batch and return counts differ");
  if (batch.empty()) throw Error("reinforce_gradient needs at least one trajectory");
  for (const Trajectory* traj : batch) {
    for (const StepRecord& rec : traj->records) {
      if (!rec.log_prob) {
        throw Error("reinforce_gradient needs sample-mode trajectories with log-probabilities");
      }
    }
  }
  NamedTensors<T> total;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const T weight = static_cast<T>(-(returns[i] - baseline) * inv);
    bool touched = false;
    accumulate(total, group_gradient<T>(
                          params, ParamGroup::policy,
                          [&](ad::Tape<T>& tape) {
                            return ad::scale(trajectory_log_prob(tape, params, *batch[i]), weight);
                          },
                          touched));
  }
  return total;
}

namespace {

template <typename T>
bool all_finite(const NamedTensors<T>& tensors, std::string& bad) {
  for (const auto& [name, t] : tensors) {
    for (T v : t.data) {
      if (!std::isfinite(v)) {
        bad = name;
        return false;
      }
    }
  }
  return true;
}

}  // namespace

template <typename T>
void train(TrainState<T>& state, const std::vector<SamplePair>& dataset, const TrainConfig& cfg,
           std::uint64_t seed, const TrainCallbacks<T>& callbacks) {
  if (dataset.empty()) throw Error("training dataset is empty");
  if (!(cfg.optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  EpisodeConfig episode = cfg.episode;
  episode.mode = SelectionMode::sample;
  episode.keep_patches = true;
  const bool learned_policy = episode.policy == LocationPolicy::learned;
  state.baseline.decay = cfg.baseline_decay;

  BatchIterator batches(dataset.size(), cfg.optimizer.batch_size, derive_seed(seed, 0xBA7C4));
  for (int i = 0; i < state.iteration; ++i) batches.next();

  while (state.iteration < cfg.optimizer.iterations) {
    const int iter = state.iteration + 1;
    const std::uint64_t iter_seed = derive_seed(seed, static_cast<std::uint64_t>(iter));
    const std::vector<std::size_t> idx = batches.next();

    std::vector<Trajectory> trajs;
    trajs.reserve(idx.size());
    std::vector<double> returns;
    double mean_return = 0.0;
    double mean_advantage_return = 0.0;
    double enh_loss = 0.0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const SamplePair& pair = dataset[idx[b]];
      Rng rng(derive_seed(iter_seed, b));
      trajs.push_back(run_episode(state.params, pair.lr_up, episode, rng));
      const double terminal = terminal_reward(trajs.back().final_image, pair.hr);
      const double ret = RewardSpec{}.episode_return(episode.steps, terminal);
      mean_return += ret;
      returns.push_back(cfg.input_relative_return ? ret - terminal_reward(pair.lr_up, pair.hr) : ret);
      mean_advantage_return += returns.back();
      enh_loss += enhancement_loss(trajs.back(), pair.hr);
    }
    mean_return /= static_cast<double>(idx.size());
    mean_advantage_return /= static_cast<double>(idx.size());
    enh_loss /= static_cast<double>(idx.size());
    if (!std::isfinite(mean_return) || !std::isfinite(enh_loss)) {
      throw Error("non-finite loss at iteration " + std::to_string(iter) +
                  " (enh_loss=" + std::to_string(enh_loss) +
                  ", mean_return=" + std::to_string(mean_return) + ")");
    }
    bool baseline_fresh = false;
    if (!state.baseline.initialized) {
      state.baseline = update_baseline(state.baseline, mean_advantage_return);
      baseline_fresh = true;
    }
    const double baseline = state.baseline.value;

    const bool policy_turn = cfg.schedule == Schedule::joint || iter % 2 == 1;
    const bool enhancer_turn = cfg.schedule == Schedule::joint || iter % 2 == 0;
    std::vector<const Trajectory*> tptr;
    std::vector<const Image*> truths;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      tptr.push_back(&trajs[b]);
      truths.push_back(&dataset[idx[b]].hr);
    }
    Gradients<T> grads;
    if (cfg.train_enhancer && enhancer_turn) {
      grads.enhancer = enhancement_gradient(state.params, tptr, truths);
    }
    if (cfg.train_policy && learned_policy && policy_turn && episode.steps > 0) {
      grads.policy = reinforce_gradient(tptr, returns, baseline, state.params);
    }
    std::string bad;
    if (!all_finite(grads.enhancer, bad) || !all_finite(grads.policy, bad)) {
      throw Error("non-finite gradient for " + bad + " at iteration " + std::to_string(iter));
    }
    adam_step(state.params, grads, state.adam, cfg.optimizer);
    if (!baseline_fresh) state.baseline = update_baseline(state.baseline, mean_advantage_return);
    state.iteration = iter;

    IterationLog log{iter, enh_loss, mean_return, state.baseline.value, std::nullopt};
    if (cfg.validate_every > 0 && callbacks.validate &&
        (iter % cfg.validate_every == 0 || iter == cfg.optimizer.iterations)) {
      log.val_psnr = callbacks.validate(state);
    }
    if (callbacks.on_iteration) callbacks.on_iteration(log);
    if (cfg.checkpoint_every > 0 && callbacks.on_checkpoint &&
        (iter % cfg.checkpoint_every == 0 || iter == cfg.optimizer.iterations)) {
      callbacks.on_checkpoint(state);
    }
  }
}

#define AFH_INSTANTIATE_TRAINING(T)                                                          \
  template void adam_step<T>(ParamSet<T>&, const Gradients<T>&, AdamState<T>&,               \
                             const OptimizerConfig&);                                        \
  template ad::Var<T> enhancement_loss_graph<T>(ad::Tape<T>&, const ParamSet<T>&,            \
                                                const Trajectory&, const Image&);            \
  template NamedTensors<T> enhancement_gradient<T>(                                          \
      const ParamSet<T>&, const std::vector<const Trajectory*>&,                             \
      const std::vector<const Image*>&);                                                     \
  template ad::Var<T> trajectory_log_prob<T>(ad::Tape<T>&, const ParamSet<T>&,               \
                                             const Trajectory&);                             \
  template NamedTensors<T> reinforce_gradient<T>(const std::vector<const Trajectory*>&,      \
                                                 const std::vector<double>&, double,         \
                                                 const ParamSet<T>&);                        \
  template void train<T>(TrainState<T>&, const std::vector<SamplePair>&, const TrainConfig&, \
                         std::uint64_t, const TrainCallbacks<T>&);

AFH_INSTANTIATE_TRAINING(float)
AFH_INSTANTIATE_TRAINING(double)

}  // namespace afh
