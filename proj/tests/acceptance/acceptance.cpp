// Acceptance checks, one line per criterion:
//   PASS|FAIL  [n] name  (measured values)  runtime
// Usage: afh_acceptance [--only N[,N...]] [--workdir DIR]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../common/fixtures.hpp"
#include "../common/gradcheck.hpp"
#include "afh/checkpoint.hpp"
#include "afh/commands.hpp"
#include "afh/config.hpp"
#include "afh/episode.hpp"
#include "afh/metrics.hpp"
#include "afh/png_io.hpp"
#include "afh/training.hpp"

namespace fs = std::filesystem;
using namespace afh;

namespace {

// Tolerances and budgets.
constexpr int kMdpSamples = 100000;
constexpr double kMdpRelTol = 0.02;
constexpr double kMdpMinMagnitude = 1e-3;
constexpr double kMdpSeconds = 120;
constexpr double kMdpParamScale = 0.5;
constexpr int kMdpBatch = 8;  // trajectories per estimate
constexpr double kGradRelTol = 1e-4;
constexpr double kGradH = 1e-5;
constexpr std::size_t kGradMaxParams = 5000;
constexpr double kGradSeconds = 60;
constexpr int kEpisodes = 1000;
constexpr double kProbSumTol = 1e-6;
constexpr double kEpisodeSeconds = 300;
constexpr double kBicubicMarginDb = 1.0;
constexpr double kRandomMarginDb = 0.2;
constexpr double kToySeconds = 45 * 60;
constexpr double kTsweepSlackDb = 0.1;
constexpr double kPsnr20Tol = 1e-9;
constexpr double kFsimTol = 1e-4;
constexpr int kWarmupBatches = 50;
constexpr int kVarianceBatches = 4000;
constexpr int kVarianceBatchSize = 8;
constexpr double kSigmaBound = 3.0;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

// ---------------------------------------------------------------------------
// Toy MDP: 3x3 action grid, T = 2, identity enhancer, fixed reward per location.

struct Mdp {
  ParamSet<double> params;
  Image image;
  EpisodeConfig episode;
  std::vector<double> reward;  // row-major over the 3x3 grid

  double reward_of(PatchLocation l) const { return reward[(l.y - 1) * 3 + (l.x - 1)]; }
  double episode_return(const Trajectory& t) const {
    double r = 0;
    for (const auto& rec : t.records) r += reward_of(rec.loc);
    return r;
  }
};

Mdp make_mdp() {
  Mdp m;
  const PolicyConfig pc{3, 3, 1, 3, 3, true};
  const EnhancerConfig ec{3, 3, 1, 1, 1, 2, {{2, 1}, {1, 1}}};
  m.params = init_params<double>(pc, ec, 11);
  Rng rng(12);
  for (auto& [name, t] : m.params.policy)
    for (double& v : t.data) v = uniform(rng, -kMdpParamScale, kMdpParamScale);
  m.image = Image(3, 3, 1);
  for (double& v : m.image.data()) v = uniform01(rng);
  m.episode.steps = 2;
  m.episode.geom = {1, 1, 0.5};
  m.episode.mode = SelectionMode::sample;
  m.reward = {0.9, 0.1, 0.4, 0.0, 1.0, 0.3, 0.7, 0.2, 0.5};
  return m;
}

// E[R] by enumerating all 81 action sequences with plain forward passes.
double expected_return(const Mdp& m, const ParamSet<double>& p) {
  const auto mem0 = RecurrentMemory::zeros(p.policy.at("lstm.hidden_weight").shape[1]);
  const auto [pm1, mem1] = policy_forward(p, m.image, mem0, std::nullopt);
  double total = 0;
  for (int a = 0; a < 9; ++a) {
    const PatchLocation l1{a % 3 + 1, a / 3 + 1};
    const auto [pm2, mem2] = policy_forward(p, m.image, mem1, l1);
    double second = 0;
    for (int b = 0; b < 9; ++b) second += pm2.p[b] * m.reward[b];
    total += pm1.p[a] * (m.reward[a] + second);
  }
  return total;
}

// Brute-force gradient of -E[R] by central differences of the exact expectation.
NamedTensors<double> exact_gradient(const Mdp& m) {
  ParamSet<double> p = m.params;
  NamedTensors<double> g;
  for (auto& [name, t] : p.policy) {
    Tensor<double> out(t.shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t.data[i];
      t.data[i] = saved + 1e-6;
      const double up = expected_return(m, p);
      t.data[i] = saved - 1e-6;
      const double down = expected_return(m, p);
      t.data[i] = saved;
      out.data[i] = -(up - down) / 2e-6;
    }
    g.emplace(name, std::move(out));
  }
  return g;
}

struct Accumulator {
  std::map<std::string, std::vector<double>> sum, sum2;
  long n = 0;

  void add(const NamedTensors<double>& g) {
    for (const auto& [name, t] : g) {
      auto& s = sum[name];
      auto& s2 = sum2[name];
      if (s.empty()) s.assign(t.numel(), 0.0), s2.assign(t.numel(), 0.0);
      for (std::size_t i = 0; i < t.numel(); ++i) {
        s[i] += t.data[i];
        s2[i] += t.data[i] * t.data[i];
      }
    }
    ++n;
  }
  double mean(const std::string& k, std::size_t i) const { return sum.at(k)[i] / n; }
  double var(const std::string& k, std::size_t i) const {
    const double mu = mean(k, i);
    return std::max(0.0, sum2.at(k)[i] / n - mu * mu) * n / (n - 1);
  }
};

Outcome criterion_reinforce() {
  const Mdp m = make_mdp();
  const NamedTensors<double> exact = exact_gradient(m);
  Accumulator acc;
  Rng rng(2024);
  const double b = expected_return(m, m.params);
  std::vector<Trajectory> trajs(kMdpBatch);
  std::vector<const Trajectory*> ptr;
  for (const auto& t : trajs) ptr.push_back(&t);
  std::vector<double> returns(kMdpBatch);
  for (int i = 0; i < kMdpSamples; ++i) {
    for (int k = 0; k < kMdpBatch; ++k) {
      trajs[k] = run_episode(m.params, m.image, m.episode, rng);
      returns[k] = m.episode_return(trajs[k]);
    }
    acc.add(reinforce_gradient<double>(ptr, returns, b, m.params));
  }
  double worst = 0;
  std::string worst_name;
  int checked = 0;
  for (const auto& [name, t] : exact) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (std::abs(t.data[i]) <= kMdpMinMagnitude) continue;
      ++checked;
      const double rel = std::abs(acc.mean(name, i) - t.data[i]) / std::abs(t.data[i]);
      if (rel > worst) {
        worst = rel;
        worst_name = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return {checked > 0 && worst < kMdpRelTol,
          std::to_string(checked) + " components > 1e-3, max rel error " + fmt("%.4f", worst) + " at " +
              worst_name + ", N=" + std::to_string(kMdpSamples) + " x batch " + std::to_string(kMdpBatch)};
}

Outcome criterion_baseline_variance() {
  const Mdp m = make_mdp();
  Rng rng_ema(31), rng_zero(32);
  BaselineState baseline;
  baseline.decay = 0.9;
  auto batch = [&](Rng& rng, std::vector<Trajectory>& trajs, std::vector<double>& returns) {
    trajs.clear();
    returns.clear();
    for (int b = 0; b < kVarianceBatchSize; ++b) {
      trajs.push_back(run_episode(m.params, m.image, m.episode, rng));
      returns.push_back(m.episode_return(trajs.back()));
    }
  };
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / v.size();
  };
  std::vector<Trajectory> trajs;
  std::vector<double> returns;
  for (int i = 0; i < kWarmupBatches; ++i) {
    batch(rng_ema, trajs, returns);
    baseline = update_baseline(baseline, mean_of(returns));
  }
  Accumulator with_ema, with_zero;
  for (int i = 0; i < kVarianceBatches; ++i) {
    batch(rng_ema, trajs, returns);
    std::vector<const Trajectory*> ptr;
    for (const auto& t : trajs) ptr.push_back(&t);
    with_ema.add(reinforce_gradient<double>(ptr, returns, baseline.value, m.params));
    baseline = update_baseline(baseline, mean_of(returns));

    batch(rng_zero, trajs, returns);
    ptr.clear();
    for (const auto& t : trajs) ptr.push_back(&t);
    with_zero.add(reinforce_gradient<double>(ptr, returns, 0.0, m.params));
  }
  double var_ema = 0, var_zero = 0, worst_sigma = 0;
  int lower = 0, total = 0;
  for (const auto& [name, s] : with_ema.sum) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double ve = with_ema.var(name, i), vz = with_zero.var(name, i);
      var_ema += ve;
      var_zero += vz;
      ++total;
      if (ve < vz) ++lower;
      const double se = std::sqrt(ve / with_ema.n + vz / with_zero.n);
      if (se > 0) worst_sigma = std::max(worst_sigma, std::abs(with_ema.mean(name, i) - with_zero.mean(name, i)) / se);
    }
  }
  return {var_ema < var_zero && worst_sigma < kSigmaBound,
          "total variance EMA " + fmt("%.4g", var_ema) + " vs zero " + fmt("%.4g", var_zero) + ", lower in " +
              std::to_string(lower) + "/" + std::to_string(total) + " components, max mean gap " +
              fmt("%.2f", worst_sigma) + " sigma"};
}

// ---------------------------------------------------------------------------

Outcome criterion_gradients() {
  double worst_enh = 0, worst_pol = 0;
  std::size_t params = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ParamSet<double> p = afh::check::tiny_random_params(seed);
    params = p.parameter_count();
    Rng rng(seed * 7);
    Image input(8, 8, 1), truth(8, 8, 1);
    for (double& v : input.data()) v = uniform01(rng);
    for (double& v : truth.data()) v = uniform01(rng);
    EpisodeConfig cfg;
    cfg.steps = 3;
    cfg.geom = {4, 4, 0.5};
    cfg.mode = SelectionMode::sample;
    const Trajectory traj = run_episode(p, input, cfg, rng);

    const auto enh = afh::check::grad_check(
        p, ParamGroup::enhancer,
        [&](const ParamSet<double>& q) {
          ad::Tape<double> tape;
          return enhancement_loss_graph(tape, q, traj, truth).value().data[0];
        },
        gradients<double>(p, [&](ad::Tape<double>& t) { return enhancement_loss_graph(t, p, traj, truth); })
            .enhancer,
        kGradH);
    const auto pol = afh::check::grad_check(
        p, ParamGroup::policy,
        [&](const ParamSet<double>& q) {
          ad::Tape<double> tape;
          return trajectory_log_prob(tape, q, traj).value().data[0];
        },
        gradients<double>(p, [&](ad::Tape<double>& t) { return trajectory_log_prob(t, p, traj); }).policy,
        kGradH);
    worst_enh = std::max(worst_enh, enh.max_rel_error);
    worst_pol = std::max(worst_pol, pol.max_rel_error);
  }
  return {params <= kGradMaxParams && worst_enh < kGradRelTol && worst_pol < kGradRelTol,
          std::to_string(params) + " params; max rel error enhancement_loss " + fmt("%.2e", worst_enh) +
              ", log pi " + fmt("%.2e", worst_pol)};
}

// ---------------------------------------------------------------------------

Outcome criterion_episodes() {
  Rng meta(99);
  int untouched_fail = 0, norm_fail = 0, identity_fail = 0, greedy_fail = 0;
  double worst_sum = 0;
  for (int e = 0; e < kEpisodes; ++e) {
    const int h = 6 + static_cast<int>(uniform_index(meta, 7));
    const int w = 6 + static_cast<int>(uniform_index(meta, 7));
    const int ph = 1 + static_cast<int>(uniform_index(meta, h));
    const int pw = 1 + static_cast<int>(uniform_index(meta, w));
    const PolicyConfig pc{h, w, 3, 6, 6, uniform01(meta) < 0.5};
    const EnhancerConfig ec{h, w, 3, ph, pw, 4, {{4, 3}, {3, 3}}};
    const std::uint64_t seed = derive_seed(7, e);
    const ParamSet<double> fresh = init_params<double>(pc, ec, seed);
    ParamSet<double> p = fresh;
    Rng prng(seed);
    for (auto* group : {&p.policy, &p.enhancer})
      for (auto& [name, t] : *group)
        for (double& v : t.data) v += uniform(prng, -0.3, 0.3);
    Image input(h, w, 3);
    for (double& v : input.data()) v = uniform01(prng);
    EpisodeConfig cfg;
    cfg.steps = static_cast<int>(uniform_index(meta, 7));
    cfg.geom = {ph, pw, 0.5};
    cfg.mode = uniform01(meta) < 0.5 ? SelectionMode::sample : SelectionMode::greedy;

    Rng r1(seed + 1);
    const Trajectory t = run_episode(p, input, cfg, r1);
    const CoverageMask mask = coverage_mask(t, h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (!mask.at(y, x))
          for (int c = 0; c < 3; ++c)
            if (t.final_image.at(y, x, c) != input.at(y, x, c)) {
              ++untouched_fail;
              goto checked_untouched;
            }
  checked_untouched:
    {
      const auto states = replay_states(t);
      auto mem = RecurrentMemory::zeros(pc.lstm_hidden);
      std::optional<PatchLocation> prev;
      for (std::size_t k = 0; k < t.records.size(); ++k) {
        auto [pm, next] = policy_forward(p, states[k], mem, prev);
        double s = 0;
        for (double v : pm.p) s += v;
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
        if (std::abs(s - 1.0) >= kProbSumTol) ++norm_fail;
        mem = next;
        prev = t.records[k].loc;
      }
    }
    Rng r2(seed + 2);
    if (!(run_episode(fresh, input, cfg, r2).final_image == input)) ++identity_fail;
    EpisodeConfig g = cfg;
    g.mode = SelectionMode::greedy;
    Rng r3(seed + 3), r4(seed + 4);
    const Trajectory ga = run_episode(p, input, g, r3);
    const Trajectory gb = run_episode(p, input, g, r4);
    bool same = ga.final_image == gb.final_image && ga.records.size() == gb.records.size();
    for (std::size_t k = 0; same && k < ga.records.size(); ++k) same = ga.records[k].loc == gb.records[k].loc;
    if (!same) ++greedy_fail;
  }
  return {untouched_fail + norm_fail + identity_fail + greedy_fail == 0,
          std::to_string(kEpisodes) + " episodes; failures untouched " + std::to_string(untouched_fail) +
              ", normalization " + std::to_string(norm_fail) + " (max |sum-1| " + fmt("%.1e", worst_sum) +
              "), identity " + std::to_string(identity_fail) + ", greedy " + std::to_string(greedy_fail)};
}

// ---------------------------------------------------------------------------

struct ToyRun {
  fs::path root;
};

Outcome criterion_toy_training(const fs::path& work) {
  const RunConfig cfg = preset_config("toy");
  OutputManifest manifest(work / "c4_random_patch", "acceptance c4");
  std::ostringstream log;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_ablation(cfg, "random_patch", manifest.root(), manifest, log);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(manifest.root() / "log.txt") << log.str();
  double bic = 0, ours = 0, rnd = 0;
  for (const auto& r : rows) {
    if (r.variant == "bicubic") bic = r.psnr;
    if (r.variant == "attention_fh") ours = r.psnr;
    if (r.variant == "random_patch") rnd = r.psnr;
  }
  return {ours - bic >= kBicubicMarginDb && ours - rnd >= kRandomMarginDb && secs <= kToySeconds,
          "bicubic " + fmt("%.3f", bic) + ", attention_fh " + fmt("%.3f", ours) + " (" +
              fmt("%+.3f", ours - bic) + " dB), random_patch " + fmt("%.3f", rnd) + " (gap " +
              fmt("%+.3f", ours - rnd) + " dB), train+eval " + fmt("%.0f", secs) + " s"};
}

Outcome criterion_tsweep(const fs::path& work) {
  const RunConfig cfg = preset_config("toy");
  OutputManifest manifest(work / "c5_tsweep", "acceptance c5");
  std::ostringstream log;
  const auto rows = run_ablation(cfg, "tsweep", manifest.root(), manifest, log);
  std::ofstream(manifest.root() / "log.txt") << log.str();
  std::string detail;
  bool ok = true;
  double prev = -1e9;
  for (const auto& r : rows) {
    if (r.variant == "bicubic") continue;
    detail += (detail.empty() ? "" : ", ") + ("T=" + std::to_string(r.steps)) + " " + fmt("%.3f", r.psnr) +
              " (cov " + fmt("%.2f", r.coverage) + ")";
    if (r.psnr < prev - kTsweepSlackDb) ok = false;
    prev = std::max(prev, r.psnr);
  }
  return {ok, detail};
}

// ---------------------------------------------------------------------------

Outcome criterion_metrics() {
  const fs::path fixtures = fs::path(AFH_SOURCE_DIR) / "tests/fixtures";
  const double p20 = psnr(Image(32, 32, 3, 0.0), Image(32, 32, 3, 0.1));
  Rng rng(5);
  Image a(48, 48, 3);
  for (double& v : a.data()) v = uniform01(rng);
  const double self = ssim(a, a);
  double worst_fsim = 0;
  int pairs = 0;
  for (const auto& row : afh::check::read_reference(fixtures / "fsim/reference.csv", 2)) {
    const Image x = read_png(fixtures / "fsim" / (row.pair + "_a.png"));
    const Image y = read_png(fixtures / "fsim" / (row.pair + "_b.png"));
    worst_fsim = std::max(worst_fsim, std::abs(fsim(x, y) - row.values[0]));
    worst_fsim = std::max(worst_fsim, std::abs(fsim(y, x) - row.values[1]));
    ++pairs;
  }
  bool monotone = true;
  double prev = kPsnrInfinity;
  std::string trail;
  for (double amp : {0.01, 0.03, 0.1, 0.2, 0.4}) {
    Image n = a;
    Rng nr(17);
    for (double& v : n.data()) v = clamp01(v + amp * (2 * uniform01(nr) - 1));
    const double v = psnr(n, a);
    monotone = monotone && v < prev;
    prev = v;
    trail += fmt(" %.2f", v);
  }
  return {std::abs(p20 - 20.0) < kPsnr20Tol && self == 1.0 && pairs == 5 && worst_fsim < kFsimTol && monotone,
          "psnr " + fmt("%.12f", p20) + ", ssim(a,a) " + fmt("%.17g", self) + ", fsim max |diff| " +
              fmt("%.1e", worst_fsim) + " on " + std::to_string(pairs) + " pairs, noise psnr" + trail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_serialization(const fs::path& work) {
  const fs::path dir = work / "c7_serialization";
  fs::create_directories(dir);
  RunConfig cfg = preset_config("toy");
  cfg.train.optimizer.iterations = 3;
  cfg.train.optimizer.batch_size = 2;
  cfg.data.toy_train_count = 4;
  cfg.data.toy_test_count = 2;
  cfg.train.validate_every = 0;
  OutputManifest manifest(dir / "train", "acceptance c7");
  std::ostringstream log;
  const RunData data = load_run_data(cfg);
  const TrainRunResult trained = run_training(cfg, data, manifest.root(), manifest, log);

  save_checkpoint(dir / "a.afh", trained.state);
  const TrainState<float> loaded = load_checkpoint<float>(dir / "a.afh", cfg.policy, cfg.enhancer);
  save_checkpoint(dir / "b.afh", loaded);
  const bool bytes_equal = slurp(dir / "a.afh") == slurp(dir / "b.afh");

  bool forward_equal = true;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    EpisodeConfig ep = cfg.train.episode;
    ep.mode = SelectionMode::sample;
    Rng r1(i), r2(i);
    const Trajectory x = run_episode(trained.state.params, data.test[i].lr_up, ep, r1);
    const Trajectory y = run_episode(loaded.params, data.test[i].lr_up, ep, r2);
    forward_equal = forward_equal && x.final_image == y.final_image;
    for (std::size_t k = 0; k < x.records.size(); ++k)
      forward_equal = forward_equal && x.records[k].loc == y.records[k].loc && x.records[k].log_prob == y.records[k].log_prob;
  }

  bool config_equal = true;
  RunConfig custom = preset_config("toy");
  custom.seed = 123456789;
  custom.train.optimizer.learning_rate = 0.1 + 0.2;
  custom.train.episode.context = ContextSource::initial;
  custom.ablation.tsweep_steps = {3, 1, 4};
  for (const RunConfig& c : {preset_config("paper"), preset_config("toy"), custom}) {
    save_config(c, dir / "c.json");
    const RunConfig back = load_config(dir / "c.json");
    config_equal = config_equal && back == c && dump_config(back) == slurp(dir / "c.json");
  }
  return {bytes_equal && forward_equal && config_equal,
          std::string("save-load-save ") + (bytes_equal ? "identical" : "DIFFERENT") + ", reloaded forward " +
              (forward_equal ? "bit-exact" : "DIFFERENT") + ", config round-trip " +
              (config_equal ? "lossless" : "LOSSY")};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0: no runtime bound
  std::function<Outcome(const fs::path&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path work = fs::current_path() / "acceptance_work";
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (!std::strcmp(argv[i], "--workdir") && i + 1 < argc) {
      work = argv[++i];
    } else {
      std::fprintf(stderr, "usage: %s [--only N[,N...]] [--workdir DIR]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);

  const std::vector<Criterion> criteria = {
      {1, "REINFORCE unbiasedness", kMdpSeconds, [](const fs::path&) { return criterion_reinforce(); }},
      {2, "Gradient checks", kGradSeconds, [](const fs::path&) { return criterion_gradients(); }},
      {3, "Episode invariants", kEpisodeSeconds, [](const fs::path&) { return criterion_episodes(); }},
      {4, "Toy training efficacy", kToySeconds, criterion_toy_training},
      {5, "T-sweep trend", 0, criterion_tsweep},
      {6, "Metric fixtures", 0, [](const fs::path&) { return criterion_metrics(); }},
      {7, "Serialization", 0, criterion_serialization},
      {8, "Baseline variance reduction", 0, [](const fs::path&) { return criterion_baseline_variance(); }},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(work);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_seconds > 0 && secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over budget " + fmt("%.0f s", c.budget_seconds);
    }
    std::printf("%s  [%d] %s: %s  (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
