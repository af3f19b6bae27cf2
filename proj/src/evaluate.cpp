#include "afh/evaluate.hpp"

namespace afh {

namespace {

EpisodeConfig eval_episode(const EpisodeConfig& cfg, const std::vector<SamplePair>& dataset) {
  if (dataset.empty()) throw Error("cannot evaluate an empty dataset");
  if (cfg.policy == LocationPolicy::learned && cfg.mode != SelectionMode::greedy) {
    throw ConfigError("evaluation of the learned policy requires greedy mode");
  }
  EpisodeConfig lean = cfg;
  lean.keep_patches = false;
  return lean;
}

}  // namespace

template <typename T>
MetricReport evaluate(const ParamSet<T>& params, const std::vector<SamplePair>& dataset,
                      const EpisodeConfig& cfg, std::uint64_t seed) {
  const EpisodeConfig lean = eval_episode(cfg, dataset);
  MetricReport report;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    const Trajectory traj = run_episode(params, dataset[i].lr_up, lean, rng);
    report.per_image.push_back(compare(dataset[i].id, traj.final_image, dataset[i].hr));
  }
  summarize(report);
  return report;
}

MetricReport evaluate_bicubic(const std::vector<SamplePair>& dataset) {
  if (dataset.empty()) throw Error("cannot evaluate an empty dataset");
  MetricReport report;
  for (const SamplePair& p : dataset) report.per_image.push_back(compare(p.id, p.lr_up, p.hr));
  summarize(report);
  return report;
}

template <typename T>
double mean_psnr(const ParamSet<T>& params, const std::vector<SamplePair>& dataset,
                 const EpisodeConfig& cfg, std::uint64_t seed) {
  const EpisodeConfig lean = eval_episode(cfg, dataset);
  double total = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    total += psnr(run_episode(params, dataset[i].lr_up, lean, rng).final_image, dataset[i].hr);
  }
  return total / static_cast<double>(dataset.size());
}

template MetricReport evaluate<float>(const ParamSet<float>&, const std::vector<SamplePair>&,
                                      const EpisodeConfig&, std::uint64_t);
template MetricReport evaluate<double>(const ParamSet<double>&, const std::vector<SamplePair>&,
                                       const EpisodeConfig&, std::uint64_t);
template double mean_psnr<float>(const ParamSet<float>&, const std::vector<SamplePair>&,
                                 const EpisodeConfig&, std::uint64_t);
template double mean_psnr<double>(const ParamSet<double>&, const std::vector<SamplePair>&,
                                  const EpisodeConfig&, std::uint64_t);

}  // namespace afh
