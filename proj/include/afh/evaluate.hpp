#pragma once

#include <vector>

#include "afh/data.hpp"
#include "afh/episode.hpp"
#include "afh/metrics.hpp"
#include "afh/nets.hpp"

namespace afh {

/// Runs one episode per pair on lr_up and scores the result against hr.
/// `cfg.mode` must be greedy unless the location policy is not learned; the
/// episode RNG for image i is Rng(derive_seed(seed, i)).
template <typename T>
MetricReport evaluate(const ParamSet<T>& params, const std::vector<SamplePair>& dataset,
                      const EpisodeConfig& cfg, std::uint64_t seed = 0);

/// Metrics of the bicubic input itself.
MetricReport evaluate_bicubic(const std::vector<SamplePair>& dataset);

/// Mean PSNR only, skipping SSIM and FSIM.
template <typename T>
double mean_psnr(const ParamSet<T>& params, const std::vector<SamplePair>& dataset,
                 const EpisodeConfig& cfg, std::uint64_t seed = 0);

}  // namespace afh
