#pragma once

#include <filesystem>
#include <optional>

#include "afh/training.hpp"

namespace afh {

/// Container layout:
///   "AFH1" | u64 LE header length | JSON header | tensor payloads (raw LE)
/// The header holds both config blocks, the training counters and a manifest
/// entry (name, dtype, shape, offset, nbytes) per tensor; offsets count from
/// the first payload byte. Tensors are policy/*, enhancer/* and the ADAM
/// moments adam.m/* and adam.v/*.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, const TrainState<T>& state);

/// Reads any checkpoint; f32 and f64 payloads convert to T.
template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path);

/// Same, but throws ShapeError when a tensor does not fit the given configs.
template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path, const PolicyConfig& policy,
                              const EnhancerConfig& enhancer);

}  // namespace afh
