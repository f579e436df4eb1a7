#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rfe/embedding.hpp"
#include "rfe/tensor.hpp"

namespace rfe::sampler {

enum class StrategyKind { FiftyFifty, DistributionAware, EightyTwenty };

std::string to_string(StrategyKind k);
StrategyKind parse_strategy(const std::string& s);

struct SamplingStrategy {
  StrategyKind kind = StrategyKind::EightyTwenty;
  std::size_t n_embed = 100;

  void validate() const;
};

struct ClassQuota {
  std::size_t foreground = 0;
  std::size_t background = 0;
};

/// Per-class sample counts for a prior with `foreground` positives among
/// `total` pixels. Rounding is half-up; background takes the remainder.
ClassQuota class_quota(const SamplingStrategy& strategy, std::size_t foreground, std::size_t total);

/// Draws exactly n_E pixel sites from a binary H x W x 1 x N prior.
/// Sites are uniform without replacement inside each class, falling back to
/// drawing with replacement when a class pool is smaller than its quota.
/// Foreground sites come first in the result.
std::vector<PixelPosition> sample_positions(const Tensor4& prior, const SamplingStrategy& strategy,
                                            std::mt19937_64& rng);

template <typename T>
std::vector<EmbeddingSample<T>> gather(const BasicTensor4<T>& embed, const Tensor4& prior,
                                       std::span<const PixelPosition> positions);

/// a_ij = [label_i == label_j].
template <typename T>
Adjacency build_adjacency(std::span<const EmbeddingSample<T>> samples);

/// Zero tensor of `shape` with each per-sample gradient scatter-added into
/// the channel column at its position. Nothing else receives gradient.
template <typename T>
BasicTensor4<T> mask_gradients(const Shape4& shape, std::span<const PixelPosition> positions,
                               std::span<const std::vector<T>> per_sample_grads);

/// Base-2 Jensen-Shannon divergence of two discrete distributions given as
/// (unnormalised) histograms of equal length. Uses 0 log 0 = 0.
double js_divergence_histograms(std::span<const double> p, std::span<const double> q);

/// Mean over channels of the JSD between `bins`-bin histograms of the
/// sampled and population vectors, binned over the population's [min, max]
/// per channel. Result lies in [0, 1].
double js_divergence(std::span<const std::vector<float>> sampled, std::span<const std::vector<float>> population,
                     std::size_t bins = 64);

/// Every pixel's channel vector of an H x W x C x N tensor.
std::vector<std::vector<float>> all_embeddings(const Tensor4& embed);

}  // namespace rfe::sampler
