#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rfe/embedding.hpp"
#include "rfe/tensor.hpp"

namespace rfe::prior {

/// Single-channel 2D real map, row-major.
struct Map2D {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  Map2D() = default;
  Map2D(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), data(h * w, fill) {}

  float& at(std::size_t r, std::size_t c) { return data[r * width + c]; }
  float at(std::size_t r, std::size_t c) const { return data[r * width + c]; }
  friend bool operator==(const Map2D&, const Map2D&) = default;
};

/// Channel `c` of image `n`.
Map2D channel_map(const Tensor4& t, std::size_t c, std::size_t n);
/// One map per image of channel `c`.
std::vector<Map2D> channel_maps(const Tensor4& t, std::size_t c);
/// Stacks equally sized maps into an H x W x 1 x N tensor.
Tensor4 stack_maps(std::span<const Map2D> maps);

struct TemplateSet {
  std::size_t k = 5;
  std::vector<Map2D> templates;
  std::vector<PixelPosition> centers;  // batch = index of the source image
};

struct NoisyPrior {
  Map2D response;  // aggregated NCC response in [0, 1]
  float threshold = 0.0f;
  Map2D labels;  // [response >= threshold]
};

/// The prior for fully labeled data is the label map itself.
Tensor4 perfect_prior(const Tensor4& labels);

/// Draws `count` k x k patches centred on lesion pixels whose full window
/// lies inside the image, uniformly over all such centres of all source
/// images; with replacement when there are fewer than `count` centres.
TemplateSet extract_templates(std::span<const Map2D> images, std::span<const Map2D> labels, std::size_t k,
                              std::size_t count, std::mt19937_64& rng);

/// Zero-mean normalised cross-correlation of the template against every
/// fully-inside window, stored at the window centre. Border centres and
/// windows or templates with zero variance give 0. Output is in [-1, 1].
Map2D ncc_match(const Map2D& image, const Map2D& templ);

/// Per-pixel geometric mean of (r + 1) / 2 over all response maps.
Map2D aggregate_responses(std::span<const Map2D> responses);

/// 2 TP / (2 TP + FP + FN) of [score >= threshold] against a binary map
/// summed over all maps; 1 when both are empty.
double dice_at_threshold(std::span<const Map2D> scores, std::span<const Map2D> truth, float threshold);

inline constexpr std::size_t kThresholdGridSize = 256;
/// Grid value i / 255.
float threshold_grid_value(std::size_t i);

struct ThresholdChoice {
  float threshold = 0.0f;
  double dice = 0.0;
};

/// Grid threshold maximising Dice of [aggregate >= t] against the truth,
/// ties broken toward the larger threshold. Truth must be nonempty.
ThresholdChoice select_threshold(std::span<const Map2D> aggregates, std::span<const Map2D> truth);

struct NoisyPriorResult {
  TemplateSet templates;
  ThresholdChoice selection;  // chosen on the source images themselves
  std::vector<NoisyPrior> priors;  // one per target image
};

/// Templates and threshold come from the labeled source images only; the
/// targets are images without labels.
NoisyPriorResult generate_noisy_prior(std::span<const Map2D> source_images, std::span<const Map2D> source_labels,
                                      std::span<const Map2D> target_images, std::size_t k, std::size_t count,
                                      std::mt19937_64& rng);

/// Text manifest stored next to a T4F file of prior label maps.
struct PriorManifest {
  std::string source_id;
  std::size_t k = 5;
  std::size_t count = 30;
  float threshold = 0.0f;
  std::uint64_t seed = 0;
  std::size_t images = 0;
  double source_dice = 0.0;
};

void save_prior(const std::string& t4f_path, const std::string& manifest_path, const Tensor4& labels,
                const PriorManifest& manifest);
PriorManifest load_prior_manifest(const std::string& manifest_path);

}  // namespace rfe::prior
