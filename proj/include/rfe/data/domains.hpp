#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "rfe/tensor.hpp"

namespace rfe::data {

/// Parameters of one synthetic acquisition domain. Images carry three
/// correlated channels (T1/T2/FLAIR analogues): a latent tissue field and
/// lesions are rendered per latent channel, mixed through `channel_mixing`
/// and modulated by a smooth multiplicative bias field.
struct DomainSpec {
  std::string id = "A";
  double background_mean = 1.0;
  double background_noise_sd = 0.05;
  double lesion_intensity_shift = 0.8;
  double lesion_radius_min = 1.0;  // pixels
  double lesion_radius_max = 2.2;
  double bias_field_amplitude = 0.1;
  std::array<double, 9> channel_mixing = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major, output x latent
  double tissue_contrast = 0.25;
  std::size_t distractors = 3;  // non-lesion bright spots per image (T2 analogue only)
  std::size_t image_size = 64;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Fixed specs for domains A (source) and B, C, D (shifted targets).
std::vector<DomainSpec> default_domain_specs();
DomainSpec default_domain_spec(const std::string& id);

struct GeneratedImages {
  Tensor4 images;  // S x S x 3 x n
  Tensor4 labels;  // S x S x 1 x n, binary
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kFlairChannel = 2;
inline constexpr double kMaxLesionFraction = 0.03;

/// Deterministic given (spec, n_images, first_index). Image i uses a seed
/// derived from (spec.seed, first_index + i), so images are independent
/// of batch size and ordering.
GeneratedImages generate_domain(const DomainSpec& spec, std::size_t n_images, std::size_t first_index = 0);

struct PatchOrigin {
  std::size_t image = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

struct DomainDataset {
  std::string domain_id;
  Tensor4 patches;  // size x size x 3 x n
  Tensor4 labels;   // size x size x 1 x n
  std::vector<PatchOrigin> origins;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::uint64_t seed = 0;

  std::size_t size() const { return origins.size(); }
};

/// Crops `per_image` windows per image, each containing at least one lesion
/// pixel (a random lesion pixel, jittered off-centre), then splits 7:3.
/// Images without lesions are skipped with a warning on stderr.
DomainDataset crop_patches(const std::string& domain_id, const Tensor4& images, const Tensor4& labels,
                           std::size_t size, std::size_t per_image, std::mt19937_64& rng);

/// Cuts windows of `size` at the given origins from any H x W x C x N maps
/// aligned with the images the origins refer to.
Tensor4 crop_at(const Tensor4& maps, std::span<const PatchOrigin> origins, std::size_t size);

/// Images at the given batch indices, in order.
Tensor4 select_batch(const Tensor4& t, std::span<const std::size_t> indices);

/// Shuffled 7:3 split of n items: round(0.7 n) train, the rest validation.
void split_train_validation(std::size_t n, std::mt19937_64& rng, std::vector<std::size_t>& train,
                            std::vector<std::size_t>& validation);

/// Mean lesion fraction over the batch.
double foreground_fraction(const Tensor4& labels);

// Persistence: <dir>/patches.t4f, <dir>/patch_labels.t4f and a text
// manifest <dir>/dataset.txt with id, counts, seed, origins and the split.
void save_dataset(const std::string& dir, const DomainDataset& ds, const DomainSpec& spec);
DomainDataset load_dataset(const std::string& dir);

std::string describe(const DomainSpec& spec);

}  // namespace rfe::data
