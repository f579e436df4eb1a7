#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfe/data/domains.hpp"
#include "rfe/harness/config.hpp"
#include "rfe/harness/metrics.hpp"
#include "rfe/model/unet.hpp"
#include "rfe/prior/prior.hpp"

namespace rfe::harness {

/// Everything the protocol needs from one domain. Image streams are
/// disjoint: V1 uses generator indices [0, v1), training images
/// [v1, v1 + train), test images start at kTestImageOffset.
struct DomainData {
  std::string id;
  data::DomainDataset patches;  // cropped from train_images, 7:3 split
  Tensor4 train_images, train_labels;
  Tensor4 v1_images, v1_labels;
  Tensor4 test_images, test_labels;
};

inline constexpr std::size_t kTestImageOffset = 1000;

DomainData prepare_domain(const data::DomainSpec& spec, const ExperimentConfig& cfg);
void save_domain(const std::string& dir, const DomainData& d, const data::DomainSpec& spec);
DomainData load_domain(const std::string& dir);

/// Training-patch labels of a target as seen by the embedding loss, cut
/// from full-image priors at the patch origins.
struct PatchPrior {
  Tensor4 labels;  // patch_size x patch_size x 1 x n_patches
  prior::PriorManifest manifest;
};

/// Perfect: the target's patch labels. Ncc: templates and threshold from the
/// target's V1 images, matching on its training images; target training
/// labels are not read.
PatchPrior make_prior(const ExperimentConfig& cfg, const DomainData& target, PriorKind kind, std::uint64_t seed);

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double primary = 0.0;    // mean Dice loss over the epoch's steps
  double embedding = 0.0;  // mean embedding loss (before lambda)
};

using EpochCallback = std::function<void(std::size_t epoch, const model::Model&, const EpochLog&)>;

struct LowerBoundRun {
  std::vector<model::Model> checkpoints;  // checkpoints[e - 1] is the model after epoch e
  std::vector<EpochLog> log;

  const model::Model& at(std::size_t epoch) const { return checkpoints.at(epoch - 1); }
};

/// Dice-only training on the source training split for epochs_lower epochs.
LowerBoundRun train_lower_bound(const ExperimentConfig& cfg, const DomainData& source, std::uint64_t seed,
                                const EpochCallback& on_epoch = {});

/// Epochs branch+1 .. epochs_lower on the shuffled union of labeled source
/// and target training patches, Dice only.
model::Model train_upper_bound(const ExperimentConfig& cfg, const model::Model& branch, const DomainData& source,
                               const DomainData& target, std::uint64_t seed, std::vector<EpochLog>* log = nullptr);

/// Epochs branch+1 .. epochs_lower. Each step holds batch/2 labeled source
/// patches (Dice) and batch/2 target patches; n_E embeddings are sampled from
/// the whole batch's tap with adjacency from source labels and the target
/// prior, and only the sampled sites receive the lambda-weighted gradient.
model::Model finetune_semisupervised(const ExperimentConfig& cfg, const model::Model& branch,
                                     const DomainData& source, const DomainData& target, const Tensor4& target_prior,
                                     std::uint64_t seed, std::vector<EpochLog>* log = nullptr);

/// Source-only continuation with the same source order and per-step share as
/// finetune_semisupervised.
model::Model continue_supervised(const ExperimentConfig& cfg, const model::Model& branch, const DomainData& source,
                                 std::uint64_t seed, std::vector<EpochLog>* log = nullptr);

/// Mean per-image F-score of the thresholded prediction.
double evaluate_f(const model::Model& m, const Tensor4& images, const Tensor4& labels, double threshold);

/// One row for the domain's held-out test images.
MetricsRow evaluate(const model::Model& m, const DomainData& d, double threshold, const std::string& model_id,
                    std::uint64_t seed, std::size_t epoch);

struct SweepCell {
  sampler::StrategyKind strategy;
  loss::Metric metric;
  std::size_t n_embed;

  std::string model_id() const;
};

inline constexpr std::size_t kSweepEmbedCounts[] = {20, 100, 200, 500, 1000, 2000};

/// 3 strategies x 2 metrics x 6 n_E, strategy-major.
std::vector<SweepCell> sweep_grid();

/// Config for one cell: strategy, metric and n_E replaced; lambda and margin
/// reset to the metric's defaults; perfect prior.
ExperimentConfig cell_config(const ExperimentConfig& base, const SweepCell& cell);

using BranchProvider = std::function<model::Model(std::uint64_t seed)>;

/// Runs every cell for every seed, skipping (cell, seed) pairs already
/// present with status ok in `csv_path`. The CSV is rewritten atomically
/// after each cell; failures become rows with status failed:<reason>.
std::vector<MetricsRow> run_sweep(const ExperimentConfig& cfg, const DomainData& source, const DomainData& target,
                                  const BranchProvider& branch, const std::string& csv_path,
                                  std::span<const SweepCell> cells,
                                  const std::function<void(const MetricsRow&)>& progress = {});

/// Mean channel-marginal JSD between n_E embeddings sampled with `strategy`
/// and all embeddings of one batch of source training patches.
std::vector<JsdRow> jsd_diagnostic(const ExperimentConfig& cfg, const model::Model& m, const DomainData& d,
                                   sampler::StrategyKind strategy, std::span<const std::size_t> n_values,
                                   std::span<const std::uint64_t> seeds);

}  // namespace rfe::harness
