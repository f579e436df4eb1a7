#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfe/losses/losses.hpp"
#include "rfe/model/unet.hpp"
#include "rfe/sampler/sampler.hpp"

namespace rfe::harness {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PriorKind { Perfect, Ncc };
std::string to_string(PriorKind k);
PriorKind parse_prior_kind(const std::string& s);

/// Every knob of an experiment. Text form is one `key = value` per line;
/// see `config_keys()` for the documented key list.
struct ExperimentConfig {
  std::string work_dir = "work";
  std::string source = "A";
  std::string target = "B";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};

  // optimisation
  std::size_t batch_size = 12;
  double lr = 1e-6;
  std::optional<double> embedding_lr;  // step size of the embedding term; defaults to lr
  std::size_t epochs_lower = 50;
  std::size_t branch_epoch = 35;

  // embedding loss; lambda and margin fall back to the metric's defaults
  loss::Metric metric = loss::Metric::ACD;
  std::optional<double> lambda;
  std::optional<double> margin;
  loss::Reduction reduction = loss::Reduction::Sum;
  sampler::StrategyKind strategy = sampler::StrategyKind::EightyTwenty;
  std::size_t n_embed = 100;
  PriorKind prior = PriorKind::Perfect;

  // noisy prior
  std::size_t template_k = 5;
  std::size_t template_count = 30;

  // data
  std::size_t v1_images = 2;
  std::size_t train_images = 30;
  std::size_t patches_per_image = 10;
  std::size_t patch_size = 32;
  std::size_t test_images = 20;

  // model
  std::size_t depth = 2;
  std::size_t base_channels = 8;
  std::size_t embed_channels = 16;

  // evaluation and diagnostics
  double threshold = 0.5;
  std::size_t jsd_bins = 64;

  /// Throws ConfigError on inconsistent values.
  void validate() const;

  loss::LossConfig loss_config() const;
  sampler::SamplingStrategy sampling() const { return {strategy, n_embed}; }
  model::ModelConfig model_config(std::uint64_t seed) const;
  /// Factor applied to the embedding-loss gradient before the shared SGD
  /// step: lambda * embedding_lr / lr.
  double embedding_gradient_scale() const;
};

struct ConfigKey {
  const char* name;
  const char* help;
};
const std::vector<ConfigKey>& config_keys();

/// Applies one `key = value` assignment; throws ConfigError on unknown keys
/// or unparsable values.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

/// Parses line-oriented text. Blank lines and lines starting with '#' are
/// ignored. Errors quote the line number.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Canonical text with every key, loadable by parse_config.
std::string to_text(const ExperimentConfig& cfg);

}  // namespace rfe::harness
