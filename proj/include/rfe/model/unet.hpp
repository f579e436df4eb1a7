#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rfe/autodiff/graph.hpp"
#include "rfe/tensor.hpp"

namespace rfe::model {

struct ModelConfig {
  std::size_t input_channels = 3;
  std::size_t depth = 2;
  std::size_t base_channels = 8;
  std::size_t embed_channels = 16;
  std::uint64_t seed = 1;

  void validate() const;
  /// Spatial dims of every input must be a multiple of this (2^depth).
  std::size_t spatial_divisor() const { return std::size_t{1} << depth; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvSpec {
  std::string name;
  std::size_t kernel;
  std::size_t in_channels;
  std::size_t out_channels;
  ad::ParamId weight;
  ad::ParamId bias;
};

/// Small U-Net. Encoder levels hold two 3x3 conv+relu and are separated by
/// 2x2 max pooling; the decoder mirrors them with nearest upsampling, an
/// up-conv and skip concatenation. A full-resolution 3x3 conv+relu forms
/// the embedding tap, followed by a 1x1 conv to a single logit channel.
template <typename T>
class BasicModel {
 public:
  /// Builds the layer list and draws He-normal weights from config.seed.
  explicit BasicModel(const ModelConfig& config);
  /// Wraps existing parameters; names and shapes must match the layout.
  BasicModel(const ModelConfig& config, ad::ParameterSet<T> params);

  const ModelConfig& config() const { return config_; }
  const std::vector<ConvSpec>& layers() const { return layers_; }
  ad::ParameterSet<T>& parameters() { return params_; }
  const ad::ParameterSet<T>& parameters() const { return params_; }

  const ConvSpec& layer(const std::string& name) const;

  template <typename U>
  BasicModel<U> cast() const {
    return BasicModel<U>(config_, params_.template cast<U>());
  }

  friend bool operator==(const BasicModel& a, const BasicModel& b) {
    return a.config_ == b.config_ && a.params_ == b.params_;
  }

 private:
  void build_layout();

  ModelConfig config_;
  std::vector<ConvSpec> layers_;
  ad::ParameterSet<T> params_;
};

using Model = BasicModel<float>;

/// Graph of one forward pass, kept for a subsequent backward.
template <typename T>
struct ForwardPass {
  ad::Graph<T> graph;
  ad::NodeId input = 0;
  ad::NodeId embed = 0;   // H x W x embed_channels x N, post-relu
  ad::NodeId logits = 0;  // H x W x 1 x N
};

template <typename T>
struct ForwardResult {
  BasicTensor4<T> logits;
  BasicTensor4<T> embed;
};

/// Throws ShapeError when the batch does not fit the model.
template <typename T>
void check_input(const BasicModel<T>& model, const BasicTensor4<T>& batch);

template <typename T>
ForwardPass<T> forward_graph(const BasicModel<T>& model, const BasicTensor4<T>& batch);

template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model, const BasicTensor4<T>& batch);

/// Sigmoid of the logits; no threshold applied.
template <typename T>
BasicTensor4<T> predict(const BasicModel<T>& model, const BasicTensor4<T>& batch);

/// Sum over layers of k*k*cin*cout + cout.
std::size_t expected_parameter_count(const ModelConfig& config);

// Checkpoint: a line-oriented text manifest (format tag, config, one line
// per parameter with name and shape, "end") followed by one T4F blob per
// parameter in manifest order.
void save_checkpoint(std::ostream& out, const Model& model);
Model load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Model& model);
Model load_checkpoint(const std::string& path);

}  // namespace rfe::model
