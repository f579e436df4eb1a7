#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfe/tensor.hpp"

namespace rfe::ad {

using NodeId = std::size_t;
using ParamId = std::size_t;

enum class OpKind {
  Constant,
  Variable,
  Parameter,
  Conv2d,
  Relu,
  Sigmoid,
  MaxPool2,
  Upsample2,
  ConcatChannels,
  SliceBatch,
  Mul,
  Scale,
  Sum,
  Mean,
  DiceLoss,
};

const char* to_string(OpKind kind);

/// Ordered, named collection of trainable tensors.
template <typename T>
class ParameterSet {
 public:
  using Tensor = BasicTensor4<T>;

  ParamId add(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  Tensor& value(ParamId id) { return values_.at(id); }
  const Tensor& value(ParamId id) const { return values_.at(id); }
  std::span<const Tensor> values() const { return values_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <typename U>
  ParameterSet<U> cast() const {
    ParameterSet<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Gradient per parameter, indexed by ParamId; same shapes as the set.
template <typename T>
using ParameterGradients = std::vector<BasicTensor4<T>>;

/// Extra gradient injected at an intermediate node during backward, e.g.
/// the masked embedding-loss gradient at the embedding tap.
template <typename T>
struct GradientSeed {
  NodeId node;
  const BasicTensor4<T>* grad;
};

/// Tape of operations in creation order. Inputs of every node precede it,
/// so a single reverse sweep is a valid reverse topological order.
template <typename T>
class Graph {
 public:
  using Tensor = BasicTensor4<T>;
  using BackwardFn = std::function<void(Graph&, NodeId)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  /// Leaf that never receives a gradient.
  NodeId constant(Tensor value);
  /// Leaf that receives a gradient (used by gradient checks).
  NodeId variable(Tensor value);
  /// Leaf bound to a parameter; its value is copied from `params`.
  NodeId parameter(const ParameterSet<T>& params, ParamId id);

  /// Appends an op node. `inputs` must already exist.
  NodeId push(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward);

  std::size_t size() const { return nodes_.size(); }
  OpKind kind(NodeId id) const { return node(id).kind; }
  std::span<const NodeId> inputs(NodeId id) const { return node(id).inputs; }
  const Tensor& value(NodeId id) const { return node(id).value; }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }

  /// Gradient of the last backward() w.r.t. a node; nullopt if it was unreached.
  const Tensor* grad(NodeId id) const;
  /// Accumulator for op backward functions; allocated as zeros on first use.
  Tensor& grad_accumulator(NodeId id);

  /// Reverse pass seeded with d(loss)/d(loss) = 1 plus any extra seeds.
  /// Throws if `loss` is not scalar-valued.
  void backward(NodeId loss, std::span<const GradientSeed<T>> extra = {});

  /// Gradients for every parameter in `params`; zeros where unreachable.
  ParameterGradients<T> parameter_gradients(const ParameterSet<T>& params) const;

 private:
  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<ParamId> param;
    std::optional<Tensor> grad;
  };

  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) throw std::out_of_range("graph node id " + std::to_string(id) + " out of range");
    return nodes_[id];
  }
  Node& node(NodeId id) {
    if (id >= nodes_.size()) throw std::out_of_range("graph node id " + std::to_string(id) + " out of range");
    return nodes_[id];
  }

  std::vector<Node> nodes_;
};

/// p <- p - lr * g, elementwise for every parameter.
template <typename T>
void sgd_step(ParameterSet<T>& params, const ParameterGradients<T>& grads, T learning_rate);

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace rfe::ad
