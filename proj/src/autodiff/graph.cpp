#include "rfe/autodiff/graph.hpp"

namespace rfe::ad {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::Constant: return "constant";
    case OpKind::Variable: return "variable";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::MaxPool2: return "maxpool2";
    case OpKind::Upsample2: return "upsample2";
    case OpKind::ConcatChannels: return "concat_channels";
    case OpKind::SliceBatch: return "slice_batch";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::DiceLoss: return "dice_loss";
  }
  return "unknown";
}

template <typename T>
NodeId Graph<T>::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::Constant, {}, std::move(value), {}, false, std::nullopt, std::nullopt});
  return nodes_.size() - 1;
}

template <typename T>
NodeId Graph<T>::variable(Tensor value) {
  nodes_.push_back(Node{OpKind::Variable, {}, std::move(value), {}, true, std::nullopt, std::nullopt});
  return nodes_.size() - 1;
}

template <typename T>
NodeId Graph<T>::parameter(const ParameterSet<T>& params, ParamId id) {
  nodes_.push_back(Node{OpKind::Parameter, {}, params.value(id), {}, true, id, std::nullopt});
  return nodes_.size() - 1;
}

template <typename T>
NodeId Graph<T>::push(OpKind kind, std::vector<NodeId> inputs, Tensor value, BackwardFn backward) {
  bool needs = false;
  for (NodeId in : inputs) {
    needs = needs || node(in).requires_grad;
  }
  nodes_.push_back(Node{kind, std::move(inputs), std::move(value), std::move(backward), needs, std::nullopt,
                        std::nullopt});
  return nodes_.size() - 1;
}

template <typename T>
const BasicTensor4<T>* Graph<T>::grad(NodeId id) const {
  const Node& n = node(id);
  return n.grad ? &*n.grad : nullptr;
}

template <typename T>
BasicTensor4<T>& Graph<T>::grad_accumulator(NodeId id) {
  Node& n = node(id);
  if (!n.grad) n.grad.emplace(n.value.shape(), T(0));
  return *n.grad;
}

template <typename T>
void Graph<T>::backward(NodeId loss, std::span<const GradientSeed<T>> extra) {
  if (node(loss).value.size() != 1) {
    throw std::invalid_argument("backward: loss node " + std::to_string(loss) + " (" +
                                to_string(node(loss).kind) + ") is not scalar, shape " +
                                rfe::to_string(node(loss).value.shape()));
  }
  for (auto& n : nodes_) n.grad.reset();
  grad_accumulator(loss)[0] = T(1);
  NodeId last = loss;
  for (const auto& seed : extra) {
    require_same_shape(node(seed.node).value.shape(), seed.grad->shape(), "backward seed");
    auto& acc = grad_accumulator(seed.node);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += (*seed.grad)[i];
    last = std::max(last, seed.node);
  }
  for (NodeId id = last + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.grad || !n.requires_grad || !n.backward) continue;
    n.backward(*this, id);
  }
}

template <typename T>
ParameterGradients<T> Graph<T>::parameter_gradients(const ParameterSet<T>& params) const {
  ParameterGradients<T> out;
  out.reserve(params.size());
  for (ParamId p = 0; p < params.size(); ++p) out.emplace_back(params.value(p).shape(), T(0));
  for (const Node& n : nodes_) {
    if (!n.param || !n.grad) continue;
    auto& dst = out.at(*n.param);
    require_same_shape(dst.shape(), n.grad->shape(), "parameter gradient");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += (*n.grad)[i];
  }
  return out;
}

template <typename T>
void sgd_step(ParameterSet<T>& params, const ParameterGradients<T>& grads, T learning_rate) {
  if (grads.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.size()) + " parameters");
  }
  for (ParamId p = 0; p < params.size(); ++p) {
    auto& v = params.value(p);
    require_same_shape(v.shape(), grads[p].shape(), "sgd_step");
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= learning_rate * grads[p][i];
  }
}

template class Graph<float>;
template class Graph<double>;
template void sgd_step(ParameterSet<float>&, const ParameterGradients<float>&, float);
template void sgd_step(ParameterSet<double>&, const ParameterGradients<double>&, double);

}  // namespace rfe::ad
