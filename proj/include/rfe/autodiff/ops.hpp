#pragma once

#include <cstddef>

#include "rfe/autodiff/graph.hpp"

namespace rfe::ad {

/// 2D cross-correlation. `weights` is kh x kw x Cin x Cout, `bias` is
/// 1 x 1 x Cout x 1. Output is Ho x Wo x Cout x N with
/// Ho = (H + 2*pad - kh) / stride + 1.
template <typename T>
NodeId conv2d(Graph<T>& g, NodeId input, NodeId weights, NodeId bias, std::size_t pad, std::size_t stride);

template <typename T>
NodeId relu(Graph<T>& g, NodeId x);

template <typename T>
NodeId sigmoid(Graph<T>& g, NodeId x);

/// 2x2 max pooling, stride 2. Odd trailing rows/columns are dropped.
/// Backward routes to the first maximum in scan order.
template <typename T>
NodeId maxpool2(Graph<T>& g, NodeId x);

/// Nearest-neighbour 2x upsampling.
template <typename T>
NodeId upsample2(Graph<T>& g, NodeId x);

/// Channels of `a` followed by channels of `b`.
template <typename T>
NodeId concat_channels(Graph<T>& g, NodeId a, NodeId b);

template <typename T>
NodeId slice_batch(Graph<T>& g, NodeId x, std::size_t first, std::size_t count);

/// Elementwise product.
template <typename T>
NodeId mul(Graph<T>& g, NodeId a, NodeId b);

template <typename T>
NodeId scale(Graph<T>& g, NodeId x, T factor);

/// Scalar reductions (1x1x1x1 outputs).
template <typename T>
NodeId sum(Graph<T>& g, NodeId x);

template <typename T>
NodeId mean(Graph<T>& g, NodeId x);

/// Forward-only helpers shared with tests and the model.
template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& input, const BasicTensor4<T>& weights,
                               const BasicTensor4<T>& bias, std::size_t pad, std::size_t stride);

template <typename T>
T sigmoid_value(T x);

}  // namespace rfe::ad
