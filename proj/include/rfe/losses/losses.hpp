#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rfe/autodiff/graph.hpp"
#include "rfe/embedding.hpp"
#include "rfe/tensor.hpp"

namespace rfe::loss {

enum class Metric { L2, ACD };

/// How the pairwise embedding terms are combined. `Sum` is the plain
/// double sum over unordered pairs; `PairMean` divides it by n(n-1)/2 so
/// that lambda keeps its meaning when n_E changes; `SampleMean` divides it
/// by n, so the total weight grows linearly rather than quadratically in n_E.
enum class Reduction { Sum, PairMean, SampleMean };

std::string to_string(Metric m);
Metric parse_metric(const std::string& s);
std::string to_string(Reduction r);
Reduction parse_reduction(const std::string& s);

struct LossConfig {
  double lambda = 1.0;
  double margin = 1.0;
  Metric metric = Metric::ACD;
  double epsilon = 1e-7;
  Reduction reduction = Reduction::Sum;

  /// Throws std::invalid_argument on negative lambda or an out-of-range margin.
  void validate() const;

  /// lambda = 0.01, m = 1000 for the Euclidean metric.
  static LossConfig l2_defaults();
  /// lambda = 1, m = 1: dissimilar features are pushed to orthogonality.
  static LossConfig acd_defaults();
};

template <typename T>
struct DiceResult {
  T loss;
  BasicTensor4<T> grad;  // d loss / d probs
};

/// Soft Dice loss over the whole batch:
///   1 - 2 sum(p g) / (sum(p^2) + sum(g^2) + eps).
template <typename T>
DiceResult<T> dice_loss(const BasicTensor4<T>& probs, const BasicTensor4<T>& labels, T epsilon = T(1e-7));

/// Graph node form of dice_loss; labels are constant.
template <typename T>
ad::NodeId dice_loss(ad::Graph<T>& g, ad::NodeId probs, BasicTensor4<T> labels, T epsilon = T(1e-7));

template <typename T>
T distance_l2(std::span<const T> a, std::span<const T> b);

/// 1 - a.b / (|a| |b| + eps); equals 1 when either vector is zero.
template <typename T>
T distance_acd(std::span<const T> a, std::span<const T> b, T epsilon = T(1e-7));

template <typename T>
struct DistanceGradient {
  T value;
  std::vector<T> grad_a;
  std::vector<T> grad_b;
};

/// Distance with gradients. The L2 gradient at a == b is zero; the ACD
/// gradient drops the norm-derivative term of a zero vector.
template <typename T>
DistanceGradient<T> distance_with_gradient(Metric metric, std::span<const T> a, std::span<const T> b,
                                           T epsilon = T(1e-7));

template <typename T>
struct EmbeddingLossResult {
  T loss;
  std::vector<std::vector<T>> grads;  // one per sample, d loss / d vector
};

/// Contrastive loss over unordered pairs i < j:
///   a_ij = 1: d(h_i, h_j);  a_ij = 0: max(0, m - d(h_i, h_j)).
/// Pairs are visited in row-major (i, then j) order and accumulated
/// sequentially, so the result is bit-reproducible.
template <typename T>
EmbeddingLossResult<T> embedding_loss(std::span<const EmbeddingSample<T>> samples, const Adjacency& adjacency,
                                      const LossConfig& config);

/// L = L_P + sum_l lambda_l * L_E_l.
double total_loss(double primary, std::span<const std::pair<double, double>> embedding_terms);

}  // namespace rfe::loss
