#include "rfe/losses/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace rfe::loss {

std::string to_string(Metric m) { return m == Metric::L2 ? "l2" : "acd"; }

Metric parse_metric(const std::string& s) {
  if (s == "l2" || s == "L2") return Metric::L2;
  if (s == "acd" || s == "ACD") return Metric::ACD;
  throw std::invalid_argument("unknown metric '" + s + "' (expected l2 or acd)");
}

std::string to_string(Reduction r) {
  switch (r) {
    case Reduction::Sum: return "sum";
    case Reduction::PairMean: return "pair_mean";
    case Reduction::SampleMean: return "sample_mean";
  }
  return "sum";
}

Reduction parse_reduction(const std::string& s) {
  if (s == "sum") return Reduction::Sum;
  if (s == "pair_mean") return Reduction::PairMean;
  if (s == "sample_mean") return Reduction::SampleMean;
  throw std::invalid_argument("unknown reduction '" + s + "' (expected sum, pair_mean or sample_mean)");
}

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss config: lambda must be >= 0");
  if (!(epsilon > 0.0)) throw std::invalid_argument("loss config: epsilon must be > 0");
  if (metric == Metric::ACD) {
    if (!(margin > 0.0 && margin <= 1.0)) {
      throw std::invalid_argument("loss config: ACD margin must lie in (0, 1]");
    }
  } else if (!(margin > 0.0)) {
    throw std::invalid_argument("loss config: L2 margin must be > 0");
  }
}

LossConfig LossConfig::l2_defaults() { return LossConfig{0.01, 1000.0, Metric::L2, 1e-7, Reduction::Sum}; }
LossConfig LossConfig::acd_defaults() { return LossConfig{1.0, 1.0, Metric::ACD, 1e-7, Reduction::Sum}; }

template <typename T>
DiceResult<T> dice_loss(const BasicTensor4<T>& probs, const BasicTensor4<T>& labels, T epsilon) {
  require_same_shape(probs.shape(), labels.shape(), "dice_loss");
  double inter = 0.0, p2 = 0.0, g2 = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double g = labels[i];
    inter += p * g;
    p2 += p * p;
    g2 += g * g;
  }
  const double denom = p2 + g2 + static_cast<double>(epsilon);
  DiceResult<T> out{static_cast<T>(1.0 - 2.0 * inter / denom), BasicTensor4<T>(probs.shape())};
  const double inv2 = 1.0 / (denom * denom);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i];
    const double g = labels[i];
    out.grad[i] = static_cast<T>((4.0 * inter * p - 2.0 * g * denom) * inv2);
  }
  return out;
}

template <typename T>
ad::NodeId dice_loss(ad::Graph<T>& g, ad::NodeId probs, BasicTensor4<T> labels, T epsilon) {
  auto res = dice_loss(g.value(probs), labels, epsilon);
  return g.push(ad::OpKind::DiceLoss, {probs}, BasicTensor4<T>(1, 1, 1, 1, res.loss),
                [probs, grad = std::move(res.grad)](ad::Graph<T>& gr, ad::NodeId self) {
                  const T go = (*gr.grad(self))[0];
                  auto& gp = gr.grad_accumulator(probs);
                  for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += go * grad[i];
                });
}

namespace {

template <typename T>
void require_same_length(std::span<const T> a, std::span<const T> b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
}

template <typename T>
T norm(std::span<const T> a) {
  T s = T(0);
  for (T v : a) s += v * v;
  return std::sqrt(s);
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

template <typename T>
T distance_l2(std::span<const T> a, std::span<const T> b) {
  require_same_length(a, b, "distance_l2");
  T s = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

template <typename T>
T distance_acd(std::span<const T> a, std::span<const T> b, T epsilon) {
  require_same_length(a, b, "distance_acd");
  return T(1) - dot(a, b) / (norm(a) * norm(b) + epsilon);
}

template <typename T>
DistanceGradient<T> distance_with_gradient(Metric metric, std::span<const T> a, std::span<const T> b, T epsilon) {
  require_same_length(a, b, "distance");
  const std::size_t n = a.size();
  DistanceGradient<T> out{T(0), std::vector<T>(n, T(0)), std::vector<T>(n, T(0))};
  if (metric == Metric::L2) {
    out.value = distance_l2(a, b);
    if (out.value > T(0)) {
      for (std::size_t k = 0; k < n; ++k) {
        out.grad_a[k] = (a[k] - b[k]) / out.value;
        out.grad_b[k] = -out.grad_a[k];
      }
    }
    return out;
  }
  const T na = norm(a);
  const T nb = norm(b);
  const T ab = dot(a, b);
  const T s = na * nb + epsilon;
  out.value = T(1) - ab / s;
  // d/da [ab / s] = b / s - ab * nb * (a / na) / s^2
  const T ca = na > T(0) ? ab * nb / (na * s * s) : T(0);
  const T cb = nb > T(0) ? ab * na / (nb * s * s) : T(0);
  for (std::size_t k = 0; k < n; ++k) {
    out.grad_a[k] = -(b[k] / s - ca * a[k]);
    out.grad_b[k] = -(a[k] / s - cb * b[k]);
  }
  return out;
}

template <typename T>
EmbeddingLossResult<T> embedding_loss(std::span<const EmbeddingSample<T>> samples, const Adjacency& adjacency,
                                      const LossConfig& config) {
  config.validate();
  const std::size_t n = samples.size();
  if (adjacency.size() != n) {
    throw std::invalid_argument("embedding_loss: adjacency is " + std::to_string(adjacency.size()) + " x " +
                                std::to_string(adjacency.size()) + " but there are " + std::to_string(n) +
                                " samples");
  }
  const std::size_t dim = n > 0 ? samples[0].vector.size() : 0;
  for (const auto& s : samples) {
    if (s.vector.size() != dim) throw std::invalid_argument("embedding_loss: samples differ in vector length");
  }

  const T eps = static_cast<T>(config.epsilon);
  const T margin = static_cast<T>(config.margin);
  const bool acd = config.metric == Metric::ACD;

  std::vector<T> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = norm(std::span<const T>(samples[i].vector));

  EmbeddingLossResult<T> out{T(0), std::vector<std::vector<T>>(n, std::vector<T>(dim, T(0)))};
  for (std::size_t i = 0; i < n; ++i) {
    const T* hi = samples[i].vector.data();
    T* gi = out.grads[i].data();
    for (std::size_t j = i + 1; j < n; ++j) {
      const T* hj = samples[j].vector.data();
      T* gj = out.grads[j].data();
      const bool similar = adjacency(i, j);
      if (acd) {
        T ab = T(0);
        for (std::size_t k = 0; k < dim; ++k) ab += hi[k] * hj[k];
        const T s = norms[i] * norms[j] + eps;
        const T d = T(1) - ab / s;
        T sign;
        if (similar) {
          out.loss += d;
          sign = T(1);
        } else {
          const T hinge = margin - d;
          if (!(hinge > T(0))) continue;
          out.loss += hinge;
          sign = T(-1);
        }
        const T ci = norms[i] > T(0) ? ab * norms[j] / (norms[i] * s * s) : T(0);
        const T cj = norms[j] > T(0) ? ab * norms[i] / (norms[j] * s * s) : T(0);
        for (std::size_t k = 0; k < dim; ++k) {
          gi[k] += sign * -(hj[k] / s - ci * hi[k]);
          gj[k] += sign * -(hi[k] / s - cj * hj[k]);
        }
      } else {
        T ss = T(0);
        for (std::size_t k = 0; k < dim; ++k) {
          const T diff = hi[k] - hj[k];
          ss += diff * diff;
        }
        const T d = std::sqrt(ss);
        T sign;
        if (similar) {
          out.loss += d;
          sign = T(1);
        } else {
          const T hinge = margin - d;
          if (!(hinge > T(0))) continue;
          out.loss += hinge;
          sign = T(-1);
        }
        if (d > T(0)) {
          for (std::size_t k = 0; k < dim; ++k) {
            const T gk = sign * (hi[k] - hj[k]) / d;
            gi[k] += gk;
            gj[k] -= gk;
          }
        }
      }
    }
  }
  if (config.reduction != Reduction::Sum && n >= 2) {
    const std::size_t divisor = config.reduction == Reduction::PairMean ? n * (n - 1) / 2 : n;
    const T inv = T(1) / static_cast<T>(divisor);
    out.loss *= inv;
    for (auto& g : out.grads) {
      for (T& v : g) v *= inv;
    }
  }
  return out;
}

double total_loss(double primary, std::span<const std::pair<double, double>> embedding_terms) {
  double total = primary;
  for (const auto& [lambda, value] : embedding_terms) {
    if (!(lambda >= 0.0)) throw std::invalid_argument("total_loss: lambda must be >= 0");
    total += lambda * value;
  }
  return total;
}

#define RFE_INSTANTIATE_LOSSES(T)                                                                         \
  template DiceResult<T> dice_loss(const BasicTensor4<T>&, const BasicTensor4<T>&, T);                   \
  template ad::NodeId dice_loss(ad::Graph<T>&, ad::NodeId, BasicTensor4<T>, T);                          \
  template T distance_l2(std::span<const T>, std::span<const T>);                                        \
  template T distance_acd(std::span<const T>, std::span<const T>, T);                                    \
  template DistanceGradient<T> distance_with_gradient(Metric, std::span<const T>, std::span<const T>, T); \
  template EmbeddingLossResult<T> embedding_loss(std::span<const EmbeddingSample<T>>, const Adjacency&,  \
                                                 const LossConfig&);

RFE_INSTANTIATE_LOSSES(float)
RFE_INSTANTIATE_LOSSES(double)

}  // namespace rfe::loss
