#include "rfe/sampler/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rfe::sampler {

std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::FiftyFifty: return "50/50";
    case StrategyKind::DistributionAware: return "distribution-aware";
    case StrategyKind::EightyTwenty: return "80/20";
  }
  return "unknown";
}

StrategyKind parse_strategy(const std::string& s) {
  if (s == "50/50" || s == "fifty-fifty") return StrategyKind::FiftyFifty;
  if (s == "distribution-aware" || s == "da") return StrategyKind::DistributionAware;
  if (s == "80/20" || s == "eighty-twenty") return StrategyKind::EightyTwenty;
  throw std::invalid_argument("unknown sampling strategy '" + s + "' (expected 50/50, distribution-aware or 80/20)");
}

void SamplingStrategy::validate() const {
  if (n_embed < 2) throw std::invalid_argument("sampling strategy: n_E must be >= 2");
}

ClassQuota class_quota(const SamplingStrategy& strategy, std::size_t foreground, std::size_t total) {
  strategy.validate();
  const std::size_t n = strategy.n_embed;
  std::size_t fg = 0;
  switch (strategy.kind) {
    case StrategyKind::FiftyFifty:
      fg = (n + 1) / 2;
      break;
    case StrategyKind::DistributionAware:
      if (total == 0) throw std::invalid_argument("class_quota: empty prior");
      // round_half_up(n * foreground / total) in exact integer arithmetic
      fg = static_cast<std::size_t>((2 * static_cast<unsigned __int128>(n) * foreground + total) / (2 * total));
      break;
    case StrategyKind::EightyTwenty:
      fg = (2 * n + 5) / 10;  // round_half_up(0.2 n)
      break;
  }
  return ClassQuota{fg, n - fg};
}

namespace {

void draw(std::vector<std::size_t>& pool, std::size_t count, std::mt19937_64& rng, std::vector<std::size_t>& out) {
  if (count == 0) return;
  if (pool.size() >= count) {
    // partial Fisher-Yates
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(pool[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pool[pick(rng)]);
  }
}

}  // namespace

std::vector<PixelPosition> sample_positions(const Tensor4& prior, const SamplingStrategy& strategy,
                                            std::mt19937_64& rng) {
  strategy.validate();
  if (prior.channels() != 1) {
    throw ShapeError("sample_positions: prior must have one channel, shape is " + to_string(prior.shape()));
  }
  std::vector<std::size_t> fg_pool, bg_pool;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    const float v = prior[i];
    if (v == 1.0f) {
      fg_pool.push_back(i);
    } else if (v == 0.0f) {
      bg_pool.push_back(i);
    } else {
      throw std::invalid_argument("sample_positions: prior is not binary at flat index " + std::to_string(i));
    }
  }
  const ClassQuota q = class_quota(strategy, fg_pool.size(), prior.size());
  if (q.foreground > 0 && fg_pool.empty()) {
    throw std::invalid_argument("sample_positions: foreground quota " + std::to_string(q.foreground) +
                                " but the prior has no foreground pixels");
  }
  if (q.background > 0 && bg_pool.empty()) {
    throw std::invalid_argument("sample_positions: background quota " + std::to_string(q.background) +
                                " but the prior has no background pixels");
  }
  std::vector<std::size_t> flat;
  flat.reserve(strategy.n_embed);
  draw(fg_pool, q.foreground, rng, flat);
  draw(bg_pool, q.background, rng, flat);

  const std::size_t plane = prior.shape().plane();
  std::vector<PixelPosition> out;
  out.reserve(flat.size());
  for (std::size_t idx : flat) {
    const std::size_t n = idx / plane;  // single channel: image block == plane
    const std::size_t r = idx % plane;
    out.push_back(PixelPosition{n, r / prior.width(), r % prior.width()});
  }
  return out;
}

template <typename T>
std::vector<EmbeddingSample<T>> gather(const BasicTensor4<T>& embed, const Tensor4& prior,
                                       std::span<const PixelPosition> positions) {
  if (prior.height() != embed.height() || prior.width() != embed.width() || prior.batch() != embed.batch() ||
      prior.channels() != 1) {
    throw ShapeError("gather: prior shape " + to_string(prior.shape()) + " does not match embedding shape " +
                     to_string(embed.shape()));
  }
  std::vector<EmbeddingSample<T>> out;
  out.reserve(positions.size());
  for (const auto& p : positions) {
    if (p.batch >= embed.batch() || p.row >= embed.height() || p.col >= embed.width()) {
      throw std::out_of_range("gather: position (" + std::to_string(p.batch) + ", " + std::to_string(p.row) + ", " +
                              std::to_string(p.col) + ") outside " + to_string(embed.shape()));
    }
    EmbeddingSample<T> s;
    s.position = p;
    s.vector.resize(embed.channels());
    for (std::size_t c = 0; c < embed.channels(); ++c) s.vector[c] = embed(p.row, p.col, c, p.batch);
    s.prior_label = prior(p.row, p.col, 0, p.batch) != 0.0f ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

template <typename T>
Adjacency build_adjacency(std::span<const EmbeddingSample<T>> samples) {
  if (samples.empty()) throw std::invalid_argument("build_adjacency: no samples");
  const std::size_t n = samples.size();
  std::vector<std::uint8_t> bits(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) bits[i * n + j] = samples[i].prior_label == samples[j].prior_label ? 1 : 0;
  }
  return Adjacency(n, std::move(bits));
}

template <typename T>
BasicTensor4<T> mask_gradients(const Shape4& shape, std::span<const PixelPosition> positions,
                               std::span<const std::vector<T>> per_sample_grads) {
  if (positions.size() != per_sample_grads.size()) {
    throw std::invalid_argument("mask_gradients: " + std::to_string(positions.size()) + " positions but " +
                                std::to_string(per_sample_grads.size()) + " gradients");
  }
  BasicTensor4<T> out(shape);
  for (std::size_t s = 0; s < positions.size(); ++s) {
    const auto& p = positions[s];
    const auto& g = per_sample_grads[s];
    if (g.size() != shape.channels) {
      throw ShapeError("mask_gradients: gradient " + std::to_string(s) + " has length " + std::to_string(g.size()) +
                       ", expected " + std::to_string(shape.channels));
    }
    if (p.batch >= shape.batch || p.row >= shape.height || p.col >= shape.width) {
      throw std::out_of_range("mask_gradients: position outside " + to_string(shape));
    }
    for (std::size_t c = 0; c < shape.channels; ++c) out(p.row, p.col, c, p.batch) += g[c];
  }
  return out;
}

double js_divergence_histograms(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw std::invalid_argument("js_divergence: histogram length mismatch");
  double sp = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw std::invalid_argument("js_divergence: negative histogram mass");
    sp += p[i];
    sq += q[i];
  }
  if (!(sp > 0.0) || !(sq > 0.0)) throw std::invalid_argument("js_divergence: empty histogram");
  double js = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double a = p[i] / sp;
    const double b = q[i] / sq;
    const double m = 0.5 * (a + b);
    if (a > 0.0) js += 0.5 * a * std::log2(a / m);
    if (b > 0.0) js += 0.5 * b * std::log2(b / m);
  }
  return std::clamp(js, 0.0, 1.0);
}

double js_divergence(std::span<const std::vector<float>> sampled, std::span<const std::vector<float>> population,
                     std::size_t bins) {
  if (bins < 2) throw std::invalid_argument("js_divergence: bins must be >= 2");
  if (population.empty()) throw std::invalid_argument("js_divergence: empty population");
  if (sampled.empty()) throw std::invalid_argument("js_divergence: empty sampled set");
  const std::size_t dim = population.front().size();
  if (dim == 0) throw std::invalid_argument("js_divergence: zero-length vectors");
  for (const auto* set : {&sampled, &population}) {
    for (const auto& v : *set) {
      if (v.size() != dim) throw std::invalid_argument("js_divergence: vectors differ in length");
    }
  }
  double total = 0.0;
  std::vector<double> hp(bins), hq(bins);
  for (std::size_t c = 0; c < dim; ++c) {
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (const auto& v : population) {
      lo = std::min(lo, v[c]);
      hi = std::max(hi, v[c]);
    }
    const double width = static_cast<double>(hi) - static_cast<double>(lo);
    auto bin_of = [&](float x) -> std::size_t {
      if (!(width > 0.0)) return 0;
      const double t = (static_cast<double>(x) - lo) / width * static_cast<double>(bins);
      if (t <= 0.0) return 0;
      return std::min(bins - 1, static_cast<std::size_t>(t));
    };
    std::fill(hp.begin(), hp.end(), 0.0);
    std::fill(hq.begin(), hq.end(), 0.0);
    for (const auto& v : sampled) hp[bin_of(v[c])] += 1.0;
    for (const auto& v : population) hq[bin_of(v[c])] += 1.0;
    total += js_divergence_histograms(hp, hq);
  }
  return total / static_cast<double>(dim);
}

std::vector<std::vector<float>> all_embeddings(const Tensor4& embed) {
  std::vector<std::vector<float>> out;
  out.reserve(embed.height() * embed.width() * embed.batch());
  for (std::size_t n = 0; n < embed.batch(); ++n) {
    for (std::size_t r = 0; r < embed.height(); ++r) {
      for (std::size_t col = 0; col < embed.width(); ++col) {
        std::vector<float> v(embed.channels());
        for (std::size_t c = 0; c < embed.channels(); ++c) v[c] = embed(r, col, c, n);
        out.push_back(std::move(v));
      }
    }
  }
  return out;
}

#define RFE_INSTANTIATE_SAMPLER(T)                                                                        \
  template std::vector<EmbeddingSample<T>> gather(const BasicTensor4<T>&, const Tensor4&,                 \
                                                  std::span<const PixelPosition>);                        \
  template Adjacency build_adjacency(std::span<const EmbeddingSample<T>>);                                \
  template BasicTensor4<T> mask_gradients(const Shape4&, std::span<const PixelPosition>,                  \
                                          std::span<const std::vector<T>>);

RFE_INSTANTIATE_SAMPLER(float)
RFE_INSTANTIATE_SAMPLER(double)

}  // namespace rfe::sampler
