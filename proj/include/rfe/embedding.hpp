#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace rfe {

/// Pixel site inside a batch of feature maps.
struct PixelPosition {
  std::size_t batch = 0;
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const PixelPosition&, const PixelPosition&) = default;
};

/// One pixel's feature vector taken along the channel axis.
template <typename T>
struct EmbeddingSample {
  PixelPosition position;
  std::vector<T> vector;
  std::uint8_t prior_label = 0;
};

/// Symmetric binary similarity matrix over sampled embeddings with a unit
/// diagonal. a(i, j) = 1 marks a "similar" pair.
class Adjacency {
 public:
  Adjacency() = default;
  /// Builds from a dense row-major n x n 0/1 matrix; throws if it is not
  /// square, binary, symmetric, or if the diagonal is not all ones.
  Adjacency(std::size_t n, std::vector<std::uint8_t> bits);

  std::size_t size() const { return n_; }
  bool operator()(std::size_t i, std::size_t j) const { return bits_[i * n_ + j] != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const Adjacency&, const Adjacency&) = default;

 private:
  std::size_t n_ = 0;
  std::vector<std::uint8_t> bits_;
};

}  // namespace rfe
