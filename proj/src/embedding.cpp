#include "rfe/embedding.hpp"

#include <stdexcept>

namespace rfe {

Adjacency::Adjacency(std::size_t n, std::vector<std::uint8_t> bits) : n_(n), bits_(std::move(bits)) {
  if (bits_.size() != n * n) {
    throw std::invalid_argument("adjacency: expected " + std::to_string(n * n) + " entries for n = " +
                                std::to_string(n) + ", got " + std::to_string(bits_.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (bits_[i * n + i] != 1) {
      throw std::invalid_argument("adjacency: diagonal entry (" + std::to_string(i) + ", " + std::to_string(i) +
                                  ") must be 1");
    }
    for (std::size_t j = 0; j < n; ++j) {
      const auto v = bits_[i * n + j];
      if (v > 1) throw std::invalid_argument("adjacency: entry (" + std::to_string(i) + ", " +
                                             std::to_string(j) + ") is not binary");
      if (v != bits_[j * n + i]) {
        throw std::invalid_argument("adjacency: asymmetric at (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ")");
      }
    }
  }
}

}  // namespace rfe
