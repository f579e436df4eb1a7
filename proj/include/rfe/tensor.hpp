#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfe {

/// Shape of a rank-4 tensor: height x width x channels x batch.
struct Shape4 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t batch = 0;

  std::size_t plane() const { return height * width; }
  std::size_t image() const { return height * width * channels; }
  std::size_t size() const { return height * width * channels * batch; }

  friend bool operator==(const Shape4&, const Shape4&) = default;
};

std::string to_string(const Shape4& s);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws ShapeError naming both shapes when they differ.
void require_same_shape(const Shape4& a, const Shape4& b, const char* what);

/// Dense H x W x C x N array.
///
/// Layout: row-major within each image plane, planes ordered by channel,
/// images ordered by batch index. Element (h, w, c, n) lives at
/// ((n * C + c) * H + h) * W + w.
template <typename T>
class BasicTensor4 {
 public:
  using value_type = T;

  BasicTensor4() = default;
  explicit BasicTensor4(Shape4 shape, T fill = T(0))
      : shape_(shape), data_(shape.size(), fill) {
    if (shape.height == 0 || shape.width == 0 || shape.channels == 0 || shape.batch == 0) {
      throw ShapeError("tensor dimensions must be positive, got " + to_string(shape));
    }
  }
  BasicTensor4(std::size_t h, std::size_t w, std::size_t c, std::size_t n, T fill = T(0))
      : BasicTensor4(Shape4{h, w, c, n}, fill) {}
  BasicTensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t height() const { return shape_.height; }
  std::size_t width() const { return shape_.width; }
  std::size_t channels() const { return shape_.channels; }
  std::size_t batch() const { return shape_.batch; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t h, std::size_t w, std::size_t c, std::size_t n) const {
    return ((n * shape_.channels + c) * shape_.height + h) * shape_.width + w;
  }
  T& operator()(std::size_t h, std::size_t w, std::size_t c, std::size_t n) {
    return data_[index(h, w, c, n)];
  }
  T operator()(std::size_t h, std::size_t w, std::size_t c, std::size_t n) const {
    return data_[index(h, w, c, n)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  const std::vector<T>& values() const { return data_; }

  /// Contiguous H*W plane for channel c of image n.
  std::span<T> plane(std::size_t c, std::size_t n) {
    return std::span<T>(data_).subspan(index(0, 0, c, n), shape_.plane());
  }
  std::span<const T> plane(std::size_t c, std::size_t n) const {
    return std::span<const T>(data_).subspan(index(0, 0, c, n), shape_.plane());
  }
  /// Contiguous H*W*C block for image n.
  std::span<T> image(std::size_t n) {
    return std::span<T>(data_).subspan(n * shape_.image(), shape_.image());
  }
  std::span<const T> image(std::size_t n) const {
    return std::span<const T>(data_).subspan(n * shape_.image(), shape_.image());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Copies images [first, first + count) into a new tensor.
  BasicTensor4 slice_batch(std::size_t first, std::size_t count) const;

  template <typename U>
  BasicTensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor4<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  friend bool operator==(const BasicTensor4&, const BasicTensor4&) = default;

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

using Tensor4 = BasicTensor4<float>;
using Tensor4d = BasicTensor4<double>;

/// Stacks tensors along the batch axis; all must share H, W, C.
template <typename T>
BasicTensor4<T> concat_batch(std::span<const BasicTensor4<T>> parts);

// T4F binary format: 8-byte magic "T4F\0v001", four little-endian u32 dims
// (H, W, C, N), then H*W*C*N little-endian IEEE-754 binary32 values.

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_t4f(std::ostream& out, const Tensor4& t);
/// Reads one tensor; `base_offset` only shifts the byte offsets quoted in errors.
Tensor4 read_t4f(std::istream& in, std::uint64_t base_offset = 0);
void save_t4f(const std::string& path, const Tensor4& t);
Tensor4 load_t4f(const std::string& path);

}  // namespace rfe
