#include "rfe/tensor.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace rfe {

std::string to_string(const Shape4& s) {
  return std::to_string(s.height) + "x" + std::to_string(s.width) + "x" +
         std::to_string(s.channels) + "x" + std::to_string(s.batch);
}

void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

template <typename T>
BasicTensor4<T> BasicTensor4<T>::slice_batch(std::size_t first, std::size_t count) const {
  if (count == 0 || first + count > shape_.batch) {
    throw ShapeError("slice_batch [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") out of range for " + to_string(shape_));
  }
  Shape4 s = shape_;
  s.batch = count;
  auto begin = data_.begin() + static_cast<std::ptrdiff_t>(first * shape_.image());
  return BasicTensor4(s, std::vector<T>(begin, begin + static_cast<std::ptrdiff_t>(count * shape_.image())));
}

template <typename T>
bool BasicTensor4<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
BasicTensor4<T> concat_batch(std::span<const BasicTensor4<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no tensors");
  Shape4 s = parts.front().shape();
  s.batch = 0;
  std::vector<T> data;
  for (const auto& p : parts) {
    if (p.height() != s.height || p.width() != s.width || p.channels() != s.channels) {
      throw ShapeError("concat_batch: shape mismatch " + to_string(parts.front().shape()) + " vs " +
                       to_string(p.shape()));
    }
    s.batch += p.batch();
    data.insert(data.end(), p.values().begin(), p.values().end());
  }
  return BasicTensor4<T>(s, std::move(data));
}

template class BasicTensor4<float>;
template class BasicTensor4<double>;
template BasicTensor4<float> concat_batch(std::span<const BasicTensor4<float>>);
template BasicTensor4<double> concat_batch(std::span<const BasicTensor4<double>>);

namespace {

constexpr std::array<char, 8> kMagic = {'T', '4', 'F', '\0', 'v', '0', '0', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
  out.write(b.data(), 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void read_exact(std::istream& in, char* dst, std::size_t n, std::uint64_t offset, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError("T4F: truncated " + std::string(what) + " at byte offset " +
                      std::to_string(offset + static_cast<std::uint64_t>(in.gcount())));
  }
}

}  // namespace

void write_t4f(std::ostream& out, const Tensor4& t) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(t.height()));
  put_u32(out, static_cast<std::uint32_t>(t.width()));
  put_u32(out, static_cast<std::uint32_t>(t.channels()));
  put_u32(out, static_cast<std::uint32_t>(t.batch()));
  std::vector<char> buf(t.size() * 4);
  for (std::size_t i = 0; i < t.size(); ++i) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(t[i]);
    for (int k = 0; k < 4; ++k) buf[i * 4 + k] = static_cast<char>((bits >> (8 * k)) & 0xFFu);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("T4F: write failed");
}

Tensor4 read_t4f(std::istream& in, std::uint64_t base_offset) {
  std::array<char, 8> magic{};
  read_exact(in, magic.data(), magic.size(), base_offset, "magic");
  if (magic != kMagic) {
    throw FormatError("T4F: bad magic at byte offset " + std::to_string(base_offset));
  }
  std::array<unsigned char, 16> dims{};
  read_exact(in, reinterpret_cast<char*>(dims.data()), dims.size(), base_offset + 8, "header");
  Shape4 s{get_u32(&dims[0]), get_u32(&dims[4]), get_u32(&dims[8]), get_u32(&dims[12])};
  if (s.size() == 0) {
    throw FormatError("T4F: zero dimension in header at byte offset " + std::to_string(base_offset + 8));
  }
  std::vector<char> buf(s.size() * 4);
  read_exact(in, buf.data(), buf.size(), base_offset + 24, "payload");
  std::vector<float> data(s.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_u32(reinterpret_cast<const unsigned char*>(&buf[i * 4])));
  }
  return Tensor4(s, std::move(data));
}

void save_t4f(const std::string& path, const Tensor4& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("T4F: cannot open '" + path + "' for writing");
  write_t4f(out, t);
}

Tensor4 load_t4f(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("T4F: cannot open '" + path + "'");
  return read_t4f(in);
}

}  // namespace rfe
