#include <cstring>
#include <random>
#include <sstream>

#include "doctest.h"
#include "rfe/tensor.hpp"
#include "test_support.hpp"

using namespace rfe;

TEST_CASE("tensor layout follows h, w, c, n nesting") {
  Tensor4 t(2, 3, 4, 5);
  CHECK(t.size() == 2 * 3 * 4 * 5);
  std::size_t flat = 0;
  for (std::size_t n = 0; n < 5; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t w = 0; w < 3; ++w) CHECK(t.index(h, w, c, n) == flat++);
  t(1, 2, 3, 4) = 7.0f;
  CHECK(t[t.size() - 1] == 7.0f);
  CHECK(t.plane(3, 4).back() == 7.0f);
  CHECK(t.image(4).size() == 24);
}

TEST_CASE("zero dimensions and mismatched data are rejected") {
  CHECK_THROWS_AS(Tensor4(0, 1, 1, 1), ShapeError);
  CHECK_THROWS_AS(Tensor4(Shape4{2, 2, 1, 1}, std::vector<float>(3)), ShapeError);
}

TEST_CASE("require_same_shape names both shapes") {
  try {
    require_same_shape(Shape4{1, 2, 3, 4}, Shape4{4, 3, 2, 1}, "op");
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(to_string(Shape4{1, 2, 3, 4})) != std::string::npos);
    CHECK(msg.find(to_string(Shape4{4, 3, 2, 1})) != std::string::npos);
  }
}

TEST_CASE("slice and concat along batch are inverse") {
  std::mt19937_64 rng(3);
  const auto t = testing::random_tensor<float>({4, 5, 2, 6}, rng);
  std::vector<Tensor4> parts{t.slice_batch(0, 2), t.slice_batch(2, 3), t.slice_batch(5, 1)};
  CHECK(concat_batch<float>(parts) == t);
  CHECK_THROWS(t.slice_batch(5, 2));
}

TEST_CASE("T4F round trip is bit exact") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    std::uniform_int_distribution<std::size_t> d(1, 7);
    auto t = testing::random_tensor<float>({d(rng), d(rng), d(rng), d(rng)}, rng, -1e6, 1e6);
    t[0] = -0.0f;
    std::stringstream ss;
    write_t4f(ss, t);
    CHECK(ss.str().size() == 8 + 16 + 4 * t.size());
    const auto back = read_t4f(ss);
    CHECK(testing::bit_equal(back, t));
  }
}

TEST_CASE("T4F header bytes are little endian") {
  Tensor4 t(Shape4{2, 3, 1, 1}, std::vector<float>{1, 2, 3, 4, 5, 6});
  std::stringstream ss;
  write_t4f(ss, t);
  const std::string s = ss.str();
  CHECK(std::memcmp(s.data(), "T4F\0v001", 8) == 0);
  CHECK(static_cast<unsigned char>(s[8]) == 2);
  CHECK(static_cast<unsigned char>(s[12]) == 3);
  CHECK(static_cast<unsigned char>(s[16]) == 1);
  CHECK(static_cast<unsigned char>(s[20]) == 1);
  // 1.0f = 0x3f800000
  CHECK(static_cast<unsigned char>(s[24 + 3]) == 0x3f);
  CHECK(static_cast<unsigned char>(s[24 + 2]) == 0x80);
}

TEST_CASE("T4F rejects bad magic and truncation with byte offsets") {
  Tensor4 t(3, 3, 2, 1, 1.5f);
  std::stringstream ss;
  write_t4f(ss, t);
  const std::string full = ss.str();

  std::string bad = full;
  bad[1] = 'X';
  std::istringstream in_bad(bad);
  CHECK_THROWS_WITH_AS(read_t4f(in_bad), doctest::Contains("offset 0"), FormatError);

  std::istringstream in_hdr(full.substr(0, 13));
  CHECK_THROWS_AS(read_t4f(in_hdr), FormatError);

  std::istringstream in_data(full.substr(0, full.size() - 3));
  CHECK_THROWS_WITH_AS(read_t4f(in_data), doctest::Contains("offset"), FormatError);

  std::string zero_dim = full;
  std::memset(zero_dim.data() + 8, 0, 4);
  std::istringstream in_zero(zero_dim);
  CHECK_THROWS_AS(read_t4f(in_zero), FormatError);
}

TEST_CASE("all_finite detects NaN and Inf") {
  Tensor4 t(2, 2, 1, 1);
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<float>::infinity();
  CHECK_FALSE(t.all_finite());
  t[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
}
