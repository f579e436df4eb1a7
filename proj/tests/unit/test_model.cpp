#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "rfe/autodiff/ops.hpp"
#include "rfe/model/unet.hpp"
#include "test_support.hpp"

using namespace rfe;
using namespace rfe::model;
using rfe::testing::random_tensor;

namespace {

// Layer-by-layer arithmetic for the default layout, written out by hand.
std::size_t hand_count_default() {
  auto conv = [](std::size_t k, std::size_t in, std::size_t out) { return k * k * in * out + out; };
  return conv(3, 3, 8) + conv(3, 8, 8)          // enc0
         + conv(3, 8, 16) + conv(3, 16, 16)     // enc1
         + conv(3, 16, 32) + conv(3, 32, 32)    // bottleneck
         + conv(3, 32, 16) + conv(3, 32, 16) + conv(3, 16, 16)  // dec1: up, conv1 on concat, conv2
         + conv(3, 16, 8) + conv(3, 16, 8) + conv(3, 8, 8)      // dec0
         + conv(3, 8, 16)                       // embed
         + conv(1, 16, 1);                      // head
}

}  // namespace

TEST_CASE("default parameter count equals the hand-computed layer sum") {
  const Model m{ModelConfig{}};
  CHECK(hand_count_default() == 33841);
  CHECK(m.parameters().scalar_count() == hand_count_default());
  CHECK(expected_parameter_count(ModelConfig{}) == hand_count_default());
}

TEST_CASE("forward shape contracts") {
  std::mt19937_64 rng(1);
  const Model m{ModelConfig{}};
  const auto r = forward(m, random_tensor<float>({32, 32, 3, 12}, rng));
  CHECK(r.logits.shape() == Shape4{32, 32, 1, 12});
  CHECK(r.embed.shape() == Shape4{32, 32, 16, 12});

  ModelConfig c1;
  c1.depth = 1;
  const Model m1{c1};
  CHECK(forward(m1, random_tensor<float>({8, 8, 3, 2}, rng)).logits.shape() == Shape4{8, 8, 1, 2});
}

TEST_CASE("output shape equals input shape for random valid sizes") {
  std::mt19937_64 rng(2);
  for (std::size_t depth = 1; depth <= 3; ++depth) {
    ModelConfig c;
    c.depth = depth;
    c.base_channels = 2;
    c.embed_channels = 3;
    const Model m{c};
    for (int t = 0; t < 5; ++t) {
      const std::size_t d = c.spatial_divisor();
      const std::size_t h = d * std::uniform_int_distribution<std::size_t>(1, 4)(rng);
      const std::size_t w = d * std::uniform_int_distribution<std::size_t>(1, 4)(rng);
      const auto r = forward(m, random_tensor<float>({h, w, 3, 1}, rng));
      CHECK(r.logits.shape() == Shape4{h, w, 1, 1});
      CHECK(r.embed.shape() == Shape4{h, w, 3, 1});
    }
  }
}

TEST_CASE("indivisible input and wrong channels are rejected with the divisor") {
  const Model m{ModelConfig{}};
  CHECK_THROWS_WITH_AS(forward(m, Tensor4(30, 32, 3, 1)), doctest::Contains("4"), ShapeError);
  CHECK_THROWS_AS(forward(m, Tensor4(32, 32, 2, 1)), ShapeError);
}

TEST_CASE("invalid configs are rejected") {
  ModelConfig c;
  c.depth = 0;
  CHECK_THROWS_AS(Model{c}, std::invalid_argument);
  c = {};
  c.base_channels = 0;
  CHECK_THROWS_AS(Model{c}, std::invalid_argument);
  c = {};
  c.input_channels = 0;
  CHECK_THROWS_AS(Model{c}, std::invalid_argument);
}

TEST_CASE("zero-weight model yields the head bias everywhere") {
  Model m{ModelConfig{}};
  auto& p = m.parameters();
  for (ad::ParamId i = 0; i < p.size(); ++i) p.value(i).fill(0.0f);
  p.value(m.layer("head").bias)[0] = 0.75f;
  std::mt19937_64 rng(3);
  const auto x = random_tensor<float>({16, 16, 3, 2}, rng);
  const auto r = forward(m, x);
  for (float v : r.logits.data()) CHECK(v == 0.75f);
  const auto probs = predict(m, x);
  for (float v : probs.data()) CHECK(v == ad::sigmoid_value(0.75f));
}

TEST_CASE("predict is the sigmoid of the logits, 0.5 at zero logits, monotone") {
  std::mt19937_64 rng(4);
  const Model m{ModelConfig{}};
  const auto x = random_tensor<float>({16, 16, 3, 2}, rng);
  const auto logits = forward(m, x).logits;
  const auto probs = predict(m, x);
  for (std::size_t i = 0; i < probs.size(); ++i) CHECK(probs[i] == ad::sigmoid_value(logits[i]));
  CHECK(ad::sigmoid_value(0.0f) == 0.5f);
  float prev = 0.0f;
  for (float z = -20.0f; z <= 20.0f; z += 0.25f) {
    const float s = ad::sigmoid_value(z);
    CHECK(s >= prev);
    CHECK(s >= 0.0f);
    CHECK(s <= 1.0f);
    prev = s;
  }
}

TEST_CASE("same seed gives bit-identical models and outputs") {
  std::mt19937_64 rng(5);
  const auto x = random_tensor<float>({32, 32, 3, 3}, rng);
  const Model a{ModelConfig{}}, b{ModelConfig{}};
  CHECK(testing::bit_equal(a.parameters(), b.parameters()));
  const auto ra = forward(a, x), rb = forward(b, x);
  CHECK(testing::bit_equal(ra.logits, rb.logits));
  CHECK(testing::bit_equal(ra.embed, rb.embed));
  ModelConfig other;
  other.seed = 2;
  CHECK_FALSE(Model{other} == a);
}

TEST_CASE("random models give finite logits and a non-negative tap over 100 draws") {
  std::mt19937_64 rng(6);
  ModelConfig c;
  for (int draw = 0; draw < 100; ++draw) {
    c.seed = rng();
    const Model m{c};
    const auto r = forward(m, random_tensor<float>({8, 8, 3, 1}, rng, -3, 3));
    CHECK(r.logits.all_finite());
    CHECK(r.embed.all_finite());
    bool nonneg = true;
    for (float v : r.embed.data()) nonneg = nonneg && v >= 0.0f;
    CHECK(nonneg);
  }
}

TEST_CASE("He initialisation: zero biases and weight spread near sqrt(2 / fan_in)") {
  const Model m{ModelConfig{}};
  const auto& spec = m.layer("bottleneck.conv2");
  const auto& w = m.parameters().value(spec.weight);
  double ss = 0;
  for (float v : w.data()) ss += double(v) * v;
  const double sd = std::sqrt(ss / w.size());
  const double want = std::sqrt(2.0 / (9.0 * spec.in_channels));
  CHECK(sd == doctest::Approx(want).epsilon(0.05));
  for (float v : m.parameters().value(spec.bias).data()) CHECK(v == 0.0f);
}

TEST_CASE("the tap is the second-last convolution") {
  const Model m{ModelConfig{}};
  const auto& layers = m.layers();
  REQUIRE(layers.size() >= 2);
  CHECK(layers[layers.size() - 2].name == "embed");
  CHECK(layers.back().name == "head");
  CHECK(layers.back().kernel == 1);
  CHECK(layers.back().out_channels == 1);
}

TEST_CASE("checkpoint round trip is bit exact") {
  ModelConfig c;
  c.seed = 99;
  const Model m{c};
  std::stringstream ss;
  save_checkpoint(ss, m);
  const Model back = load_checkpoint(ss);
  CHECK(back.config() == m.config());
  CHECK(testing::bit_equal(back.parameters(), m.parameters()));
}

TEST_CASE("malformed checkpoints are rejected") {
  const Model m{ModelConfig{}};
  std::stringstream ss;
  save_checkpoint(ss, m);
  const std::string full = ss.str();
  std::istringstream truncated(full.substr(0, full.size() - 100));
  CHECK_THROWS(load_checkpoint(truncated));
  std::istringstream bad_tag("NOT-A-CHECKPOINT 1\n");
  CHECK_THROWS(load_checkpoint(bad_tag));

  ad::ParameterSet<float> wrong;
  wrong.add("enc0.conv1.weight", Tensor4(3, 3, 3, 8));
  CHECK_THROWS(Model(ModelConfig{}, wrong));
}
