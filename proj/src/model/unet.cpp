#include "rfe/model/unet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "rfe/autodiff/ops.hpp"

namespace rfe::model {

void ModelConfig::validate() const {
  if (input_channels < 1) throw std::invalid_argument("model config: input_channels must be >= 1");
  if (depth < 1) throw std::invalid_argument("model config: depth must be >= 1");
  if (depth > 8) throw std::invalid_argument("model config: depth must be <= 8");
  if (base_channels < 1) throw std::invalid_argument("model config: base_channels must be >= 1");
  if (embed_channels < 1) throw std::invalid_argument("model config: embed_channels must be >= 1");
}

namespace {

struct LayerShape {
  std::string name;
  std::size_t kernel, cin, cout;
};

std::vector<LayerShape> layout(const ModelConfig& c) {
  std::vector<LayerShape> out;
  std::size_t in = c.input_channels;
  for (std::size_t l = 0; l < c.depth; ++l) {
    const std::size_t ch = c.base_channels << l;
    const std::string p = "enc" + std::to_string(l);
    out.push_back({p + ".conv1", 3, in, ch});
    out.push_back({p + ".conv2", 3, ch, ch});
    in = ch;
  }
  const std::size_t bottom = c.base_channels << c.depth;
  out.push_back({"bottleneck.conv1", 3, in, bottom});
  out.push_back({"bottleneck.conv2", 3, bottom, bottom});
  in = bottom;
  for (std::size_t l = c.depth; l-- > 0;) {
    const std::size_t ch = c.base_channels << l;
    const std::string p = "dec" + std::to_string(l);
    out.push_back({p + ".up", 3, in, ch});
    out.push_back({p + ".conv1", 3, 2 * ch, ch});
    out.push_back({p + ".conv2", 3, ch, ch});
    in = ch;
  }
  out.push_back({"embed", 3, in, c.embed_channels});
  out.push_back({"head", 1, c.embed_channels, 1});
  return out;
}

}  // namespace

std::size_t expected_parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& l : layout(config)) n += l.kernel * l.kernel * l.cin * l.cout + l.cout;
  return n;
}

template <typename T>
BasicModel<T>::BasicModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  for (const auto& l : layout(config_)) {
    const double fan_in = static_cast<double>(l.kernel * l.kernel * l.cin);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    BasicTensor4<T> w(l.kernel, l.kernel, l.cin, l.cout);
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(normal(rng));
    params_.add(l.name + ".weight", std::move(w));
    params_.add(l.name + ".bias", BasicTensor4<T>(1, 1, l.cout, 1));
  }
  build_layout();
}

template <typename T>
BasicModel<T>::BasicModel(const ModelConfig& config, ad::ParameterSet<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto shapes = layout(config_);
  if (params_.size() != 2 * shapes.size()) {
    throw std::invalid_argument("model: expected " + std::to_string(2 * shapes.size()) + " parameters, got " +
                                std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& l = shapes[i];
    const Shape4 ws{l.kernel, l.kernel, l.cin, l.cout};
    const Shape4 bs{1, 1, l.cout, 1};
    if (params_.name(2 * i) != l.name + ".weight" || params_.name(2 * i + 1) != l.name + ".bias") {
      throw std::invalid_argument("model: parameter " + std::to_string(2 * i) + " is '" + params_.name(2 * i) +
                                  "', expected '" + l.name + ".weight'");
    }
    require_same_shape(params_.value(2 * i).shape(), ws, (l.name + ".weight").c_str());
    require_same_shape(params_.value(2 * i + 1).shape(), bs, (l.name + ".bias").c_str());
  }
  build_layout();
}

template <typename T>
void BasicModel<T>::build_layout() {
  layers_.clear();
  ad::ParamId next = 0;
  for (const auto& l : layout(config_)) {
    layers_.push_back(ConvSpec{l.name, l.kernel, l.cin, l.cout, next, next + 1});
    next += 2;
  }
}

template <typename T>
const ConvSpec& BasicModel<T>::layer(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.name == name) return l;
  }
  throw std::out_of_range("model has no layer '" + name + "'");
}

template <typename T>
void check_input(const BasicModel<T>& model, const BasicTensor4<T>& batch) {
  const auto& c = model.config();
  if (batch.channels() != c.input_channels) {
    throw ShapeError("model expects " + std::to_string(c.input_channels) + " input channels, batch shape is " +
                     to_string(batch.shape()));
  }
  const std::size_t div = c.spatial_divisor();
  if (batch.height() % div != 0 || batch.width() % div != 0) {
    throw ShapeError("input spatial dims " + std::to_string(batch.height()) + "x" + std::to_string(batch.width()) +
                     " must be divisible by " + std::to_string(div) + " (2^depth, depth = " +
                     std::to_string(c.depth) + ")");
  }
}

template <typename T>
ForwardPass<T> forward_graph(const BasicModel<T>& model, const BasicTensor4<T>& batch) {
  check_input(model, batch);
  ForwardPass<T> pass;
  auto& g = pass.graph;
  const auto& params = model.parameters();
  auto conv = [&](ad::NodeId x, const std::string& name) {
    const auto& l = model.layer(name);
    const ad::NodeId w = g.parameter(params, l.weight);
    const ad::NodeId b = g.parameter(params, l.bias);
    return ad::conv2d(g, x, w, b, l.kernel / 2, 1);
  };
  auto conv_relu = [&](ad::NodeId x, const std::string& name) { return ad::relu(g, conv(x, name)); };

  const auto depth = model.config().depth;
  pass.input = g.constant(batch);
  ad::NodeId x = pass.input;
  std::vector<ad::NodeId> skips;
  for (std::size_t l = 0; l < depth; ++l) {
    const std::string p = "enc" + std::to_string(l);
    x = conv_relu(x, p + ".conv1");
    x = conv_relu(x, p + ".conv2");
    skips.push_back(x);
    x = ad::maxpool2(g, x);
  }
  x = conv_relu(x, "bottleneck.conv1");
  x = conv_relu(x, "bottleneck.conv2");
  for (std::size_t l = depth; l-- > 0;) {
    const std::string p = "dec" + std::to_string(l);
    x = conv_relu(ad::upsample2(g, x), p + ".up");
    x = ad::concat_channels(g, x, skips[l]);
    x = conv_relu(x, p + ".conv1");
    x = conv_relu(x, p + ".conv2");
  }
  pass.embed = conv_relu(x, "embed");
  pass.logits = conv(pass.embed, "head");
  return pass;
}

template <typename T>
ForwardResult<T> forward(const BasicModel<T>& model, const BasicTensor4<T>& batch) {
  auto pass = forward_graph(model, batch);
  return ForwardResult<T>{pass.graph.value(pass.logits), pass.graph.value(pass.embed)};
}

template <typename T>
BasicTensor4<T> predict(const BasicModel<T>& model, const BasicTensor4<T>& batch) {
  auto logits = forward(model, batch).logits;
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = ad::sigmoid_value(logits[i]);
  return logits;
}

template class BasicModel<float>;
template class BasicModel<double>;

#define RFE_INSTANTIATE_MODEL(T)                                                       \
  template void check_input(const BasicModel<T>&, const BasicTensor4<T>&);             \
  template ForwardPass<T> forward_graph(const BasicModel<T>&, const BasicTensor4<T>&); \
  template ForwardResult<T> forward(const BasicModel<T>&, const BasicTensor4<T>&);     \
  template BasicTensor4<T> predict(const BasicModel<T>&, const BasicTensor4<T>&);

RFE_INSTANTIATE_MODEL(float)
RFE_INSTANTIATE_MODEL(double)

}  // namespace rfe::model
