#include "rfe/autodiff/ops.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "rfe/simd/kernels.hpp"

namespace rfe::ad {
namespace {

struct ConvGeometry {
  std::size_t height, width, in_channels, kh, kw, pad, stride, out_h, out_w;
  std::size_t k() const { return in_channels * kh * kw; }
  std::size_t p() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry conv_geometry(const BasicTensor4<T>& x, const BasicTensor4<T>& w, const BasicTensor4<T>& b,
                           std::size_t pad, std::size_t stride) {
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (w.channels() != x.channels()) {
    throw ShapeError("conv2d: weight shape " + to_string(w.shape()) + " expects " +
                     std::to_string(w.channels()) + " input channels but input shape is " +
                     to_string(x.shape()));
  }
  if (b.size() != w.batch() || b.channels() != w.batch()) {
    throw ShapeError("conv2d: bias shape " + to_string(b.shape()) + " does not match weight shape " +
                     to_string(w.shape()));
  }
  if (x.height() + 2 * pad < w.height() || x.width() + 2 * pad < w.width()) {
    throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  }
  ConvGeometry geo{x.height(), x.width(), x.channels(), w.height(), w.width(), pad, stride, 0, 0};
  geo.out_h = (x.height() + 2 * pad - w.height()) / stride + 1;
  geo.out_w = (x.width() + 2 * pad - w.width()) / stride + 1;
  return geo;
}

// Stride-1 output columns [lo, hi) whose input column ox + dx - pad is inside the image.
inline std::pair<std::size_t, std::size_t> valid_range(const ConvGeometry& geo, std::size_t dx) {
  const std::size_t lo = geo.pad > dx ? geo.pad - dx : 0;
  const std::size_t hi = std::min(geo.out_w, geo.width + geo.pad - dx);
  return {std::min(lo, hi), hi};
}

// col is (Cin*kh*kw) x (out_h*out_w), row index (ci*kh + dy)*kw + dx.
template <typename T>
void im2col(const T* x, const ConvGeometry& geo, T* col) {
  const auto H = static_cast<std::ptrdiff_t>(geo.height);
  const auto W = static_cast<std::ptrdiff_t>(geo.width);
  const std::size_t P = geo.p();
  for (std::size_t ci = 0; ci < geo.in_channels; ++ci) {
    const T* plane = x + ci * geo.height * geo.width;
    for (std::size_t dy = 0; dy < geo.kh; ++dy) {
      for (std::size_t dx = 0; dx < geo.kw; ++dx) {
        T* row = col + ((ci * geo.kh + dy) * geo.kw + dx) * P;
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + dy) - static_cast<std::ptrdiff_t>(geo.pad);
          T* out = row + oy * geo.out_w;
          if (iy < 0 || iy >= H) {
            std::fill(out, out + geo.out_w, T(0));
            continue;
          }
          const T* src = plane + iy * W;
          if (geo.stride == 1) {
            const auto [lo, hi] = valid_range(geo, dx);
            std::fill(out, out + lo, T(0));
            std::copy(src + lo + dx - geo.pad, src + hi + dx - geo.pad, out + lo);
            std::fill(out + hi, out + geo.out_w, T(0));
            continue;
          }
          for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
            const auto ix =
                static_cast<std::ptrdiff_t>(ox * geo.stride + dx) - static_cast<std::ptrdiff_t>(geo.pad);
            out[ox] = (ix >= 0 && ix < W) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& geo, T* dx_out) {
  const auto H = static_cast<std::ptrdiff_t>(geo.height);
  const auto W = static_cast<std::ptrdiff_t>(geo.width);
  const std::size_t P = geo.p();
  for (std::size_t ci = 0; ci < geo.in_channels; ++ci) {
    T* plane = dx_out + ci * geo.height * geo.width;
    for (std::size_t dy = 0; dy < geo.kh; ++dy) {
      for (std::size_t dx = 0; dx < geo.kw; ++dx) {
        const T* row = col + ((ci * geo.kh + dy) * geo.kw + dx) * P;
        for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + dy) - static_cast<std::ptrdiff_t>(geo.pad);
          if (iy < 0 || iy >= H) continue;
          const T* in = row + oy * geo.out_w;
          T* dst = plane + iy * W;
          if (geo.stride == 1) {
            const auto [lo, hi] = valid_range(geo, dx);
            T* d = dst + (lo + dx - geo.pad);
            const T* s = in + lo;
            for (std::size_t i = 0; i < hi - lo; ++i) d[i] += s[i];
            continue;
          }
          for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
            const auto ix =
                static_cast<std::ptrdiff_t>(ox * geo.stride + dx) - static_cast<std::ptrdiff_t>(geo.pad);
            if (ix >= 0 && ix < W) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor4<T> conv_forward_impl(const BasicTensor4<T>& x, const BasicTensor4<T>& w, const BasicTensor4<T>& b,
                                  const ConvGeometry& geo) {
  const std::size_t cout = w.batch();
  const std::size_t K = geo.k();
  const std::size_t P = geo.p();
  BasicTensor4<T> out(geo.out_h, geo.out_w, cout, x.batch());
  std::vector<T> col(K * P);
  for (std::size_t n = 0; n < x.batch(); ++n) {
    im2col(x.image(n).data(), geo, col.data());
    T* dst = out.image(n).data();
    for (std::size_t co = 0; co < cout; ++co) std::fill(dst + co * P, dst + (co + 1) * P, b[co]);
    simd::gemm_nn(cout, P, K, w.data().data(), K, col.data(), P, dst, P);
  }
  return out;
}

void require_scalar_like(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace

template <typename T>
T sigmoid_value(T x) {
  if (x >= T(0)) {
    return T(1) / (T(1) + std::exp(-x));
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& input, const BasicTensor4<T>& weights,
                               const BasicTensor4<T>& bias, std::size_t pad, std::size_t stride) {
  return conv_forward_impl(input, weights, bias, conv_geometry(input, weights, bias, pad, stride));
}

template <typename T>
NodeId conv2d(Graph<T>& g, NodeId input, NodeId weights, NodeId bias, std::size_t pad, std::size_t stride) {
  const auto& x = g.value(input);
  const auto& w = g.value(weights);
  const auto& b = g.value(bias);
  const ConvGeometry geo = conv_geometry(x, w, b, pad, stride);
  auto out = conv_forward_impl(x, w, b, geo);
  return g.push(OpKind::Conv2d, {input, weights, bias}, std::move(out),
                [input, weights, bias, geo](Graph<T>& gr, NodeId self) {
                  const auto& gout = *gr.grad(self);
                  const auto& xv = gr.value(input);
                  const auto& wv = gr.value(weights);
                  const std::size_t cout = wv.batch();
                  const std::size_t K = geo.k();
                  const std::size_t P = geo.p();
                  const bool need_w = gr.requires_grad(weights);
                  const bool need_b = gr.requires_grad(bias);
                  const bool need_x = gr.requires_grad(input);
                  std::vector<T> col;
                  if (need_w) col.resize(K * P);
                  std::vector<T> dcol;
                  if (need_x) dcol.resize(K * P);
                  for (std::size_t n = 0; n < xv.batch(); ++n) {
                    const T* go = gout.image(n).data();
                    if (need_w) {
                      im2col(xv.image(n).data(), geo, col.data());
                      auto& dw = gr.grad_accumulator(weights);
                      simd::gemm_nt(cout, K, P, go, P, col.data(), P, dw.data().data(), K);
                    }
                    if (need_b) {
                      auto& db = gr.grad_accumulator(bias);
                      for (std::size_t co = 0; co < cout; ++co) {
                        T s = T(0);
                        for (std::size_t p = 0; p < P; ++p) s += go[co * P + p];
                        db[co] += s;
                      }
                    }
                    if (need_x) {
                      std::fill(dcol.begin(), dcol.end(), T(0));
                      simd::gemm_tn(K, P, cout, wv.data().data(), K, go, P, dcol.data(), P);
                      col2im_add(dcol.data(), geo, gr.grad_accumulator(input).image(n).data());
                    }
                  }
                });
}

template <typename T>
NodeId relu(Graph<T>& g, NodeId x) {
  const auto& xv = g.value(x);
  BasicTensor4<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  return g.push(OpKind::Relu, {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    const auto& y = gr.value(self);
    auto& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (y[i] > T(0)) gx[i] += go[i];
    }
  });
}

template <typename T>
NodeId sigmoid(Graph<T>& g, NodeId x) {
  const auto& xv = g.value(x);
  BasicTensor4<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_value(xv[i]);
  return g.push(OpKind::Sigmoid, {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    const auto& y = gr.value(self);
    auto& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
NodeId maxpool2(Graph<T>& g, NodeId x) {
  const auto& xv = g.value(x);
  const std::size_t oh = xv.height() / 2;
  const std::size_t ow = xv.width() / 2;
  require_scalar_like(oh > 0 && ow > 0, "maxpool2: input " + to_string(xv.shape()) + " smaller than 2x2");
  BasicTensor4<T> out(oh, ow, xv.channels(), xv.batch());
  std::vector<std::uint32_t> argmax(out.size());
  for (std::size_t n = 0; n < xv.batch(); ++n) {
    for (std::size_t c = 0; c < xv.channels(); ++c) {
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          std::size_t best = xv.index(2 * y, 2 * xx, c, n);
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t idx = xv.index(2 * y + dy, 2 * xx + dx, c, n);
              if (xv[idx] > xv[best]) best = idx;  // strict: first max in scan order wins
            }
          }
          const std::size_t o = out.index(y, xx, c, n);
          out[o] = xv[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
      }
    }
  }
  return g.push(OpKind::MaxPool2, {x}, std::move(out), [x, argmax = std::move(argmax)](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    auto& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[argmax[i]] += go[i];
  });
}

template <typename T>
NodeId upsample2(Graph<T>& g, NodeId x) {
  const auto& xv = g.value(x);
  BasicTensor4<T> out(xv.height() * 2, xv.width() * 2, xv.channels(), xv.batch());
  for (std::size_t n = 0; n < xv.batch(); ++n) {
    for (std::size_t c = 0; c < xv.channels(); ++c) {
      for (std::size_t y = 0; y < out.height(); ++y) {
        for (std::size_t xx = 0; xx < out.width(); ++xx) out(y, xx, c, n) = xv(y / 2, xx / 2, c, n);
      }
    }
  }
  return g.push(OpKind::Upsample2, {x}, std::move(out), [x](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    auto& gx = gr.grad_accumulator(x);
    for (std::size_t n = 0; n < go.batch(); ++n) {
      for (std::size_t c = 0; c < go.channels(); ++c) {
        for (std::size_t y = 0; y < go.height(); ++y) {
          for (std::size_t xx = 0; xx < go.width(); ++xx) gx(y / 2, xx / 2, c, n) += go(y, xx, c, n);
        }
      }
    }
  });
}

template <typename T>
NodeId concat_channels(Graph<T>& g, NodeId a, NodeId b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.height() != bv.height() || av.width() != bv.width() || av.batch() != bv.batch()) {
    throw ShapeError("concat_channels: shape mismatch " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  }
  BasicTensor4<T> out(av.height(), av.width(), av.channels() + bv.channels(), av.batch());
  for (std::size_t n = 0; n < av.batch(); ++n) {
    auto dst = out.image(n);
    auto sa = av.image(n);
    auto sb = bv.image(n);
    std::copy(sa.begin(), sa.end(), dst.begin());
    std::copy(sb.begin(), sb.end(), dst.begin() + static_cast<std::ptrdiff_t>(sa.size()));
  }
  return g.push(OpKind::ConcatChannels, {a, b}, std::move(out), [a, b](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    const bool need_a = gr.requires_grad(a);
    const bool need_b = gr.requires_grad(b);
    const std::size_t na = gr.value(a).shape().image();
    const std::size_t nb = gr.value(b).shape().image();
    for (std::size_t n = 0; n < go.batch(); ++n) {
      auto src = go.image(n);
      if (need_a) {
        auto dst = gr.grad_accumulator(a).image(n);
        for (std::size_t i = 0; i < na; ++i) dst[i] += src[i];
      }
      if (need_b) {
        auto dst = gr.grad_accumulator(b).image(n);
        for (std::size_t i = 0; i < nb; ++i) dst[i] += src[na + i];
      }
    }
  });
}

template <typename T>
NodeId slice_batch(Graph<T>& g, NodeId x, std::size_t first, std::size_t count) {
  auto out = g.value(x).slice_batch(first, count);
  return g.push(OpKind::SliceBatch, {x}, std::move(out), [x, first, count](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    auto& gx = gr.grad_accumulator(x);
    const std::size_t offset = first * gx.shape().image();
    for (std::size_t i = 0; i < count * gx.shape().image(); ++i) gx[offset + i] += go[i];
  });
}

template <typename T>
NodeId mul(Graph<T>& g, NodeId a, NodeId b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  require_same_shape(av.shape(), bv.shape(), "mul");
  BasicTensor4<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.push(OpKind::Mul, {a, b}, std::move(out), [a, b](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    if (gr.requires_grad(a)) {
      const auto& bv2 = gr.value(b);
      auto& ga = gr.grad_accumulator(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv2[i];
    }
    if (gr.requires_grad(b)) {
      const auto& av2 = gr.value(a);
      auto& gb = gr.grad_accumulator(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av2[i];
    }
  });
}

template <typename T>
NodeId scale(Graph<T>& g, NodeId x, T factor) {
  const auto& xv = g.value(x);
  BasicTensor4<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  return g.push(OpKind::Scale, {x}, std::move(out), [x, factor](Graph<T>& gr, NodeId self) {
    const auto& go = *gr.grad(self);
    auto& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
}

template <typename T>
NodeId sum(Graph<T>& g, NodeId x) {
  const auto& xv = g.value(x);
  T s = T(0);
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  return g.push(OpKind::Sum, {x}, BasicTensor4<T>(1, 1, 1, 1, s), [x](Graph<T>& gr, NodeId self) {
    const T go = (*gr.grad(self))[0];
    auto& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  });
}

template <typename T>
NodeId mean(Graph<T>& g, NodeId x) {
  const auto& xv = g.value(x);
  T s = T(0);
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i];
  const T n = static_cast<T>(xv.size());
  return g.push(OpKind::Mean, {x}, BasicTensor4<T>(1, 1, 1, 1, s / n), [x, n](Graph<T>& gr, NodeId self) {
    const T go = (*gr.grad(self))[0] / n;
    auto& gx = gr.grad_accumulator(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go;
  });
}

#define RFE_INSTANTIATE_OPS(T)                                                                     \
  template T sigmoid_value<T>(T);                                                                  \
  template BasicTensor4<T> conv2d_forward(const BasicTensor4<T>&, const BasicTensor4<T>&,          \
                                          const BasicTensor4<T>&, std::size_t, std::size_t);       \
  template NodeId conv2d(Graph<T>&, NodeId, NodeId, NodeId, std::size_t, std::size_t);             \
  template NodeId relu(Graph<T>&, NodeId);                                                         \
  template NodeId sigmoid(Graph<T>&, NodeId);                                                      \
  template NodeId maxpool2(Graph<T>&, NodeId);                                                     \
  template NodeId upsample2(Graph<T>&, NodeId);                                                    \
  template NodeId concat_channels(Graph<T>&, NodeId, NodeId);                                      \
  template NodeId slice_batch(Graph<T>&, NodeId, std::size_t, std::size_t);                        \
  template NodeId mul(Graph<T>&, NodeId, NodeId);                                                  \
  template NodeId scale(Graph<T>&, NodeId, T);                                                     \
  template NodeId sum(Graph<T>&, NodeId);                                                          \
  template NodeId mean(Graph<T>&, NodeId);

RFE_INSTANTIATE_OPS(float)
RFE_INSTANTIATE_OPS(double)

}  // namespace rfe::ad
