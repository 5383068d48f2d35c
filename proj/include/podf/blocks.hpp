#pragma once

// Network building blocks: gated convolution and its residual block, the
// spatial/channel decoupled dynamic filter (SCDF) with filter normalization
// and its residual block, resampling blocks, and atrous spatial pyramid
// pooling.

#include <array>
#include <string>
#include <vector>

#include "podf/batch_norm.hpp"
#include "podf/conv.hpp"
#include "podf/ops.hpp"
#include "podf/params.hpp"

namespace podf {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kResidualScale = 0.1;
inline constexpr double kFilterNormEps = 1e-6;
inline constexpr std::size_t kDynamicKernel = 3;

enum class Activation { leaky, none };

inline Tensor activate(const Tensor& x, Activation act) {
  return act == Activation::leaky ? leaky_relu(x, kLeakySlope) : x;
}

/// Switches that swap a block's dynamic parts for plain convolutions.
struct BlockOptions {
  bool gated = true;
  bool scdf = true;
};

// ---- layers -----------------------------------------------------------------

/// k x k convolution with "same" padding (or explicit padding) and bias,
/// parameters `<name>.w` / `<name>.b`.
inline Tensor conv_layer(const Scope& scope, std::string_view name, const Tensor& x, std::size_t out_channels,
                         std::size_t k = 3, std::size_t stride = 1, std::size_t dilation = 1,
                         std::ptrdiff_t padding = -1) {
  const std::size_t cin = x.shape().c();
  const ConvSpec spec{cin, out_channels, k, k, stride,
                      padding < 0 ? dilation * (k - 1) / 2 : static_cast<std::size_t>(padding), dilation};
  const Scope s = scope.child(name);
  Tensor w = s.param("w", Shape{out_channels, cin, k, k}, Init::kaiming(cin * k * k));
  Tensor b = s.param("b", Shape{1, out_channels, 1, 1}, Init::zeros());
  return conv2d(x, w, b, spec);
}

// ---- gated convolution --------------------------------------------------------

/// act(conv(x; feat)) * sigmoid(conv(x; gate)).
inline Tensor gated_conv(const Tensor& x, const Tensor& feat_weight, const Tensor& gate_weight, const Tensor& feat_bias,
                         const Tensor& gate_bias, const ConvSpec& spec, Activation act = Activation::leaky) {
  Tensor feature = activate(conv2d(x, feat_weight, feat_bias, spec), act);
  Tensor gate = sigmoid(conv2d(x, gate_weight, gate_bias, spec));
  return mul(feature, gate);
}

inline Tensor gated_conv_layer(const Scope& scope, std::string_view name, const Tensor& x, std::size_t out_channels,
                               Activation act, const BlockOptions& opt) {
  if (!opt.gated) return activate(conv_layer(scope, name, x, out_channels), act);
  const std::size_t cin = x.shape().c();
  const ConvSpec spec{cin, out_channels, 3, 3, 1, 1, 1};
  const Scope s = scope.child(name);
  Tensor fw = s.param("feat.w", Shape{out_channels, cin, 3, 3}, Init::kaiming(cin * 9));
  Tensor fb = s.param("feat.b", Shape{1, out_channels, 1, 1}, Init::zeros());
  Tensor gw = s.param("gate.w", Shape{out_channels, cin, 3, 3}, Init::kaiming(cin * 9));
  Tensor gb = s.param("gate.b", Shape{1, out_channels, 1, 1}, Init::zeros());
  return gated_conv(x, fw, gw, fb, gb, spec, act);
}

/// RB-GC: x + 0.1 * (gconv -> act -> gconv -> act -> gconv)(x).
inline Tensor rb_gc(const Scope& scope, const Tensor& x, const BlockOptions& opt = {}) {
  const std::size_t c = x.shape().c();
  Tensor h = gated_conv_layer(scope, "gc1", x, c, Activation::leaky, opt);
  h = gated_conv_layer(scope, "gc2", h, c, Activation::leaky, opt);
  h = gated_conv_layer(scope, "gc3", h, c, Activation::none, opt);
  return add(x, scale(h, kResidualScale));
}

/// Plain residual block: x + 0.1 * (conv -> act -> conv -> act -> conv)(x).
inline Tensor residual_block(const Scope& scope, const Tensor& x) {
  const std::size_t c = x.shape().c();
  Tensor h = leaky_relu(conv_layer(scope, "conv1", x, c), kLeakySlope);
  h = leaky_relu(conv_layer(scope, "conv2", h, c), kLeakySlope);
  h = conv_layer(scope, "conv3", h, c);
  return add(x, scale(h, kResidualScale));
}

// ---- dynamic filters ----------------------------------------------------------

/// Predicted SCDF filters.
///   spatial: (N, k*k, H, W), tap t of the kernel at pixel (h, w)
///   channel: (N, C, k, k), one kernel per channel, shared by all pixels
struct FilterBank {
  Tensor spatial;
  Tensor channel;
  std::size_t k = kDynamicKernel;
};

/// alpha * (raw - mean) / (std + eps) + beta, statistics taken along `axis`
/// (the kernel-tap axis). alpha/beta broadcast against the result.
inline Tensor filter_normalize(const Tensor& raw, const Tensor& alpha, const Tensor& beta, std::size_t axis) {
  Tensor centered = sub(raw, mean_axis(raw, axis));
  Tensor stddev = sqrt(mean_axis(square(centered), axis));
  Tensor normalized = div(centered, add_scalar(stddev, kFilterNormEps));
  return add(mul(normalized, alpha), beta);
}

inline Tensor delta_kernel(std::size_t k, Shape shape) {
  Tensor d(shape);
  d.mutable_data()[(k * k) / 2] = 1.0;
  return d;
}

/// Spatial branch: 1x1 conv to k*k channels. Channel branch: global average
/// pool -> fc (C -> max(C/4, 4)) -> LeakyReLU -> fc (-> C*k*k). Both go
/// through filter normalization (alpha initialized 0.1) and a fixed delta
/// kernel is added so a fresh predictor is close to the identity filter.
inline FilterBank scdf_predict(const Scope& scope, const Tensor& x) {
  const Shape s = x.shape();
  const std::size_t k = kDynamicKernel;
  const std::size_t taps = k * k;
  const std::size_t C = s.c();

  Tensor sp_raw = conv_layer(scope, "spatial", x, taps, 1);
  Tensor sp_alpha = scope.param("fn_sp.alpha", Shape{1, 1, 1, 1}, Init::constant(0.1));
  Tensor sp_beta = scope.param("fn_sp.beta", Shape{1, 1, 1, 1}, Init::zeros());
  Tensor spatial = add(filter_normalize(sp_raw, sp_alpha, sp_beta, 1), delta_kernel(k, Shape{1, taps, 1, 1}));

  const std::size_t hidden = std::max<std::size_t>(C / 4, 4);
  Tensor pooled = global_avg_pool(x);
  Tensor h = leaky_relu(conv_layer(scope, "fc1", pooled, hidden, 1), kLeakySlope);
  Tensor ch_raw = reshape(conv_layer(scope, "fc2", h, C * taps, 1), Shape{s.n(), C, 1, taps});
  Tensor ch_alpha = scope.param("fn_ch.alpha", Shape{1, C, 1, 1}, Init::constant(0.1));
  Tensor ch_beta = scope.param("fn_ch.beta", Shape{1, C, 1, 1}, Init::zeros());
  Tensor channel = add(filter_normalize(ch_raw, ch_alpha, ch_beta, 3), delta_kernel(k, Shape{1, 1, 1, taps}));
  return {spatial, reshape(channel, Shape{s.n(), C, k, k}), k};
}

/// out[n,m,i] = sum_{j in window(i)} spatial[n,j,i] * channel[n,m,j] * x[n,m,i+j]
/// with zero padding (k/2) at the borders.
inline Tensor scdf_apply(const Tensor& x, const FilterBank& bank) {
  const Shape s = x.shape();
  const std::size_t k = bank.k;
  const std::size_t taps = k * k;
  if (bank.spatial.shape() != Shape{s.n(), taps, s.h(), s.w()}) {
    throw ShapeError("scdf_apply: spatial filters have shape " + bank.spatial.shape().str() + ", expected " +
                     Shape{s.n(), taps, s.h(), s.w()}.str());
  }
  if (bank.channel.shape() != Shape{s.n(), s.c(), k, k}) {
    throw ShapeError("scdf_apply: channel filters have shape " + bank.channel.shape().str() + ", expected " +
                     Shape{s.n(), s.c(), k, k}.str());
  }
  const std::size_t H = s.h(), W = s.w(), C = s.c(), plane = H * W;
  const auto half = static_cast<std::ptrdiff_t>(k / 2);

  // Visits every (output pixel, tap) pair with a valid source pixel.
  auto sweep = [=](auto&& f) {
    for (std::size_t n = 0; n < s.n(); ++n)
      for (std::size_t m = 0; m < C; ++m)
        for (std::size_t t = 0; t < taps; ++t) {
          const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(t / k) - half;
          const std::ptrdiff_t dx = static_cast<std::ptrdiff_t>(t % k) - half;
          const std::size_t r0 = dy < 0 ? static_cast<std::size_t>(-dy) : 0;
          const std::size_t r1 = dy > 0 ? H - static_cast<std::size_t>(dy) : H;
          const std::size_t c0 = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
          const std::size_t c1 = dx > 0 ? W - static_cast<std::size_t>(dx) : W;
          const std::size_t xbase = (n * C + m) * plane;
          const std::size_t sbase = (n * taps + t) * plane;
          const std::size_t cidx = (n * C + m) * taps + t;
          const std::ptrdiff_t shift = dy * static_cast<std::ptrdiff_t>(W) + dx;
          for (std::size_t r = r0; r < r1; ++r)
            for (std::size_t c = c0; c < c1; ++c) {
              const std::size_t i = r * W + c;
              f(xbase + i, sbase + i, cidx, static_cast<std::size_t>(static_cast<std::ptrdiff_t>(xbase + i) + shift));
            }
        }
  };

  auto xs = x.data();
  auto sp = bank.spatial.data();
  auto ch = bank.channel.data();
  std::vector<double> y(s.numel(), 0.0);
  sweep([&](std::size_t o, std::size_t si, std::size_t ci, std::size_t xi) { y[o] += sp[si] * ch[ci] * xs[xi]; });

  return Tensor::make_result("scdf_apply", s, std::move(y), {x, bank.spatial, bank.channel}, [sweep](detail::Node& self) {
    detail::Node& nx = *self.parents[0];
    detail::Node& ns = *self.parents[1];
    detail::Node& nc = *self.parents[2];
    const auto& g = self.grad;
    const auto& xd = nx.data;
    const auto& sd = ns.data;
    const auto& cd = nc.data;
    if (nx.requires_grad) {
      auto& gx = nx.grad_buffer();
      sweep([&](std::size_t o, std::size_t si, std::size_t ci, std::size_t xi) { gx[xi] += g[o] * sd[si] * cd[ci]; });
    }
    if (ns.requires_grad) {
      auto& gs = ns.grad_buffer();
      sweep([&](std::size_t o, std::size_t si, std::size_t ci, std::size_t xi) { gs[si] += g[o] * cd[ci] * xd[xi]; });
    }
    if (nc.requires_grad) {
      auto& gc = nc.grad_buffer();
      sweep([&](std::size_t o, std::size_t si, std::size_t ci, std::size_t xi) { gc[ci] += g[o] * sd[si] * xd[xi]; });
    }
  });
}

inline Tensor scdf(const Scope& scope, const Tensor& x) { return scdf_apply(x, scdf_predict(scope, x)); }

/// RB-DF: x + 0.1 * (conv -> act -> SCDF -> conv -> act -> SCDF -> conv -> act)(x).
inline Tensor rb_df(const Scope& scope, const Tensor& x, const BlockOptions& opt = {}) {
  const std::size_t c = x.shape().c();
  Tensor h = leaky_relu(conv_layer(scope, "conv1", x, c), kLeakySlope);
  if (opt.scdf) h = scdf(scope.child("scdf1"), h);
  h = leaky_relu(conv_layer(scope, "conv2", h, c), kLeakySlope);
  if (opt.scdf) h = scdf(scope.child("scdf2"), h);
  h = leaky_relu(conv_layer(scope, "conv3", h, c), kLeakySlope);
  return add(x, scale(h, kResidualScale));
}

// ---- resampling ---------------------------------------------------------------

/// 4x4 stride-2 conv -> batch norm -> LeakyReLU; halves H and W.
inline Tensor downsample_block(const Scope& scope, const Tensor& x, std::size_t out_channels) {
  const Shape s = x.shape();
  if (s.h() % 2 != 0 || s.w() % 2 != 0 || s.h() < 2 || s.w() < 2) {
    throw ShapeError("downsample_block: spatial extents must be even, got " + s.str());
  }
  Tensor h = conv_layer(scope, "conv", x, out_channels, 4, 2, 1, 1);
  const Scope bn = scope.child("bn");
  BatchNormStats stats = bn.batch_norm_stats("stats", out_channels);
  Tensor gamma = bn.param("gamma", Shape{1, out_channels, 1, 1}, Init::constant(1.0));
  Tensor beta = bn.param("beta", Shape{1, out_channels, 1, 1}, Init::zeros());
  return leaky_relu(batch_norm(h, gamma, beta, stats, scope.mode()), kLeakySlope);
}

/// 4x4 stride-2 transposed conv -> batch norm -> LeakyReLU; doubles H and W.
inline Tensor upsample_block(const Scope& scope, const Tensor& x, std::size_t out_channels) {
  const std::size_t cin = x.shape().c();
  const Scope s = scope.child("deconv");
  Tensor w = s.param("w", Shape{cin, out_channels, 4, 4}, Init::kaiming(cin * 16 / 4));
  Tensor b = s.param("b", Shape{1, out_channels, 1, 1}, Init::zeros());
  Tensor h = conv_transpose2d(x, w, b, ConvSpec{cin, out_channels, 4, 4, 2, 1, 1});
  const Scope bn = scope.child("bn");
  BatchNormStats stats = bn.batch_norm_stats("stats", out_channels);
  Tensor gamma = bn.param("gamma", Shape{1, out_channels, 1, 1}, Init::constant(1.0));
  Tensor beta = bn.param("beta", Shape{1, out_channels, 1, 1}, Init::zeros());
  return leaky_relu(batch_norm(h, gamma, beta, stats, scope.mode()), kLeakySlope);
}

// ---- ASPP ---------------------------------------------------------------------

/// Five branches (1x1 conv, three dilated 3x3 convs, image pooling) fused by a
/// 1x1 conv back to the input width. Dilated branches pad by replication so a
/// constant input maps to a constant output.
inline Tensor aspp(const Scope& scope, const Tensor& x, const std::array<std::size_t, 3>& rates) {
  const Shape s = x.shape();
  if (s.h() < 2 || s.w() < 2) throw ShapeError("aspp: spatial extent must be at least 2x2, got " + s.str());
  const std::size_t c = s.c();
  std::vector<Tensor> branches;
  branches.push_back(leaky_relu(conv_layer(scope, "b0", x, c, 1), kLeakySlope));
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const std::size_t r = rates[i];
    Tensor padded = pad(x, r, PadMode::replicate);
    branches.push_back(
        leaky_relu(conv_layer(scope, "b" + std::to_string(i + 1), padded, c, 3, 1, r, 0), kLeakySlope));
  }
  Tensor pooled = leaky_relu(conv_layer(scope, "pool", global_avg_pool(x), c, 1), kLeakySlope);
  branches.push_back(expand_spatial(pooled, s.h(), s.w()));
  return leaky_relu(conv_layer(scope, "fuse", concat(branches), c, 1), kLeakySlope);
}

}  // namespace podf
