#pragma once

// Cross-modal fusion: the dense cross-connected dual-stream block (MMCF) and
// the attention-based refinement (SCRU per branch, MWRU across branches).

#include <algorithm>

#include "podf/blocks.hpp"
#include "podf/ops.hpp"

namespace podf {

struct MmcfOptions {
  bool gated = true;       // gated convs on the optical stream
  bool cross = true;       // cross-modal 1x1 skip connections
  bool sar_stream = true;  // false: optical stream only
};

struct MmcfOutput {
  Tensor opt;    // optical stream, x_opt + F3_opt
  Tensor sar;    // PolSAR stream, x_sar + F3_sar (undefined without a SAR stream)
  Tensor fused;  // concat(F3_opt, F3_sar), or F3_opt alone
};

namespace detail {

// W x + b as a 1x1 conv named `name`.
inline Tensor cross_term(const Scope& scope, std::string_view name, const Tensor& x) {
  return conv_layer(scope, name, x, x.shape().c(), 1);
}

}  // namespace detail

/// Two three-layer conv stacks with dense cross connections. Stage i+1 of
/// each stream consumes its own previous features plus 1x1-projected
/// features of every earlier stage of the other stream:
///   F2_sar = conv(F1_sar + W12_opt F1_opt + b)
///   F2_opt = gconv(F1_opt + W12_sar F1_sar + b)
///   F3_sar = conv(F2_sar + W13_opt F1_opt + W23_opt F2_opt + b)
///   F3_opt = gconv(F2_opt + W13_sar F1_sar + W23_sar F2_sar + b)
/// The first two stages are activated, the third is not.
inline MmcfOutput mmcf_forward(const Scope& scope, const Tensor& f_opt, const Tensor& f_sar, const MmcfOptions& opt = {}) {
  const BlockOptions gating{opt.gated, true};
  const std::size_t c = f_opt.shape().c();
  const Scope so = scope.child("opt");
  const Scope cross = scope.child("cross");

  if (!opt.sar_stream) {
    Tensor o1 = gated_conv_layer(so, "conv1", f_opt, c, Activation::leaky, gating);
    Tensor o2 = gated_conv_layer(so, "conv2", o1, c, Activation::leaky, gating);
    Tensor o3 = gated_conv_layer(so, "conv3", o2, c, Activation::none, gating);
    return {add(f_opt, o3), Tensor{}, o3};
  }

  if (f_opt.shape() != f_sar.shape()) {
    throw ShapeError("mmcf: optical features " + f_opt.shape().str() + " and PolSAR features " + f_sar.shape().str() +
                     " differ in shape");
  }
  const Scope ss = scope.child("sar");
  auto sar_conv = [&](std::string_view name, const Tensor& x, Activation act) {
    return activate(conv_layer(ss, name, x, c), act);
  };

  Tensor o1 = gated_conv_layer(so, "conv1", f_opt, c, Activation::leaky, gating);
  Tensor s1 = sar_conv("conv1", f_sar, Activation::leaky);

  Tensor s2_in = s1;
  Tensor o2_in = o1;
  if (opt.cross) {
    s2_in = add(s2_in, detail::cross_term(cross, "opt12", o1));
    o2_in = add(o2_in, detail::cross_term(cross, "sar12", s1));
  }
  Tensor s2 = sar_conv("conv2", s2_in, Activation::leaky);
  Tensor o2 = gated_conv_layer(so, "conv2", o2_in, c, Activation::leaky, gating);

  Tensor s3_in = s2;
  Tensor o3_in = o2;
  if (opt.cross) {
    s3_in = add(add(s3_in, detail::cross_term(cross, "opt13", o1)), detail::cross_term(cross, "opt23", o2));
    o3_in = add(add(o3_in, detail::cross_term(cross, "sar13", s1)), detail::cross_term(cross, "sar23", s2));
  }
  Tensor s3 = sar_conv("conv3", s3_in, Activation::none);
  Tensor o3 = gated_conv_layer(so, "conv3", o3_in, c, Activation::none, gating);

  return {add(f_opt, o3), add(f_sar, s3), concat({o3, s3})};
}

/// Attention maps exposed for inspection.
struct AttentionMaps {
  Tensor spatial;  // (N,1,HW,HW)
  Tensor channel;  // (N,1,C,C)
};

/// Spatial-channel refinement. Spatial attention: 1x1 convs give Q, K
/// (C -> C/8) and V (C -> C); rows of softmax(Q K^T) index query pixels.
/// Channel attention: Q = K = V = the input reshaped to (C, HW).
/// Output: x + g_sp * att_sp + g_ch * att_ch with g initialized to 0, or the
/// literal sum (att_sp + x) + (att_ch + x) when `literal` is set.
inline Tensor scru(const Scope& scope, const Tensor& x, bool literal = false, AttentionMaps* maps = nullptr) {
  const Shape s = x.shape();
  const std::size_t C = s.c(), H = s.h(), W = s.w();
  const std::size_t reduced = std::max<std::size_t>(C / 8, 1);

  Tensor q = pixel_rows(conv_layer(scope, "query", x, reduced, 1));
  Tensor k = pixel_rows(conv_layer(scope, "key", x, reduced, 1));
  Tensor v = pixel_rows(conv_layer(scope, "value", x, C, 1));
  Tensor spatial_map = softmax(matmul(q, transpose_hw(k)), 3);
  Tensor att_sp = from_pixel_rows(matmul(spatial_map, v), H, W);

  Tensor flat = reshape(x, Shape{s.n(), 1, C, H * W});
  Tensor channel_map = softmax(matmul(flat, transpose_hw(flat)), 3);
  Tensor att_ch = reshape(matmul(channel_map, flat), s);

  if (maps != nullptr) *maps = {spatial_map, channel_map};
  if (literal) return add(add(att_sp, x), add(att_ch, x));
  Tensor g_sp = scope.param("gamma_sp", Shape{1, 1, 1, 1}, Init::zeros());
  Tensor g_ch = scope.param("gamma_ch", Shape{1, 1, 1, 1}, Init::zeros());
  return add(x, add(mul(att_sp, g_sp), mul(att_ch, g_ch)));
}

struct MwruMaps {
  Tensor cross_modal;  // softmax(F_theta F_sigma^T), (N,1,HW,HW)
  Tensor fusion;       // softmax(F_phi F_omega^T)
  Tensor weights;      // softmax(cross_modal * fusion)
};

/// Cross-modal weighted refinement of the fusion features:
///   out = R(f_fusion) * softmax(M_cross * M_fusion) + f_fusion
/// with R(f) the (C, HW) view and embeddings 1x1 convs C -> C/2.
inline Tensor mwru(const Scope& scope, const Tensor& f_opt, const Tensor& f_sar, const Tensor& f_fusion,
                   MwruMaps* maps = nullptr) {
  const Shape s = f_fusion.shape();
  if (f_opt.shape() != s || f_sar.shape() != s) {
    throw ShapeError("mwru: inputs differ in shape: optical " + f_opt.shape().str() + ", PolSAR " + f_sar.shape().str() +
                     ", fusion " + s.str());
  }
  const std::size_t C = s.c(), H = s.h(), W = s.w();
  const std::size_t reduced = std::max<std::size_t>(C / 2, 1);
  Tensor theta = pixel_rows(conv_layer(scope, "theta", f_opt, reduced, 1));
  Tensor sigma = pixel_rows(conv_layer(scope, "sigma", f_sar, reduced, 1));
  Tensor phi = pixel_rows(conv_layer(scope, "phi", f_fusion, reduced, 1));
  Tensor omega = pixel_rows(conv_layer(scope, "omega", f_fusion, reduced, 1));

  Tensor m_cross = softmax(matmul(theta, transpose_hw(sigma)), 3);
  Tensor m_fusion = softmax(matmul(phi, transpose_hw(omega)), 3);
  Tensor weights = softmax(matmul(m_cross, m_fusion), 3);
  if (maps != nullptr) *maps = {m_cross, m_fusion, weights};

  Tensor flat = reshape(f_fusion, Shape{s.n(), 1, C, H * W});
  return add(reshape(matmul(flat, weights), s), f_fusion);
}

/// SCRU on each branch (separate parameters), then MWRU.
inline Tensor mmrf(const Scope& scope, const Tensor& f_opt, const Tensor& f_sar, const Tensor& f_fusion,
                   bool scru_literal = false) {
  if (f_opt.shape() != f_fusion.shape() || f_sar.shape() != f_fusion.shape()) {
    throw ShapeError("mmrf: inputs differ in shape: optical " + f_opt.shape().str() + ", PolSAR " +
                     f_sar.shape().str() + ", fusion " + f_fusion.shape().str());
  }
  Tensor o = scru(scope.child("scru_opt"), f_opt, scru_literal);
  Tensor p = scru(scope.child("scru_sar"), f_sar, scru_literal);
  Tensor f = scru(scope.child("scru_fusion"), f_fusion, scru_literal);
  return mwru(scope.child("mwru"), o, p, f);
}

}  // namespace podf
