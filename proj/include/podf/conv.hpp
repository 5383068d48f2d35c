#pragma once

#include <string>
#include <vector>

#include "podf/ops.hpp"
#include "podf/tensor.hpp"

namespace podf {

struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t dilation = 1;

  /// floor((H + 2*pad - dilation*(k-1) - 1) / stride) + 1
  std::size_t out_extent(std::size_t in, std::size_t k) const {
    const std::size_t span = dilation * (k - 1) + 1;
    if (in + 2 * padding < span) {
      throw ShapeError("conv2d: input extent " + std::to_string(in) + " smaller than dilated kernel " +
                       std::to_string(span));
    }
    return (in + 2 * padding - span) / stride + 1;
  }

  /// (H - 1)*stride - 2*pad + dilation*(k-1) + 1
  std::size_t transposed_extent(std::size_t in, std::size_t k) const {
    const std::size_t full = (in - 1) * stride + dilation * (k - 1) + 1;
    if (full < 2 * padding + 1) throw ShapeError("conv_transpose2d: padding exceeds output extent");
    return full - 2 * padding;
  }
};

namespace detail {

// Geometry shared by the three conv kernels. "in" is the dense side of a
// forward convolution, "out" the strided side.
struct ConvGeometry {
  std::size_t batch, cin, cout, ih, iw, oh, ow, kh, kw, stride, pad, dil;

  // Range of output columns whose tap `kj` lands inside the input row.
  std::pair<std::size_t, std::size_t> col_range(std::size_t kj) const {
    const auto off = static_cast<std::ptrdiff_t>(kj * dil) - static_cast<std::ptrdiff_t>(pad);
    const auto s = static_cast<std::ptrdiff_t>(stride);
    std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(iw) - 1 - off);
    hi = hi < 0 ? -1 : hi / s;
    hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(ow) - 1);
    if (hi < lo) return {1, 0};
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
  }

  // Input row for output row `r` and tap `ki`, or -1 when it falls in padding.
  std::ptrdiff_t in_row(std::size_t r, std::size_t ki) const {
    const auto v = static_cast<std::ptrdiff_t>(r * stride + ki * dil) - static_cast<std::ptrdiff_t>(pad);
    return (v >= 0 && v < static_cast<std::ptrdiff_t>(ih)) ? v : -1;
  }

  std::ptrdiff_t col_offset(std::size_t kj) const {
    return static_cast<std::ptrdiff_t>(kj * dil) - static_cast<std::ptrdiff_t>(pad);
  }
};

// Unfolds one image (cin, ih, iw) into columns (cin*kh*kw, oh*ow).
inline void im2col(const ConvGeometry& g, const double* x, double* col) {
  const std::size_t P = g.oh * g.ow;
  for (std::size_t i = 0; i < g.cin; ++i)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = col + ((i * g.kh + ki) * g.kw + kj) * P;
        std::fill_n(row, P, 0.0);
        const auto [lo, hi] = g.col_range(kj);
        if (lo > hi) continue;
        const std::ptrdiff_t coff = g.col_offset(kj);
        const double* xp = x + i * g.ih * g.iw;
        for (std::size_t r = 0; r < g.oh; ++r) {
          const std::ptrdiff_t ir = g.in_row(r, ki);
          if (ir < 0) continue;
          const double* xr = xp + static_cast<std::size_t>(ir) * g.iw;
          double* dst = row + r * g.ow;
          for (std::size_t c = lo; c <= hi; ++c) dst[c] = xr[static_cast<std::ptrdiff_t>(c * g.stride) + coff];
        }
      }
}

// Adjoint of im2col: scatters columns back, accumulating into x.
inline void col2im(const ConvGeometry& g, const double* col, double* x) {
  const std::size_t P = g.oh * g.ow;
  for (std::size_t i = 0; i < g.cin; ++i)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = col + ((i * g.kh + ki) * g.kw + kj) * P;
        const auto [lo, hi] = g.col_range(kj);
        if (lo > hi) continue;
        const std::ptrdiff_t coff = g.col_offset(kj);
        double* xp = x + i * g.ih * g.iw;
        for (std::size_t r = 0; r < g.oh; ++r) {
          const std::ptrdiff_t ir = g.in_row(r, ki);
          if (ir < 0) continue;
          double* xr = xp + static_cast<std::size_t>(ir) * g.iw;
          const double* src = row + r * g.ow;
          for (std::size_t c = lo; c <= hi; ++c) xr[static_cast<std::ptrdiff_t>(c * g.stride) + coff] += src[c];
        }
      }
}

inline bool is_pointwise(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 && g.ih == g.oh && g.iw == g.ow;
}

// y[n,o] += sum_i w[o,i] (*) x[n,i]
inline void conv_forward_raw(const ConvGeometry& g, const double* x, const double* w, double* y) {
  const std::size_t K = g.cin * g.kh * g.kw;
  const std::size_t P = g.oh * g.ow;
  std::vector<double> col(is_pointwise(g) ? 0 : K * P);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const double* cols = x + n * g.cin * g.ih * g.iw;
    if (!col.empty()) {
      im2col(g, cols, col.data());
      cols = col.data();
    }
    double* yn = y + n * g.cout * P;
    for (std::size_t o = 0; o < g.cout; ++o) {
      double* yo = yn + o * P;
      const double* wo = w + o * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = wo[k];
        const double* src = cols + k * P;
        for (std::size_t p = 0; p < P; ++p) yo[p] += wv * src[p];
      }
    }
  }
}

// gx[n,i] += sum_o w[o,i] (*)^T gy[n,o]
inline void conv_backward_input_raw(const ConvGeometry& g, const double* gy, const double* w, double* gx) {
  const std::size_t K = g.cin * g.kh * g.kw;
  const std::size_t P = g.oh * g.ow;
  const bool direct = is_pointwise(g);
  std::vector<double> col(direct ? 0 : K * P);
  for (std::size_t n = 0; n < g.batch; ++n) {
    double* dst = direct ? gx + n * g.cin * g.ih * g.iw : col.data();
    if (!direct) std::fill(col.begin(), col.end(), 0.0);
    const double* gn = gy + n * g.cout * P;
    for (std::size_t o = 0; o < g.cout; ++o) {
      const double* go = gn + o * P;
      const double* wo = w + o * K;
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = wo[k];
        double* row = dst + k * P;
        for (std::size_t p = 0; p < P; ++p) row[p] += wv * go[p];
      }
    }
    if (!direct) col2im(g, col.data(), gx + n * g.cin * g.ih * g.iw);
  }
}

// gw[o,i] += sum_n corr(gy[n,o], x[n,i])
inline void conv_backward_weight_raw(const ConvGeometry& g, const double* x, const double* gy, double* gw) {
  const std::size_t K = g.cin * g.kh * g.kw;
  const std::size_t P = g.oh * g.ow;
  std::vector<double> col(K * P), colt(P * K);
  for (std::size_t n = 0; n < g.batch; ++n) {
    if (is_pointwise(g)) {
      std::copy_n(x + n * g.cin * g.ih * g.iw, K * P, col.data());
    } else {
      im2col(g, x + n * g.cin * g.ih * g.iw, col.data());
    }
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t p = 0; p < P; ++p) colt[p * K + k] = col[k * P + p];
    const double* gn = gy + n * g.cout * P;
    for (std::size_t o = 0; o < g.cout; ++o) {
      const double* go = gn + o * P;
      double* wo = gw + o * K;
      for (std::size_t p = 0; p < P; ++p) {
        const double gv = go[p];
        const double* src = colt.data() + p * K;
        for (std::size_t k = 0; k < K; ++k) wo[k] += gv * src[k];
      }
    }
  }
}

inline void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
  if (bias.defined() && bias.numel() != channels) {
    throw ShapeError(std::string(op) + ": bias has " + std::to_string(bias.numel()) + " values, expected " +
                     std::to_string(channels));
  }
}

}  // namespace detail

/// weight: (C_out, C_in, kh, kw); bias: C_out values or undefined.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws != Shape{spec.out_channels, spec.in_channels, spec.kh, spec.kw}) {
    throw ShapeError("conv2d: weight has shape " + ws.str() + ", expected " +
                     Shape{spec.out_channels, spec.in_channels, spec.kh, spec.kw}.str());
  }
  if (xs.c() != spec.in_channels) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c()) + " channels, expected " +
                     std::to_string(spec.in_channels));
  }
  if (spec.stride == 0 || spec.dilation == 0) throw ShapeError("conv2d: stride and dilation must be positive");
  detail::check_bias(bias, spec.out_channels, "conv2d");

  const detail::ConvGeometry g{xs.n(), xs.c(), spec.out_channels, xs.h(), xs.w(),
                               spec.out_extent(xs.h(), spec.kh), spec.out_extent(xs.w(), spec.kw),
                               spec.kh, spec.kw, spec.stride, spec.padding, spec.dilation};
  const Shape out{g.batch, g.cout, g.oh, g.ow};
  std::vector<double> y(out.numel(), 0.0);
  const std::size_t plane = g.oh * g.ow;
  if (bias.defined()) {
    auto b = bias.data();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t o = 0; o < g.cout; ++o) std::fill_n(y.begin() + static_cast<std::ptrdiff_t>((n * g.cout + o) * plane), plane, b[o]);
  }
  detail::conv_forward_raw(g, x.data().data(), weight.data().data(), y.data());

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result("conv2d", out, std::move(y), inputs, [g, plane](detail::Node& self) {
    detail::Node& nx = *self.parents[0];
    detail::Node& nw = *self.parents[1];
    if (nx.requires_grad) detail::conv_backward_input_raw(g, self.grad.data(), nw.data.data(), nx.grad_buffer().data());
    if (nw.requires_grad) detail::conv_backward_weight_raw(g, nx.data.data(), self.grad.data(), nw.grad_buffer().data());
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.cout; ++o) {
          double s = 0.0;
          const double* gp = self.grad.data() + (n * g.cout + o) * plane;
          for (std::size_t k = 0; k < plane; ++k) s += gp[k];
          gb[o] += s;
        }
    }
  });
}

/// Adjoint of conv2d. weight: (C_in, C_out, kh, kw), i.e. the same tensor a
/// conv2d from C_out to C_in channels would use.
inline Tensor conv_transpose2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws != Shape{spec.in_channels, spec.out_channels, spec.kh, spec.kw}) {
    throw ShapeError("conv_transpose2d: weight has shape " + ws.str() + ", expected " +
                     Shape{spec.in_channels, spec.out_channels, spec.kh, spec.kw}.str());
  }
  if (xs.c() != spec.in_channels) {
    throw ShapeError("conv_transpose2d: input has " + std::to_string(xs.c()) + " channels, expected " +
                     std::to_string(spec.in_channels));
  }
  if (spec.stride == 0 || spec.dilation == 0) throw ShapeError("conv_transpose2d: stride and dilation must be positive");
  detail::check_bias(bias, spec.out_channels, "conv_transpose2d");

  // Geometry of the forward conv this operator is the adjoint of.
  const detail::ConvGeometry g{xs.n(), spec.out_channels, spec.in_channels,
                               spec.transposed_extent(xs.h(), spec.kh), spec.transposed_extent(xs.w(), spec.kw),
                               xs.h(), xs.w(), spec.kh, spec.kw, spec.stride, spec.padding, spec.dilation};
  if (spec.out_extent(g.ih, spec.kh) != g.oh || spec.out_extent(g.iw, spec.kw) != g.ow) {
    throw ShapeError("conv_transpose2d: inconsistent geometry for input " + xs.str());
  }
  const Shape out{g.batch, g.cin, g.ih, g.iw};
  const std::size_t plane = g.ih * g.iw;
  std::vector<double> y(out.numel(), 0.0);
  if (bias.defined()) {
    auto b = bias.data();
    for (std::size_t n = 0; n < g.batch; ++n)
      for (std::size_t o = 0; o < g.cin; ++o) std::fill_n(y.begin() + static_cast<std::ptrdiff_t>((n * g.cin + o) * plane), plane, b[o]);
  }
  detail::conv_backward_input_raw(g, x.data().data(), weight.data().data(), y.data());

  std::vector<Tensor> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return Tensor::make_result("conv_transpose2d", out, std::move(y), inputs, [g, plane](detail::Node& self) {
    detail::Node& nx = *self.parents[0];
    detail::Node& nw = *self.parents[1];
    if (nx.requires_grad) detail::conv_forward_raw(g, self.grad.data(), nw.data.data(), nx.grad_buffer().data());
    if (nw.requires_grad) detail::conv_backward_weight_raw(g, self.grad.data(), nx.data.data(), nw.grad_buffer().data());
    if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
      auto& gb = self.parents[2]->grad_buffer();
      for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.cin; ++o) {
          double s = 0.0;
          const double* gp = self.grad.data() + (n * g.cin + o) * plane;
          for (std::size_t k = 0; k < plane; ++k) s += gp[k];
          gb[o] += s;
        }
    }
  });
}

}  // namespace podf
