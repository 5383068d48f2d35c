#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "podf/tensor.hpp"

namespace podf {

namespace detail {

inline std::array<std::size_t, 4> strides_of(const Shape& s) {
  return {s.c() * s.h() * s.w(), s.h() * s.w(), s.w(), 1};
}

// Strides with zeros on broadcast axes.
inline std::array<std::size_t, 4> broadcast_strides(const Shape& s, const Shape& out) {
  auto st = strides_of(s);
  for (std::size_t i = 0; i < 4; ++i) {
    if (s[i] == 1 && out[i] != 1) st[i] = 0;
  }
  return st;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  Shape out;
  for (std::size_t i = 0; i < 4; ++i) {
    if (a[i] == b[i] || b[i] == 1) {
      out.dims[i] = a[i];
    } else if (a[i] == 1) {
      out.dims[i] = b[i];
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast lhs " + a.str() + " with rhs " + b.str());
    }
  }
  return out;
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::array<std::size_t, 4>& sa,
                        const std::array<std::size_t, 4>& sb, F&& f) {
  std::size_t o = 0;
  for (std::size_t n = 0; n < out[0]; ++n)
    for (std::size_t c = 0; c < out[1]; ++c)
      for (std::size_t h = 0; h < out[2]; ++h) {
        std::size_t ia = n * sa[0] + c * sa[1] + h * sa[2];
        std::size_t ib = n * sb[0] + c * sb[1] + h * sb[2];
        for (std::size_t w = 0; w < out[3]; ++w, ++o) f(o, ia + w * sa[3], ib + w * sb[3]);
      }
}

template <typename Fwd, typename DA, typename DB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const Shape out = broadcast_shape(a.shape(), b.shape(), op);
  const auto sa = broadcast_strides(a.shape(), out);
  const auto sb = broadcast_strides(b.shape(), out);
  std::vector<double> y(out.numel());
  auto xa = a.data();
  auto xb = b.data();
  for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) { y[o] = fwd(xa[ia], xb[ib]); });
  return Tensor::make_result(op, out, std::move(y), {a, b}, [out, sa, sb, da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& g = self.grad;
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        ga[ia] += g[o] * da(pa.data[ia], pb.data[ib]);
      });
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      for_each_broadcast(out, sa, sb, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        gb[ib] += g[o] * db(pa.data[ia], pb.data[ib]);
      });
    }
  });
}

// `deriv(x, y)` gives dy/dx from the input and output values.
template <typename Fwd, typename Deriv>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  auto in = x.data();
  std::vector<double> y(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) y[i] = fwd(in[i]);
  return Tensor::make_result(op, x.shape(), std::move(y), {x}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += self.grad[i] * deriv(p.data[i], self.data[i]);
  });
}

}  // namespace detail

// ---- broadcasting arithmetic ------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

// ---- pointwise --------------------------------------------------------------

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary_op(
      "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary_op(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

/// Subgradient at 0 takes the negative-slope branch.
inline Tensor leaky_relu(const Tensor& x, double alpha = 0.2) {
  return detail::unary_op(
      "leaky_relu", x, [alpha](double v) { return v > 0.0 ? v : alpha * v; },
      [alpha](double v, double) { return v > 0.0 ? 1.0 : alpha; });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_op(
      "sigmoid", x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary_op(
      "tanh", x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary_op(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary_op(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary_op(
      "sqrt", x, [](double v) { return std::sqrt(v); }, [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

// ---- reductions -------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  return Tensor::make_result("sum", Shape{1, 1, 1, 1}, {s}, {x}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    for (double& g : gp) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

/// Mean over one axis, kept with extent 1.
inline Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis > 3) throw ShapeError("mean_axis: axis must be in [0,3]");
  const Shape in = x.shape();
  Shape out = in;
  out.dims[axis] = 1;
  const auto so = detail::broadcast_strides(out, in);
  const double inv = 1.0 / static_cast<double>(in[axis]);
  std::vector<double> y(out.numel(), 0.0);
  auto xs = x.data();
  detail::for_each_broadcast(in, detail::strides_of(in), so,
                             [&](std::size_t, std::size_t ix, std::size_t io) { y[io] += xs[ix] * inv; });
  return Tensor::make_result("mean_axis", out, std::move(y), {x}, [in, so, inv](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    auto& gp = p.grad_buffer();
    detail::for_each_broadcast(in, detail::strides_of(in), so,
                               [&](std::size_t, std::size_t ix, std::size_t io) { gp[ix] += self.grad[io] * inv; });
  });
}

/// Spatial mean per (n, c): (N,C,H,W) -> (N,C,1,1).
inline Tensor global_avg_pool(const Tensor& x) { return mean_axis(mean_axis(x, 3), 2); }

// ---- shape manipulation -----------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape s) {
  if (s.numel() != x.numel()) {
    throw ShapeError("reshape: cannot view " + x.shape().str() + " as " + s.str());
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  return Tensor::make_result("reshape", s, std::move(y), {x}, [](detail::Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
  });
}

/// Swaps the last two axes: (N,C,H,W) -> (N,C,W,H).
inline Tensor transpose_hw(const Tensor& x) {
  const Shape in = x.shape();
  const Shape out{in.n(), in.c(), in.w(), in.h()};
  const std::size_t planes = in.n() * in.c();
  const std::size_t rows = in.h();
  const std::size_t cols = in.w();
  std::vector<double> y(x.numel());
  auto xs = x.data();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) y[p * rows * cols + c * rows + r] = xs[p * rows * cols + r * cols + c];
  return Tensor::make_result("transpose_hw", out, std::move(y), {x}, [planes, rows, cols](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          gp[p * rows * cols + r * cols + c] += self.grad[p * rows * cols + c * rows + r];
  });
}

/// Concatenation along the channel axis.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape first = parts.front().shape();
  std::size_t channels = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Shape& s = parts[i].shape();
    if (s.n() != first.n() || s.h() != first.h() || s.w() != first.w()) {
      throw ShapeError("concat: operand " + std::to_string(i) + " has shape " + s.str() + ", expected (" +
                       std::to_string(first.n()) + ",*," + std::to_string(first.h()) + ',' +
                       std::to_string(first.w()) + ')');
    }
    channels += s.c();
  }
  const Shape out{first.n(), channels, first.h(), first.w()};
  const std::size_t plane = first.h() * first.w();
  std::vector<double> y(out.numel());
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& t : parts) {
    offsets.push_back(off);
    for (std::size_t n = 0; n < first.n(); ++n) {
      auto src = t.data().subspan(n * t.shape().c() * plane, t.shape().c() * plane);
      std::copy(src.begin(), src.end(), y.begin() + static_cast<std::ptrdiff_t>((n * channels + off) * plane));
    }
    off += t.shape().c();
  }
  return Tensor::make_result("concat", out, std::move(y), parts, [offsets, channels, plane](detail::Node& self) {
    for (std::size_t i = 0; i < self.parents.size(); ++i) {
      detail::Node& p = *self.parents[i];
      if (!p.requires_grad) continue;
      auto& gp = p.grad_buffer();
      const std::size_t pc = p.shape.c();
      for (std::size_t n = 0; n < p.shape.n(); ++n)
        for (std::size_t k = 0; k < pc * plane; ++k)
          gp[n * pc * plane + k] += self.grad[(n * channels + offsets[i]) * plane + k];
    }
  });
}

/// Channel range [begin, begin+count).
inline Tensor slice_channels(const Tensor& x, std::size_t begin, std::size_t count) {
  const Shape in = x.shape();
  if (begin + count > in.c()) throw ShapeError("slice_channels: range exceeds " + in.str());
  const Shape out{in.n(), count, in.h(), in.w()};
  const std::size_t plane = in.h() * in.w();
  std::vector<double> y(out.numel());
  auto xs = x.data();
  for (std::size_t n = 0; n < in.n(); ++n)
    for (std::size_t k = 0; k < count * plane; ++k) y[n * count * plane + k] = xs[(n * in.c() + begin) * plane + k];
  return Tensor::make_result("slice_channels", out, std::move(y), {x}, [in, begin, count, plane](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t n = 0; n < in.n(); ++n)
      for (std::size_t k = 0; k < count * plane; ++k)
        gp[(n * in.c() + begin) * plane + k] += self.grad[n * count * plane + k];
  });
}

/// Repeats a (N,C,1,1) tensor over an h x w grid.
inline Tensor expand_spatial(const Tensor& x, std::size_t h, std::size_t w) {
  if (x.shape().h() != 1 || x.shape().w() != 1) throw ShapeError("expand_spatial expects (N,C,1,1), got " + x.shape().str());
  return add(x, Tensor::zeros(Shape{1, 1, h, w}));
}

enum class PadMode { zero, replicate };

/// Pads H and W by `p` on each side.
inline Tensor pad(const Tensor& x, std::size_t p, PadMode mode = PadMode::zero) {
  const Shape in = x.shape();
  const Shape out{in.n(), in.c(), in.h() + 2 * p, in.w() + 2 * p};
  if (mode == PadMode::replicate && (in.h() == 0 || in.w() == 0)) throw ShapeError("pad: empty spatial extent");
  // Source index per output row/column; -1 marks zero padding.
  auto source = [p, mode](std::size_t extent) {
    std::vector<std::ptrdiff_t> map(extent + 2 * p);
    for (std::size_t i = 0; i < map.size(); ++i) {
      const auto s = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(p);
      if (s >= 0 && s < static_cast<std::ptrdiff_t>(extent)) {
        map[i] = s;
      } else if (mode == PadMode::zero) {
        map[i] = -1;
      } else {
        map[i] = std::clamp<std::ptrdiff_t>(s, 0, static_cast<std::ptrdiff_t>(extent) - 1);
      }
    }
    return map;
  };
  const auto rows = source(in.h());
  const auto cols = source(in.w());
  const std::size_t planes = in.n() * in.c();
  std::vector<double> y(out.numel(), 0.0);
  auto xs = x.data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t r = 0; r < out.h(); ++r) {
      if (rows[r] < 0) continue;
      for (std::size_t c = 0; c < out.w(); ++c) {
        if (cols[c] < 0) continue;
        y[(pl * out.h() + r) * out.w() + c] = xs[(pl * in.h() + static_cast<std::size_t>(rows[r])) * in.w() +
                                                 static_cast<std::size_t>(cols[c])];
      }
    }
  return Tensor::make_result("pad", out, std::move(y), {x}, [in, out, rows, cols, planes](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t r = 0; r < out.h(); ++r) {
        if (rows[r] < 0) continue;
        for (std::size_t c = 0; c < out.w(); ++c) {
          if (cols[c] < 0) continue;
          gp[(pl * in.h() + static_cast<std::size_t>(rows[r])) * in.w() + static_cast<std::size_t>(cols[c])] +=
              self.grad[(pl * out.h() + r) * out.w() + c];
        }
      }
  });
}

/// Average pooling with a k x k window, no padding.
inline Tensor avg_pool(const Tensor& x, std::size_t k, std::size_t stride) {
  const Shape in = x.shape();
  if (k == 0 || stride == 0 || in.h() < k || in.w() < k) {
    throw ShapeError("avg_pool: window " + std::to_string(k) + " does not fit " + in.str());
  }
  const Shape out{in.n(), in.c(), (in.h() - k) / stride + 1, (in.w() - k) / stride + 1};
  const double inv = 1.0 / static_cast<double>(k * k);
  const std::size_t planes = in.n() * in.c();
  std::vector<double> y(out.numel(), 0.0);
  auto xs = x.data();
  for (std::size_t pl = 0; pl < planes; ++pl)
    for (std::size_t r = 0; r < out.h(); ++r)
      for (std::size_t c = 0; c < out.w(); ++c) {
        double s = 0.0;
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = 0; j < k; ++j) s += xs[(pl * in.h() + r * stride + i) * in.w() + c * stride + j];
        y[(pl * out.h() + r) * out.w() + c] = s * inv;
      }
  return Tensor::make_result("avg_pool", out, std::move(y), {x}, [in, out, k, stride, inv, planes](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t pl = 0; pl < planes; ++pl)
      for (std::size_t r = 0; r < out.h(); ++r)
        for (std::size_t c = 0; c < out.w(); ++c) {
          const double g = self.grad[(pl * out.h() + r) * out.w() + c] * inv;
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) gp[(pl * in.h() + r * stride + i) * in.w() + c * stride + j] += g;
        }
  });
}

// ---- attention primitives ---------------------------------------------------

/// Softmax along `axis` with max subtraction.
inline Tensor softmax(const Tensor& x, std::size_t axis = 3) {
  if (axis > 3) throw ShapeError("softmax: axis must be in [0,3]");
  const Shape s = x.shape();
  const auto st = detail::strides_of(s);
  const std::size_t len = s[axis];
  const std::size_t step = st[axis];
  // Enumerate the start offset of every line along `axis`.
  std::vector<std::size_t> starts;
  starts.reserve(s.numel() / std::max<std::size_t>(len, 1));
  for (std::size_t n = 0; n < (axis == 0 ? 1 : s[0]); ++n)
    for (std::size_t c = 0; c < (axis == 1 ? 1 : s[1]); ++c)
      for (std::size_t h = 0; h < (axis == 2 ? 1 : s[2]); ++h)
        for (std::size_t w = 0; w < (axis == 3 ? 1 : s[3]); ++w) starts.push_back(n * st[0] + c * st[1] + h * st[2] + w);
  std::vector<double> y(s.numel());
  auto xs = x.data();
  for (std::size_t b : starts) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) m = std::max(m, xs[b + i * step]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(xs[b + i * step] - m);
      y[b + i * step] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) y[b + i * step] /= z;
  }
  return Tensor::make_result("softmax", s, std::move(y), {x}, [starts, len, step](detail::Node& self) {
    auto& gp = self.parents[0]->grad_buffer();
    for (std::size_t b : starts) {
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += self.grad[b + i * step] * self.data[b + i * step];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t k = b + i * step;
        gp[k] += self.data[k] * (self.grad[k] - dot);
      }
    }
  });
}

/// Batched matrix product over the last two axes: (N,C,R,K) x (N,C,K,M) -> (N,C,R,M).
/// Either operand may have N = C = 1 and is then shared across the batch.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.w() != sb.h()) {
    throw ShapeError("matmul: inner extents differ, lhs " + sa.str() + " rhs " + sb.str());
  }
  const Shape batch = detail::broadcast_shape(Shape{sa.n(), sa.c(), 1, 1}, Shape{sb.n(), sb.c(), 1, 1}, "matmul");
  const std::size_t R = sa.h(), K = sa.w(), M = sb.w();
  const Shape out{batch.n(), batch.c(), R, M};
  const auto ba = detail::broadcast_strides(Shape{sa.n(), sa.c(), 1, 1}, batch);
  const auto bb = detail::broadcast_strides(Shape{sb.n(), sb.c(), 1, 1}, batch);
  // Plane offsets (in matrices) for each batch entry.
  std::vector<std::size_t> pa, pb;
  for (std::size_t n = 0; n < batch.n(); ++n)
    for (std::size_t c = 0; c < batch.c(); ++c) {
      pa.push_back((n * ba[0] + c * ba[1]) * R * K);
      pb.push_back((n * bb[0] + c * bb[1]) * K * M);
    }
  std::vector<double> y(out.numel(), 0.0);
  auto xa = a.data();
  auto xb = b.data();
  for (std::size_t p = 0; p < pa.size(); ++p) {
    double* yo = y.data() + p * R * M;
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t k = 0; k < K; ++k) {
        const double av = xa[pa[p] + r * K + k];
        const double* brow = xb.data() + pb[p] + k * M;
        double* yrow = yo + r * M;
        for (std::size_t m = 0; m < M; ++m) yrow[m] += av * brow[m];
      }
  }
  return Tensor::make_result("matmul", out, std::move(y), {a, b}, [pa, pb, R, K, M](detail::Node& self) {
    detail::Node& na = *self.parents[0];
    detail::Node& nb = *self.parents[1];
    for (std::size_t p = 0; p < pa.size(); ++p) {
      const double* g = self.grad.data() + p * R * M;
      if (na.requires_grad) {
        auto& ga = na.grad_buffer();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t k = 0; k < K; ++k) {
            const double* brow = nb.data.data() + pb[p] + k * M;
            double s = 0.0;
            for (std::size_t m = 0; m < M; ++m) s += g[r * M + m] * brow[m];
            ga[pa[p] + r * K + k] += s;
          }
      }
      if (nb.requires_grad) {
        auto& gb = nb.grad_buffer();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t k = 0; k < K; ++k) {
            const double av = na.data[pa[p] + r * K + k];
            double* grow = gb.data() + pb[p] + k * M;
            for (std::size_t m = 0; m < M; ++m) grow[m] += av * g[r * M + m];
          }
      }
    }
  });
}

/// (N,C,H,W) -> (N,1,H*W,C): one row per pixel.
inline Tensor pixel_rows(const Tensor& x) {
  const Shape s = x.shape();
  return transpose_hw(reshape(x, Shape{s.n(), 1, s.c(), s.h() * s.w()}));
}

/// Inverse of pixel_rows.
inline Tensor from_pixel_rows(const Tensor& rows, std::size_t h, std::size_t w) {
  const Shape s = rows.shape();
  if (s.c() != 1 || s.h() != h * w) throw ShapeError("from_pixel_rows: shape " + rows.shape().str());
  return reshape(transpose_hw(rows), Shape{s.n(), s.w(), h, w});
}

}  // namespace podf
