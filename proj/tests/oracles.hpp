#pragma once

// Naive-loop reference implementations shared by the unit tests and the
// acceptance runner.

#include "podf/blocks.hpp"
#include "podf/conv.hpp"

namespace podf::oracle {

// Direct definition: y[n,o,i,j] = b[o] + sum_{c,u,v} w[o,c,u,v] x[n,c,i*s-p+u*d, j*s-p+v*d].
inline Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
  const Shape xs = x.shape(), ws = w.shape();
  const std::size_t oh = s.out_extent(xs.h(), s.kh), ow = s.out_extent(xs.w(), s.kw);
  Tensor y(Shape{xs.n(), ws.n(), oh, ow});
  auto out = y.mutable_data();
  for (std::size_t n = 0; n < xs.n(); ++n)
    for (std::size_t o = 0; o < ws.n(); ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b.defined() ? b.data()[o] : 0.0;
          for (std::size_t c = 0; c < xs.c(); ++c)
            for (std::size_t u = 0; u < s.kh; ++u)
              for (std::size_t v = 0; v < s.kw; ++v) {
                const long r = static_cast<long>(i * s.stride + u * s.dilation) - static_cast<long>(s.padding);
                const long q = static_cast<long>(j * s.stride + v * s.dilation) - static_cast<long>(s.padding);
                if (r < 0 || q < 0 || r >= static_cast<long>(xs.h()) || q >= static_cast<long>(xs.w())) continue;
                acc += w.at(o, c, u, v) * x.at(n, c, static_cast<std::size_t>(r), static_cast<std::size_t>(q));
              }
          out[((n * ws.n() + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

// Dense kernel with (d-1) zeros inserted between taps.
inline Tensor zero_stuffed(const Tensor& w, std::size_t d) {
  const Shape s = w.shape();
  const std::size_t kh = (s.h() - 1) * d + 1, kw = (s.w() - 1) * d + 1;
  Tensor out(Shape{s.n(), s.c(), kh, kw});
  auto o = out.mutable_data();
  for (std::size_t a = 0; a < s.n(); ++a)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t u = 0; u < s.h(); ++u)
        for (std::size_t v = 0; v < s.w(); ++v) o[((a * s.c() + c) * kh + u * d) * kw + v * d] = w.at(a, c, u, v);
  return out;
}

// Per-pixel loop: out[n,m,i,j] = sum_{u,v} sp[n,3u+v,i,j] * ch[n,m,u,v] * x[n,m,i+u-1,j+v-1].
inline Tensor naive_scdf(const Tensor& x, const FilterBank& bank) {
  const Shape s = x.shape();
  Tensor out(s);
  auto o = out.mutable_data();
  const long k = static_cast<long>(bank.k), half = k / 2;
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t m = 0; m < s.c(); ++m)
      for (std::size_t i = 0; i < s.h(); ++i)
        for (std::size_t j = 0; j < s.w(); ++j) {
          double acc = 0.0;
          for (long u = 0; u < k; ++u)
            for (long v = 0; v < k; ++v) {
              const long r = static_cast<long>(i) + u - half, c = static_cast<long>(j) + v - half;
              if (r < 0 || c < 0 || r >= static_cast<long>(s.h()) || c >= static_cast<long>(s.w())) continue;
              acc += bank.spatial.at(n, static_cast<std::size_t>(u * k + v), i, j) *
                     bank.channel.at(n, m, static_cast<std::size_t>(u), static_cast<std::size_t>(v)) *
                     x.at(n, m, static_cast<std::size_t>(r), static_cast<std::size_t>(c));
            }
          o[((n * s.c() + m) * s.h() + i) * s.w() + j] = acc;
        }
  return out;
}

}  // namespace podf::oracle
