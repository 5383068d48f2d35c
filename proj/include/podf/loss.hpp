#pragma once

// Composite cloud-removal loss: global L1, mask-restricted L1 and SSIM.

#include <cmath>
#include <string>
#include <vector>

#include "podf/conv.hpp"
#include "podf/ops.hpp"

namespace podf {

struct LossWeights {
  double local = 10.0;      // lambda1
  double structural = 1.0;  // lambda2
};

/// Gaussian window and stability constants for unit data range.
struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
};

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": prediction " + a.shape().str() + " and target " + b.shape().str() +
                     " differ in shape");
  }
}

inline void require_binary_mask(const Tensor& mask, const Tensor& like) {
  const Shape m = mask.shape();
  const Shape s = like.shape();
  if (m.n() != s.n() || m.h() != s.h() || m.w() != s.w() || (m.c() != 1 && m.c() != s.c())) {
    throw ShapeError("mask shape " + m.str() + " does not broadcast over " + s.str());
  }
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask values must be 0 or 1, found " + std::to_string(v));
  }
}

/// Normalized separable Gaussian truncated to kh x kw.
inline Tensor gaussian_window(std::size_t kh, std::size_t kw, double sigma) {
  auto profile = [sigma](std::size_t k) {
    std::vector<double> g(k);
    const double mid = (static_cast<double>(k) - 1.0) / 2.0;
    for (std::size_t i = 0; i < k; ++i) {
      const double d = static_cast<double>(i) - mid;
      g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    }
    return g;
  };
  const auto gy = profile(kh);
  const auto gx = profile(kw);
  std::vector<double> w(kh * kw);
  double total = 0.0;
  for (std::size_t i = 0; i < kh; ++i)
    for (std::size_t j = 0; j < kw; ++j) total += (w[i * kw + j] = gy[i] * gx[j]);
  for (double& v : w) v /= total;
  return Tensor(Shape{1, 1, kh, kw}, std::move(w));
}

}  // namespace detail

/// mean |target - pred| over every element.
inline Tensor loss_global(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "loss_global");
  return mean(abs(sub(target, pred)));
}

/// mean |M * target - M * pred| normalized by the full element count, with
/// the mask (1 = cloud) broadcast over channels.
inline Tensor loss_local(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  detail::require_same_shape(pred, target, "loss_local");
  detail::require_binary_mask(mask, pred);
  return mean(abs(mul(mask, sub(target, pred))));
}

/// Mean SSIM over valid Gaussian windows and channels. Windows larger than
/// the image shrink to the image extent.
inline Tensor ssim(const Tensor& x, const Tensor& y, const SsimParams& p = {}) {
  detail::require_same_shape(x, y, "ssim");
  const Shape s = x.shape();
  const std::size_t kh = std::min(p.window, s.h());
  const std::size_t kw = std::min(p.window, s.w());
  const Tensor window = detail::gaussian_window(kh, kw, p.sigma);
  const ConvSpec spec{1, 1, kh, kw, 1, 0, 1};
  const Shape planes{s.n() * s.c(), 1, s.h(), s.w()};
  auto blur = [&](const Tensor& t) { return conv2d(reshape(t, planes), window, Tensor{}, spec); };

  Tensor mx = blur(x);
  Tensor my = blur(y);
  Tensor mx2 = square(mx);
  Tensor my2 = square(my);
  Tensor mxy = mul(mx, my);
  Tensor vx = sub(blur(square(x)), mx2);
  Tensor vy = sub(blur(square(y)), my2);
  Tensor cxy = sub(blur(mul(x, y)), mxy);

  Tensor num = mul(add_scalar(scale(mxy, 2.0), p.c1), add_scalar(scale(cxy, 2.0), p.c2));
  Tensor den = mul(add_scalar(add(mx2, my2), p.c1), add_scalar(add(vx, vy), p.c2));
  return mean(div(num, den));
}

inline Tensor loss_ssim(const Tensor& pred, const Tensor& target, const SsimParams& p = {}) {
  return add_scalar(scale(ssim(target, pred, p), -1.0), 1.0);
}

/// L_g + lambda1 * L_l + lambda2 * (1 - SSIM).
inline Tensor loss_total(const Tensor& pred, const Tensor& target, const Tensor& mask, const LossWeights& w = {}) {
  Tensor total = loss_global(pred, target);
  if (w.local != 0.0) total = add(total, scale(loss_local(pred, target, mask), w.local));
  if (w.structural != 0.0) total = add(total, scale(loss_ssim(pred, target), w.structural));
  return total;
}

}  // namespace podf
