#pragma once

#include <cmath>
#include <vector>

#include "podf/tensor.hpp"

namespace podf {

enum class Mode { train, eval };

/// Running per-channel statistics, each (1,C,1,1).
struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalization over (N,H,W). Train mode uses batch statistics
/// and updates `stats`; eval mode uses the running statistics.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, Mode mode) {
  const Shape s = x.shape();
  const std::size_t C = s.c();
  if (gamma.numel() != C || beta.numel() != C || stats.running_mean.numel() != C || stats.running_var.numel() != C) {
    throw ShapeError("batch_norm: affine/stat parameters must have " + std::to_string(C) + " values");
  }
  const std::size_t plane = s.h() * s.w();
  const std::size_t count = s.n() * plane;
  auto xs = x.data();

  std::vector<double> mu(C, 0.0), inv_std(C, 0.0);
  if (mode == Mode::train) {
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t k = 0; k < plane; ++k) m += xs[(n * C + c) * plane + k];
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t n = 0; n < s.n(); ++n)
        for (std::size_t k = 0; k < plane; ++k) {
          const double d = xs[(n * C + c) * plane + k] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      mu[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + kBatchNormEps);
      auto rm = stats.running_mean.mutable_data();
      auto rv = stats.running_var.mutable_data();
      const double unbiased = count > 1 ? v * static_cast<double>(count) / static_cast<double>(count - 1) : v;
      rm[c] = (1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * m;
      rv[c] = (1.0 - kBatchNormMomentum) * rv[c] + kBatchNormMomentum * unbiased;
    }
  } else {
    auto rm = stats.running_mean.data();
    auto rv = stats.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mu[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + kBatchNormEps);
    }
  }

  auto gm = gamma.data();
  auto bt = beta.data();
  std::vector<double> xhat(s.numel()), y(s.numel());
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t k = 0; k < plane; ++k) {
        const std::size_t i = (n * C + c) * plane + k;
        xhat[i] = (xs[i] - mu[c]) * inv_std[c];
        y[i] = gm[c] * xhat[i] + bt[c];
      }

  return Tensor::make_result(
      "batch_norm", s, std::move(y), {x, gamma, beta},
      [s, C, plane, count, mode, inv_std, xhat = std::move(xhat)](detail::Node& self) {
        detail::Node& nx = *self.parents[0];
        detail::Node& ng = *self.parents[1];
        detail::Node& nb = *self.parents[2];
        const auto& g = self.grad;
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (std::size_t n = 0; n < s.n(); ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t k = 0; k < plane; ++k) {
              const std::size_t i = (n * C + c) * plane + k;
              sum_g[c] += g[i];
              sum_gx[c] += g[i] * xhat[i];
            }
        if (ng.requires_grad) {
          auto& gg = ng.grad_buffer();
          for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
        }
        if (nb.requires_grad) {
          auto& gb = nb.grad_buffer();
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (!nx.requires_grad) return;
        auto& gx = nx.grad_buffer();
        const double m = static_cast<double>(count);
        for (std::size_t n = 0; n < s.n(); ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const double scale = ng.data[c] * inv_std[c];
            for (std::size_t k = 0; k < plane; ++k) {
              const std::size_t i = (n * C + c) * plane + k;
              if (mode == Mode::train) {
                gx[i] += scale * (g[i] - sum_g[c] / m - xhat[i] * sum_gx[c] / m);
              } else {
                gx[i] += scale * g[i];
              }
            }
          }
      });
}

}  // namespace podf
