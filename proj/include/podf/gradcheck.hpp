#pragma once

// Central finite-difference gradient checks and the named per-operator suite
// used by `podf gradcheck` and the test binaries.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "podf/blocks.hpp"
#include "podf/fusion.hpp"
#include "podf/loss.hpp"

namespace podf {

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;
// Denominator floor: components below it are compared with absolute tolerance
// kGradCheckTolerance * kGradCheckFloor.
inline constexpr double kGradCheckFloor = 1e-5;

inline Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> uni(lo, hi);
  Tensor t(s);
  for (double& v : t.mutable_data()) v = uni(rng);
  return t;
}

inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max({std::fabs(analytic), std::fabs(numeric), kGradCheckFloor});
}

/// Max relative error between backward() gradients of `loss_fn` and central
/// differences, over every element of each leaf (or a seeded subset of
/// `max_per_leaf` elements for larger leaves). An element that misses the
/// tolerance is retried with steps h/10 and h/100 and keeps its best error, so
/// a LeakyReLU kink lying within h of the evaluation point is stepped over.
inline double gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> leaves, std::uint64_t seed = 0,
                        std::size_t max_per_leaf = 64, double h = kGradCheckStep) {
  for (auto& t : leaves) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : leaves) analytic.push_back(t.grad());

  std::mt19937_64 rng(seed);
  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor& leaf = leaves[li];
    std::vector<std::size_t> idx(leaf.numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > max_per_leaf) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_leaf);
    }
    auto data = leaf.mutable_data();
    for (std::size_t i : idx) {
      const double saved = data[i];
      double best = std::numeric_limits<double>::infinity();
      for (double step = h; step >= h / 100.0 && best > kGradCheckTolerance; step /= 10.0) {
        data[i] = saved + step;
        const double up = loss_fn().item();
        data[i] = saved - step;
        const double down = loss_fn().item();
        data[i] = saved;
        best = std::min(best, relative_error(analytic[li][i], (up - down) / (2.0 * step)));
      }
      worst = std::max(worst, best);
    }
  }
  for (auto& t : leaves) t.zero_grad();
  return worst;
}

/// sum(y * r) for a fixed random r: a scalar probe of every output element.
inline Tensor project(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x70726f6aULL);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

struct GradCheckCase {
  std::string name;
  std::function<double(std::uint64_t seed)> run;
};

namespace detail {

inline std::vector<Tensor> leaves_of(Tensor x, ParamStore& store) {
  std::vector<Tensor> out{x.set_requires_grad(true)};
  for (auto& [_, t] : store.params()) out.push_back(t);
  return out;
}

// Gradient check of a Scope-parameterized block at input shape `s`.
template <typename Block>
double check_block(Shape s, std::uint64_t seed, Block block) {
  std::mt19937_64 rng(seed);
  Tensor x = random_tensor(s, rng).set_requires_grad(true);
  ParamStore store;
  {
    NoGradGuard g;
    block(Scope(store, Mode::train, true, seed), x);
  }
  for (auto& [name, t] : store.params()) {
    // Residual attention scales start at 0; open them so every path is probed.
    if (name.find("gamma_") != std::string::npos) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.7);
  }
  return gradcheck([&] { return project(block(Scope(store, Mode::train), x), seed); }, leaves_of(x, store), seed);
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_suite() {
  using detail::check_block;
  std::vector<GradCheckCase> cases;

  cases.push_back({"conv2d", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor(Shape{1, 3, 7, 7}, rng).set_requires_grad(true);
                     Tensor w = random_tensor(Shape{4, 3, 3, 3}, rng).set_requires_grad(true);
                     Tensor b = random_tensor(Shape{1, 4, 1, 1}, rng).set_requires_grad(true);
                     const ConvSpec spec{3, 4, 3, 3, 2, 1, 2};
                     return gradcheck([&] { return project(conv2d(x, w, b, spec), seed); }, {x, w, b}, seed);
                   }});
  cases.push_back({"conv_transpose2d", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor(Shape{1, 4, 4, 4}, rng).set_requires_grad(true);
                     Tensor w = random_tensor(Shape{4, 2, 4, 4}, rng).set_requires_grad(true);
                     Tensor b = random_tensor(Shape{1, 2, 1, 1}, rng).set_requires_grad(true);
                     const ConvSpec spec{4, 2, 4, 4, 2, 1, 1};
                     return gradcheck([&] { return project(conv_transpose2d(x, w, b, spec), seed); }, {x, w, b}, seed);
                   }});
  cases.push_back({"matmul", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor a = random_tensor(Shape{1, 2, 5, 7}, rng).set_requires_grad(true);
                     Tensor b = random_tensor(Shape{1, 2, 7, 3}, rng).set_requires_grad(true);
                     return gradcheck([&] { return project(matmul(a, b), seed); }, {a, b}, seed);
                   }});
  cases.push_back({"softmax", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor(Shape{1, 3, 4, 6}, rng, -3.0, 3.0).set_requires_grad(true);
                     return gradcheck(
                         [&] { return add(project(softmax(x, 3), seed), project(softmax(x, 1), seed + 1)); }, {x}, seed);
                   }});
  cases.push_back({"elementwise", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor a = random_tensor(Shape{1, 4, 6, 6}, rng).set_requires_grad(true);
                     Tensor b = random_tensor(Shape{1, 4, 1, 1}, rng, 0.5, 1.5).set_requires_grad(true);
                     return gradcheck(
                         [&] {
                           Tensor h = add(mul(leaky_relu(a), b), tanh(a));
                           h = div(sigmoid(h), add_scalar(square(b), 0.5));
                           h = concat({h, relu(scale(a, 0.5)), transpose_hw(a)});
                           h = pad(h, 1, PadMode::replicate);
                           h = avg_pool(h, 2, 2);
                           h = add(h, expand_spatial(global_avg_pool(h), 4, 4));
                           return add(project(h, seed), sum(sqrt(add_scalar(square(a), 1.0))));
                         },
                         {a, b}, seed);
                   }});
  cases.push_back({"batch_norm", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor(Shape{2, 3, 4, 4}, rng).set_requires_grad(true);
                     Tensor g = random_tensor(Shape{1, 3, 1, 1}, rng, 0.5, 1.5).set_requires_grad(true);
                     Tensor b = random_tensor(Shape{1, 3, 1, 1}, rng).set_requires_grad(true);
                     BatchNormStats stats{Tensor(Shape{1, 3, 1, 1}, 0.0), Tensor(Shape{1, 3, 1, 1}, 1.0)};
                     double err = gradcheck([&] { return project(batch_norm(x, g, b, stats, Mode::train), seed); },
                                            {x, g, b}, seed);
                     err = std::max(err, gradcheck([&] { return project(batch_norm(x, g, b, stats, Mode::eval), seed); },
                                                   {x, g, b}, seed));
                     return err;
                   }});
  cases.push_back({"gated_conv", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor(Shape{1, 3, 6, 6}, rng).set_requires_grad(true);
                     Tensor fw = random_tensor(Shape{4, 3, 3, 3}, rng).set_requires_grad(true);
                     Tensor gw = random_tensor(Shape{4, 3, 3, 3}, rng).set_requires_grad(true);
                     Tensor fb = random_tensor(Shape{1, 4, 1, 1}, rng).set_requires_grad(true);
                     Tensor gb = random_tensor(Shape{1, 4, 1, 1}, rng).set_requires_grad(true);
                     const ConvSpec spec{3, 4, 3, 3, 1, 1, 1};
                     return gradcheck([&] { return project(gated_conv(x, fw, gw, fb, gb, spec), seed); },
                                      {x, fw, gw, fb, gb}, seed);
                   }});
  cases.push_back({"rb_gc", [](std::uint64_t seed) {
                     return check_block(Shape{1, 4, 6, 6}, seed, [](const Scope& s, const Tensor& x) { return rb_gc(s, x); });
                   }});
  cases.push_back({"filter_normalize", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor raw = random_tensor(Shape{1, 9, 4, 4}, rng).set_requires_grad(true);
                     Tensor alpha = random_tensor(Shape{1, 1, 1, 1}, rng, 0.5, 2.0).set_requires_grad(true);
                     Tensor beta = random_tensor(Shape{1, 1, 1, 1}, rng).set_requires_grad(true);
                     Tensor raw_ch = random_tensor(Shape{1, 4, 1, 9}, rng).set_requires_grad(true);
                     Tensor alpha_ch = random_tensor(Shape{1, 4, 1, 1}, rng, 0.5, 2.0).set_requires_grad(true);
                     Tensor beta_ch = random_tensor(Shape{1, 4, 1, 1}, rng).set_requires_grad(true);
                     return gradcheck(
                         [&] {
                           return add(project(filter_normalize(raw, alpha, beta, 1), seed),
                                      project(filter_normalize(raw_ch, alpha_ch, beta_ch, 3), seed + 1));
                         },
                         {raw, alpha, beta, raw_ch, alpha_ch, beta_ch}, seed);
                   }});
  cases.push_back({"scdf", [](std::uint64_t seed) {
                     return check_block(Shape{1, 8, 6, 6}, seed, [](const Scope& s, const Tensor& x) { return scdf(s, x); });
                   }});
  cases.push_back({"scdf_apply", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor x = random_tensor(Shape{2, 3, 5, 5}, rng).set_requires_grad(true);
                     Tensor sp = random_tensor(Shape{2, 9, 5, 5}, rng).set_requires_grad(true);
                     Tensor ch = random_tensor(Shape{2, 3, 3, 3}, rng).set_requires_grad(true);
                     return gradcheck([&] { return project(scdf_apply(x, FilterBank{sp, ch, 3}), seed); }, {x, sp, ch}, seed);
                   }});
  cases.push_back({"rb_df", [](std::uint64_t seed) {
                     return check_block(Shape{1, 8, 6, 6}, seed, [](const Scope& s, const Tensor& x) { return rb_df(s, x); });
                   }});
  cases.push_back({"residual_block", [](std::uint64_t seed) {
                     return check_block(Shape{1, 4, 6, 6}, seed,
                                        [](const Scope& s, const Tensor& x) { return residual_block(s, x); });
                   }});
  cases.push_back({"downsample", [](std::uint64_t seed) {
                     return check_block(Shape{1, 4, 8, 8}, seed,
                                        [](const Scope& s, const Tensor& x) { return downsample_block(s, x, 8); });
                   }});
  cases.push_back({"upsample", [](std::uint64_t seed) {
                     return check_block(Shape{1, 8, 4, 4}, seed,
                                        [](const Scope& s, const Tensor& x) { return upsample_block(s, x, 4); });
                   }});
  cases.push_back({"aspp", [](std::uint64_t seed) {
                     return check_block(Shape{1, 8, 8, 8}, seed, [](const Scope& s, const Tensor& x) {
                       return aspp(s, x, {2, 4, 6});
                     });
                   }});
  cases.push_back({"mmcf", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed + 17);
                     Tensor sar = random_tensor(Shape{1, 4, 6, 6}, rng).set_requires_grad(true);
                     return check_block(Shape{1, 4, 6, 6}, seed, [sar](const Scope& s, const Tensor& x) {
                       MmcfOutput m = mmcf_forward(s, x, sar);
                       return concat({m.opt, m.sar, m.fused});
                     });
                   }});
  cases.push_back({"scru", [](std::uint64_t seed) {
                     return check_block(Shape{1, 8, 4, 4}, seed, [](const Scope& s, const Tensor& x) { return scru(s, x); });
                   }});
  cases.push_back({"mwru", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed + 23);
                     Tensor a = random_tensor(Shape{1, 4, 3, 3}, rng).set_requires_grad(true);
                     Tensor b = random_tensor(Shape{1, 4, 3, 3}, rng).set_requires_grad(true);
                     return check_block(Shape{1, 4, 3, 3}, seed,
                                        [a, b](const Scope& s, const Tensor& x) { return mwru(s, a, b, x); });
                   }});
  cases.push_back({"mmrf", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed + 29);
                     Tensor a = random_tensor(Shape{1, 4, 3, 3}, rng).set_requires_grad(true);
                     Tensor b = random_tensor(Shape{1, 4, 3, 3}, rng).set_requires_grad(true);
                     return check_block(Shape{1, 4, 3, 3}, seed,
                                        [a, b](const Scope& s, const Tensor& x) { return mmrf(s, a, b, x); });
                   }});
  cases.push_back({"loss_total", [](std::uint64_t seed) {
                     std::mt19937_64 rng(seed);
                     Tensor pred = random_tensor(Shape{1, 4, 8, 8}, rng, 0.0, 1.0).set_requires_grad(true);
                     Tensor target = random_tensor(Shape{1, 4, 8, 8}, rng, 0.0, 1.0);
                     Tensor mask(Shape{1, 1, 8, 8});
                     auto m = mask.mutable_data();
                     for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i % 3 == 0) ? 1.0 : 0.0;
                     return gradcheck([&] { return loss_total(pred, target, mask); }, {pred}, seed, 256);
                   }});
  return cases;
}

}  // namespace podf
