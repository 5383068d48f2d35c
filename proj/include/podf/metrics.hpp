#pragma once

// Image-quality metrics and the per-bin / per-class report.

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "podf/labels.hpp"
#include "podf/loss.hpp"

namespace podf {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) for unit data range; +inf for identical inputs.
inline double psnr(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "psnr");
  auto p = pred.data();
  auto t = target.data();
  double mse = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) mse += (p[i] - t[i]) * (p[i] - t[i]);
  mse /= static_cast<double>(p.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

/// Pearson correlation over all elements. Two constant inputs give 1 when
/// equal and 0 otherwise; one constant input gives 0.
inline double cc(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "cc");
  auto p = pred.data();
  auto t = target.data();
  const double n = static_cast<double>(p.size());
  double mp = 0.0, mt = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mp += p[i];
    mt += t[i];
  }
  mp /= n;
  mt /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sxy += (p[i] - mp) * (t[i] - mt);
    sxx += (p[i] - mp) * (p[i] - mp);
    syy += (t[i] - mt) * (t[i] - mt);
  }
  if (sxx == 0.0 && syy == 0.0) return mp == mt ? 1.0 : 0.0;
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

/// Mean spectral angle in degrees between per-pixel channel vectors. Pixels
/// where either vector is zero contribute an angle of 0.
inline double sam(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "sam");
  const Shape s = pred.shape();
  const std::size_t plane = s.h() * s.w();
  auto p = pred.data();
  auto t = target.data();
  double total = 0.0;
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0, np = 0.0, nt = 0.0;
      for (std::size_t c = 0; c < s.c(); ++c) {
        const std::size_t k = (n * s.c() + c) * plane + i;
        dot += p[k] * t[k];
        np += p[k] * p[k];
        nt += t[k] * t[k];
      }
      if (np == 0.0 || nt == 0.0) continue;
      const double cosine = std::clamp(dot / std::sqrt(np * nt), -1.0, 1.0);
      total += std::acos(cosine);
    }
  return total / static_cast<double>(s.n() * plane) * 180.0 / std::numbers::pi;
}

inline double ssim_value(const Tensor& pred, const Tensor& target) {
  NoGradGuard guard;
  return ssim(pred, target).item();
}

struct SampleMetrics {
  double psnr = 0.0;  // capped
  double ssim = 0.0;
  double cc = 0.0;
  double sam = 0.0;
};

inline SampleMetrics evaluate_sample(const Tensor& pred, const Tensor& target) {
  return {std::min(psnr(pred, target), kPsnrCap), ssim_value(pred, target), cc(pred, target), sam(pred, target)};
}

/// Aggregated metrics. Text layout, one record per line:
///   # podf-metrics v1
///   # scope bin class count psnr ssim cc sam
///   cell    <bin> <class> ...   (bins x classes rows, bin-major)
///   bin     <bin> *       ...   (one per coverage bin)
///   class   *     <class> ...   (one per land-cover class)
///   overall *     *       ...
/// Empty groups print count 0 and "nan" metrics.
class MetricsReport {
 public:
  struct Accumulator {
    std::size_t count = 0;
    SampleMetrics sum;

    void add(const SampleMetrics& m) {
      ++count;
      sum.psnr += m.psnr;
      sum.ssim += m.ssim;
      sum.cc += m.cc;
      sum.sam += m.sam;
    }
    void merge(const Accumulator& o) {
      count += o.count;
      sum.psnr += o.sum.psnr;
      sum.ssim += o.sum.ssim;
      sum.cc += o.sum.cc;
      sum.sam += o.sum.sam;
    }
    SampleMetrics mean() const {
      if (count == 0) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        return {nan, nan, nan, nan};
      }
      const double n = static_cast<double>(count);
      return {sum.psnr / n, sum.ssim / n, sum.cc / n, sum.sam / n};
    }
  };

  void add(std::size_t bin, std::size_t land_cover, const SampleMetrics& m) {
    cells_.at(bin).at(land_cover).add(m);
  }

  Accumulator cell(std::size_t bin, std::size_t land_cover) const { return cells_.at(bin).at(land_cover); }
  Accumulator bin(std::size_t b) const {
    Accumulator a;
    for (const auto& c : cells_.at(b)) a.merge(c);
    return a;
  }
  Accumulator land_cover(std::size_t k) const {
    Accumulator a;
    for (const auto& row : cells_) a.merge(row.at(k));
    return a;
  }
  Accumulator overall() const {
    Accumulator a;
    for (std::size_t b = 0; b < kCoverageBinCount; ++b) a.merge(bin(b));
    return a;
  }

  void write(std::ostream& os) const {
    os << "# podf-metrics v1\n# scope bin class count psnr ssim cc sam\n";
    for (std::size_t b = 0; b < kCoverageBinCount; ++b)
      for (std::size_t k = 0; k < kLandCoverCount; ++k) row(os, "cell", kCoverageBinNames[b], kLandCoverNames[k], cells_[b][k]);
    for (std::size_t b = 0; b < kCoverageBinCount; ++b) row(os, "bin", kCoverageBinNames[b], "*", bin(b));
    for (std::size_t k = 0; k < kLandCoverCount; ++k) row(os, "class", "*", kLandCoverNames[k], land_cover(k));
    row(os, "overall", "*", "*", overall());
  }

  std::string str() const {
    std::ostringstream os;
    write(os);
    return os.str();
  }

 private:
  static void row(std::ostream& os, std::string_view scope, std::string_view b, std::string_view k, const Accumulator& a) {
    const SampleMetrics m = a.mean();
    char buf[160];
    std::snprintf(buf, sizeof buf, " %zu %.6f %.6f %.6f %.6f\n", a.count, m.psnr, m.ssim, m.cc, m.sam);
    os << scope << ' ' << b << ' ' << k << buf;
  }

  std::array<std::array<Accumulator, kLandCoverCount>, kCoverageBinCount> cells_{};
};

}  // namespace podf
