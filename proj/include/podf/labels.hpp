#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <string_view>

namespace podf {

/// Cloud-coverage bins in percent: [0,20), [20,40), [40,60), [60,80), [80,100].
inline constexpr std::size_t kCoverageBinCount = 5;
inline constexpr std::array<std::string_view, kCoverageBinCount> kCoverageBinNames{"0-20", "20-40", "40-60", "60-80",
                                                                                 "80-100"};

inline constexpr std::size_t kLandCoverCount = 7;
inline constexpr std::array<std::string_view, kLandCoverCount> kLandCoverNames{
    "barren_sparse_vegetation", "building", "cropland", "tree_cover", "grassland", "traffic_route", "water"};

inline std::size_t coverage_bin_of(double fraction) {
  if (fraction < 0.0 || fraction > 1.0) throw std::out_of_range("coverage fraction outside [0,1]");
  const auto bin = static_cast<std::size_t>(fraction * 5.0);
  return bin >= kCoverageBinCount ? kCoverageBinCount - 1 : bin;
}

inline std::pair<double, double> coverage_bin_bounds(std::size_t bin) {
  return {0.2 * static_cast<double>(bin), 0.2 * static_cast<double>(bin + 1)};
}

template <std::size_t N>
std::size_t label_index(const std::array<std::string_view, N>& names, std::string_view name) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == name) return i;
  throw std::invalid_argument("unknown label '" + std::string(name) + "'");
}

}  // namespace podf
