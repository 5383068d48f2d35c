#pragma once

// Deterministic synthetic stand-in for paired optical / PolSAR cloud data.
// Every sample is a pure function of (master seed, index, patch).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "podf/labels.hpp"
#include "podf/params.hpp"
#include "podf/tensor_file.hpp"

namespace podf {

inline constexpr std::size_t kOpticalChannels = 4;
inline constexpr std::size_t kPfsarChannels = 9;
inline constexpr std::size_t kBcfsarChannels = 3;
inline constexpr double kSpeckleLooks = 4.0;
inline constexpr double kChannelCorrelation = 0.6;

namespace detail {

/// Uniform lattice values on a (grid+1)^2 lattice, bilinearly interpolated
/// at pixel centres of a size x size image.
inline std::vector<double> value_noise(std::mt19937_64& rng, std::size_t grid, std::size_t size) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> lattice((grid + 1) * (grid + 1));
  for (double& v : lattice) v = uni(rng);
  std::vector<double> out(size * size);
  const double step = static_cast<double>(grid) / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    const double fy = (static_cast<double>(y) + 0.5) * step;
    const auto y0 = std::min(static_cast<std::size_t>(fy), grid - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) * step;
      const auto x0 = std::min(static_cast<std::size_t>(fx), grid - 1);
      const double tx = fx - static_cast<double>(x0);
      const double a = lattice[y0 * (grid + 1) + x0];
      const double b = lattice[y0 * (grid + 1) + x0 + 1];
      const double c = lattice[(y0 + 1) * (grid + 1) + x0];
      const double d = lattice[(y0 + 1) * (grid + 1) + x0 + 1];
      out[y * size + x] = (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
    }
  }
  return out;
}

/// Octaves on 4/8/16 lattices weighted 1/0.5/0.25.
inline std::vector<double> fractal_noise(std::mt19937_64& rng, std::size_t size) {
  std::vector<double> out(size * size, 0.0);
  const std::array<std::pair<std::size_t, double>, 3> octaves{{{4, 1.0}, {8, 0.5}, {16, 0.25}}};
  for (const auto& [grid, weight] : octaves) {
    const auto layer = value_noise(rng, grid, size);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weight * layer[i];
  }
  return out;
}

inline void standardize(std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  const double sd = std::sqrt(var / n);
  for (double& x : v) x = sd > 0.0 ? (x - m) / sd : 0.0;
}

inline void min_max_normalize(std::span<double> v) {
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo;
  const double range = *hi - *lo;
  for (double& x : v) x = range > 0.0 ? (x - a) / range : 0.0;
}

}  // namespace detail

/// Four-band smooth field in [0,1] with inter-band correlation ~0.6.
inline Tensor gen_clean_optical(std::uint64_t seed, std::size_t patch) {
  std::mt19937_64 rng(seed);
  auto shared = detail::fractal_noise(rng, patch);
  detail::standardize(shared);
  Tensor out(Shape{1, kOpticalChannels, patch, patch});
  auto d = out.mutable_data();
  const double a = std::sqrt(kChannelCorrelation);
  const double b = std::sqrt(1.0 - kChannelCorrelation);
  const std::size_t plane = patch * patch;
  for (std::size_t c = 0; c < kOpticalChannels; ++c) {
    auto own = detail::fractal_noise(rng, patch);
    detail::standardize(own);
    auto band = d.subspan(c * plane, plane);
    for (std::size_t i = 0; i < plane; ++i) band[i] = a * shared[i] + b * own[i];
    detail::min_max_normalize(band);
  }
  return out;
}

/// Fixed (channels x 4) mixing map, identical for every sample.
inline std::vector<double> polsar_mixing(std::size_t channels) {
  std::mt19937_64 rng(derive_seed(0x504f4c534152ULL, channels));
  std::normal_distribution<double> dist(0.0, 1.5);
  std::vector<double> m(channels * kOpticalChannels);
  for (double& v : m) v = dist(rng);
  return m;
}

/// clip(sigmoid(mix(clean - 0.5)) * speckle, 0, 1) with unit-mean
/// Gamma(looks) speckle per pixel and channel.
inline Tensor gen_polsar(const Tensor& clean, std::uint64_t seed, std::size_t channels, double looks = kSpeckleLooks) {
  const Shape s = clean.shape();
  if (s.c() != kOpticalChannels) throw ShapeError("gen_polsar: clean image must have 4 bands, got " + s.str());
  const auto mixing = polsar_mixing(channels);
  const std::size_t plane = s.h() * s.w();
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> speckle(looks, 1.0 / looks);
  Tensor out(Shape{s.n(), channels, s.h(), s.w()});
  auto d = out.mutable_data();
  auto cl = clean.data();
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        double z = 0.0;
        for (std::size_t j = 0; j < kOpticalChannels; ++j)
          z += mixing[c * kOpticalChannels + j] * (cl[(n * kOpticalChannels + j) * plane + i] - 0.5);
        const double signal = 1.0 / (1.0 + std::exp(-z));
        d[(n * channels + c) * plane + i] = std::clamp(signal * speckle(rng), 0.0, 1.0);
      }
  return out;
}

/// Binary mask covering round(target * P^2) pixels: the highest values of a
/// single-octave (lattice 8) noise field.
inline Tensor gen_cloud_mask(std::uint64_t seed, std::size_t patch, double target_coverage) {
  if (target_coverage < 0.0 || target_coverage > 1.0) throw std::invalid_argument("target coverage outside [0,1]");
  std::mt19937_64 rng(seed);
  const auto field = detail::value_noise(rng, 8, patch);
  const std::size_t total = patch * patch;
  const auto covered = static_cast<std::size_t>(std::llround(target_coverage * static_cast<double>(total)));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return field[a] > field[b]; });
  Tensor mask(Shape{1, 1, patch, patch});
  auto m = mask.mutable_data();
  for (std::size_t i = 0; i < covered; ++i) m[order[i]] = 1.0;
  return mask;
}

/// (1 - mask) * clean + mask * (0.9 + 0.1 u), u uniform per pixel.
inline Tensor apply_cloud(const Tensor& clean, const Tensor& mask, std::uint64_t seed) {
  const Shape s = clean.shape();
  const Shape ms = mask.shape();
  if (ms.n() != s.n() || ms.c() != 1 || ms.h() != s.h() || ms.w() != s.w()) {
    throw ShapeError("apply_cloud: mask " + ms.str() + " does not match image " + s.str());
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const std::size_t plane = s.h() * s.w();
  std::vector<double> fill(s.n() * plane);
  for (double& v : fill) v = 0.9 + 0.1 * uni(rng);
  Tensor out = clean.detach();
  auto d = out.mutable_data();
  auto m = mask.data();
  for (std::size_t n = 0; n < s.n(); ++n)
    for (std::size_t c = 0; c < s.c(); ++c)
      for (std::size_t i = 0; i < plane; ++i)
        if (m[n * plane + i] != 0.0) d[(n * s.c() + c) * plane + i] = fill[n * plane + i];
  return out;
}

// ---- samples and datasets -------------------------------------------------------

struct SamplePair {
  Tensor cloudy;  // (1,4,P,P)
  Tensor clean;   // (1,4,P,P)
  Tensor mask;    // (1,1,P,P), 1 = cloud
  Tensor pfsar;   // (1,9,P,P)
  Tensor bcfsar;  // (1,3,P,P)
  std::size_t coverage_bin = 0;
  std::size_t land_cover = 0;
};

/// Sub-seeds of one sample.
struct SampleSeeds {
  std::uint64_t optical, radar, mask, cloud, coverage;

  static SampleSeeds of(std::uint64_t master, std::size_t index) {
    const std::uint64_t base = derive_seed(master, index);
    return {derive_seed(base, 1), derive_seed(base, 2), derive_seed(base, 3), derive_seed(base, 4),
            derive_seed(base, 5)};
  }
};

/// Coverage target for sample `index`: bins cycle in equal proportion and the
/// target is uniform inside the bin, kept 1% away from its edges.
inline double coverage_target(std::uint64_t master, std::size_t index) {
  const std::size_t bin = index % kCoverageBinCount;
  const auto [lo, hi] = coverage_bin_bounds(bin);
  std::mt19937_64 rng(SampleSeeds::of(master, index).coverage);
  std::uniform_real_distribution<double> uni(lo + 0.01, hi - 0.01);
  return uni(rng);
}

inline SamplePair make_sample(std::uint64_t master, std::size_t index, std::size_t patch) {
  const SampleSeeds seeds = SampleSeeds::of(master, index);
  SamplePair s;
  s.clean = gen_clean_optical(seeds.optical, patch);
  s.mask = gen_cloud_mask(seeds.mask, patch, coverage_target(master, index));
  s.cloudy = apply_cloud(s.clean, s.mask, seeds.cloud);
  s.pfsar = gen_polsar(s.clean, seeds.radar, kPfsarChannels);
  s.bcfsar = gen_polsar(s.clean, seeds.radar, kBcfsarChannels);
  double covered = 0.0;
  for (double v : s.mask.data()) covered += v;
  s.coverage_bin = coverage_bin_of(covered / static_cast<double>(patch * patch));
  s.land_cover = index % kLandCoverCount;
  return s;
}

struct ManifestRecord {
  std::string path;  // sample directory relative to the dataset root
  std::string role;  // "train" or "test"
  std::size_t coverage_bin = 0;
  std::size_t land_cover = 0;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

/// Line-oriented dataset index:
///   # podf-manifest v1
///   seed <u64>
///   count <n>
///   patch <P>
///   <path> <role> <coverage_bin> <class_label>   (one line per sample)
struct Manifest {
  std::uint64_t seed = 0;
  std::size_t count = 0;
  std::size_t patch = 0;
  std::vector<ManifestRecord> records;

  friend bool operator==(const Manifest&, const Manifest&) = default;

  std::vector<ManifestRecord> with_role(std::string_view role) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.role == role) out.push_back(r);
    return out;
  }

  std::string str() const {
    std::ostringstream os;
    os << "# podf-manifest v1\nseed " << seed << "\ncount " << count << "\npatch " << patch << '\n';
    for (const auto& r : records) {
      os << r.path << ' ' << r.role << ' ' << kCoverageBinNames[r.coverage_bin] << ' ' << kLandCoverNames[r.land_cover]
         << '\n';
    }
    return os.str();
  }

  static Manifest parse(std::istream& is) {
    Manifest m;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string first;
      ls >> first;
      if (first == "seed") {
        ls >> m.seed;
      } else if (first == "count") {
        ls >> m.count;
      } else if (first == "patch") {
        ls >> m.patch;
      } else {
        ManifestRecord r;
        std::string bin, label;
        r.path = first;
        ls >> r.role >> bin >> label;
        if (!ls || (r.role != "train" && r.role != "test")) {
          throw FormatError("manifest line " + std::to_string(lineno) + " is malformed");
        }
        r.coverage_bin = label_index(kCoverageBinNames, bin);
        r.land_cover = label_index(kLandCoverNames, label);
        m.records.push_back(std::move(r));
        continue;
      }
      if (!ls) throw FormatError("manifest line " + std::to_string(lineno) + " is malformed");
    }
    if (m.records.size() != m.count) throw FormatError("manifest record count does not match header");
    return m;
  }

  static Manifest read(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest '" + path.string() + "'");
    return parse(is);
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest '" + path.string() + "'");
    os << str();
  }
};

inline std::size_t train_count(std::size_t count) { return count * 4 / 5; }

inline std::string sample_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu", index);
  return buf;
}

/// Generates `count` samples under `root` (one directory each) plus
/// root/manifest.txt. The first 80% are training samples.
inline Manifest build_dataset(const std::filesystem::path& root, std::uint64_t seed, std::size_t count,
                              std::size_t patch) {
  if (patch == 0 || patch % 4 != 0) throw std::invalid_argument("patch must be a positive multiple of 4");
  std::filesystem::create_directories(root);
  Manifest m{seed, count, patch, {}};
  const std::size_t n_train = train_count(count);
  for (std::size_t i = 0; i < count; ++i) {
    const SamplePair s = make_sample(seed, i, patch);
    const std::string name = sample_dir_name(i);
    const auto dir = root / name;
    std::filesystem::create_directories(dir);
    write_tensor(dir / "cloudy.podf", s.cloudy, 3);
    write_tensor(dir / "clean.podf", s.clean, 3);
    write_tensor(dir / "mask.podf", s.mask, 3);
    write_tensor(dir / "pfsar.podf", s.pfsar, 3);
    write_tensor(dir / "bcfsar.podf", s.bcfsar, 3);
    m.records.push_back({name, i < n_train ? "train" : "test", s.coverage_bin, s.land_cover});
  }
  m.write(root / "manifest.txt");
  return m;
}

inline SamplePair load_sample(const std::filesystem::path& root, const ManifestRecord& r) {
  const auto dir = root / r.path;
  SamplePair s;
  s.cloudy = read_tensor(dir / "cloudy.podf");
  s.clean = read_tensor(dir / "clean.podf");
  s.mask = read_tensor(dir / "mask.podf");
  s.pfsar = read_tensor(dir / "pfsar.podf");
  s.bcfsar = read_tensor(dir / "bcfsar.podf");
  s.coverage_bin = r.coverage_bin;
  s.land_cover = r.land_cover;
  return s;
}

}  // namespace podf
