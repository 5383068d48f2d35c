#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>

#include "podf/batch_norm.hpp"
#include "podf/tensor.hpp"

namespace podf {

/// splitmix64 finalizer; used to derive independent seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix_seed(mix_seed(master) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct Init {
  enum class Kind { kaiming, zeros, constant } kind = Kind::kaiming;
  double value = 0.0;
  std::size_t fan_in = 1;

  static Init kaiming(std::size_t fan_in) { return {Kind::kaiming, 0.0, fan_in}; }
  static Init zeros() { return {Kind::zeros, 0.0, 1}; }
  static Init constant(double v) { return {Kind::constant, v, 1}; }
};

/// Named trainable parameters plus non-trainable buffers (batch-norm running
/// statistics). Names are stable and sorted.
class ParamStore {
 public:
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.numel();
    return n;
  }

  Tensor& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
    return it->second;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  /// Deep copy of values (no shared storage).
  ParamStore clone() const {
    ParamStore out;
    for (const auto& [k, t] : params_) out.params_[k] = t.detach().set_requires_grad(true);
    for (const auto& [k, t] : buffers_) out.buffers_[k] = t.detach();
    return out;
  }

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
};

/// Parameter lookup during a forward pass. In building mode missing entries
/// are created with a seed derived from (seed, full name); otherwise a
/// missing name is an error.
class Scope {
 public:
  Scope(ParamStore& store, Mode mode, bool building = false, std::uint64_t seed = 0)
      : store_(&store), mode_(mode), building_(building), seed_(seed) {}

  Scope child(std::string_view name) const {
    Scope s = *this;
    s.prefix_ = prefix_ + std::string(name) + ".";
    return s;
  }

  Mode mode() const { return mode_; }
  bool building() const { return building_; }

  Tensor param(std::string_view name, Shape shape, Init init) const {
    const std::string full = prefix_ + std::string(name);
    auto& params = store_->params();
    auto it = params.find(full);
    if (it != params.end()) {
      if (it->second.shape() != shape) {
        throw ShapeError("parameter '" + full + "' has shape " + it->second.shape().str() + ", expected " + shape.str());
      }
      return it->second;
    }
    if (!building_) throw std::out_of_range("parameter '" + full + "' missing for this configuration");
    Tensor t(shape);
    fill(t, init, full);
    t.set_requires_grad(true);
    params.emplace(full, t);
    return t;
  }

  BatchNormStats batch_norm_stats(std::string_view name, std::size_t channels) const {
    return {buffer(std::string(name) + ".running_mean", Shape{1, channels, 1, 1}, 0.0),
            buffer(std::string(name) + ".running_var", Shape{1, channels, 1, 1}, 1.0)};
  }

 private:
  Tensor buffer(const std::string& name, Shape shape, double fill_value) const {
    const std::string full = prefix_ + name;
    auto& buffers = store_->buffers();
    auto it = buffers.find(full);
    if (it != buffers.end()) return it->second;
    if (!building_) throw std::out_of_range("buffer '" + full + "' missing for this configuration");
    Tensor t(shape, fill_value);
    buffers.emplace(full, t);
    return t;
  }

  void fill(Tensor& t, const Init& init, const std::string& full) const {
    auto d = t.mutable_data();
    switch (init.kind) {
      case Init::Kind::zeros:
        std::fill(d.begin(), d.end(), 0.0);
        break;
      case Init::Kind::constant:
        std::fill(d.begin(), d.end(), init.value);
        break;
      case Init::Kind::kaiming: {
        std::mt19937_64 rng(derive_seed(seed_, hash_name(full)));
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(init.fan_in)));
        for (double& v : d) v = dist(rng);
        break;
      }
    }
  }

  ParamStore* store_;
  Mode mode_;
  bool building_;
  std::uint64_t seed_;
  std::string prefix_;
};

}  // namespace podf
