#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "podf/params.hpp"

namespace podf {

struct AdamConfig {
  double learning_rate = 7e-5;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

/// Adam with bias correction. Moment buffers are keyed by parameter name so
/// they can be checkpointed alongside the parameters.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  std::size_t steps() const { return step_; }
  void set_steps(std::size_t s) { step_ = s; }
  std::map<std::string, std::vector<double>>& first_moments() { return m_; }
  std::map<std::string, std::vector<double>>& second_moments() { return v_; }

  /// Global L2 norm of all gradients.
  static double gradient_norm(const ParamStore& store) {
    double s = 0.0;
    for (const auto& [_, t] : store.params())
      for (double g : t.grad()) s += g * g;
    return std::sqrt(s);
  }

  /// Applies one update from the accumulated gradients, then clears them.
  void step(ParamStore& store) {
    ++step_;
    double clip = 1.0;
    if (cfg_.clip_norm > 0.0) {
      const double norm = gradient_norm(store);
      if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, t] : store.params()) {
      if (!t.has_grad()) continue;
      const std::vector<double> g = t.grad();
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.empty()) {
        m.assign(g.size(), 0.0);
        v.assign(g.size(), 0.0);
      }
      auto w = t.mutable_data();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
        w[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      }
    }
    store.zero_grad();
  }

 private:
  AdamConfig cfg_;
  std::size_t step_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

}  // namespace podf
