#pragma once

// Dual-branch cloud-removal network: optical (gated residual blocks) and
// PolSAR (dynamic-filter residual blocks) encoders joined by cross-fusion
// blocks at every scale, a fusion branch, attention refinement at the
// bottleneck and an ASPP decoder with skip connections and a long additive
// input skip.

#include <array>
#include <cstdint>
#include <string>

#include "podf/blocks.hpp"
#include "podf/fusion.hpp"
#include "podf/params.hpp"

namespace podf {

struct Ablations {
  bool no_scdf = false;
  bool no_gc = false;
  bool no_mmcf = false;
  bool no_mmrf = false;
  bool no_aspp = false;
  bool no_polsar = false;

  friend bool operator==(const Ablations&, const Ablations&) = default;
};

struct ModelConfig {
  std::size_t base_channels = 8;
  std::size_t opt_in_channels = 4;
  std::size_t sar_in_channels = 9;
  std::size_t patch = 32;
  Ablations ablations;
  bool scru_literal = false;
  // Final decoder conv starts at zero so the untrained network is the identity
  // on the cloudy input; false keeps Kaiming like every other conv.
  bool zero_init_output = true;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  static ModelConfig full_scale() {
    ModelConfig c;
    c.base_channels = 64;
    c.patch = 256;
    return c;
  }

  /// Dilation rates 6/12/18, clipped to 2/4/6 when the patch is smaller than
  /// twice the largest rate.
  std::array<std::size_t, 3> aspp_rates() const {
    if (patch < 2 * 18) return {2, 4, 6};
    return {6, 12, 18};
  }

  void validate() const {
    if (patch == 0 || patch % 4 != 0) throw std::invalid_argument("patch must be a positive multiple of 4");
    if (patch < 8) throw std::invalid_argument("patch must be at least 8");
    if (base_channels == 0) throw std::invalid_argument("base_channels must be positive");
    if (opt_in_channels == 0) throw std::invalid_argument("opt_in_channels must be positive");
    if (!ablations.no_polsar && sar_in_channels == 0) {
      throw std::invalid_argument("sar_in_channels must be positive unless no_polsar is set");
    }
  }
};

class Model {
 public:
  /// Creates every parameter with Kaiming fan-in normal conv kernels, zero
  /// biases and unit batch-norm scales; values depend only on (seed, name).
  static Model build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m(config);
    // Parameter shapes do not depend on the patch size: materialize them with
    // a small dummy pass.
    NoGradGuard guard;
    const std::size_t p = 8;
    Tensor opt(Shape{1, config.opt_in_channels, p, p}, 0.5);
    Tensor sar(Shape{1, config.ablations.no_polsar ? 1 : config.sar_in_channels, p, p}, 0.5);
    m.run(Scope(m.params_, Mode::eval, true, seed), opt, sar);
    if (config.zero_init_output) {
      for (double& v : m.params_.param("dec.out.w").mutable_data()) v = 0.0;
    }
    return m;
  }

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Predicted cloud-free optical image, same shape as `cloudy`.
  Tensor forward(const Tensor& cloudy, const Tensor& sar, Mode mode = Mode::train) {
    check_inputs(cloudy, sar);
    return run(Scope(params_, mode), cloudy, sar);
  }

  Model clone() const {
    Model m(config_);
    m.params_ = params_.clone();
    return m;
  }

 private:
  explicit Model(ModelConfig c) : config_(c) {}

  void check_inputs(const Tensor& cloudy, const Tensor& sar) const {
    const Shape o = cloudy.shape();
    const std::size_t P = config_.patch;
    if (o.c() != config_.opt_in_channels || o.h() != P || o.w() != P) {
      throw ShapeError("forward: optical input " + o.str() + " does not match (N," +
                       std::to_string(config_.opt_in_channels) + ',' + std::to_string(P) + ',' + std::to_string(P) + ')');
    }
    if (!config_.ablations.no_polsar) {
      const Shape s = sar.shape();
      if (s.n() != o.n() || s.c() != config_.sar_in_channels || s.h() != P || s.w() != P) {
        throw ShapeError("forward: PolSAR input " + s.str() + " does not match (" + std::to_string(o.n()) + ',' +
                         std::to_string(config_.sar_in_channels) + ',' + std::to_string(P) + ',' + std::to_string(P) +
                         ')');
      }
    }
    auto in_range = [](const Tensor& t) {
      for (double v : t.data())
        if (!(v >= 0.0 && v <= 1.0)) return false;
      return true;
    };
    if (!in_range(cloudy)) throw std::domain_error("forward: optical input outside normalized range [0,1]");
    if (!config_.ablations.no_polsar && !in_range(sar)) {
      throw std::domain_error("forward: PolSAR input outside normalized range [0,1]");
    }
  }

  Tensor run(const Scope& root, const Tensor& cloudy, const Tensor& sar) {
    const Ablations& ab = config_.ablations;
    const bool dual = !ab.no_polsar;
    const std::size_t b = config_.base_channels;
    const BlockOptions opt_blocks{!ab.no_gc, true};
    const BlockOptions sar_blocks{true, !ab.no_scdf};
    const MmcfOptions mmcf_opts{!ab.no_gc, !ab.no_mmcf, dual};
    auto act = [](const Tensor& t) { return leaky_relu(t, kLeakySlope); };

    const Scope so = root.child("opt");
    const Scope ss = root.child("sar");

    Tensor o = act(conv_layer(so, "stem", cloudy, b));
    Tensor s = dual ? act(conv_layer(ss, "stem", sar, b)) : Tensor{};

    std::array<Tensor, 4> fused;
    std::array<Tensor, 2> skips;
    const std::array<std::size_t, 4> widths{b, 2 * b, 4 * b, 4 * b};
    for (std::size_t stage = 0; stage < 4; ++stage) {
      const std::string id = std::to_string(stage + 1);
      if (stage == 1 || stage == 2) {
        o = downsample_block(so.child("down" + std::to_string(stage)), o, widths[stage]);
        if (dual) s = downsample_block(ss.child("down" + std::to_string(stage)), s, widths[stage]);
      }
      o = rb_gc(so.child("rb" + id), o, opt_blocks);
      if (dual) s = rb_df(ss.child("rb" + id), s, sar_blocks);
      MmcfOutput m = mmcf_forward(root.child("mmcf" + id), o, s, mmcf_opts);
      o = m.opt;
      s = m.sar;
      fused[stage] = m.fused;
      if (stage < 2) skips[stage] = o;
    }

    const std::size_t deep = 4 * b;
    o = act(conv_layer(so, "exit", o, deep));
    if (dual) s = act(conv_layer(ss, "exit", s, deep));
    Tensor f = concat({avg_pool(avg_pool(fused[0], 2, 2), 2, 2), avg_pool(fused[1], 2, 2), fused[2], fused[3]});
    f = act(conv_layer(root.child("fusion"), "exit", f, deep));

    Tensor x;
    if (ab.no_mmrf) {
      x = act(conv_layer(root, "merge", dual ? concat({o, s, f}) : concat({o, f}), deep, 1));
    } else {
      x = mmrf(root.child("mmrf"), o, dual ? s : o, f, config_.scru_literal);
    }

    const Scope dec = root.child("dec");
    if (!ab.no_aspp) x = aspp(dec.child("aspp"), x, config_.aspp_rates());
    x = upsample_block(dec.child("up1"), x, 2 * b);
    x = act(conv_layer(dec, "merge1", concat({x, skips[1]}), 2 * b, 1));
    x = residual_block(dec.child("rb1"), x);
    x = residual_block(dec.child("rb2"), x);
    x = upsample_block(dec.child("up2"), x, b);
    x = act(conv_layer(dec, "merge2", concat({x, skips[0]}), b, 1));
    x = residual_block(dec.child("rb3"), x);
    x = residual_block(dec.child("rb4"), x);
    x = conv_layer(dec, "out", x, config_.opt_in_channels);
    return add(x, cloudy);
  }

  ModelConfig config_;
  ParamStore params_;
};

}  // namespace podf
