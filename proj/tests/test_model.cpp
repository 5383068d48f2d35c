#include <gtest/gtest.h>

#include <iostream>
#include <random>

#include "podf/gradcheck.hpp"
#include "podf/loss.hpp"
#include "podf/model.hpp"
#include "podf/optim.hpp"
#include "support.hpp"

using namespace podf;
using namespace podf::test;

namespace {

struct Inputs {
  Tensor cloudy, sar, clean, mask;
};

Inputs random_inputs(const ModelConfig& c, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t P = c.patch;
  Inputs in;
  in.cloudy = random_tensor(Shape{n, c.opt_in_channels, P, P}, rng, 0.0, 1.0);
  in.sar = random_tensor(Shape{n, c.ablations.no_polsar ? 1 : c.sar_in_channels, P, P}, rng, 0.0, 1.0);
  in.clean = random_tensor(Shape{n, c.opt_in_channels, P, P}, rng, 0.0, 1.0);
  in.mask = Tensor(Shape{n, 1, P, P});
  auto m = in.mask.mutable_data();
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (i / P) % 3 == 0 ? 1.0 : 0.0;
  return in;
}

ModelConfig tiny() {
  ModelConfig c;
  c.base_channels = 4;
  c.patch = 8;
  return c;
}

}  // namespace

TEST(Model, SameSeedGivesIdenticalParameters) {
  Model a = Model::build(ModelConfig{}, 5), b = Model::build(ModelConfig{}, 5), c = Model::build(ModelConfig{}, 6);
  ASSERT_EQ(a.params().params().size(), b.params().params().size());
  bool differs = false;
  for (const auto& [name, t] : a.params().params()) {
    expect_bit_equal(t, b.params().params().at(name));
    const Tensor& o = c.params().params().at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) differs = differs || t.data()[i] != o.data()[i];
  }
  EXPECT_TRUE(differs);
}

TEST(Model, ParameterCounts) {
  const std::size_t desk = Model::build(ModelConfig{}, 0).params().parameter_count();
  EXPECT_GT(desk, 0u);
  EXPECT_EQ(desk, Model::build(ModelConfig{}, 1).params().parameter_count());
  const std::size_t full = Model::build(ModelConfig::full_scale(), 0).params().parameter_count();
  std::cout << "parameters: desk " << desk << ", full-scale " << full << '\n';
  RecordProperty("desk_parameters", std::to_string(desk));
  RecordProperty("full_scale_parameters", std::to_string(full));
}

TEST(Model, ZeroFinalConvIsLongSkipIdentity) {
  Model m = Model::build(ModelConfig{}, 2);
  const Inputs in = random_inputs(m.config(), 2, 3);
  expect_bit_equal(m.forward(in.cloudy, in.sar), in.cloudy);
  expect_bit_equal(m.forward(in.cloudy, in.sar, Mode::eval), in.cloudy);
}

TEST(Model, OutputShapeMatchesInput) {
  ModelConfig c;
  c.zero_init_output = false;
  Model m = Model::build(c, 3);
  const Inputs in = random_inputs(c, 2, 4);
  EXPECT_EQ(m.forward(in.cloudy, in.sar).shape(), in.cloudy.shape());
}

TEST(Model, EvalForwardIsDeterministic) {
  ModelConfig c = tiny();
  c.zero_init_output = false;
  Model m = Model::build(c, 4);
  const Inputs in = random_inputs(c, 1, 5);
  NoGradGuard g;
  expect_bit_equal(m.forward(in.cloudy, in.sar, Mode::eval), m.forward(in.cloudy, in.sar, Mode::eval));
}

TEST(Model, AblatedVariantsKeepOutputShape) {
  const std::vector<std::pair<const char*, bool Ablations::*>> flags{
      {"no_scdf", &Ablations::no_scdf}, {"no_gc", &Ablations::no_gc},     {"no_mmcf", &Ablations::no_mmcf},
      {"no_mmrf", &Ablations::no_mmrf}, {"no_aspp", &Ablations::no_aspp}, {"no_polsar", &Ablations::no_polsar}};
  for (const auto& [name, member] : flags) {
    ModelConfig c = tiny();
    c.zero_init_output = false;
    c.ablations.*member = true;
    Model m = Model::build(c, 1);
    const Inputs in = random_inputs(c, 1, 2);
    EXPECT_EQ(m.forward(in.cloudy, in.sar).shape(), in.cloudy.shape()) << name;
  }
  ModelConfig c = tiny();
  c.ablations.no_mmcf = c.ablations.no_mmrf = true;
  Model m = Model::build(c, 1);
  const Inputs in = random_inputs(c, 1, 2);
  EXPECT_EQ(m.forward(in.cloudy, in.sar).shape(), in.cloudy.shape());
}

TEST(Model, NoPolsarIgnoresSarInput) {
  ModelConfig c = tiny();
  c.zero_init_output = false;
  c.ablations.no_polsar = true;
  Model m = Model::build(c, 1);
  Inputs in = random_inputs(c, 1, 2);
  in.sar.set_requires_grad(true);
  backward(loss_total(m.forward(in.cloudy, in.sar), in.clean, in.mask));
  for (double g : in.sar.grad()) EXPECT_EQ(g, 0.0);
  for (const auto& [name, _] : m.params().params()) EXPECT_EQ(name.rfind("sar.", 0), std::string::npos) << name;
}

TEST(Model, EveryParameterReceivesGradient) {
  ModelConfig c;
  c.zero_init_output = false;
  Model m = Model::build(c, 7);
  fill_all(m.params(), "gamma_", 0.5);
  const Inputs in = random_inputs(c, 2, 8);
  backward(loss_total(m.forward(in.cloudy, in.sar), in.clean, in.mask));
  for (const auto& [name, t] : m.params().params()) {
    bool nonzero = false;
    for (double g : t.grad()) nonzero = nonzero || g != 0.0;
    EXPECT_TRUE(nonzero) << name;
  }
}

TEST(Model, FiniteDifferenceSpotCheck) {
  ModelConfig c;
  c.zero_init_output = false;
  Model m = Model::build(c, 9);
  fill_all(m.params(), "gamma_", 0.5);
  const Inputs in = random_inputs(c, 2, 10);
  auto loss = [&] { return loss_total(m.forward(in.cloudy, in.sar), in.clean, in.mask); };
  backward(loss());

  std::vector<std::string> names;
  for (const auto& [name, _] : m.params().params()) names.push_back(name);
  std::mt19937_64 rng(11);
  for (int k = 0; k < 3; ++k) {
    Tensor& p = m.params().param(names[rng() % names.size()]);
    const std::size_t i = rng() % p.numel();
    const double analytic = p.grad()[i];
    NoGradGuard g;
    const double orig = p.data()[i], h = 1e-5;
    p.mutable_data()[i] = orig + h;
    const double up = loss().item();
    p.mutable_data()[i] = orig - h;
    const double down = loss().item();
    p.mutable_data()[i] = orig;
    EXPECT_LE(relative_error(analytic, (up - down) / (2 * h)), 1e-3) << "element " << i;
  }
}

TEST(Model, AblationsTrainBelowInitialLoss) {
  const std::vector<bool Ablations::*> flags{nullptr,           &Ablations::no_scdf, &Ablations::no_gc,
                                             &Ablations::no_mmcf, &Ablations::no_mmrf, &Ablations::no_aspp,
                                             &Ablations::no_polsar};
  for (auto member : flags) {
    ModelConfig c = tiny();
    if (member) c.ablations.*member = true;
    Model m = Model::build(c, 12);
    Adam adam(AdamConfig{1e-3});
    const Inputs in = random_inputs(c, 1, 13);
    double first = 0.0, last = 0.0;
    for (int s = 0; s < 20; ++s) {
      Tensor l = loss_total(m.forward(in.cloudy, in.sar), in.clean, in.mask);
      (s == 0 ? first : last) = l.item();
      backward(l);
      adam.step(m.params());
    }
    EXPECT_LT(last, first);
  }
}

TEST(Model, RejectsBadInputs) {
  Model m = Model::build(tiny(), 1);
  const Inputs in = random_inputs(m.config(), 1, 2);
  EXPECT_THROW(m.forward(Tensor(Shape{1, 3, 8, 8}), in.sar), ShapeError);
  EXPECT_THROW(m.forward(in.cloudy, Tensor(Shape{1, 9, 4, 4})), ShapeError);
  EXPECT_THROW(m.forward(in.cloudy, Tensor(Shape{2, 9, 8, 8})), ShapeError);
  EXPECT_THROW(m.forward(Tensor(Shape{1, 4, 8, 8}, 1.5), in.sar), std::domain_error);
  EXPECT_THROW(m.forward(in.cloudy, Tensor(Shape{1, 9, 8, 8}, -0.1)), std::domain_error);
}

TEST(Model, RejectsBadConfig) {
  ModelConfig c;
  c.patch = 30;
  EXPECT_THROW(Model::build(c, 0), std::invalid_argument);
  c = ModelConfig{};
  c.base_channels = 0;
  EXPECT_THROW(Model::build(c, 0), std::invalid_argument);
}
