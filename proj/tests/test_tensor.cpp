#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "podf/gradcheck.hpp"
#include "podf/ops.hpp"
#include "podf/tensor.hpp"

using namespace podf;

namespace {

Tensor values(Shape s, std::vector<double> v) { return Tensor(s, std::move(v)); }

// Triple-loop reference product of row-major (m,k) and (k,n) matrices.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, std::size_t m,
                                 std::size_t k, std::size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

}  // namespace

TEST(Tensor, ShapeAndFill) {
  Tensor t(Shape{2, 3, 4, 5}, 1.5);
  EXPECT_EQ(t.numel(), 120u);
  for (double v : t.data()) EXPECT_EQ(v, 1.5);
  EXPECT_THROW(Tensor(Shape{1, 1, 2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
}

TEST(Tensor, NonFiniteValuesAreRejected) {
  Tensor x = values(Shape{1, 1, 1, 2}, {1.0, 0.0});
  try {
    (void)div(Tensor::ones(Shape{1, 1, 1, 2}), x);
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("div"), std::string::npos);
  }
}

TEST(Backward, SumGivesOnes) {
  Tensor x = values(Shape{1, 2, 2, 1}, {1, -2, 3, 4}).set_requires_grad(true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceInput) {
  Tensor x = values(Shape{1, 1, 1, 4}, {0.5, -1.5, 2.0, 3.0}).set_requires_grad(true);
  backward(sum(mul(x, x)));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x.data()[i]);
}

TEST(Backward, RejectsNonScalarRoot) {
  Tensor x = Tensor::ones(Shape{1, 1, 2, 2}).set_requires_grad(true);
  EXPECT_THROW(backward(scale(x, 2.0)), GraphError);
}

TEST(Backward, SecondBackwardOnSameGraphFails) {
  Tensor x = Tensor::ones(Shape{1, 1, 2, 2}).set_requires_grad(true);
  Tensor loss = sum(square(x));
  backward(loss);
  EXPECT_THROW(backward(loss), GraphError);
}

TEST(Backward, SharedSubexpressionAccumulates) {
  Tensor x = values(Shape{1, 1, 1, 1}, {3.0}).set_requires_grad(true);
  Tensor y = mul(x, x);
  backward(sum(add(y, y)));  // 2x^2
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor x = Tensor::ones(Shape{1, 1, 1, 3}).set_requires_grad(true);
  NoGradGuard guard;
  Tensor y = sum(scale(x, 2.0));
  EXPECT_FALSE(y.requires_grad());
}

TEST(Elementwise, SigmoidAtZero) { EXPECT_DOUBLE_EQ(sigmoid(Tensor(Shape{1, 1, 1, 1})).item(), 0.5); }

TEST(Elementwise, SigmoidIsStableForLargeInputs) {
  Tensor s = sigmoid(values(Shape{1, 1, 1, 2}, {-800.0, 800.0}));
  EXPECT_EQ(s.data()[0], 0.0);
  EXPECT_EQ(s.data()[1], 1.0);
}

TEST(Elementwise, LeakyReluSubgradientAtZeroTakesNegativeSlope) {
  Tensor x = values(Shape{1, 1, 1, 3}, {-1.0, 0.0, 2.0}).set_requires_grad(true);
  Tensor y = leaky_relu(x, 0.2);
  EXPECT_DOUBLE_EQ(y.data()[0], -0.2);
  EXPECT_DOUBLE_EQ(y.data()[2], 2.0);
  backward(sum(y));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.2);
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.2);
  EXPECT_DOUBLE_EQ(x.grad()[2], 1.0);
}

TEST(Elementwise, BroadcastAddOverChannelsAndSpace) {
  Tensor a = Tensor::ones(Shape{2, 3, 2, 2});
  Tensor b = values(Shape{1, 3, 1, 1}, {1, 2, 3});
  Tensor c = add(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 3, 2, 2}));
  EXPECT_DOUBLE_EQ(c.at(1, 2, 1, 1), 4.0);
  EXPECT_THROW(add(a, Tensor::ones(Shape{1, 2, 1, 1})), ShapeError);
}

TEST(Reductions, GlobalAvgPool) {
  Tensor g = global_avg_pool(values(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(g.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(g.item(), 2.5);
}

TEST(Shapes, ConcatChannelCounts) {
  Tensor c = concat({Tensor::ones(Shape{1, 2, 3, 3}), Tensor::zeros(Shape{1, 3, 3, 3})});
  EXPECT_EQ(c.shape(), (Shape{1, 5, 3, 3}));
  EXPECT_DOUBLE_EQ(c.at(0, 1, 2, 2), 1.0);
  EXPECT_DOUBLE_EQ(c.at(0, 2, 0, 0), 0.0);
  EXPECT_THROW(concat({Tensor::ones(Shape{1, 2, 3, 3}), Tensor::ones(Shape{1, 2, 2, 3})}), ShapeError);
}

TEST(Shapes, ReshapeKeepsOrder) {
  Tensor x = values(Shape{1, 2, 1, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = reshape(x, Shape{1, 1, 3, 2});
  EXPECT_EQ(r.data()[4], 5.0);
  EXPECT_THROW(reshape(x, Shape{1, 1, 1, 5}), ShapeError);
}

TEST(Shapes, ReplicatePadCopiesBorder) {
  Tensor x = values(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor p = pad(x, 2, PadMode::replicate);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 6, 6}));
  EXPECT_DOUBLE_EQ(p.at(0, 0, 0, 0), 1.0);
  EXPECT_DOUBLE_EQ(p.at(0, 0, 5, 5), 4.0);
  EXPECT_DOUBLE_EQ(p.at(0, 0, 0, 5), 2.0);
  Tensor z = pad(x, 1);
  EXPECT_DOUBLE_EQ(z.at(0, 0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(z.at(0, 0, 1, 1), 1.0);
}

TEST(Shapes, AvgPoolStride2) {
  Tensor x = values(Shape{1, 1, 2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor p = avg_pool(x, 2, 2);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_DOUBLE_EQ(p.data()[0], 3.5);
  EXPECT_DOUBLE_EQ(p.data()[1], 5.5);
}

TEST(Softmax, ConstantRowIsUniform) {
  Tensor s = softmax(Tensor(Shape{1, 1, 1, 4}, 7.0));
  for (double v : s.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ClosedFormTwoElements) {
  Tensor s = softmax(values(Shape{1, 1, 1, 2}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(s.data()[0], 0.25, 1e-12);
  EXPECT_NEAR(s.data()[1], 0.75, 1e-12);
}

TEST(Softmax, RowsSumToOneAlongAnyAxis) {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor(Shape{2, 3, 4, 5}, rng, -50.0, 50.0);
  for (std::size_t axis : {1u, 2u, 3u}) {
    Tensor s = softmax(x, axis);
    const Tensor total = mean_axis(s, axis);
    for (double v : total.data()) EXPECT_NEAR(v * static_cast<double>(x.shape()[axis]), 1.0, 1e-12);
    for (double v : s.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Matmul, IdentityTimesA) {
  std::mt19937_64 rng(1);
  Tensor a = random_tensor(Shape{1, 1, 3, 4}, rng);
  Tensor eye(Shape{1, 1, 3, 3});
  for (std::size_t i = 0; i < 3; ++i) eye.mutable_data()[i * 3 + i] = 1.0;
  Tensor r = matmul(eye, a);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(r.data()[i], a.data()[i]);
}

TEST(Matmul, HandExample) {
  Tensor r = matmul(values(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), values(Shape{1, 1, 2, 1}, {1, 1}));
  EXPECT_EQ(r.shape(), (Shape{1, 1, 2, 1}));
  EXPECT_DOUBLE_EQ(r.data()[0], 3.0);
  EXPECT_DOUBLE_EQ(r.data()[1], 7.0);
}

TEST(Matmul, MatchesTripleLoop) {
  std::mt19937_64 rng(5);
  Tensor a = random_tensor(Shape{1, 1, 5, 7}, rng);
  Tensor b = random_tensor(Shape{1, 1, 7, 3}, rng);
  const auto ref = naive_matmul({a.data().begin(), a.data().end()}, {b.data().begin(), b.data().end()}, 5, 7, 3);
  Tensor r = matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(r.data()[i], ref[i], 1e-12);
  EXPECT_THROW(matmul(a, a), ShapeError);
}

TEST(PixelRows, RoundTrip) {
  std::mt19937_64 rng(2);
  Tensor x = random_tensor(Shape{2, 3, 4, 5}, rng);
  Tensor rows = pixel_rows(x);
  EXPECT_EQ(rows.shape(), (Shape{2, 1, 20, 3}));
  EXPECT_DOUBLE_EQ(rows.at(1, 0, 7, 2), x.at(1, 2, 1, 2));
  Tensor back = from_pixel_rows(rows, 4, 5);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(back.data()[i], x.data()[i]);
}

TEST(GradCheck, ElementwiseSuite) {
  for (const auto& c : gradcheck_suite()) {
    if (c.name == "elementwise" || c.name == "matmul" || c.name == "softmax") {
      EXPECT_LE(c.run(11), kGradCheckTolerance) << c.name;
    }
  }
}

TEST(GradCheck, MeanAxisAndSliceGradients) {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor(Shape{2, 4, 3, 3}, rng).set_requires_grad(true);
  const double err = gradcheck(
      [&] {
        return add(project(mean_axis(x, 1), 1), add(project(mean_axis(x, 2), 2), project(slice_channels(x, 1, 2), 3)));
      },
      {x});
  EXPECT_LE(err, kGradCheckTolerance);
}

TEST(Determinism, SameInputsSameBits) {
  auto run = [] {
    std::mt19937_64 rng(42);
    Tensor x = random_tensor(Shape{1, 3, 5, 5}, rng);
    return softmax(tanh(matmul(x, transpose_hw(x))), 3);
  };
  Tensor a = run(), b = run();
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a.data()[i], b.data()[i]);
}
