// SPDX-FileCopyrightText: Copyright (c) 2026 The blockpg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "blockpg/autodiff.hpp"
#include "blockpg/error.hpp"

namespace ad = blockpg::ad;

namespace {

ad::Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  std::vector<double> v(cols == 0 ? rows : rows * cols);
  for (auto& x : v) x = n(rng);
  return cols == 0 ? ad::Tensor::vector(v) : ad::Tensor::matrix(rows, cols, v);
}

}  // namespace

TEST(Autodiff, LogOfExpIsIdentity) {
  ad::Bindings b{{"x", ad::Tensor::scalar(2.5)}};
  const auto v = ad::evaluate([](ad::Tape& t) { return ad::log(ad::exp(t.leaf("x"))); }, b);
  EXPECT_DOUBLE_EQ(v.item(), 2.5);
}

TEST(Autodiff, LogSoftmaxOfZerosIsUniform) {
  ad::Bindings b{{"x", ad::Tensor(std::size_t{4})}};
  const auto v = ad::evaluate([](ad::Tape& t) { return ad::log_softmax(t.leaf("x")); }, b);
  for (double x : v.values()) EXPECT_NEAR(x, -std::log(4.0), 1e-15);
  EXPECT_NEAR(v[0], -1.3863, 1e-4);
}

TEST(Autodiff, SumOfProduct) {
  ad::Bindings b{{"x", ad::Tensor::vector({1, 2})}, {"y", ad::Tensor::vector({3, 4})}};
  const auto v = ad::evaluate([](ad::Tape& t) { return ad::sum(ad::mul(t.leaf("x"), t.leaf("y"))); }, b);
  EXPECT_DOUBLE_EQ(v.item(), 11.0);
}

TEST(Autodiff, SquareGradient) {
  ad::Bindings b{{"x", ad::Tensor::scalar(3.0)}};
  const auto r = ad::value_and_gradients(
      [](ad::Tape& t) {
        const auto x = t.leaf("x");
        return ad::mul(x, x);
      },
      b);
  EXPECT_DOUBLE_EQ(r.value.item(), 9.0);
  EXPECT_DOUBLE_EQ(r.gradients.at("x").item(), 6.0);
}

namespace {

double clipped_grad(double r, double A, bool corrupt = false) {
  ad::Bindings b{{"r", ad::Tensor::scalar(r)}};
  const auto out = ad::value_and_gradients(
      [A](ad::Tape& t) {
        const auto rv = t.leaf("r");
        const auto a = t.scalar(A);
        return ad::minimum(ad::mul(rv, a), ad::mul(ad::clip(rv, 0.8, 1.2), a));
      },
      b, ad::TapeOptions{corrupt});
  return out.gradients.at("r").item();
}

}  // namespace

TEST(Autodiff, ClippedBranchHasZeroGradient) {
  EXPECT_DOUBLE_EQ(clipped_grad(1.5, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(clipped_grad(0.5, -1.0), 0.0);
}

TEST(Autodiff, UnclippedBranchPassesAdvantage) {
  EXPECT_DOUBLE_EQ(clipped_grad(1.1, 2.0), 2.0);
  // Below the band with a positive advantage the unclipped product is smaller.
  EXPECT_DOUBLE_EQ(clipped_grad(0.5, 1.0), 1.0);
  EXPECT_DOUBLE_EQ(clipped_grad(1.5, -1.0), -1.0);
}

TEST(Autodiff, ClipBoundaryIsInsideBand) {
  ad::Bindings b{{"r", ad::Tensor::scalar(1.2)}};
  const auto out =
      ad::value_and_gradients([](ad::Tape& t) { return ad::clip(t.leaf("r"), 0.8, 1.2); }, b);
  EXPECT_DOUBLE_EQ(out.gradients.at("r").item(), 1.0);
}

TEST(Autodiff, MinTiesRouteToFirstArgument) {
  ad::Bindings b{{"a", ad::Tensor::scalar(1.0)}, {"b", ad::Tensor::scalar(1.0)}};
  const auto out =
      ad::value_and_gradients([](ad::Tape& t) { return ad::minimum(t.leaf("a"), t.leaf("b")); }, b);
  EXPECT_DOUBLE_EQ(out.gradients.at("a").item(), 1.0);
  EXPECT_DOUBLE_EQ(out.gradients.at("b").item(), 0.0);
}

TEST(Autodiff, CorruptedClipPassesGradientOutsideBand) {
  EXPECT_DOUBLE_EQ(clipped_grad(1.5, 1.0, true), 1.0);
}

TEST(Autodiff, TwoLayerSoftmaxNetworkPassesGradCheck) {
  std::mt19937_64 rng(7);
  ad::Bindings b{{"x", random_tensor(5, 8, rng)},
                 {"w1", random_tensor(8, 16, rng, 0.4)},
                 {"b1", random_tensor(16, 0, rng, 0.1)},
                 {"w2", random_tensor(16, 6, rng, 0.4)}};
  const std::vector<std::uint32_t> rows{0, 1, 2, 3, 4};
  const std::vector<std::uint32_t> cols{1, 5, 0, 3, 2};
  const auto graph = [&](ad::Tape& t) {
    const auto h = ad::tanh(ad::add_row(ad::matmul(t.leaf("x"), t.leaf("w1")), t.leaf("b1")));
    const auto lp = ad::log_softmax(ad::matmul(h, t.leaf("w2")));
    return ad::mean(ad::pick(lp, rows, cols));
  };
  const auto report = ad::grad_check(graph, b, 1e-6, 1e-5);
  EXPECT_TRUE(report.pass) << report.worst_leaf << " " << report.max_relative_error;
  EXPECT_LT(report.max_relative_error, 1e-5);
  EXPECT_LE(report.parameters, 2000u);
}

TEST(Autodiff, LinearModelGradCheckIsTight) {
  std::mt19937_64 rng(3);
  ad::Bindings b{{"w", random_tensor(4, 0, rng)}};
  const auto x = random_tensor(3, 4, rng);
  const auto graph = [&](ad::Tape& t) {
    return ad::sum(ad::matmul(t.constant(x), ad::reshape(t.leaf("w"), 4, 1)));
  };
  const auto report = ad::grad_check(graph, b, 1e-6, 1e-5);
  EXPECT_TRUE(report.pass);
  EXPECT_LT(report.max_relative_error, 1e-7);
}

TEST(Autodiff, ConstantRootHasZeroGradients) {
  ad::Bindings b{{"w", ad::Tensor::vector({1.0, -2.0})}};
  const auto graph = [](ad::Tape& t) {
    t.leaf("w");
    return t.scalar(4.0);
  };
  const auto out = ad::value_and_gradients(graph, b);
  for (double g : out.gradients.at("w").values()) EXPECT_EQ(g, 0.0);
  EXPECT_TRUE(ad::grad_check(graph, b, 1e-6, 1e-5).pass);
}

TEST(Autodiff, CorruptedClipFailsGradCheckWithNamedLeaf) {
  ad::Bindings b{{"theta", ad::Tensor::vector({0.6, -0.5, 0.1})}};
  const auto graph = [](ad::Tape& t) {
    const auto r = ad::exp(t.leaf("theta"));
    const auto a = t.constant(ad::Tensor::vector({1.0, -1.0, 1.0}));
    return ad::sum(ad::minimum(ad::mul(r, a), ad::mul(ad::clip(r, 0.8, 1.2), a)));
  };
  EXPECT_TRUE(ad::grad_check(graph, b, 1e-6, 1e-5).pass);
  const auto bad = ad::grad_check(graph, b, 1e-6, 1e-5, ad::TapeOptions{true});
  EXPECT_FALSE(bad.pass);
  EXPECT_EQ(bad.worst_leaf, "theta");
}

TEST(Autodiff, EveryOperationMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  ad::Bindings b{{"a", random_tensor(3, 4, rng)},
                 {"b", random_tensor(3, 4, rng)},
                 {"c", random_tensor(4, 2, rng)},
                 {"p", ad::Tensor::matrix(2, 2, {0.5, 1.5, 2.0, 0.7})}};
  const std::vector<std::uint32_t> take{2, 0, 4};
  const auto graph = [&](ad::Tape& t) {
    const auto a = t.leaf("a");
    const auto bb = t.leaf("b");
    auto x = ad::sub(ad::add(a, bb), ad::scale(ad::mul(a, bb), 0.3));
    x = ad::concat(x, ad::take_rows(bb, std::vector<std::uint32_t>{1, 0}), 0);
    const auto c = ad::transpose(ad::reshape(ad::transpose(t.leaf("c")), 2, 4));
    const auto y = ad::matmul(ad::rms_norm(ad::take_rows(x, take)), c);
    const auto z = ad::concat(ad::exp(ad::scale(y, 0.2)), ad::log(t.leaf("p")), 0);
    const auto s = ad::log_softmax(ad::tanh(ad::concat(z, ad::clip(z, 0.9, 1.1), 1)));
    return ad::add(ad::mean(s), ad::sum(ad::minimum(y, ad::scale(y, -1.0))));
  };
  const auto report = ad::grad_check(graph, b, 1e-6, 1e-5);
  EXPECT_TRUE(report.pass) << report.worst_leaf << " " << report.max_relative_error;
}

TEST(Autodiff, LogSoftmaxRowsNormalize) {
  std::mt19937_64 rng(5);
  ad::Bindings b{{"x", random_tensor(6, 9, rng, 5.0)}};
  const auto v = ad::evaluate([](ad::Tape& t) { return ad::log_softmax(t.leaf("x")); }, b);
  for (std::size_t r = 0; r < v.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < v.cols(); ++c) s += std::exp(v.at(r, c));
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Autodiff, UnboundLeafIsConfigError) {
  ad::Bindings b;
  EXPECT_THROW(ad::evaluate([](ad::Tape& t) { return t.leaf("missing"); }, b), blockpg::ConfigError);
}

TEST(Autodiff, LogOfNonPositiveIsNumericDomainError) {
  ad::Bindings b{{"x", ad::Tensor::scalar(-1.0)}};
  try {
    ad::evaluate([](ad::Tape& t) { return ad::log(t.leaf("x")); }, b);
    FAIL() << "expected NumericDomainError";
  } catch (const blockpg::NumericDomainError& e) {
    EXPECT_NE(std::string(e.what()).find("log"), std::string::npos);
  }
}

TEST(Autodiff, NonScalarRootIsShapeError) {
  ad::Bindings b{{"x", ad::Tensor::vector({1, 2})}};
  EXPECT_THROW(ad::value_and_gradients([](ad::Tape& t) { return t.leaf("x"); }, b), blockpg::ShapeError);
}

TEST(Autodiff, NonPositiveStepIsRejected) {
  ad::Bindings b{{"x", ad::Tensor::scalar(1.0)}};
  EXPECT_THROW(ad::grad_check([](ad::Tape& t) { return t.leaf("x"); }, b, 0.0, 1e-5), blockpg::ConfigError);
}
