#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "multimae/gradcheck.hpp"
#include "multimae/ops.hpp"
#include "multimae/rng.hpp"

using namespace multimae;
using T64 = Tensor<double>;

namespace {

T64 random_leaf(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return T64::from_data(std::move(shape), std::move(v), true);
}

// Weighted sum with fixed pseudo-random weights, so every output entry
// contributes a distinct amount to the scalar.
T64 probe(const T64& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(y, T64::from_data(y.shape(), std::move(w))));
}

void expect_grads(const std::string& name, std::vector<T64> leaves, const std::function<T64()>& fn,
                  double tol = 1e-5) {
  GradCheckOptions opt;
  opt.tolerance = tol;
  const auto r = check_gradients(name, std::move(leaves), {}, fn, opt);
  EXPECT_TRUE(r.passed) << r.name << ": max rel err " << r.max_rel_error << " at " << r.worst;
  EXPECT_GT(r.entries_checked, 0u);
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eye = T64::from_data({2, 2}, {1, 0, 0, 1});
  auto m = T64::from_data({2, 2}, {1, 2, 3, 4});
  auto c = matmul(eye, m);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandComputedProduct) {
  auto a = T64::from_data({2, 2}, {1, 2, 3, 4});
  auto b = T64::from_data({2, 2}, {5, 6, 7, 8});
  auto c = matmul(a, b);
  EXPECT_EQ(std::vector<double>(c.data().begin(), c.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  auto a = random_leaf({3, 3}, 1);
  auto b = random_leaf({3, 3}, 2);
  expect_grads("matmul_sum", {a, b}, [&] { return sum(matmul(a, b)); });
}

TEST(Matmul, BatchedAndSharedRightOperand) {
  auto a = random_leaf({2, 3, 4}, 3);
  auto b = random_leaf({2, 4, 5}, 4);
  auto w = random_leaf({4, 5}, 5);
  expect_grads("matmul_batched", {a, b}, [&] { return probe(matmul(a, b)); });
  expect_grads("matmul_shared", {a, w}, [&] { return probe(matmul(a, w)); });
  auto c = matmul(a, w);
  EXPECT_EQ(c.shape(), (Shape{2, 3, 5}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  auto a = T64::zeros({2, 3});
  auto b = T64::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2, 3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[4, 5]"), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformOnEqualInputs) {
  auto y = softmax_lastdim(T64::zeros({4}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  auto y = softmax_lastdim(Tensor<float>::from_data({2}, {1000.0f, 0.0f}));
  EXPECT_EQ(y[0], 1.0f);
  EXPECT_EQ(y[1], 0.0f);
}

TEST(Softmax, RowsSumToOneAndJacobianMatches) {
  auto x = random_leaf({5}, 7, -3, 3);
  auto y = softmax_lastdim(x);
  double s = 0;
  for (double v : y.data()) {
    EXPECT_GE(v, 0.0);
    s += v;
  }
  EXPECT_NEAR(s, 1.0, 1e-6);
  // Each output coordinate separately gives the full Jacobian.
  for (std::size_t j = 0; j < 5; ++j) {
    expect_grads("softmax_row" + std::to_string(j), {x},
                 [&, j] { return index_select(softmax_lastdim(x), 0, {j}); });
  }
  auto batch = random_leaf({3, 4, 6}, 8, -2, 2);
  auto yb = softmax_lastdim(batch);
  for (std::size_t r = 0; r < 12; ++r) {
    double rs = 0;
    for (std::size_t j = 0; j < 6; ++j) rs += yb[r * 6 + j];
    EXPECT_NEAR(rs, 1.0, 1e-6);
  }
}

TEST(LayerNorm, ConstantSliceMapsToZero) {
  auto y = layer_norm(T64::full({4}, 5.0), T64::full({4}, 1.0), T64::zeros({4}), 1e-6);
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, StandardizedInputUnchanged) {
  auto y = layer_norm(T64::from_data({2}, {1.0, -1.0}), T64::full({2}, 1.0), T64::zeros({2}), 0.0);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], -1.0);
}

TEST(LayerNorm, GradientMatchesFiniteDifferences) {
  auto x = random_leaf({8}, 11, -2, 2);
  auto g = random_leaf({8}, 12, 0.5, 1.5);
  auto b = random_leaf({8}, 13);
  expect_grads("layer_norm", {x, g, b}, [&] { return probe(layer_norm(x, g, b, 1e-6)); });
  auto xb = random_leaf({3, 8}, 14, -2, 2);
  expect_grads("layer_norm_rows", {xb, g, b}, [&] { return probe(layer_norm(xb, g, b, 1e-6)); });
}

TEST(LayerNorm, OutputSlicesAreStandardized) {
  auto x = random_leaf({6, 16}, 15, -4, 9);
  auto y = layer_norm(x, T64::full({16}, 1.0), T64::zeros({16}), 1e-6);
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mu += y[r * 16 + j];
    mu /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y[r * 16 + j] - mu) * (y[r * 16 + j] - mu);
    var /= 16;
    EXPECT_LT(std::abs(mu), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-4);
  }
}

TEST(Gelu, AnalyticPoints) {
  auto y = gelu(T64::from_data({2}, {0.0, 10.0}));
  EXPECT_DOUBLE_EQ(y[0], 0.0);
  EXPECT_NEAR(y[1], 10.0, 1e-6);
}

TEST(Gelu, GradientMatchesFiniteDifferences) {
  auto x = T64::from_data({4}, {-2.0, -0.5, 0.5, 2.0}, true);
  expect_grads("gelu", {x}, [&] { return sum(gelu(x)); });
}

TEST(Backward, SquareAtThree) {
  auto x = T64::scalar(3.0, true);
  mul(x, x).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Backward, SumGivesOnes) {
  auto x = random_leaf({2, 3}, 20);
  sum(x).backward();
  for (double g : x.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = random_leaf({3}, 21);
  EXPECT_THROW(scale(x, 2.0).backward(), ContractError);
}

TEST(Backward, SecondCallOnSameGraphIsStateError) {
  auto x = random_leaf({3}, 22);
  auto loss = sum(mul(x, x));
  loss.backward();
  EXPECT_THROW(loss.backward(), StateError);
  // A fresh forward is fine and accumulates into the leaf.
  std::vector<double> first(x.grad().begin(), x.grad().end());
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2 * first[i]);
}

TEST(Backward, TwoConsumersSumContributions) {
  auto x = random_leaf({4}, 23);
  auto fn = [&] {
    auto y = gelu(x);
    return add(probe(mul(y, y), 1), probe(softmax_lastdim(y), 2));
  };
  expect_grads("fan_out", {x}, fn);
}

TEST(SupportingOps, ElementwiseAndBroadcast) {
  auto a = random_leaf({2, 3, 4}, 30);
  auto b = random_leaf({2, 3, 4}, 31);
  auto row = random_leaf({4}, 32);
  auto table = random_leaf({3, 4}, 33);
  expect_grads("add", {a, b}, [&] { return probe(add(a, b)); });
  expect_grads("sub", {a, b}, [&] { return probe(sub(a, b)); });
  expect_grads("mul", {a, b}, [&] { return probe(mul(a, b)); });
  expect_grads("add_row", {a, row}, [&] { return probe(add(a, row)); });
  expect_grads("add_table", {a, table}, [&] { return probe(add(table, a)); });
  expect_grads("mul_row", {a, row}, [&] { return probe(mul(a, row)); });
  expect_grads("sub_row", {a, row}, [&] { return probe(sub(a, row)); });
  expect_grads("scale", {a}, [&] { return probe(scale(a, -1.7)); });
  expect_grads("add_scalar", {a}, [&] { return probe(add_scalar(a, 0.3)); });
  EXPECT_THROW(add(a, T64::zeros({3})), DimensionError);
}

TEST(SupportingOps, AbsAwayFromKink) {
  auto x = T64::from_data({4}, {-1.5, -0.2, 0.3, 2.0}, true);
  expect_grads("abs", {x}, [&] { return probe(abs(x)); });
  auto z = T64::zeros({1}, true);
  sum(abs(z)).backward();
  EXPECT_EQ(z.grad()[0], 0.0);
}

TEST(SupportingOps, ShapeOps) {
  auto a = random_leaf({2, 3, 4}, 40);
  auto b = random_leaf({2, 5, 4}, 41);
  auto q = random_leaf({2, 3, 2, 5}, 42);
  expect_grads("reshape", {a}, [&] { return probe(reshape(a, {6, 4})); });
  expect_grads("transpose", {a}, [&] { return probe(transpose_last2(a)); });
  expect_grads("permute", {q}, [&] { return probe(permute_0213(q)); });
  expect_grads("concat1", {a, b}, [&] { return probe(concat<double>({a, b}, 1)); });
  expect_grads("concat0", {a}, [&] { return probe(concat<double>({a, a}, 0)); });
  EXPECT_THROW(concat<double>({a, b}, 2), DimensionError);
  EXPECT_THROW(reshape(a, {5, 5}), DimensionError);

  auto t = transpose_last2(T64::from_data({2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(std::vector<double>(t.data().begin(), t.data().end()), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(SupportingOps, GatherScatterEmbedding) {
  auto a = random_leaf({2, 5, 3}, 50);
  expect_grads("index_select", {a}, [&] { return probe(index_select(a, 1, {4, 0, 4})); });
  auto base = random_leaf({6, 3}, 51);
  auto src = random_leaf({2, 3}, 52);
  expect_grads("overwrite_rows", {base, src}, [&] { return probe(overwrite_rows(base, src, {5, 1}, {0, 1})); });
  EXPECT_THROW(overwrite_rows(base, src, {1, 1}, {0, 1}), ContractError);

  auto table = random_leaf({7, 4}, 53);
  expect_grads("embedding", {table}, [&] { return probe(embedding(table, {6, 2, 2, 0})); });
  EXPECT_THROW(embedding(table, {7}), DataError);
}

TEST(SupportingOps, Reductions) {
  auto a = random_leaf({3, 4}, 60);
  expect_grads("mean", {a}, [&] { return mean(mul(a, a)); });
  expect_grads("sum_lastdim", {a}, [&] { return probe(sum_lastdim(a)); });
  auto m = mean(T64::from_data({4}, {1, 2, 3, 6}));
  EXPECT_DOUBLE_EQ(m.item(), 3.0);
}

TEST(SupportingOps, LogSoftmaxAndPick) {
  auto x = random_leaf({5, 7}, 70, -3, 3);
  expect_grads("log_softmax", {x}, [&] { return probe(log_softmax_lastdim(x)); });
  std::vector<std::size_t> targets{0, 6, 3, 3, 1};
  expect_grads("pick", {x}, [&] { return probe(pick_lastdim(log_softmax_lastdim(x), targets)); });
  EXPECT_THROW(pick_lastdim(x, {0, 1, 2, 3, 7}), DataError);
  auto ls = log_softmax_lastdim(x);
  auto sm = softmax_lastdim(x);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(std::exp(ls[i]), sm[i], 1e-12);
}

TEST(Determinism, RepeatedForwardIsBitIdentical) {
  auto a = random_leaf({4, 8}, 80).cast<float>();
  auto w = random_leaf({8, 8}, 81).cast<float>();
  auto run = [&] {
    auto h = gelu(matmul(a, w));
    return softmax_lastdim(layer_norm(h, Tensor<float>::full({8}, 1.0f), Tensor<float>::zeros({8}), 1e-6f));
  };
  auto y1 = run();
  auto y2 = run();
  for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_EQ(y1[i], y2[i]);
}

TEST(GradMode, NoGradSkipsRecording) {
  auto x = random_leaf({3}, 90);
  NoGradGuard guard;
  auto y = mul(x, x);
  EXPECT_FALSE(y.requires_grad());
}
