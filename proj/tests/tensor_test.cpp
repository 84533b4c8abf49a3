#include <gtest/gtest.h>

#include "buddynet/errors.hpp"
#include "buddynet/ops.hpp"
#include "buddynet/tensor.hpp"
#include "test_util.hpp"

using namespace buddynet;

TEST(Tensor, ShapeMatchesData) {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor({0, 2}), ShapeError);
}

TEST(Tensor, ScalarAndItem) {
  Tensor s = Tensor::scalar(4.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_DOUBLE_EQ(s.item(), 4.5);
  EXPECT_THROW(Tensor({2}).item(), ShapeError);
}

TEST(Tensor, CloneIsIndependentCopyIsShared) {
  Tensor a = Tensor::parameter({2}, {1, 2});
  Tensor shared = a;
  Tensor copy = a.clone();
  a.mutable_data()[0] = 9;
  EXPECT_EQ(shared[0], 9);
  EXPECT_EQ(copy[0], 1);
  EXPECT_TRUE(copy.requires_grad());
  EXPECT_FALSE(a.detach().requires_grad());
}

TEST(Graph, BackwardOfSumGivesOnes) {
  Tensor x = Tensor::parameter({3}, {0.5, -1, 2});
  Graph g;
  Tensor loss;
  {
    GraphScope scope(g);
    loss = sum(x);
  }
  g.backward(loss);
  ASSERT_TRUE(x.has_grad());
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(Graph, ConstantLossLeavesZeroLeafGrads) {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Graph g;
  Tensor loss;
  {
    GraphScope scope(g);
    loss = sum(x * 0.0) + 3.0;
  }
  g.backward(loss);
  for (double v : x.grad()) EXPECT_EQ(v, 0.0);
}

TEST(Graph, RejectsNonScalarLossAndEmptyGraph) {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Graph g;
  Tensor y;
  {
    GraphScope scope(g);
    y = x * 2.0;
  }
  EXPECT_THROW(g.backward(y), ShapeError);
  Graph empty;
  EXPECT_THROW(empty.backward(Tensor::scalar(1.0)), std::logic_error);
}

TEST(Graph, RepeatedBackwardAccumulatesLeafGrads) {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Graph g;
  Tensor loss;
  {
    GraphScope scope(g);
    loss = sum(x * x);
  }
  g.backward(loss);
  g.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
}

TEST(Graph, ClearResetsGradsToAbsent) {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Graph g;
  Tensor loss;
  {
    GraphScope scope(g);
    loss = sum(exp(x));
  }
  g.backward(loss);
  EXPECT_TRUE(x.has_grad());
  g.clear();
  EXPECT_FALSE(x.has_grad());
  EXPECT_TRUE(g.empty());
}

TEST(Graph, BackwardIsBitwiseDeterministic) {
  Rng rng(3);
  Tensor a = test_util::random_tensor({4, 5}, rng);
  Tensor b = test_util::random_tensor({5, 3}, rng);
  auto run = [&] {
    Graph g;
    Tensor loss;
    {
      GraphScope scope(g);
      loss = sum(softmax(matmul(a, b), 1, 0.7) * tanh(matmul(a, b)));
    }
    g.backward(loss);
    std::vector<double> ga(a.grad().begin(), a.grad().end());
    std::vector<double> gb(b.grad().begin(), b.grad().end());
    g.clear();
    return std::make_pair(ga, gb);
  };
  EXPECT_EQ(run(), run());
}

TEST(Graph, NoGradScopeSuspendsRecording) {
  Tensor x = Tensor::parameter({2}, {1, 2});
  Graph g;
  {
    GraphScope scope(g);
    {
      NoGradScope off;
      Tensor y = x * 3.0;
      EXPECT_FALSE(y.requires_grad());
    }
    Tensor z = x * 3.0;
    EXPECT_TRUE(z.requires_grad());
  }
  EXPECT_EQ(g.size(), 1u);
}

TEST(Graph, FirstNonFiniteNamesTheOperation) {
  Tensor x = Tensor::parameter({2}, {1000, 1});
  Graph g;
  {
    GraphScope scope(g);
    Tensor y = x * 2.0;
    Tensor z = exp(y);
    (void)z;
  }
  auto where = g.first_non_finite();
  ASSERT_TRUE(where.has_value());
  EXPECT_NE(where->find("exp"), std::string::npos);
}
