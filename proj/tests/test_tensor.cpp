#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "blockdrop/tensor.hpp"

#include "grad_check.hpp"

using namespace blockdrop;

TEST_CASE("tensor construction and cloning") {
  Tensor t = Tensor::from({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  CHECK(t.size() == 4);
  CHECK(t[3] == 4.0f);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0f}), ShapeError);

  Tape tape;
  Tensor leaf = tape.leaf(t);
  CHECK(leaf.requires_grad());
  Tensor c = leaf.clone();
  CHECK_FALSE(c.requires_grad());
  (*c.data)[0] = 9.0f;
  CHECK(leaf[0] == 1.0f);  // clone is a deep copy
}

TEST_CASE("elementwise op values") {
  Tensor x = Tensor::from({4}, {-2.0f, -0.5f, 0.0f, 3.0f});
  Tensor r = relu(x);
  CHECK((*r.data) == std::vector<float>{0.0f, 0.0f, 0.0f, 3.0f});

  Tensor a = affine_const(x, 2.0f, 1.0f);
  CHECK(a[0] == doctest::Approx(-3.0f));
  CHECK(a[3] == doctest::Approx(7.0f));

  Tensor s = sigmoid(Tensor::from({1}, {0.0f}));
  CHECK(s[0] == doctest::Approx(0.5f));

  CHECK_THROWS_AS(add(x, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("linear matches a hand computation") {
  Tensor x = Tensor::from({1, 2}, {1.0f, 2.0f});
  Tensor w = Tensor::from({2, 3}, {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f});
  Tensor b = Tensor::from({3}, {0.5f, -0.5f, 0.0f});
  Tensor y = linear(x, w, b);
  CHECK(y.shape == Shape{1, 3});
  CHECK(y[0] == doctest::Approx(1 * 1 + 2 * 4 + 0.5));
  CHECK(y[1] == doctest::Approx(1 * 2 + 2 * 5 - 0.5));
  CHECK(y[2] == doctest::Approx(1 * 3 + 2 * 6));
  CHECK_THROWS_AS(linear(x, Tensor::zeros({3, 3}), b), ShapeError);
}

TEST_CASE("conv2d matches a hand computation") {
  // 1x1x3x3 input, single 3x3 kernel of ones, pad 1: each output is the sum
  // of the 3x3 neighborhood.
  Tensor x = Tensor::from({1, 1, 3, 3},
                          {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(x, k, 1, 1);
  CHECK(y.shape == Shape{1, 1, 3, 3});
  CHECK(y[4] == doctest::Approx(45.0f));  // center sees everything
  CHECK(y[0] == doctest::Approx(1 + 2 + 4 + 5));

  Tensor y2 = conv2d(x, k, 2, 1);
  CHECK(y2.shape == Shape{1, 1, 2, 2});

  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({1, 1, 2, 2}), 1, 1), ShapeError);
  CHECK_THROWS_AS(conv2d(x, k, 3, 1), ShapeError);
}

TEST_CASE("global_avg_pool and channel_affine") {
  Tensor x = Tensor::from({1, 2, 2, 2}, {1, 2, 3, 4, 10, 20, 30, 40});
  Tensor p = global_avg_pool(x);
  CHECK(p.shape == Shape{1, 2});
  CHECK(p[0] == doctest::Approx(2.5f));
  CHECK(p[1] == doctest::Approx(25.0f));

  Tensor g = Tensor::from({2}, {2.0f, 0.5f});
  Tensor b = Tensor::from({2}, {1.0f, 0.0f});
  Tensor y = channel_affine(x, g, b);
  CHECK(y[0] == doctest::Approx(3.0f));
  CHECK(y[4] == doctest::Approx(5.0f));
}

TEST_CASE("softmax_cross_entropy and argmax") {
  Tensor logits = Tensor::from({2, 3}, {5.0f, 1.0f, 1.0f, 0.0f, 0.0f, 9.0f});
  Tensor l = softmax_cross_entropy(logits, {0, 2});
  CHECK(l.shape == Shape{1});
  CHECK(l[0] < 0.05);  // confident and correct
  CHECK(argmax_rows(logits) == std::vector<int>{0, 2});
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0}), ShapeError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {0, 7}), ValueError);
}

TEST_CASE("bernoulli_loglik values and masking") {
  Tensor s = Tensor::from({1, 2}, {0.8f, 0.3f});
  Tensor ll = bernoulli_loglik(s, {1, 0}, {1, 1});
  CHECK(ll[0] == doctest::Approx(std::log(0.8) + std::log(0.7)));
  Tensor masked = bernoulli_loglik(s, {1, 0}, {1, 0});
  CHECK(masked[0] == doctest::Approx(std::log(0.8)));
}

TEST_CASE("log_softmax_pick and weighted_mean") {
  Tensor z = Tensor::from({1, 2}, {1.0f, 1.0f});
  Tensor lp = log_softmax_pick(z, {0});
  CHECK(lp[0] == doctest::Approx(std::log(0.5)));

  Tensor v = Tensor::from({2}, {3.0f, 5.0f});
  Tensor m = weighted_mean(v, {1.0f, 2.0f});
  CHECK(m[0] == doctest::Approx((3.0 + 10.0) / 2.0));
}

TEST_CASE("tape usage contracts") {
  Tape tape;
  Tensor x = tape.leaf(Tensor::from({2}, {1.0f, 2.0f}));
  Tensor s = sum_all(x);
  tape.backward(s);
  CHECK(tape.grad(x) == std::vector<float>{1.0f, 1.0f});
  CHECK_THROWS_AS(tape.backward(s), UsageError);  // single use

  Tape t2;
  Tensor y = t2.leaf(Tensor::from({2}, {1.0f, 2.0f}));
  CHECK_THROWS_AS(t2.backward(y), UsageError);  // non-scalar loss

  Tape t3;
  Tensor a = t3.leaf(Tensor::from({2}, {1.0f, 1.0f}));
  CHECK_THROWS_AS(add(a, y), UsageError);  // mixed tapes
}

TEST_CASE("every primitive passes central finite differences") {
  double worst = 0.0;
  for (uint64_t seed = 0; seed < 100; ++seed)
    for (gradcheck::Case& c : gradcheck::make_cases(seed)) {
      double err = gradcheck::max_rel_error(c);
      INFO(c.op << " seed " << seed);
      CHECK(err < 1e-4);
      worst = std::max(worst, err);
    }
  MESSAGE("worst relative error: " << worst);
}
