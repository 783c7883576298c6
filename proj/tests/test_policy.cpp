#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "blockdrop/policy.hpp"

using namespace blockdrop;

namespace {

BackboneSpec policy_spec(int K) {
  BackboneSpec s;
  s.family = Family::Mlp;
  s.input_dim = 6;
  s.hidden = 8;
  s.segments = 1;
  s.blocks_per_segment = 2;
  s.classes = K;
  return s;
}

PolicyOutput manual_output(std::vector<float> s_vals, float alpha) {
  int K = static_cast<int>(s_vals.size());
  PolicyOutput po;
  po.s = Tensor::from({1, K}, s_vals);
  po.s_bounded = affine_const(po.s, 2 * alpha - 1, 1 - alpha);
  return po;
}

}  // namespace

TEST_CASE("alpha domain is validated") {
  CHECK_THROWS_AS(ExplorationConfig{0.5f}.validate(), ValueError);
  CHECK_THROWS_AS(ExplorationConfig{0.0f}.validate(), ValueError);
  CHECK_THROWS_AS(ExplorationConfig{1.2f}.validate(), ValueError);
  ExplorationConfig{1.0f}.validate();
  ExplorationConfig{0.8f}.validate();
}

TEST_CASE("bounding endpoints and elementwise relation") {
  float alpha = 0.8f;
  PolicyOutput po = manual_output({0.0f, 1.0f, 0.25f}, alpha);
  CHECK(po.s_bounded[0] == doctest::Approx(1 - alpha));  // s=0 -> 1-alpha
  CHECK(po.s_bounded[1] == doctest::Approx(alpha));      // s=1 -> alpha
  CHECK(po.s_bounded[2] ==
        doctest::Approx(alpha * 0.25f + (1 - alpha) * 0.75f));

  PolicyNetwork pn(policy_spec(5), 3);
  Rng rng(7);
  Tensor x = Tensor::zeros({2, 6});
  for (int64_t i = 0; i < x.size(); ++i)
    (*x.data)[i] = static_cast<float>(rng.uniform());
  PolicyOutput real = policy_forward(pn, nullptr, x, ExplorationConfig{alpha});
  for (int64_t i = 0; i < real.s.size(); ++i) {
    CHECK(real.s[i] > 0.0f);
    CHECK(real.s[i] < 1.0f);
    CHECK(real.s_bounded[i] ==
          doctest::Approx(alpha * real.s[i] + (1 - alpha) * (1 - real.s[i])));
    CHECK(real.s_bounded[i] >= 1 - alpha - 1e-6f);
    CHECK(real.s_bounded[i] <= alpha + 1e-6f);
  }
}

TEST_CASE("map_action thresholds unbounded s, ties to drop") {
  PolicyOutput po = manual_output({0.5f, 0.500001f, 0.49f, 0.51f}, 0.8f);
  Action u = map_action(po, 0);
  CHECK(u[0] == 0);  // exactly 0.5 is not kept
  CHECK(u[1] == 1);
  CHECK(u[2] == 0);
  CHECK(u[3] == 1);
}

TEST_CASE("sampling follows the bounded probabilities") {
  PolicyOutput po = manual_output({1.0f, 0.0f, 1.0f}, 0.8f);
  Rng rng(99);
  int n = 200000;
  std::vector<int> keep(3, 0);
  for (int i = 0; i < n; ++i) {
    Action u = sample_action(po, 0, rng);
    for (int k = 0; k < 3; ++k) keep[k] += u[k];
  }
  CHECK(std::abs(keep[0] / double(n) - 0.8) < 0.005);
  CHECK(std::abs(keep[1] / double(n) - 0.2) < 0.005);
  CHECK(std::abs(keep[2] / double(n) - 0.8) < 0.005);
}

TEST_CASE("log likelihood normalizes over all actions") {
  Rng rng(123);
  for (int K = 2; K <= 10; ++K) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<float> s(K);
      for (float& v : s) v = static_cast<float>(rng.uniform());
      PolicyOutput po = manual_output(s, 0.8f);
      double total = 0.0;
      for (uint32_t bits = 0; bits < (1u << K); ++bits) {
        Action u(K);
        for (int k = 0; k < K; ++k) u[k] = (bits >> k) & 1;
        Tensor ll = log_likelihood(po, 0, u);
        total += std::exp(static_cast<double>(ll[0]));
      }
      CHECK(std::abs(total - 1.0) < 1e-5);
    }
  }
}

TEST_CASE("policy output width equals the controlled block count") {
  PolicyNetwork pn(policy_spec(7), 1);
  CHECK(pn.block_count() == 7);
  Tensor x = Tensor::zeros({1, 6});
  PolicyOutput po = policy_forward(pn, nullptr, x, {});
  CHECK(po.block_count() == 7);
  CHECK(po.batch() == 1);
}

TEST_CASE("more probable configurations get higher likelihood") {
  PolicyOutput po = manual_output({0.9f, 0.9f, 0.1f}, 0.8f);
  Tensor hi = log_likelihood(po, 0, {1, 1, 0});  // the modal action
  Tensor lo = log_likelihood(po, 0, {0, 0, 1});
  CHECK(hi[0] > lo[0]);
}
