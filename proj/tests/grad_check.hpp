#pragma once

// Central finite-difference verification of every differentiable primitive,
// run in double precision. Shared by the unit test and the acceptance suite.

#include <functional>
#include <vector>

#include "blockdrop/rng.hpp"
#include "blockdrop/tensor.hpp"

namespace gradcheck {

using blockdrop::Rng;
using blockdrop::Shape;
using DT = blockdrop::TensorT<double>;
using DTape = blockdrop::TapeT<double>;

struct Case {
  std::string op;
  std::vector<DT> inputs;
  // Applies the op; inputs are tape leaves when `tape` is set, plain values
  // otherwise.
  std::function<DT(std::vector<DT>&)> fwd;
};

inline DT rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0,
                      double avoid_zero = 0.0) {
  DT t = DT::zeros(std::move(s));
  for (int64_t i = 0; i < t.size(); ++i) {
    double v = lo + (hi - lo) * rng.uniform();
    if (avoid_zero > 0.0 && std::abs(v) < avoid_zero)
      v = v < 0.0 ? v - avoid_zero : v + avoid_zero;
    (*t.data)[i] = v;
  }
  return t;
}

inline double forward_sum(const Case& c, const std::vector<DT>& vals) {
  std::vector<DT> copy;
  for (const DT& v : vals) copy.push_back(v.clone());
  DT out = c.fwd(copy);
  double s = 0.0;
  for (int64_t i = 0; i < out.size(); ++i) s += (*out.data)[i];
  return s;
}

// Max relative error between tape gradients and central differences
// (step 1e-3) of the summed output, over every input element.
inline double max_rel_error(const Case& c) {
  DTape tape;
  std::vector<DT> tin;
  for (const DT& in : c.inputs) tin.push_back(tape.leaf(in));
  DT out = c.fwd(tin);
  DT loss = blockdrop::sum_all(out);
  tape.backward(loss);

  const double h = 1e-3;
  double worst = 0.0;
  for (size_t i = 0; i < c.inputs.size(); ++i) {
    std::vector<double> g = tape.grad(tin[i]);
    for (int64_t j = 0; j < c.inputs[i].size(); ++j) {
      std::vector<DT> vals;
      for (const DT& v : c.inputs) vals.push_back(v.clone());
      double orig = (*vals[i].data)[j];
      (*vals[i].data)[j] = orig + h;
      double fp = forward_sum(c, vals);
      (*vals[i].data)[j] = orig - h;
      double fm = forward_sum(c, vals);
      double num = (fp - fm) / (2.0 * h);
      double ana = g[j];
      double denom = std::max(std::abs(num), std::abs(ana));
      double err = denom > 1e-6 ? std::abs(num - ana) / denom
                                : std::abs(num - ana) * 10.0;
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// One randomized small-shape case per primitive for the given seed.
inline std::vector<Case> make_cases(uint64_t seed) {
  using namespace blockdrop;
  Rng rng(seed);
  std::vector<Case> cases;

  {
    Case c{"add",
           {rand_tensor({2, 3}, rng), rand_tensor({2, 3}, rng)},
           nullptr};
    c.fwd = [](std::vector<DT>& in) { return add(in[0], in[1]); };
    cases.push_back(std::move(c));
  }
  {
    double a = -2.0 + 4.0 * rng.uniform(), b = -1.0 + 2.0 * rng.uniform();
    Case c{"affine_const", {rand_tensor({3, 2}, rng)}, nullptr};
    c.fwd = [a, b](std::vector<DT>& in) { return affine_const(in[0], a, b); };
    cases.push_back(std::move(c));
  }
  {
    Case c{"relu", {rand_tensor({3, 4}, rng, -1.0, 1.0, 0.05)}, nullptr};
    c.fwd = [](std::vector<DT>& in) { return relu(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    Case c{"sigmoid", {rand_tensor({3, 4}, rng, -3.0, 3.0)}, nullptr};
    c.fwd = [](std::vector<DT>& in) { return sigmoid(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    Case c{"linear",
           {rand_tensor({2, 3}, rng), rand_tensor({3, 4}, rng),
            rand_tensor({4}, rng)},
           nullptr};
    c.fwd = [](std::vector<DT>& in) { return linear(in[0], in[1], in[2]); };
    cases.push_back(std::move(c));
  }
  {
    Case c{"conv2d_s1",
           {rand_tensor({1, 2, 4, 4}, rng), rand_tensor({3, 2, 3, 3}, rng)},
           nullptr};
    c.fwd = [](std::vector<DT>& in) { return conv2d(in[0], in[1], 1, 1); };
    cases.push_back(std::move(c));
  }
  {
    Case c{"conv2d_s2",
           {rand_tensor({1, 2, 5, 5}, rng), rand_tensor({2, 2, 3, 3}, rng)},
           nullptr};
    c.fwd = [](std::vector<DT>& in) { return conv2d(in[0], in[1], 2, 1); };
    cases.push_back(std::move(c));
  }
  {
    Case c{"channel_affine",
           {rand_tensor({2, 3, 2, 2}, rng), rand_tensor({3}, rng, 0.2, 1.5),
            rand_tensor({3}, rng)},
           nullptr};
    c.fwd = [](std::vector<DT>& in) {
      return channel_affine(in[0], in[1], in[2]);
    };
    cases.push_back(std::move(c));
  }
  {
    Case c{"global_avg_pool", {rand_tensor({2, 3, 3, 3}, rng)}, nullptr};
    c.fwd = [](std::vector<DT>& in) { return global_avg_pool(in[0]); };
    cases.push_back(std::move(c));
  }
  {
    std::vector<int> labels(3);
    for (int& y : labels) y = rng.uniform_int(4);
    Case c{"softmax_cross_entropy", {rand_tensor({3, 4}, rng, -2.0, 2.0)},
           nullptr};
    c.fwd = [labels](std::vector<DT>& in) {
      return softmax_cross_entropy(in[0], labels);
    };
    cases.push_back(std::move(c));
  }
  {
    std::vector<uint8_t> u(8), mask(8);
    for (int i = 0; i < 8; ++i) {
      u[i] = rng.bernoulli(0.5) ? 1 : 0;
      mask[i] = rng.bernoulli(0.75) ? 1 : 0;
    }
    // probabilities kept away from 0/1: d/ds log(s) = 1/s blows up the
    // finite-difference truncation term near the edges
    Case c{"bernoulli_loglik", {rand_tensor({2, 4}, rng, 0.15, 0.85)},
           nullptr};
    c.fwd = [u, mask](std::vector<DT>& in) {
      return bernoulli_loglik(in[0], u, mask);
    };
    cases.push_back(std::move(c));
  }
  {
    std::vector<double> w(5);
    for (double& v : w) v = -2.0 + 4.0 * rng.uniform();
    Case c{"weighted_mean", {rand_tensor({5}, rng)}, nullptr};
    c.fwd = [w](std::vector<DT>& in) { return weighted_mean(in[0], w); };
    cases.push_back(std::move(c));
  }
  {
    std::vector<int> pick(3);
    for (int& p : pick) p = rng.uniform_int(5);
    Case c{"log_softmax_pick", {rand_tensor({3, 5}, rng, -2.0, 2.0)},
           nullptr};
    c.fwd = [pick](std::vector<DT>& in) {
      return log_softmax_pick(in[0], pick);
    };
    cases.push_back(std::move(c));
  }
  {
    Case c{"sum_all", {rand_tensor({2, 3}, rng)}, nullptr};
    c.fwd = [](std::vector<DT>& in) { return sum_all(in[0]); };
    cases.push_back(std::move(c));
  }
  return cases;
}

}  // namespace gradcheck
