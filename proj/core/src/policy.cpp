#include "blockdrop/policy.hpp"

namespace blockdrop {

PolicyOutput policy_forward(PolicyNetwork& pn, Tape* tape, const Tensor& x,
                            const ExplorationConfig& cfg) {
  cfg.validate();
  Tensor s = sigmoid(pn.logits(tape, x));
  // s' = alpha*s + (1-alpha)*(1-s) = (2*alpha - 1)*s + (1 - alpha)
  Tensor sb = affine_const(s, 2.0f * cfg.alpha - 1.0f, 1.0f - cfg.alpha);
  return PolicyOutput{std::move(s), std::move(sb)};
}

Action sample_action(const PolicyOutput& po, int b, Rng& rng) {
  int K = po.block_count();
  const float* row = po.s_bounded.ptr() + static_cast<int64_t>(b) * K;
  Action u(K);
  for (int k = 0; k < K; ++k) u[k] = rng.bernoulli(row[k]) ? 1 : 0;
  return u;
}

Action map_action(const PolicyOutput& po, int b) {
  int K = po.block_count();
  const float* row = po.s.ptr() + static_cast<int64_t>(b) * K;
  Action u(K);
  for (int k = 0; k < K; ++k) u[k] = row[k] > 0.5f ? 1 : 0;
  return u;
}

Tensor log_likelihood(const PolicyOutput& po, int b, const Action& u) {
  int B = po.batch(), K = po.block_count();
  if (static_cast<int>(u.size()) != K)
    throw ValueError("action length does not match block count");
  if (b < 0 || b >= B) throw ValueError("batch row out of range");
  std::vector<uint8_t> ub(static_cast<size_t>(B) * K, 0);
  std::vector<uint8_t> mask(static_cast<size_t>(B) * K, 0);
  for (int k = 0; k < K; ++k) {
    ub[static_cast<size_t>(b) * K + k] = u[k];
    mask[static_cast<size_t>(b) * K + k] = 1;
  }
  Tensor per_row = bernoulli_loglik(po.s_bounded, ub, mask);
  std::vector<float> w(B, 0.0f);
  w[b] = static_cast<float>(B);  // cancels the 1/B in weighted_mean
  return weighted_mean(per_row, w);
}

}  // namespace blockdrop
