#pragma once

#include <memory>

#include "blockdrop/backbone.hpp"

namespace blockdrop {

// Exploration bounding: sampling probabilities are confined to [1-alpha, alpha].
struct ExplorationConfig {
  float alpha = 0.8f;

  void validate() const {
    if (!(alpha > 0.5f && alpha <= 1.0f))
      throw ValueError("alpha must lie in (0.5, 1]");
  }
};

// Keep probabilities for one batch: s straight out of the sigmoid head and
// its bounded counterpart s' = alpha*s + (1-alpha)*(1-s). Both are [B,K].
struct PolicyOutput {
  Tensor s;
  Tensor s_bounded;

  int batch() const { return s.shape[0]; }
  int block_count() const { return s.shape[1]; }
};

// Small residual classifier emitting one keep-probability per backbone block.
class PolicyNetwork : public Model {
 public:
  PolicyNetwork(BackboneSpec spec, uint64_t seed)
      : net_(std::move(spec), seed) {}

  int block_count() const { return net_.spec().classes; }
  const BackboneSpec& spec() const { return net_.spec(); }
  GatedBackbone& net() { return net_; }

  Tensor logits(Tape* tape, const Tensor& x) {
    return net_.forward_full(tape, x);
  }

  std::vector<Parameter*> params() override { return net_.params(); }
  std::string descriptor() const override { return net_.descriptor(); }
  std::string kind() const override { return "policy"; }

 private:
  GatedBackbone net_;
};

PolicyOutput policy_forward(PolicyNetwork& pn, Tape* tape, const Tensor& x,
                            const ExplorationConfig& cfg);

// One Bernoulli draw per block from the bounded probabilities of row `b`.
Action sample_action(const PolicyOutput& po, int b, Rng& rng);

// Maximally probable configuration: u_i = 1 iff s_i > 0.5 (unbounded s).
Action map_action(const PolicyOutput& po, int b);

// Differentiable log pi(u | x) for one sample, using bounded probabilities.
Tensor log_likelihood(const PolicyOutput& po, int b, const Action& u);

}  // namespace blockdrop
