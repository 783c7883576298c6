#pragma once

#include "blockdrop/trainer.hpp"

namespace blockdrop {

// Per-block skip/keep head: a 2-way affine map on globally pooled features
// of the previous block's activations. Index 0 = skip, 1 = keep.
struct GateHead {
  Parameter weight;  // [C_i, 2]
  Parameter bias;    // [2]
};

class SeqGates : public Model {
 public:
  SeqGates(const BackboneSpec& backbone_spec, uint64_t seed);

  int gate_count() const { return static_cast<int>(gates_.size()); }
  GateHead& gate(int i) { return gates_.at(i); }

  // Affine gate scores for block `i` given its input activations (pooled
  // internally for conv backbones).
  Tensor gate_logits(Tape* tape, int i, const Tensor& y_prev);

  // softmax probability pair (skip, keep) for block `i`.
  Tensor skipping_score(int i, const Tensor& y_prev);

  std::vector<Parameter*> params() override;
  std::string descriptor() const override { return spec_.descriptor(); }
  std::string kind() const override { return "seqgates"; }

 private:
  BackboneSpec spec_;
  std::vector<GateHead> gates_;
};

struct SequentialResult {
  Tensor logits;
  Action action;
  int gate_invocations = 0;  // always K: a gate runs even for skipped blocks
};

enum class GateMode { Sample, Argmax };

SequentialResult forward_sequential(GatedBackbone& backbone, SeqGates& gates,
                                    const Tensor& x, Rng* rng, GateMode mode);

// REINFORCE over the per-block decision sequence with the same reward and a
// self-critical greedy-rollout baseline; backbone stays frozen.
std::vector<StepRecord> train_sequential(GatedBackbone& backbone,
                                         SeqGates& gates, const Dataset& ds,
                                         const RewardConfig& cfg,
                                         const TrainingSchedule& schedule,
                                         uint64_t seed, int workers = 1);

}  // namespace blockdrop
