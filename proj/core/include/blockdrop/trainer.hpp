#pragma once

#include "blockdrop/data.hpp"
#include "blockdrop/flops.hpp"
#include "blockdrop/policy.hpp"

namespace blockdrop {

struct RewardConfig {
  double gamma = 5.0;  // penalty for incorrect predictions

  void validate() const {
    if (!(gamma > 0.0)) throw ValueError("reward gamma must be > 0");
  }
};

// R(u) = 1 - (|u|_0 / K)^2 if correct, else -gamma.
double compute_reward(const Action& u, bool correct, const RewardConfig& cfg);

inline double advantage(double r_sampled, double r_baseline) {
  return r_sampled - r_baseline;
}

// Number of leading blocks forced on during curriculum epoch t (t >= 1):
// K - t while t < K, then 0.
int curriculum_prefix(int t, int K);

struct TrainingSchedule {
  int curriculum_epochs = 200;
  int finetune_epochs = 100;
  float alpha = 0.8f;
  float lr_curriculum = 1e-4f;
  float lr_finetune = 1e-5f;
  int batch_curriculum = 256;
  int batch_finetune = 256;
  float lambda = 1.0f;  // weight of the policy term in the joint loss

  void validate() const {
    if (curriculum_epochs < 0 || finetune_epochs < 0)
      throw ValueError("epoch counts must be >= 0");
    if (batch_curriculum < 1 || batch_finetune < 1)
      throw ValueError("batch sizes must be >= 1");
    if (!(lr_curriculum > 0.0f) || !(lr_finetune > 0.0f))
      throw ValueError("learning rates must be > 0");
    if (lambda < 0.0f) throw ValueError("lambda must be >= 0");
    ExplorationConfig{alpha}.validate();
  }
};

struct StepRecord {
  int epoch = 0;
  double mean_reward = 0.0;
  double mean_usage = 0.0;  // |u|_0 / K averaged over samples
  double accuracy = 0.0;
  double adv_mean = 0.0;
  double adv_std = 0.0;
  double loss = 0.0;
};

struct BackboneEpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

// Supervised pretraining of the (ungated) backbone with Adam.
std::vector<BackboneEpochRecord> train_backbone(GatedBackbone& net,
                                                const Dataset& ds, int epochs,
                                                float lr, int batch_size,
                                                uint64_t seed, int workers = 1);

// One self-critical policy-gradient step on W over the given batch; the
// backbone is treated as frozen. `epoch_t` drives the curriculum mask.
StepRecord policy_gradient_step(PolicyNetwork& pn, GatedBackbone& backbone,
                                const Dataset& ds,
                                const std::vector<int>& batch_idx,
                                const RewardConfig& cfg,
                                const ExplorationConfig& expl, int epoch_t,
                                Adam& opt, Rng& rng, int workers = 1);

std::vector<StepRecord> curriculum_train(PolicyNetwork& pn,
                                         GatedBackbone& backbone,
                                         const Dataset& ds,
                                         const RewardConfig& cfg,
                                         const TrainingSchedule& schedule,
                                         uint64_t seed, int workers = 1);

// Joint phase: combined per-batch loss, cross-entropy under the sampled
// configuration plus lambda times the self-critical policy term; updates
// backbone and policy together, no curriculum mask.
std::vector<StepRecord> joint_finetune(PolicyNetwork& pn,
                                       GatedBackbone& backbone,
                                       const Dataset& ds,
                                       const RewardConfig& cfg,
                                       const TrainingSchedule& schedule,
                                       uint64_t seed, int workers = 1);

// Exact J = E_{u ~ pi}[R(u)] by enumerating all 2^K actions. Refused for
// K > 12; use a smaller fixture.
double brute_force_expected_reward(PolicyNetwork& pn, GatedBackbone& backbone,
                                   const DatasetRecord& rec,
                                   const RewardConfig& cfg,
                                   const ExplorationConfig& expl);

}  // namespace blockdrop
