#pragma once

#include "blockdrop/checkpoint.hpp"
#include "blockdrop/config.hpp"
#include "blockdrop/eval.hpp"
#include "blockdrop/metrics.hpp"

namespace blockdrop {

// Fixed artifact layout under a run's output directory.
struct RunPaths {
  std::string out;

  std::string config_json() const { return out + "/config.json"; }
  std::string backbone_ckpt() const { return out + "/backbone.ckpt"; }
  std::string policy_ckpt() const { return out + "/policy.ckpt"; }
  std::string backbone_ft_ckpt() const { return out + "/backbone_ft.ckpt"; }
  std::string policy_ft_ckpt() const { return out + "/policy_ft.ckpt"; }
  std::string seqgates_ckpt() const { return out + "/seqgates.ckpt"; }
  std::string pretrain_csv() const { return out + "/metrics_pretrain.csv"; }
  std::string curriculum_csv() const { return out + "/metrics_curriculum.csv"; }
  std::string finetune_csv() const { return out + "/metrics_finetune.csv"; }
  std::string eval_csv(const std::string& strategy) const {
    return out + "/eval_" + strategy + ".csv";
  }
  std::string sweep_csv() const { return out + "/sweep.csv"; }
  std::string difficulty_csv() const { return out + "/difficulty.csv"; }
  std::string difficulty_per_image_csv() const {
    return out + "/difficulty_per_image.csv";
  }
};

// Independent sub-stream seed for a named pipeline stage.
uint64_t sub_seed(uint64_t root, uint64_t salt);

std::pair<Dataset, Dataset> load_dataset(const RunConfig& cfg);

// Each command validates the whole config (and its input artifacts) before
// touching the output directory; outputs are rewritten whole so a rerun with
// the same config reproduces every file byte for byte.
void cmd_train_backbone(const RunConfig& cfg, bool quiet = false);
void cmd_train_policy(const RunConfig& cfg, bool quiet = false);
void cmd_finetune(const RunConfig& cfg, bool quiet = false);

// Evaluates on the test split with the newest checkpoints (finetuned if
// present) and writes one summary row to eval_<strategy>.csv. A seq request
// trains the gate heads first if no gate checkpoint exists yet.
EvalSummary cmd_eval(const RunConfig& cfg, StrategyKind kind, int k_keep = -1,
                     bool sample_policy = false, bool quiet = false);

// Full pipeline per gamma under <out>/gamma_<g>; appends each finished
// operating point to sweep.csv immediately so an aborted sweep keeps its
// completed rows.
std::vector<OperatingPoint> cmd_sweep(const RunConfig& cfg,
                                      const std::vector<double>& gammas,
                                      bool quiet = false);

// Per-difficulty-tag usage summary plus per-image rows for the policy
// strategy; an empty tag subset produces an explicit warning row.
void cmd_difficulty_report(const RunConfig& cfg, bool quiet = false);

}  // namespace blockdrop
