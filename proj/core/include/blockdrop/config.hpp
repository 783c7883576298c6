#pragma once

#include "blockdrop/trainer.hpp"

namespace blockdrop {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | cifar10
  int train_n = 512;               // synthetic only
  int test_n = 256;                // synthetic only
  std::string dir;                 // cifar10 batch directory

  void validate() const;
};

struct PretrainConfig {
  int epochs = 40;
  float lr = 3e-3f;
  int batch = 64;

  void validate() const;
};

// One run = one of these, loaded from a JSON file. CLI flags override
// individual keys; the merged result is persisted next to the outputs.
struct RunConfig {
  DatasetConfig dataset;
  BackboneSpec backbone;
  BackboneSpec policy;
  PretrainConfig pretrain;
  RewardConfig reward;
  TrainingSchedule schedule;
  uint64_t seed = 1;
  std::string out = "runs/desk";
  int workers = 1;

  void validate() const;
  // Stable id: hex FNV-1a of the canonical serialized form.
  std::string run_id() const;
  std::string to_json() const;
};

// Desk-scale defaults: conv backbone (1x16x16, 15 blocks) steered by a small
// residual-MLP policy head.
RunConfig default_desk_config();

// Parses JSON over the desk defaults; unknown keys are an error.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
void save_effective_config(const RunConfig& cfg, const std::string& path);

}  // namespace blockdrop
