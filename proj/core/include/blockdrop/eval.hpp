#pragma once

#include "blockdrop/seq.hpp"

namespace blockdrop {

enum class StrategyKind { Full, Policy, FirstK, RandomK, DistributeK, Seq };

std::string strategy_name(StrategyKind k);
StrategyKind strategy_from_name(const std::string& s);

// FirstK: prefix ones. RandomK: uniform K_keep-subset (seeded). DistributeK:
// largest-remainder quota per segment, earliest blocks within a segment.
Action heuristic_mask(StrategyKind kind, int k_total, int k_keep,
                      const std::vector<int>& segment_sizes, Rng* rng);

struct PerImageRow {
  int index = 0;
  int label = 0;
  int prediction = 0;
  int blocks = 0;
  int64_t flops = 0;
  DifficultyTag tag = DifficultyTag::None;
};

struct EvalSummary {
  std::string strategy;
  double accuracy = 0.0;
  double usage_mean = 0.0, usage_std = 0.0;    // in blocks
  double flops_mean = 0.0, flops_std = 0.0;
  std::vector<int64_t> histogram;               // counts by |u|_0, size K+1
  std::vector<PerImageRow> per_image;
};

struct EvalOptions {
  StrategyKind kind = StrategyKind::Full;
  int k_keep = -1;        // heuristics; -1 = auto-match to ceil(policy mean)
  bool sample_policy = false;  // policy strategy: sample u instead of argmax
  float alpha = 0.8f;          // bounding used when sampling
  uint64_t seed = 0;
  int workers = 1;
  bool keep_per_image = false;
};

// Runs every input under the strategy and tallies accuracy, block usage and
// dynamic FLOPs (policy/seq strategies include their gating overhead).
// `pn` is required for Policy (and for auto-matching heuristics' K),
// `gates` for Seq.
EvalSummary evaluate(GatedBackbone& backbone, const Dataset& ds,
                     const EvalOptions& opts, PolicyNetwork* pn = nullptr,
                     SeqGates* gates = nullptr);

struct OperatingPoint {
  double gamma = 0.0;
  EvalSummary summary;
};

}  // namespace blockdrop
