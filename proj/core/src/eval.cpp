#include "blockdrop/eval.hpp"

#include <cmath>

#include "blockdrop/parallel.hpp"

namespace blockdrop {

std::string strategy_name(StrategyKind k) {
  switch (k) {
    case StrategyKind::Full: return "full";
    case StrategyKind::Policy: return "policy";
    case StrategyKind::FirstK: return "firstk";
    case StrategyKind::RandomK: return "randomk";
    case StrategyKind::DistributeK: return "distributek";
    case StrategyKind::Seq: return "seq";
  }
  throw ValueError("unknown strategy");
}

StrategyKind strategy_from_name(const std::string& s) {
  if (s == "full") return StrategyKind::Full;
  if (s == "policy") return StrategyKind::Policy;
  if (s == "firstk") return StrategyKind::FirstK;
  if (s == "randomk") return StrategyKind::RandomK;
  if (s == "distributek") return StrategyKind::DistributeK;
  if (s == "seq") return StrategyKind::Seq;
  throw ValueError("unknown strategy name: " + s);
}

Action heuristic_mask(StrategyKind kind, int k_total, int k_keep,
                      const std::vector<int>& segment_sizes, Rng* rng) {
  if (k_keep < 0 || k_keep > k_total)
    throw ValueError("k_keep " + std::to_string(k_keep) +
                     " out of range [0, " + std::to_string(k_total) + "]");
  Action u(k_total, 0);
  switch (kind) {
    case StrategyKind::FirstK:
      for (int i = 0; i < k_keep; ++i) u[i] = 1;
      break;
    case StrategyKind::RandomK: {
      if (!rng) throw UsageError("RandomK needs an rng");
      std::vector<int> idx(k_total);
      for (int i = 0; i < k_total; ++i) idx[i] = i;
      rng->shuffle(idx);
      for (int i = 0; i < k_keep; ++i) u[idx[i]] = 1;
      break;
    }
    case StrategyKind::DistributeK: {
      int segs = static_cast<int>(segment_sizes.size());
      int total = 0;
      for (int s : segment_sizes) total += s;
      if (total != k_total)
        throw ValueError("segment sizes do not sum to k_total");
      // largest-remainder apportionment, ties to the earliest segment
      std::vector<int> quota(segs);
      std::vector<double> rem(segs);
      int assigned = 0;
      for (int s = 0; s < segs; ++s) {
        double share = static_cast<double>(k_keep) * segment_sizes[s] / k_total;
        quota[s] = static_cast<int>(std::floor(share));
        quota[s] = std::min(quota[s], segment_sizes[s]);
        rem[s] = share - std::floor(share);
        assigned += quota[s];
      }
      while (assigned < k_keep) {
        int best = -1;
        for (int s = 0; s < segs; ++s) {
          if (quota[s] >= segment_sizes[s]) continue;
          if (best < 0 || rem[s] > rem[best]) best = s;
        }
        if (best < 0) break;
        ++quota[best];
        rem[best] = -1.0;
        ++assigned;
      }
      int base = 0;
      for (int s = 0; s < segs; ++s) {
        for (int i = 0; i < quota[s]; ++i) u[base + i] = 1;
        base += segment_sizes[s];
      }
      break;
    }
    default:
      throw UsageError("heuristic_mask: not a heuristic strategy");
  }
  return u;
}

namespace {

// Policy actions for the whole dataset (batched policy forward).
std::vector<Action> policy_actions(PolicyNetwork& pn, const Dataset& ds,
                                   const EvalOptions& opts) {
  ExplorationConfig expl{opts.alpha};
  int n = ds.size();
  std::vector<Action> out(n);
  bool flat = pn.spec().family == Family::Mlp;
  Rng root(opts.seed);
  const int chunk = 256;
  for (int start = 0; start < n; start += chunk) {
    int end = std::min(n, start + chunk);
    std::vector<int> idx(end - start);
    for (int i = start; i < end; ++i) idx[i - start] = i;
    Tensor x = stack_batch(ds, idx, flat);
    PolicyOutput po = policy_forward(pn, nullptr, x, expl);
    for (int b = 0; b < end - start; ++b) {
      if (opts.sample_policy) {
        Rng srng = root.fork(static_cast<uint64_t>(start + b) + 1);
        out[start + b] = sample_action(po, b, srng);
      } else {
        out[start + b] = map_action(po, b);
      }
    }
  }
  return out;
}

}  // namespace

EvalSummary evaluate(GatedBackbone& backbone, const Dataset& ds,
                     const EvalOptions& opts, PolicyNetwork* pn,
                     SeqGates* gates) {
  int K = backbone.block_count();
  int n = ds.size();
  CostModel cost = backbone_cost(backbone.spec());
  bool flat = backbone.spec().family == Family::Mlp;

  // Per-input actions and the gating overhead charged per input.
  std::vector<Action> actions(n);
  int64_t overhead = 0;
  bool seq_strategy = opts.kind == StrategyKind::Seq;
  if (opts.kind == StrategyKind::Policy) {
    if (!pn) throw UsageError("policy strategy needs a policy network");
    actions = policy_actions(*pn, ds, opts);
    overhead = policy_flops(pn->spec());
  } else if (opts.kind == StrategyKind::Full) {
    for (auto& a : actions) a.assign(K, 1);
  } else if (seq_strategy) {
    if (!gates) throw UsageError("seq strategy needs gate heads");
    overhead = seq_gate_overhead(backbone.spec());
    // actions realized inside the per-sample loop below
  } else {
    int k_keep = opts.k_keep;
    if (k_keep < 0) {
      if (!pn)
        throw UsageError("auto-matched heuristics need a policy network");
      auto pa = policy_actions(*pn, ds, opts);
      double mean = 0.0;
      for (const Action& a : pa) mean += action_ones(a);
      mean /= n;
      k_keep = static_cast<int>(std::ceil(mean));  // "rounding up as needed"
    }
    Rng rng(opts.seed);
    Action mask = heuristic_mask(opts.kind, K, k_keep,
                                 backbone.spec().segment_sizes(), &rng);
    for (auto& a : actions) a = mask;
  }

  std::vector<PerImageRow> rows(n);
  Rng seq_root(opts.seed);
  parallel_chunks(n, opts.workers, [&](int, int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const DatasetRecord& rec = ds.records[i];
      Tensor x = record_input(rec, flat);
      Tensor logits;
      if (seq_strategy) {
        Rng srng = seq_root.fork(static_cast<uint64_t>(i) + 1);
        SequentialResult r = forward_sequential(
            backbone, *gates, x,
            opts.sample_policy ? &srng : nullptr,
            opts.sample_policy ? GateMode::Sample : GateMode::Argmax);
        actions[i] = std::move(r.action);
        logits = std::move(r.logits);
      } else {
        logits = backbone.forward_gated(nullptr, x, actions[i]);
      }
      rows[i].index = i;
      rows[i].label = rec.label;
      rows[i].tag = rec.tag;
      rows[i].prediction = argmax_rows(logits)[0];
      rows[i].blocks = action_ones(actions[i]);
      rows[i].flops = cost.dynamic(actions[i], overhead);
    }
  });

  EvalSummary sum;
  sum.strategy = strategy_name(opts.kind);
  sum.histogram.assign(K + 1, 0);
  double bsum = 0, bsq = 0, fsum = 0, fsq = 0;
  for (const PerImageRow& r : rows) {
    sum.accuracy += r.prediction == r.label ? 1.0 : 0.0;
    bsum += r.blocks;
    bsq += static_cast<double>(r.blocks) * r.blocks;
    fsum += static_cast<double>(r.flops);
    fsq += static_cast<double>(r.flops) * static_cast<double>(r.flops);
    ++sum.histogram[r.blocks];
  }
  sum.accuracy /= n;
  sum.usage_mean = bsum / n;
  sum.usage_std = std::sqrt(std::max(0.0, bsq / n - sum.usage_mean * sum.usage_mean));
  sum.flops_mean = fsum / n;
  sum.flops_std = std::sqrt(std::max(0.0, fsq / n - sum.flops_mean * sum.flops_mean));
  if (opts.keep_per_image) sum.per_image = std::move(rows);
  return sum;
}

}  // namespace blockdrop
