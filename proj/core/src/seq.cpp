#include "blockdrop/seq.hpp"

#include <cmath>

#include "blockdrop/parallel.hpp"

namespace blockdrop {

SeqGates::SeqGates(const BackboneSpec& backbone_spec, uint64_t seed)
    : spec_(backbone_spec) {
  Rng rng(seed);
  for (int i = 0; i < spec_.block_count(); ++i) {
    int c = spec_.width_at_block(i);
    GateHead g;
    g.weight = {"gate" + std::to_string(i) + ".w",
                init_linear_weight(c, 2, rng)};
    g.bias = {"gate" + std::to_string(i) + ".b", Tensor::zeros({2})};
    gates_.push_back(std::move(g));
  }
}

Tensor SeqGates::gate_logits(Tape* tape, int i, const Tensor& y_prev) {
  GateHead& g = gates_.at(i);
  Tensor pooled = spec_.family == Family::Conv ? global_avg_pool(y_prev) : y_prev;
  if (pooled.shape.size() != 2 || pooled.shape[1] != g.weight.value.shape[0])
    throw ShapeError("gate " + std::to_string(i) + " expects width " +
                     std::to_string(g.weight.value.shape[0]) + ", got " +
                     shape_str(pooled.shape));
  Tensor w = tape ? tape->leaf(g.weight.value, &g.weight) : g.weight.value;
  Tensor b = tape ? tape->leaf(g.bias.value, &g.bias) : g.bias.value;
  return linear(pooled, w, b);
}

Tensor SeqGates::skipping_score(int i, const Tensor& y_prev) {
  Tensor z = gate_logits(nullptr, i, y_prev);
  int B = z.shape[0];
  Tensor out = Tensor::zeros({B, 2});
  for (int b = 0; b < B; ++b) {
    float z0 = z[b * 2], z1 = z[b * 2 + 1];
    float mx = std::max(z0, z1);
    double e0 = std::exp(static_cast<double>(z0 - mx));
    double e1 = std::exp(static_cast<double>(z1 - mx));
    out[b * 2] = static_cast<float>(e0 / (e0 + e1));
    out[b * 2 + 1] = static_cast<float>(e1 / (e0 + e1));
  }
  return out;
}

std::vector<Parameter*> SeqGates::params() {
  std::vector<Parameter*> out;
  for (GateHead& g : gates_) {
    out.push_back(&g.weight);
    out.push_back(&g.bias);
  }
  return out;
}

namespace {

struct Rollout {
  Tensor logits;
  Action action;
  std::vector<Tensor> gate_logit_terms;  // one [1,2] tensor per block
};

// Runs the backbone block by block; a gate fires before every block, whether
// or not the block then executes. With `tape` set, gate scores are recorded
// for the gate parameters only (activations stay constant).
Rollout rollout(GatedBackbone& backbone, SeqGates& gates, const Tensor& x,
                Tape* tape, GateMode mode, Rng* rng) {
  const BackboneSpec& spec = backbone.spec();
  int K = spec.block_count();
  if (gates.gate_count() != K)
    throw UsageError("gate count does not match backbone block count");
  Rollout out;
  out.action.assign(K, 0);
  Tensor y = backbone.stem_forward(nullptr, x);
  int idx = 0;
  for (int s = 0; s < spec.segments; ++s) {
    for (int b = 0; b < spec.blocks_per_segment; ++b, ++idx) {
      Tensor z = gates.gate_logits(tape, idx, y);
      bool keep;
      if (mode == GateMode::Sample) {
        if (!rng) throw UsageError("sampling rollout needs an rng");
        float z0 = z[0], z1 = z[1];
        float mx = std::max(z0, z1);
        double e0 = std::exp(static_cast<double>(z0 - mx));
        double e1 = std::exp(static_cast<double>(z1 - mx));
        keep = rng->bernoulli(e1 / (e0 + e1));
      } else {
        keep = z[1] > z[0];
      }
      out.action[idx] = keep ? 1 : 0;
      if (tape) out.gate_logit_terms.push_back(z);
      if (keep) y = add(y, backbone.block_transform(nullptr, idx, y));
    }
    if (s + 1 < spec.segments) y = backbone.transition_forward(nullptr, s, y);
  }
  out.logits = backbone.head_forward(nullptr, y);
  return out;
}

}  // namespace

SequentialResult forward_sequential(GatedBackbone& backbone, SeqGates& gates,
                                    const Tensor& x, Rng* rng, GateMode mode) {
  Rollout r = rollout(backbone, gates, x, nullptr, mode, rng);
  return SequentialResult{std::move(r.logits), std::move(r.action),
                          backbone.block_count()};
}

std::vector<StepRecord> train_sequential(GatedBackbone& backbone,
                                         SeqGates& gates, const Dataset& ds,
                                         const RewardConfig& cfg,
                                         const TrainingSchedule& schedule,
                                         uint64_t seed, int workers) {
  schedule.validate();
  cfg.validate();
  auto gate_params = gates.params();
  Adam opt(AdamConfig{.lr = schedule.lr_curriculum});
  Rng root(seed);
  int n = ds.size();
  int K = backbone.block_count();
  bool flat = backbone.spec().family == Family::Mlp;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::vector<StepRecord> history;

  for (int t = 1; t <= schedule.curriculum_epochs; ++t) {
    Rng erng = root.fork(static_cast<uint64_t>(t));
    erng.shuffle(order);
    StepRecord agg;
    agg.epoch = t;
    int seen = 0;
    for (int start = 0; start < n; start += schedule.batch_curriculum) {
      int end = std::min(n, start + schedule.batch_curriculum);
      int B = end - start;
      std::vector<int> batch(order.begin() + start, order.begin() + end);
      int nw = std::max(1, std::min(workers, B));
      std::vector<Gradients> sinks(nw);
      std::vector<double> rewards(B), advs(B), losses(B);
      std::vector<char> corrects(B);
      std::vector<int> usages(B);
      Rng base = erng.fork(0x5eedULL);
      parallel_chunks(B, nw, [&](int w, int begin2, int end2) {
        for (int b = begin2; b < end2; ++b) {
          const DatasetRecord& rec = ds.records[batch[b]];
          Tensor x = record_input(rec, flat);
          Rng srng = base.fork(static_cast<uint64_t>(b) + 1);
          Tape tape;
          Rollout rs = rollout(backbone, gates, x, &tape, GateMode::Sample,
                               &srng);
          bool correct = argmax_rows(rs.logits)[0] == rec.label;
          double r_sampled = compute_reward(rs.action, correct, cfg);
          Rollout rb = rollout(backbone, gates, x, nullptr, GateMode::Argmax,
                               nullptr);
          bool bcorrect = argmax_rows(rb.logits)[0] == rec.label;
          double r_base = compute_reward(rb.action, bcorrect, cfg);
          double adv = advantage(r_sampled, r_base);
          rewards[b] = r_sampled;
          advs[b] = adv;
          corrects[b] = correct;
          usages[b] = action_ones(rs.action);
          Tensor total;
          for (int i = 0; i < K; ++i) {
            Tensor lp = log_softmax_pick(rs.gate_logit_terms[i],
                                         {rs.action[i] ? 1 : 0});
            total = i == 0 ? lp : add(total, lp);
          }
          Tensor loss = affine_const(
              total, -static_cast<float>(adv) / static_cast<float>(B), 0.0f);
          losses[b] = (*loss.data)[0];
          tape.backward(loss);
          sinks[w].accumulate_from(tape, gate_params);
        }
      });
      Gradients grads;
      for (Gradients& s : sinks) grads.merge(s, gate_params);
      grads.ensure_zero(gate_params);
      double loss_sum = 0.0;
      for (double v : losses) loss_sum += v;
      if (!std::isfinite(loss_sum))
        throw TrainError("sequential training produced non-finite loss at epoch " +
                         std::to_string(t));
      opt.step(gate_params, grads);

      for (int b = 0; b < B; ++b) {
        agg.mean_reward += rewards[b];
        agg.mean_usage += static_cast<double>(usages[b]) / K;
        agg.accuracy += corrects[b] ? 1.0 : 0.0;
        agg.adv_mean += advs[b];
      }
      agg.loss += loss_sum;
      seen += B;
    }
    agg.mean_reward /= seen;
    agg.mean_usage /= seen;
    agg.accuracy /= seen;
    agg.adv_mean /= seen;
    history.push_back(agg);
  }
  return history;
}

}  // namespace blockdrop
