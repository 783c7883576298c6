#include "blockdrop/trainer.hpp"

#include <cmath>

#include "blockdrop/parallel.hpp"

namespace blockdrop {

double compute_reward(const Action& u, bool correct, const RewardConfig& cfg) {
  cfg.validate();
  if (u.empty()) throw ValueError("compute_reward: empty action");
  if (!correct) return -cfg.gamma;
  double frac = static_cast<double>(action_ones(u)) / static_cast<double>(u.size());
  return 1.0 - frac * frac;
}

int curriculum_prefix(int t, int K) {
  if (t < 1) throw ValueError("curriculum epoch t must be >= 1");
  return t < K ? K - t : 0;
}

namespace {

bool is_mlp(const PolicyNetwork& pn) {
  return pn.spec().family == Family::Mlp;
}

bool is_mlp(const GatedBackbone& bb) {
  return bb.spec().family == Family::Mlp;
}

void assert_bounded(const PolicyOutput& po, const ExplorationConfig& expl) {
  if (expl.alpha >= 1.0f) return;
  float lo = 1.0f - expl.alpha - 1e-5f, hi = expl.alpha + 1e-5f;
  for (int64_t i = 0; i < po.s_bounded.size(); ++i) {
    float v = po.s_bounded[i];
    if (v < lo || v > hi)
      throw TrainError("bounded distribution left [1-alpha, alpha]: s'=" +
                       std::to_string(v));
  }
}

struct SampleResult {
  double r_sampled = 0.0;
  double r_baseline = 0.0;
  bool correct = false;
};

// Rewards for sampled and argmax configurations of each batch element.
// Forwards are read-only over both networks and parallelize across samples.
std::vector<SampleResult> batch_rewards(GatedBackbone& backbone,
                                        const Dataset& ds,
                                        const std::vector<int>& idx,
                                        const std::vector<Action>& sampled,
                                        const std::vector<Action>& baseline,
                                        const RewardConfig& cfg, int workers) {
  int B = static_cast<int>(idx.size());
  std::vector<SampleResult> out(B);
  bool flat = is_mlp(backbone);
  parallel_chunks(B, workers, [&](int, int begin, int end) {
    for (int b = begin; b < end; ++b) {
      const DatasetRecord& rec = ds.records[idx[b]];
      Tensor x = record_input(rec, flat);
      Tensor logits = backbone.forward_gated(nullptr, x, sampled[b]);
      bool correct = argmax_rows(logits)[0] == rec.label;
      out[b].correct = correct;
      out[b].r_sampled = compute_reward(sampled[b], correct, cfg);
      if (baseline[b] == sampled[b]) {
        out[b].r_baseline = out[b].r_sampled;
      } else {
        Tensor bl = backbone.forward_gated(nullptr, x, baseline[b]);
        bool bcorrect = argmax_rows(bl)[0] == rec.label;
        out[b].r_baseline = compute_reward(baseline[b], bcorrect, cfg);
      }
    }
  });
  return out;
}

StepRecord summarize(int epoch, const std::vector<SampleResult>& rs,
                     const std::vector<Action>& sampled, int K, double loss) {
  StepRecord rec;
  rec.epoch = epoch;
  rec.loss = loss;
  int B = static_cast<int>(rs.size());
  double advsum = 0.0, advsq = 0.0;
  for (int b = 0; b < B; ++b) {
    rec.mean_reward += rs[b].r_sampled;
    rec.accuracy += rs[b].correct ? 1.0 : 0.0;
    rec.mean_usage += static_cast<double>(action_ones(sampled[b])) / K;
    double a = advantage(rs[b].r_sampled, rs[b].r_baseline);
    advsum += a;
    advsq += a * a;
  }
  rec.mean_reward /= B;
  rec.accuracy /= B;
  rec.mean_usage /= B;
  rec.adv_mean = advsum / B;
  rec.adv_std = std::sqrt(std::max(0.0, advsq / B - rec.adv_mean * rec.adv_mean));
  return rec;
}

}  // namespace

StepRecord policy_gradient_step(PolicyNetwork& pn, GatedBackbone& backbone,
                                const Dataset& ds,
                                const std::vector<int>& batch_idx,
                                const RewardConfig& cfg,
                                const ExplorationConfig& expl, int epoch_t,
                                Adam& opt, Rng& rng, int workers) {
  cfg.validate();
  expl.validate();
  int B = static_cast<int>(batch_idx.size());
  int K = pn.block_count();
  if (backbone.block_count() != K)
    throw UsageError("policy emits " + std::to_string(K) +
                     " probabilities but backbone has " +
                     std::to_string(backbone.block_count()) + " blocks");

  Tensor xp = stack_batch(ds, batch_idx, is_mlp(pn));
  Tape tape;
  PolicyOutput po = policy_forward(pn, &tape, xp, expl);
  assert_bounded(po, expl);

  int prefix = curriculum_prefix(epoch_t, K);
  std::vector<Action> sampled(B), baseline(B);
  std::vector<uint8_t> u_flat(static_cast<size_t>(B) * K);
  std::vector<uint8_t> mask(static_cast<size_t>(B) * K);
  for (int b = 0; b < B; ++b) {
    Action u = sample_action(po, b, rng);
    Action tu = map_action(po, b);
    for (int k = 0; k < prefix; ++k) u[k] = tu[k] = 1;
    for (int k = 0; k < K; ++k) {
      u_flat[static_cast<size_t>(b) * K + k] = u[k];
      mask[static_cast<size_t>(b) * K + k] = k >= prefix ? 1 : 0;
    }
    sampled[b] = std::move(u);
    baseline[b] = std::move(tu);
  }

  auto rs = batch_rewards(backbone, ds, batch_idx, sampled, baseline, cfg,
                          workers);
  std::vector<float> weights(B);
  for (int b = 0; b < B; ++b)
    weights[b] = -static_cast<float>(advantage(rs[b].r_sampled, rs[b].r_baseline));

  Tensor loss = weighted_mean(bernoulli_loglik(po.s_bounded, u_flat, mask),
                              weights);
  double loss_val = (*loss.data)[0];
  if (!std::isfinite(loss_val))
    throw TrainError("policy gradient step produced non-finite loss at epoch " +
                     std::to_string(epoch_t));
  tape.backward(loss);
  Gradients grads;
  grads.accumulate_from(tape, pn.params());
  opt.step(pn.params(), grads);
  return summarize(epoch_t, rs, sampled, K, loss_val);
}

std::vector<StepRecord> curriculum_train(PolicyNetwork& pn,
                                         GatedBackbone& backbone,
                                         const Dataset& ds,
                                         const RewardConfig& cfg,
                                         const TrainingSchedule& schedule,
                                         uint64_t seed, int workers) {
  schedule.validate();
  cfg.validate();
  ExplorationConfig expl{schedule.alpha};
  Adam opt(AdamConfig{.lr = schedule.lr_curriculum});
  Rng root(seed);
  int n = ds.size();
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
      std::vector<int> batch(order.begin() + start, order.begin() + end);
      StepRecord r = policy_gradient_step(pn, backbone, ds, batch, cfg, expl,
                                          t, opt, erng, workers);
      int B = end - start;
      agg.mean_reward += r.mean_reward * B;
      agg.mean_usage += r.mean_usage * B;
      agg.accuracy += r.accuracy * B;
      agg.adv_mean += r.adv_mean * B;
      agg.adv_std += r.adv_std * B;
      agg.loss += r.loss * B;
      seen += B;
    }
    agg.mean_reward /= seen;
    agg.mean_usage /= seen;
    agg.accuracy /= seen;
    agg.adv_mean /= seen;
    agg.adv_std /= seen;
    agg.loss /= seen;
    history.push_back(agg);
  }
  return history;
}

std::vector<StepRecord> joint_finetune(PolicyNetwork& pn,
                                       GatedBackbone& backbone,
                                       const Dataset& ds,
                                       const RewardConfig& cfg,
                                       const TrainingSchedule& schedule,
                                       uint64_t seed, int workers) {
  schedule.validate();
  cfg.validate();
  ExplorationConfig expl{schedule.alpha};
  auto bb_params = backbone.params();
  auto pn_params = pn.params();
  std::vector<Parameter*> all = bb_params;
  all.insert(all.end(), pn_params.begin(), pn_params.end());
  Adam opt(AdamConfig{.lr = schedule.lr_finetune});
  Rng root(seed);
  int n = ds.size();
  int K = pn.block_count();
  bool bb_flat = is_mlp(backbone);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::vector<StepRecord> history;

  for (int t = 1; t <= schedule.finetune_epochs; ++t) {
    Rng erng = root.fork(0x9e3779b9ULL + t);
    erng.shuffle(order);
    StepRecord agg;
    agg.epoch = t;
    int seen = 0;
    for (int start = 0; start < n; start += schedule.batch_finetune) {
      int end = std::min(n, start + schedule.batch_finetune);
      std::vector<int> batch(order.begin() + start, order.begin() + end);
      int B = end - start;

      Tensor xp = stack_batch(ds, batch, is_mlp(pn));
      Tape ptape;
      PolicyOutput po = policy_forward(pn, &ptape, xp, expl);
      assert_bounded(po, expl);

      std::vector<Action> sampled(B), baseline(B);
      std::vector<uint8_t> u_flat(static_cast<size_t>(B) * K);
      std::vector<uint8_t> mask(static_cast<size_t>(B) * K, 1);
      for (int b = 0; b < B; ++b) {
        sampled[b] = sample_action(po, b, erng);
        baseline[b] = map_action(po, b);
        for (int k = 0; k < K; ++k)
          u_flat[static_cast<size_t>(b) * K + k] = sampled[b][k];
      }

      // Per-sample cross-entropy under the sampled configuration; thread-
      // local tapes and sinks, reduced in worker order.
      int nw = std::max(1, std::min(workers, B));
      std::vector<Gradients> sinks(nw);
      std::vector<SampleResult> rs(B);
      std::vector<double> ce(B);
      parallel_chunks(B, nw, [&](int w, int begin2, int end2) {
        for (int b = begin2; b < end2; ++b) {
          const DatasetRecord& rec = ds.records[batch[b]];
          Tensor x = record_input(rec, bb_flat);
          Tape bt;
          Tensor logits = backbone.forward_gated(&bt, x, sampled[b]);
          Tensor l = softmax_cross_entropy(logits, {rec.label});
          ce[b] = (*l.data)[0];
          bt.backward(l);
          sinks[w].accumulate_from(bt, bb_params);
          bool correct = argmax_rows(logits)[0] == rec.label;
          rs[b].correct = correct;
          rs[b].r_sampled = compute_reward(sampled[b], correct, cfg);
          if (baseline[b] == sampled[b]) {
            rs[b].r_baseline = rs[b].r_sampled;
          } else {
            Tensor bl = backbone.forward_gated(nullptr, x, baseline[b]);
            bool bc = argmax_rows(bl)[0] == rec.label;
            rs[b].r_baseline = compute_reward(baseline[b], bc, cfg);
          }
        }
      });
      Gradients grads;
      for (Gradients& s : sinks) grads.merge(s, bb_params);
      grads.scale(1.0f / static_cast<float>(B));

      std::vector<float> weights(B);
      for (int b = 0; b < B; ++b)
        weights[b] = -schedule.lambda *
                     static_cast<float>(advantage(rs[b].r_sampled, rs[b].r_baseline));
      Tensor ploss = weighted_mean(bernoulli_loglik(po.s_bounded, u_flat, mask),
                                   weights);
      ptape.backward(ploss);
      grads.accumulate_from(ptape, pn_params);
      grads.ensure_zero(all);  // blocks dropped by the whole batch

      double ce_mean = 0.0;
      for (double v : ce) ce_mean += v;
      ce_mean /= B;
      double loss_val = ce_mean + static_cast<double>((*ploss.data)[0]);
      if (!std::isfinite(loss_val))
        throw TrainError("joint finetune produced non-finite loss at epoch " +
                         std::to_string(t));
      opt.step(all, grads);

      StepRecord r = summarize(t, rs, sampled, K, loss_val);
      agg.mean_reward += r.mean_reward * B;
      agg.mean_usage += r.mean_usage * B;
      agg.accuracy += r.accuracy * B;
      agg.adv_mean += r.adv_mean * B;
      agg.adv_std += r.adv_std * B;
      agg.loss += r.loss * B;
      seen += B;
    }
    agg.mean_reward /= seen;
    agg.mean_usage /= seen;
    agg.accuracy /= seen;
    agg.adv_mean /= seen;
    agg.adv_std /= seen;
    agg.loss /= seen;
    history.push_back(agg);
  }
  return history;
}

std::vector<BackboneEpochRecord> train_backbone(GatedBackbone& net,
                                                const Dataset& ds, int epochs,
                                                float lr, int batch_size,
                                                uint64_t seed, int workers) {
  if (ds.size() == 0) throw ValueError("train_backbone: empty dataset");
  if (ds.classes > net.spec().classes)
    throw ValueError("dataset has more classes than the backbone head");
  if (batch_size < 1) throw ValueError("batch size must be >= 1");
  bool flat = net.spec().family == Family::Mlp;
  auto params = net.params();
  Adam opt(AdamConfig{.lr = lr});
  Rng root(seed);
  int n = ds.size();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::vector<BackboneEpochRecord> history;

  for (int e = 1; e <= epochs; ++e) {
    Rng erng = root.fork(static_cast<uint64_t>(e));
    erng.shuffle(order);
    double loss_sum = 0.0;
    int correct = 0;
    for (int start = 0; start < n; start += batch_size) {
      int end = std::min(n, start + batch_size);
      std::vector<int> batch(order.begin() + start, order.begin() + end);
      int B = end - start;
      int nw = std::max(1, std::min(workers, B));
      int chunk = (B + nw - 1) / nw;
      std::vector<Gradients> sinks(nw);
      std::vector<double> sub_loss(nw, 0.0);
      std::vector<int> sub_correct(nw, 0);
      parallel_chunks(B, nw, [&](int w, int begin2, int end2) {
        (void)chunk;
        std::vector<int> sub(batch.begin() + begin2, batch.begin() + end2);
        Tensor x = stack_batch(ds, sub, flat);
        std::vector<int> y = batch_labels(ds, sub);
        Tape tape;
        Tensor logits = net.forward_full(&tape, x);
        Tensor l = softmax_cross_entropy(logits, y);
        sub_loss[w] = static_cast<double>((*l.data)[0]) * (end2 - begin2);
        tape.backward(l);
        sinks[w].accumulate_from(tape, params);
        sinks[w].scale(static_cast<float>(end2 - begin2));
        auto preds = argmax_rows(logits);
        for (size_t i = 0; i < preds.size(); ++i)
          if (preds[i] == y[i]) ++sub_correct[w];
      });
      Gradients grads;
      for (Gradients& s : sinks) grads.merge(s, params);
      grads.scale(1.0f / static_cast<float>(B));
      double batch_loss = 0.0;
      for (double v : sub_loss) batch_loss += v;
      batch_loss /= B;
      if (!std::isfinite(batch_loss))
        throw TrainError("backbone training diverged (non-finite loss) at epoch " +
                         std::to_string(e));
      loss_sum += batch_loss * B;
      for (int c : sub_correct) correct += c;
      opt.step(params, grads);
    }
    history.push_back({e, loss_sum / n, static_cast<double>(correct) / n});
  }
  return history;
}

double brute_force_expected_reward(PolicyNetwork& pn, GatedBackbone& backbone,
                                   const DatasetRecord& rec,
                                   const RewardConfig& cfg,
                                   const ExplorationConfig& expl) {
  cfg.validate();
  expl.validate();
  int K = pn.block_count();
  if (K > 12)
    throw UsageError("brute_force_expected_reward enumerates 2^K actions and "
                     "is limited to K <= 12; use a smaller fixture");
  Tensor xp = record_input(rec, pn.spec().family == Family::Mlp);
  PolicyOutput po = policy_forward(pn, nullptr, xp, expl);
  const float* sp = po.s_bounded.ptr();
  Tensor xb = record_input(rec, backbone.spec().family == Family::Mlp);
  double J = 0.0;
  for (uint32_t bits = 0; bits < (1u << K); ++bits) {
    Action u(K);
    double prob = 1.0;
    for (int k = 0; k < K; ++k) {
      u[k] = (bits >> k) & 1;
      prob *= u[k] ? static_cast<double>(sp[k]) : 1.0 - static_cast<double>(sp[k]);
    }
    Tensor logits = backbone.forward_gated(nullptr, xb, u);
    bool correct = argmax_rows(logits)[0] == rec.label;
    J += prob * compute_reward(u, correct, cfg);
  }
  return J;
}

}  // namespace blockdrop
