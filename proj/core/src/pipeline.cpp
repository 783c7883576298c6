#include "blockdrop/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "blockdrop/seq.hpp"

namespace blockdrop {

namespace fs = std::filesystem;

uint64_t sub_seed(uint64_t root, uint64_t salt) {
  Rng r(root);
  return r.fork(salt).next_u64();
}

namespace {

constexpr uint64_t kSaltTrainData = 101, kSaltTestData = 102;
constexpr uint64_t kSaltBackbone = 1, kSaltPolicy = 2, kSaltSeqGates = 3;
constexpr uint64_t kSaltPretrain = 11, kSaltCurriculum = 12, kSaltFinetune = 13,
                   kSaltSeqTrain = 14, kSaltEval = 21;

void prepare_out(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  save_effective_config(cfg, RunPaths{cfg.out}.config_json());
}

void require_file(const std::string& path, const std::string& hint) {
  if (!fs::exists(path))
    throw IoError("missing " + path + "; " + hint);
}

MetricsRow base_row(const RunConfig& cfg) {
  MetricsRow r;
  r.run_id = cfg.run_id();
  r.gamma = cfg.reward.gamma;
  r.seed = cfg.seed;
  return r;
}

MetricsRow summary_row(const RunConfig& cfg, const std::string& phase,
                       int epoch, const EvalSummary& s) {
  MetricsRow r = base_row(cfg);
  r.phase = phase;
  r.epoch = epoch;
  r.strategy = s.strategy;
  r.accuracy = s.accuracy;
  r.blocks_mean = s.usage_mean;
  r.blocks_std = s.usage_std;
  r.flops_mean = s.flops_mean;
  r.flops_std = s.flops_std;
  return r;
}

GatedBackbone load_backbone(const RunConfig& cfg, const std::string& path) {
  GatedBackbone net(cfg.backbone, sub_seed(cfg.seed, kSaltBackbone));
  load_checkpoint(net, path);
  return net;
}

PolicyNetwork load_policy(const RunConfig& cfg, const std::string& path) {
  PolicyNetwork pn(cfg.policy, sub_seed(cfg.seed, kSaltPolicy));
  load_checkpoint(pn, path);
  return pn;
}

// Newest checkpoint pair: finetuned when present, otherwise the base pair.
std::pair<std::string, std::string> newest_pair(const RunPaths& paths) {
  if (fs::exists(paths.backbone_ft_ckpt()) &&
      fs::exists(paths.policy_ft_ckpt()))
    return {paths.backbone_ft_ckpt(), paths.policy_ft_ckpt()};
  return {paths.backbone_ckpt(), paths.policy_ckpt()};
}

}  // namespace

std::pair<Dataset, Dataset> load_dataset(const RunConfig& cfg) {
  if (cfg.dataset.kind == "cifar10") {
    if (!fs::is_directory(cfg.dataset.dir))
      throw IoError("dataset directory not found: " + cfg.dataset.dir);
    return load_cifar10(cfg.dataset.dir);
  }
  return {generate_synthetic(cfg.dataset.train_n,
                             sub_seed(cfg.seed, kSaltTrainData)),
          generate_synthetic(cfg.dataset.test_n,
                             sub_seed(cfg.seed, kSaltTestData))};
}

void cmd_train_backbone(const RunConfig& cfg, bool quiet) {
  cfg.validate();
  auto [train, test] = load_dataset(cfg);
  prepare_out(cfg);
  RunPaths paths{cfg.out};

  GatedBackbone net(cfg.backbone, sub_seed(cfg.seed, kSaltBackbone));
  auto history =
      train_backbone(net, train, cfg.pretrain.epochs, cfg.pretrain.lr,
                     cfg.pretrain.batch, sub_seed(cfg.seed, kSaltPretrain),
                     cfg.workers);
  save_checkpoint(net, paths.backbone_ckpt());

  CostModel cost = backbone_cost(cfg.backbone);
  int K = cfg.backbone.block_count();
  std::vector<MetricsRow> rows;
  for (const BackboneEpochRecord& e : history) {
    MetricsRow r = base_row(cfg);
    r.phase = "pretrain";
    r.epoch = e.epoch;
    r.strategy = "full";
    r.accuracy = e.accuracy;
    r.blocks_mean = K;
    r.flops_mean = static_cast<double>(cost.full());
    rows.push_back(r);
    if (!quiet)
      std::printf("pretrain epoch %d loss %.4f acc %.4f\n", e.epoch, e.loss,
                  e.accuracy);
  }
  write_metrics_csv(paths.pretrain_csv(), rows);
}

void cmd_train_policy(const RunConfig& cfg, bool quiet) {
  cfg.validate();
  RunPaths paths{cfg.out};
  require_file(paths.backbone_ckpt(), "run train-backbone first");
  auto [train, test] = load_dataset(cfg);
  prepare_out(cfg);

  GatedBackbone net = load_backbone(cfg, paths.backbone_ckpt());
  PolicyNetwork pn(cfg.policy, sub_seed(cfg.seed, kSaltPolicy));
  auto history =
      curriculum_train(pn, net, train, cfg.reward, cfg.schedule,
                       sub_seed(cfg.seed, kSaltCurriculum), cfg.workers);
  save_checkpoint(pn, paths.policy_ckpt());

  CostModel cost = backbone_cost(cfg.backbone);
  int K = cfg.backbone.block_count();
  int64_t block_total = 0;
  for (int64_t b : cost.blocks) block_total += b;
  std::vector<MetricsRow> rows;
  for (const StepRecord& e : history) {
    MetricsRow r = base_row(cfg);
    r.phase = "curriculum";
    r.epoch = e.epoch;
    r.strategy = "policy";
    r.accuracy = e.accuracy;
    r.blocks_mean = e.mean_usage * K;
    r.flops_mean = static_cast<double>(cost.full() - block_total) +
                   e.mean_usage * static_cast<double>(block_total);
    rows.push_back(r);
    if (!quiet)
      std::printf(
          "curriculum epoch %d forced-prefix %d reward %.4f usage %.4f acc "
          "%.4f\n",
          e.epoch, curriculum_prefix(e.epoch, K), e.mean_reward, e.mean_usage,
          e.accuracy);
  }
  write_metrics_csv(paths.curriculum_csv(), rows);
}

void cmd_finetune(const RunConfig& cfg, bool quiet) {
  cfg.validate();
  RunPaths paths{cfg.out};
  require_file(paths.backbone_ckpt(), "run train-backbone first");
  require_file(paths.policy_ckpt(), "run train-policy first");
  auto [train, test] = load_dataset(cfg);
  prepare_out(cfg);

  GatedBackbone net = load_backbone(cfg, paths.backbone_ckpt());
  PolicyNetwork pn = load_policy(cfg, paths.policy_ckpt());

  EvalOptions opts;
  opts.kind = StrategyKind::Policy;
  opts.alpha = cfg.schedule.alpha;
  opts.seed = sub_seed(cfg.seed, kSaltEval);
  opts.workers = cfg.workers;
  EvalSummary pre = evaluate(net, test, opts, &pn);

  auto history = joint_finetune(pn, net, train, cfg.reward, cfg.schedule,
                                sub_seed(cfg.seed, kSaltFinetune),
                                cfg.workers);
  save_checkpoint(net, paths.backbone_ft_ckpt());
  save_checkpoint(pn, paths.policy_ft_ckpt());

  EvalSummary post = evaluate(net, test, opts, &pn);

  int K = cfg.backbone.block_count();
  std::vector<MetricsRow> rows;
  rows.push_back(summary_row(cfg, "pre_finetune", 0, pre));
  for (const StepRecord& e : history) {
    MetricsRow r = base_row(cfg);
    r.phase = "finetune";
    r.epoch = e.epoch;
    r.strategy = "policy";
    r.accuracy = e.accuracy;
    r.blocks_mean = e.mean_usage * K;
    rows.push_back(r);
    if (!quiet)
      std::printf("finetune epoch %d reward %.4f usage %.4f acc %.4f\n",
                  e.epoch, e.mean_reward, e.mean_usage, e.accuracy);
  }
  rows.push_back(summary_row(cfg, "post_finetune", 0, post));
  write_metrics_csv(paths.finetune_csv(), rows);
  if (!quiet)
    std::printf("accuracy pre %.4f post %.4f at usage %.2f -> %.2f blocks\n",
                pre.accuracy, post.accuracy, pre.usage_mean, post.usage_mean);
}

EvalSummary cmd_eval(const RunConfig& cfg, StrategyKind kind, int k_keep,
                     bool sample_policy, bool quiet) {
  cfg.validate();
  RunPaths paths{cfg.out};
  require_file(paths.backbone_ckpt(), "run train-backbone first");
  bool needs_policy = kind == StrategyKind::Policy ||
                      (k_keep < 0 && (kind == StrategyKind::FirstK ||
                                      kind == StrategyKind::RandomK ||
                                      kind == StrategyKind::DistributeK));
  auto [bpath, ppath] = newest_pair(paths);
  if (needs_policy) require_file(ppath, "run train-policy first");
  auto [train, test] = load_dataset(cfg);
  prepare_out(cfg);

  GatedBackbone net = load_backbone(cfg, bpath);
  std::unique_ptr<PolicyNetwork> pn;
  if (needs_policy)
    pn = std::make_unique<PolicyNetwork>(load_policy(cfg, ppath));

  std::unique_ptr<SeqGates> gates;
  if (kind == StrategyKind::Seq) {
    gates = std::make_unique<SeqGates>(cfg.backbone,
                                       sub_seed(cfg.seed, kSaltSeqGates));
    if (fs::exists(paths.seqgates_ckpt())) {
      load_checkpoint(*gates, paths.seqgates_ckpt());
    } else {
      if (!quiet) std::printf("training sequential gate heads\n");
      train_sequential(net, *gates, train, cfg.reward, cfg.schedule,
                       sub_seed(cfg.seed, kSaltSeqTrain), cfg.workers);
      save_checkpoint(*gates, paths.seqgates_ckpt());
    }
  }

  EvalOptions opts;
  opts.kind = kind;
  opts.k_keep = k_keep;
  opts.sample_policy = sample_policy;
  opts.alpha = cfg.schedule.alpha;
  opts.seed = sub_seed(cfg.seed, kSaltEval);
  opts.workers = cfg.workers;
  EvalSummary s = evaluate(net, test, opts, pn.get(), gates.get());

  write_metrics_csv(paths.eval_csv(s.strategy),
                    {summary_row(cfg, "eval", 0, s)});
  if (!quiet)
    std::printf("eval %s acc %.4f blocks %.2f±%.2f flops %.0f\n",
                s.strategy.c_str(), s.accuracy, s.usage_mean, s.usage_std,
                s.flops_mean);
  return s;
}

std::vector<OperatingPoint> cmd_sweep(const RunConfig& cfg,
                                      const std::vector<double>& gammas,
                                      bool quiet) {
  cfg.validate();
  if (gammas.empty()) throw ValueError("sweep needs at least one gamma");
  cmd_train_backbone(cfg, quiet);
  RunPaths paths{cfg.out};
  // fresh sweep: completed rows of an earlier aborted sweep are superseded
  fs::remove(paths.sweep_csv());

  std::vector<OperatingPoint> points;
  for (double g : gammas) {
    char tag[32];
    std::snprintf(tag, sizeof(tag), "gamma_%g", g);
    RunConfig sub = cfg;
    sub.reward.gamma = g;
    sub.out = cfg.out + "/" + tag;
    fs::create_directories(sub.out);
    fs::copy_file(paths.backbone_ckpt(), RunPaths{sub.out}.backbone_ckpt(),
                  fs::copy_options::overwrite_existing);
    cmd_train_policy(sub, quiet);
    cmd_finetune(sub, quiet);
    EvalSummary s = cmd_eval(sub, StrategyKind::Policy, -1, false, quiet);
    append_metrics_csv(paths.sweep_csv(), {summary_row(sub, "sweep", 0, s)});
    points.push_back(OperatingPoint{g, std::move(s)});
  }
  return points;
}

void cmd_difficulty_report(const RunConfig& cfg, bool quiet) {
  cfg.validate();
  RunPaths paths{cfg.out};
  auto [bpath, ppath] = newest_pair(paths);
  require_file(bpath, "run train-backbone first");
  require_file(ppath, "run train-policy first");
  auto [train, test] = load_dataset(cfg);
  prepare_out(cfg);

  GatedBackbone net = load_backbone(cfg, bpath);
  PolicyNetwork pn = load_policy(cfg, ppath);

  EvalOptions opts;
  opts.kind = StrategyKind::Policy;
  opts.alpha = cfg.schedule.alpha;
  opts.seed = sub_seed(cfg.seed, kSaltEval);
  opts.workers = cfg.workers;
  opts.keep_per_image = true;
  EvalSummary s = evaluate(net, test, opts, &pn);

  const char* tag_names[] = {"untagged", "easy", "hard"};
  double count[3] = {0, 0, 0}, acc[3] = {0, 0, 0}, bsum[3] = {0, 0, 0},
         bsq[3] = {0, 0, 0};
  for (const PerImageRow& r : s.per_image) {
    int t = static_cast<int>(r.tag);
    count[t] += 1;
    acc[t] += r.prediction == r.label ? 1.0 : 0.0;
    bsum[t] += r.blocks;
    bsq[t] += static_cast<double>(r.blocks) * r.blocks;
  }

  {
    std::string tmp = paths.difficulty_csv() + ".tmp";
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << "tag,count,accuracy,blocks_mean,blocks_std\n";
    for (int t : {1, 2}) {
      if (count[t] == 0) {
        out << "warning_empty_" << tag_names[t] << ",0,0.000000,0.000000,"
            << "0.000000\n";
        continue;
      }
      double mean = bsum[t] / count[t];
      double sd = std::sqrt(std::max(0.0, bsq[t] / count[t] - mean * mean));
      out << tag_names[t] << ',' << static_cast<int64_t>(count[t]) << ','
          << format_fixed(acc[t] / count[t]) << ',' << format_fixed(mean)
          << ',' << format_fixed(sd) << '\n';
    }
    out.close();
    fs::rename(tmp, paths.difficulty_csv());
  }
  {
    std::string tmp = paths.difficulty_per_image_csv() + ".tmp";
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + tmp);
    out << "index,label,prediction,tag,blocks,flops\n";
    for (const PerImageRow& r : s.per_image)
      out << r.index << ',' << r.label << ',' << r.prediction << ','
          << tag_names[static_cast<int>(r.tag)] << ',' << r.blocks << ','
          << r.flops << '\n';
    out.close();
    fs::rename(tmp, paths.difficulty_per_image_csv());
  }
  if (!quiet && count[1] > 0 && count[2] > 0)
    std::printf("usage easy %.3f hard %.3f blocks\n", bsum[1] / count[1],
                bsum[2] / count[2]);
}

}  // namespace blockdrop
