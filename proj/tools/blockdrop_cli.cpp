#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "blockdrop/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  int64_t seed = -1;
  std::string out;
  int workers = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "root seed override");
  cmd->add_option("--out", f.out, "output directory override");
  cmd->add_option("--workers", f.workers, "worker thread count override");
}

blockdrop::RunConfig resolve(const CommonFlags& f) {
  blockdrop::RunConfig cfg = f.config_path.empty()
                                 ? blockdrop::default_desk_config()
                                 : blockdrop::load_config(f.config_path);
  if (f.seed >= 0) cfg.seed = static_cast<uint64_t>(f.seed);
  if (!f.out.empty()) cfg.out = f.out;
  if (f.workers > 0) cfg.workers = f.workers;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated residual networks with learned per-input block drops"};
  app.require_subcommand(1);

  CommonFlags tb, tp, ft, ev, sw, dr;
  std::string strategy = "policy";
  int k_keep = -1;
  bool sample = false;
  std::vector<double> gammas = {2.0, 5.0, 10.0};

  CLI::App* c_tb = app.add_subcommand("train-backbone",
                                      "supervised pretraining of the backbone");
  add_common(c_tb, tb);
  CLI::App* c_tp = app.add_subcommand(
      "train-policy", "curriculum policy-gradient training of the dropper");
  add_common(c_tp, tp);
  CLI::App* c_ft = app.add_subcommand(
      "finetune", "joint backbone+policy finetuning with pre/post evaluation");
  add_common(c_ft, ft);
  CLI::App* c_ev =
      app.add_subcommand("eval", "evaluate a drop strategy on the test split");
  add_common(c_ev, ev);
  c_ev->add_option("--strategy", strategy,
                   "full|policy|firstk|randomk|distributek|seq");
  c_ev->add_option("--k-keep", k_keep,
                   "blocks kept by heuristics; -1 matches the policy's mean");
  c_ev->add_flag("--sample", sample, "sample the policy instead of argmax");
  CLI::App* c_sw = app.add_subcommand(
      "sweep", "full pipeline per gamma, collecting operating points");
  add_common(c_sw, sw);
  c_sw->add_option("--gammas", gammas, "penalty values to sweep");
  CLI::App* c_dr = app.add_subcommand("difficulty-report",
                                      "per-difficulty-tag block usage report");
  add_common(c_dr, dr);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_tb->parsed()) {
      blockdrop::cmd_train_backbone(resolve(tb));
    } else if (c_tp->parsed()) {
      blockdrop::cmd_train_policy(resolve(tp));
    } else if (c_ft->parsed()) {
      blockdrop::cmd_finetune(resolve(ft));
    } else if (c_ev->parsed()) {
      blockdrop::cmd_eval(resolve(ev), blockdrop::strategy_from_name(strategy),
                          k_keep, sample);
    } else if (c_sw->parsed()) {
      blockdrop::cmd_sweep(resolve(sw), gammas);
    } else if (c_dr->parsed()) {
      blockdrop::cmd_difficulty_report(resolve(dr));
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
