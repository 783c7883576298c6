#include <benchmark/benchmark.h>

#include "blockdrop/config.hpp"
#include "blockdrop/flops.hpp"

namespace {

using namespace blockdrop;

// Gated forward at a given kept-block count; the prefix mask keeps timings
// comparable across counts.
void BM_GatedForward(benchmark::State& state) {
  RunConfig cfg = default_desk_config();
  GatedBackbone net(cfg.backbone, 7);
  Dataset ds = generate_synthetic(8, 11);
  Tensor x = record_input(ds.records[0], false);
  int K = net.block_count();
  Action u(K, 0);
  for (int i = 0; i < state.range(0); ++i) u[i] = 1;
  for (auto _ : state) {
    Tensor y = net.forward_gated(nullptr, x, u);
    benchmark::DoNotOptimize(y.data->data());
  }
  state.counters["flops"] =
      static_cast<double>(backbone_cost(cfg.backbone).dynamic(u));
}
BENCHMARK(BM_GatedForward)->Arg(0)->Arg(5)->Arg(10)->Arg(15);

void BM_PolicyForward(benchmark::State& state) {
  RunConfig cfg = default_desk_config();
  PolicyNetwork pn(cfg.policy, 7);
  Dataset ds = generate_synthetic(8, 11);
  Tensor x = record_input(ds.records[0], true);
  ExplorationConfig expl;
  for (auto _ : state) {
    PolicyOutput po = policy_forward(pn, nullptr, x, expl);
    benchmark::DoNotOptimize(po.s.data->data());
  }
  state.counters["flops"] = static_cast<double>(policy_flops(cfg.policy));
}
BENCHMARK(BM_PolicyForward);

}  // namespace

BENCHMARK_MAIN();
