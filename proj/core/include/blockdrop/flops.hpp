#pragma once

#include "blockdrop/backbone.hpp"

namespace blockdrop {

// Counting convention: one multiply-accumulate = 2 floating-point ops; only
// conv and linear layers are tallied (biases, activations, pooling and the
// per-channel affines are excluded).
inline int64_t flops_linear(int64_t m, int64_t n, int64_t batch = 1) {
  if (m < 1 || n < 1 || batch < 1)
    throw ValueError("flops_linear: extents must be >= 1");
  return 2 * m * n * batch;
}

inline int64_t flops_conv(int64_t c_in, int64_t c_out, int64_t kh, int64_t kw,
                          int64_t h_out, int64_t w_out) {
  if (c_in < 1 || c_out < 1 || kh < 1 || kw < 1 || h_out < 1 || w_out < 1)
    throw ValueError("flops_conv: extents must be >= 1");
  return 2 * c_in * c_out * kh * kw * h_out * w_out;
}

// Static per-layer tally for one input instance.
struct CostModel {
  int64_t stem = 0;
  std::vector<int64_t> blocks;  // global block order
  int64_t transitions = 0;
  int64_t head = 0;

  int64_t full() const {
    int64_t t = stem + transitions + head;
    for (int64_t b : blocks) t += b;
    return t;
  }

  // stem + transitions + head + executed blocks (+ gating overhead).
  int64_t dynamic(const Action& u, int64_t gating_overhead = 0) const {
    if (u.size() != blocks.size())
      throw ValueError("dynamic flops: action length mismatch");
    int64_t t = stem + transitions + head + gating_overhead;
    for (size_t i = 0; i < u.size(); ++i)
      if (u[i]) t += blocks[i];
    return t;
  }
};

CostModel backbone_cost(const BackboneSpec& spec);

// Full forward cost of a policy network with the given spec.
int64_t policy_flops(const BackboneSpec& spec);

// Sequential-variant gating overhead: one global average pool plus one
// affine map per block, gates run for dropped blocks too. Pooling is counted
// at one op per element here; it is part of the gating mechanism itself, not
// of the conv/linear tally above.
int64_t seq_gate_overhead(const BackboneSpec& spec);

}  // namespace blockdrop
