#include "blockdrop/flops.hpp"

namespace blockdrop {

CostModel backbone_cost(const BackboneSpec& spec) {
  CostModel cm;
  if (spec.family == Family::Conv) {
    int h = spec.height, w = spec.width;
    cm.stem = flops_conv(spec.in_channels, spec.base_channels, 3, 3, h, w);
    for (int s = 0; s < spec.segments; ++s) {
      int ch = spec.base_channels << s;
      for (int b = 0; b < spec.blocks_per_segment; ++b)
        cm.blocks.push_back(2 * flops_conv(ch, ch, 3, 3, h, w));
      if (s + 1 < spec.segments) {
        h = conv_out_extent(h, 3, 2, 1);
        w = conv_out_extent(w, 3, 2, 1);
        cm.transitions += flops_conv(ch, ch * 2, 3, 3, h, w);
      }
    }
    int top = spec.base_channels << (spec.segments - 1);
    cm.head = flops_linear(top, spec.classes);
  } else {
    cm.stem = flops_linear(spec.input_dim, spec.hidden);
    for (int s = 0; s < spec.segments; ++s) {
      for (int b = 0; b < spec.blocks_per_segment; ++b)
        cm.blocks.push_back(2 * flops_linear(spec.hidden, spec.hidden));
      if (s + 1 < spec.segments)
        cm.transitions += flops_linear(spec.hidden, spec.hidden);
    }
    cm.head = flops_linear(spec.hidden, spec.classes);
  }
  return cm;
}

int64_t policy_flops(const BackboneSpec& spec) {
  return backbone_cost(spec).full();
}

int64_t seq_gate_overhead(const BackboneSpec& spec) {
  int64_t total = 0;
  if (spec.family == Family::Conv) {
    int h = spec.height, w = spec.width;
    for (int s = 0; s < spec.segments; ++s) {
      int ch = spec.base_channels << s;
      for (int b = 0; b < spec.blocks_per_segment; ++b)
        total += static_cast<int64_t>(ch) * h * w   // pool over block input
                 + flops_linear(ch, 2);             // 2-way skip/keep score
      if (s + 1 < spec.segments) {
        h = conv_out_extent(h, 3, 2, 1);
        w = conv_out_extent(w, 3, 2, 1);
      }
    }
  } else {
    for (int i = 0; i < spec.block_count(); ++i)
      total += flops_linear(spec.hidden, 2);
  }
  return total;
}

}  // namespace blockdrop
