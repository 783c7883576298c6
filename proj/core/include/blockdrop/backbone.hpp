#pragma once

#include <memory>
#include <string>
#include <vector>

#include "blockdrop/model.hpp"
#include "blockdrop/tensor.hpp"

namespace blockdrop {

enum class Family { Conv, Mlp };

std::string family_name(Family f);
Family family_from_name(const std::string& s);

// Architecture of a gated residual classifier. Two families share the same
// gating semantics: a conv net (stem conv, 3x3 blocks, strided transition
// convs, global-pool head) and a residual MLP (linear stem/blocks/head).
struct BackboneSpec {
  Family family = Family::Conv;
  int in_channels = 1;
  int height = 16;
  int width = 16;
  int base_channels = 16;
  int input_dim = 256;  // mlp only
  int hidden = 32;      // mlp only
  int segments = 3;
  int blocks_per_segment = 5;
  int classes = 4;

  int block_count() const { return segments * blocks_per_segment; }
  std::vector<int> segment_sizes() const {
    return std::vector<int>(segments, blocks_per_segment);
  }
  // Channel width (conv) or hidden width (mlp) seen by block `i`.
  int width_at_block(int i) const;
  std::string descriptor() const;
  static BackboneSpec parse_descriptor(const std::string& d);
  bool operator==(const BackboneSpec&) const = default;
};

// A shape-preserving residual transform F_i; the skip add is applied by the
// owning network so a dropped block performs no compute at all.
class ResidualBlock {
 public:
  virtual ~ResidualBlock() = default;
  virtual Tensor transform(Tape* tape, const Tensor& x) = 0;
  virtual void collect(std::vector<Parameter*>& out) = 0;
};

class GatedBackbone : public Model {
 public:
  GatedBackbone(BackboneSpec spec, uint64_t seed);

  int block_count() const { return spec_.block_count(); }
  const BackboneSpec& spec() const { return spec_; }

  Tensor forward_full(Tape* tape, const Tensor& x);
  Tensor forward_gated(Tape* tape, const Tensor& x, const Action& u);

  // Structural pieces, exposed so callers can interleave per-block logic
  // (sequential gating) or build reference forwards in tests.
  Tensor stem_forward(Tape* tape, const Tensor& x);
  Tensor block_transform(Tape* tape, int global_index, const Tensor& x);
  Tensor transition_forward(Tape* tape, int transition_index, const Tensor& x);
  Tensor head_forward(Tape* tape, const Tensor& x);

  std::vector<Parameter*> params() override;
  std::string descriptor() const override { return spec_.descriptor(); }
  std::string kind() const override { return "backbone"; }

 private:
  void validate_input(const Tensor& x) const;

  BackboneSpec spec_;
  std::vector<Parameter> stem_;
  std::vector<std::unique_ptr<ResidualBlock>> blocks_;          // global order
  std::vector<std::vector<Parameter>> transitions_;             // per gap
  std::vector<Parameter> head_;
};

}  // namespace blockdrop
