#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "blockdrop/rng.hpp"
#include "blockdrop/tensor.hpp"

namespace blockdrop {

struct Parameter {
  std::string name;
  Tensor value;
};

// Anything with named parameters that can be checkpointed and optimized.
class Model {
 public:
  virtual ~Model() = default;
  virtual std::vector<Parameter*> params() = 0;
  virtual std::string descriptor() const = 0;
  virtual std::string kind() const = 0;

  std::vector<const Parameter*> params() const {
    auto ps = const_cast<Model*>(this)->params();
    return {ps.begin(), ps.end()};
  }
};

// Accumulated gradients keyed by parameter. Thread-local sinks are reduced
// in a caller-fixed order so results do not depend on scheduling.
class Gradients {
 public:
  void accumulate(const Parameter& p, const std::vector<float>& g) {
    auto& slot = grads_[&p];
    if (slot.empty()) slot.assign(g.size(), 0.0f);
    if (slot.size() != g.size())
      throw UsageError("gradient size mismatch for parameter " + p.name);
    for (size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
  }

  // Pulls every parameter gradient the tape recorded (tape must be consumed).
  void accumulate_from(const Tape& tape, const std::vector<Parameter*>& params) {
    if (!tape.consumed())
      throw UsageError("accumulate_from: tape has not run backward");
    for (Parameter* p : params)
      if (const std::vector<float>* g = tape.grad_for_key(p)) accumulate(*p, *g);
  }

  void merge(const Gradients& other, const std::vector<Parameter*>& order) {
    for (Parameter* p : order) {
      auto it = other.grads_.find(p);
      if (it != other.grads_.end()) accumulate(*p, it->second);
    }
  }

  const std::vector<float>* find(const Parameter& p) const {
    auto it = grads_.find(&p);
    return it == grads_.end() ? nullptr : &it->second;
  }

  void scale(float s) {
    for (auto& [p, g] : grads_)
      for (float& v : g) v *= s;
  }

  // Fills in zero gradients for parameters no recorded op touched (e.g.
  // blocks dropped by every sample in a batch).
  void ensure_zero(const std::vector<Parameter*>& params) {
    for (Parameter* p : params) {
      auto& slot = grads_[p];
      if (slot.empty()) slot.assign(p->value.size(), 0.0f);
    }
  }

  void clear() { grads_.clear(); }
  bool empty() const { return grads_.empty(); }

 private:
  std::unordered_map<const Parameter*, std::vector<float>> grads_;
};

struct AdamConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void set_lr(float lr) { cfg_.lr = lr; }
  float lr() const { return cfg_.lr; }

  // Standard bias-corrected Adam update; consumes (clears) the gradients.
  void step(const std::vector<Parameter*>& params, Gradients& grads) {
    ++t_;
    float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (Parameter* p : params) {
      const std::vector<float>* g = grads.find(*p);
      if (!g)
        throw UsageError("adam: missing gradient for parameter " + p->name);
      auto& slot = state_[p];
      if (slot.m.empty()) {
        slot.m.assign(g->size(), 0.0f);
        slot.v.assign(g->size(), 0.0f);
      }
      float* w = p->value.ptr();
      for (size_t i = 0; i < g->size(); ++i) {
        float gi = (*g)[i];
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0f - cfg_.beta1) * gi;
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0f - cfg_.beta2) * gi * gi;
        float mhat = slot.m[i] / bc1;
        float vhat = slot.v[i] / bc2;
        w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
    grads.clear();
  }

  int64_t steps() const { return t_; }

 private:
  struct Slot {
    std::vector<float> m, v;
  };
  AdamConfig cfg_;
  std::unordered_map<const Parameter*, Slot> state_;
  int64_t t_ = 0;
};

// He-style init for layers feeding relus.
inline Tensor init_conv_kernel(int out_ch, int in_ch, int k, Rng& rng) {
  Tensor t = Tensor::zeros({out_ch, in_ch, k, k});
  double stddev = std::sqrt(2.0 / (in_ch * k * k));
  for (int64_t i = 0; i < t.size(); ++i)
    (*t.data)[i] = static_cast<float>(rng.normal() * stddev);
  return t;
}

inline Tensor init_linear_weight(int in_dim, int out_dim, Rng& rng) {
  Tensor t = Tensor::zeros({in_dim, out_dim});
  double stddev = std::sqrt(2.0 / in_dim);
  for (int64_t i = 0; i < t.size(); ++i)
    (*t.data)[i] = static_cast<float>(rng.normal() * stddev);
  return t;
}

}  // namespace blockdrop
