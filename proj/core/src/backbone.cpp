#include "blockdrop/backbone.hpp"

#include <sstream>

namespace blockdrop {

std::string family_name(Family f) { return f == Family::Conv ? "conv" : "mlp"; }

Family family_from_name(const std::string& s) {
  if (s == "conv") return Family::Conv;
  if (s == "mlp") return Family::Mlp;
  throw ValueError("unknown model family: " + s);
}

int BackboneSpec::width_at_block(int i) const {
  if (i < 0 || i >= block_count())
    throw ValueError("block index out of range: " + std::to_string(i));
  if (family == Family::Mlp) return hidden;
  return base_channels << (i / blocks_per_segment);
}

std::string BackboneSpec::descriptor() const {
  std::ostringstream os;
  os << family_name(family) << ";in=" << in_channels << ";h=" << height
     << ";w=" << width << ";base=" << base_channels << ";dim=" << input_dim
     << ";hidden=" << hidden << ";segs=" << segments
     << ";bps=" << blocks_per_segment << ";classes=" << classes;
  return os.str();
}

BackboneSpec BackboneSpec::parse_descriptor(const std::string& d) {
  BackboneSpec s;
  std::istringstream is(d);
  std::string tok;
  if (!std::getline(is, tok, ';')) throw ValueError("empty descriptor");
  s.family = family_from_name(tok);
  while (std::getline(is, tok, ';')) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw ValueError("malformed descriptor field: " + tok);
    std::string key = tok.substr(0, eq);
    int val = std::stoi(tok.substr(eq + 1));
    if (key == "in") s.in_channels = val;
    else if (key == "h") s.height = val;
    else if (key == "w") s.width = val;
    else if (key == "base") s.base_channels = val;
    else if (key == "dim") s.input_dim = val;
    else if (key == "hidden") s.hidden = val;
    else if (key == "segs") s.segments = val;
    else if (key == "bps") s.blocks_per_segment = val;
    else if (key == "classes") s.classes = val;
    else throw ValueError("unknown descriptor field: " + key);
  }
  return s;
}

namespace {

class ConvBlock : public ResidualBlock {
 public:
  ConvBlock(const std::string& prefix, int channels, Rng& rng) {
    w1_ = {prefix + ".conv1", init_conv_kernel(channels, channels, 3, rng)};
    g1_ = {prefix + ".gamma1", Tensor::full({channels}, 1.0f)};
    b1_ = {prefix + ".beta1", Tensor::zeros({channels})};
    w2_ = {prefix + ".conv2", init_conv_kernel(channels, channels, 3, rng)};
    g2_ = {prefix + ".gamma2", Tensor::full({channels}, 1.0f)};
    b2_ = {prefix + ".beta2", Tensor::zeros({channels})};
  }

  Tensor transform(Tape* tape, const Tensor& x) override {
    auto p = [tape](Parameter& q) {
      return tape ? tape->leaf(q.value, &q) : q.value;
    };
    Tensor h = conv2d(x, p(w1_), 1, 1);
    h = channel_affine(h, p(g1_), p(b1_));
    h = relu(h);
    h = conv2d(h, p(w2_), 1, 1);
    return channel_affine(h, p(g2_), p(b2_));
  }

  void collect(std::vector<Parameter*>& out) override {
    out.insert(out.end(), {&w1_, &g1_, &b1_, &w2_, &g2_, &b2_});
  }

 private:
  Parameter w1_, g1_, b1_, w2_, g2_, b2_;
};

class MlpBlock : public ResidualBlock {
 public:
  MlpBlock(const std::string& prefix, int hidden, Rng& rng) {
    w1_ = {prefix + ".lin1.w", init_linear_weight(hidden, hidden, rng)};
    b1_ = {prefix + ".lin1.b", Tensor::zeros({hidden})};
    w2_ = {prefix + ".lin2.w", init_linear_weight(hidden, hidden, rng)};
    b2_ = {prefix + ".lin2.b", Tensor::zeros({hidden})};
  }

  Tensor transform(Tape* tape, const Tensor& x) override {
    auto p = [tape](Parameter& q) {
      return tape ? tape->leaf(q.value, &q) : q.value;
    };
    Tensor h = relu(linear(x, p(w1_), p(b1_)));
    return linear(h, p(w2_), p(b2_));
  }

  void collect(std::vector<Parameter*>& out) override {
    out.insert(out.end(), {&w1_, &b1_, &w2_, &b2_});
  }

 private:
  Parameter w1_, b1_, w2_, b2_;
};

Tensor bind(Tape* tape, Parameter& q) {
  return tape ? tape->leaf(q.value, &q) : q.value;
}

}  // namespace

GatedBackbone::GatedBackbone(BackboneSpec spec, uint64_t seed)
    : spec_(spec) {
  if (spec_.segments < 1 || spec_.blocks_per_segment < 1 || spec_.classes < 1)
    throw ValueError("backbone spec: segments, blocks and classes must be >= 1");
  Rng rng(seed);
  if (spec_.family == Family::Conv) {
    int c = spec_.base_channels;
    stem_.push_back({"stem.conv", init_conv_kernel(c, spec_.in_channels, 3, rng)});
    stem_.push_back({"stem.gamma", Tensor::full({c}, 1.0f)});
    stem_.push_back({"stem.beta", Tensor::zeros({c})});
    for (int s = 0; s < spec_.segments; ++s) {
      int ch = spec_.base_channels << s;
      for (int b = 0; b < spec_.blocks_per_segment; ++b) {
        std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b);
        blocks_.push_back(std::make_unique<ConvBlock>(prefix, ch, rng));
      }
      if (s + 1 < spec_.segments) {
        std::string prefix = "trans" + std::to_string(s);
        std::vector<Parameter> t;
        t.push_back({prefix + ".conv", init_conv_kernel(ch * 2, ch, 3, rng)});
        t.push_back({prefix + ".gamma", Tensor::full({ch * 2}, 1.0f)});
        t.push_back({prefix + ".beta", Tensor::zeros({ch * 2})});
        transitions_.push_back(std::move(t));
      }
    }
    int top = spec_.base_channels << (spec_.segments - 1);
    head_.push_back({"head.w", init_linear_weight(top, spec_.classes, rng)});
    head_.push_back({"head.b", Tensor::zeros({spec_.classes})});
  } else {
    stem_.push_back({"stem.w", init_linear_weight(spec_.input_dim, spec_.hidden, rng)});
    stem_.push_back({"stem.b", Tensor::zeros({spec_.hidden})});
    for (int s = 0; s < spec_.segments; ++s) {
      for (int b = 0; b < spec_.blocks_per_segment; ++b) {
        std::string prefix = "s" + std::to_string(s) + ".b" + std::to_string(b);
        blocks_.push_back(std::make_unique<MlpBlock>(prefix, spec_.hidden, rng));
      }
      if (s + 1 < spec_.segments) {
        std::string prefix = "trans" + std::to_string(s);
        std::vector<Parameter> t;
        t.push_back({prefix + ".w", init_linear_weight(spec_.hidden, spec_.hidden, rng)});
        t.push_back({prefix + ".b", Tensor::zeros({spec_.hidden})});
        transitions_.push_back(std::move(t));
      }
    }
    head_.push_back({"head.w", init_linear_weight(spec_.hidden, spec_.classes, rng)});
    head_.push_back({"head.b", Tensor::zeros({spec_.classes})});
  }
}

void GatedBackbone::validate_input(const Tensor& x) const {
  if (spec_.family == Family::Conv) {
    if (x.shape.size() != 4 || x.shape[1] != spec_.in_channels ||
        x.shape[2] != spec_.height || x.shape[3] != spec_.width)
      throw ShapeError("backbone input " + shape_str(x.shape) +
                       " does not match spec " + spec_.descriptor());
  } else {
    if (x.shape.size() != 2 || x.shape[1] != spec_.input_dim)
      throw ShapeError("backbone input " + shape_str(x.shape) +
                       " does not match spec " + spec_.descriptor());
  }
}

Tensor GatedBackbone::stem_forward(Tape* tape, const Tensor& x) {
  validate_input(x);
  if (spec_.family == Family::Conv) {
    Tensor h = conv2d(x, bind(tape, stem_[0]), 1, 1);
    h = channel_affine(h, bind(tape, stem_[1]), bind(tape, stem_[2]));
    return relu(h);
  }
  return relu(linear(x, bind(tape, stem_[0]), bind(tape, stem_[1])));
}

Tensor GatedBackbone::block_transform(Tape* tape, int global_index,
                                      const Tensor& x) {
  if (global_index < 0 || global_index >= block_count())
    throw ValueError("block index out of range");
  return blocks_[global_index]->transform(tape, x);
}

Tensor GatedBackbone::transition_forward(Tape* tape, int transition_index,
                                         const Tensor& x) {
  if (transition_index < 0 ||
      transition_index >= static_cast<int>(transitions_.size()))
    throw ValueError("transition index out of range");
  auto& t = transitions_[transition_index];
  if (spec_.family == Family::Conv) {
    Tensor h = conv2d(x, bind(tape, t[0]), 2, 1);
    h = channel_affine(h, bind(tape, t[1]), bind(tape, t[2]));
    return relu(h);
  }
  return relu(linear(x, bind(tape, t[0]), bind(tape, t[1])));
}

Tensor GatedBackbone::head_forward(Tape* tape, const Tensor& x) {
  Tensor h = x;
  if (spec_.family == Family::Conv) h = global_avg_pool(h);
  return linear(h, bind(tape, head_[0]), bind(tape, head_[1]));
}

Tensor GatedBackbone::forward_gated(Tape* tape, const Tensor& x,
                                    const Action& u) {
  if (static_cast<int>(u.size()) != block_count())
    throw ValueError("action length " + std::to_string(u.size()) +
                     " does not match block count " +
                     std::to_string(block_count()));
  Tensor y = stem_forward(tape, x);
  int idx = 0;
  for (int s = 0; s < spec_.segments; ++s) {
    for (int b = 0; b < spec_.blocks_per_segment; ++b, ++idx) {
      if (u[idx]) y = add(y, blocks_[idx]->transform(tape, y));
      // dropped: y_{i+1} = y_i, no compute
    }
    if (s + 1 < spec_.segments) y = transition_forward(tape, s, y);
  }
  return head_forward(tape, y);
}

Tensor GatedBackbone::forward_full(Tape* tape, const Tensor& x) {
  return forward_gated(tape, x, Action(block_count(), 1));
}

std::vector<Parameter*> GatedBackbone::params() {
  std::vector<Parameter*> out;
  for (Parameter& p : stem_) out.push_back(&p);
  for (auto& blk : blocks_) blk->collect(out);
  for (auto& t : transitions_)
    for (Parameter& p : t) out.push_back(&p);
  for (Parameter& p : head_) out.push_back(&p);
  return out;
}

}  // namespace blockdrop
