#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "blockdrop/common.hpp"

namespace blockdrop {

// Runtime switch for NaN/Inf assertions at op boundaries. On by default in
// debug builds; tests may enable it explicitly.
inline bool& finite_check_enabled() {
#ifdef NDEBUG
  static bool enabled = false;
#else
  static bool enabled = true;
#endif
  return enabled;
}

template <class T>
class TapeT;

// Dense row-major tensor. `node >= 0` means the tensor participates in the
// gradient tape it was created on.
template <class T>
struct TensorT {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  TapeT<T>* tape = nullptr;
  int node = -1;

  TensorT() = default;

  static TensorT zeros(Shape s) {
    TensorT t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(numel(t.shape), T(0));
    return t;
  }

  static TensorT full(Shape s, T v) {
    TensorT t = zeros(std::move(s));
    std::fill(t.data->begin(), t.data->end(), v);
    return t;
  }

  static TensorT from(Shape s, std::vector<T> v) {
    if (numel(s) != static_cast<int64_t>(v.size()))
      throw ShapeError("tensor data length does not match shape " + shape_str(s));
    TensorT t;
    t.shape = std::move(s);
    t.data = std::make_shared<std::vector<T>>(std::move(v));
    return t;
  }

  int64_t size() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  T* ptr() { return data->data(); }
  const T* ptr() const { return data->data(); }
  T& operator[](int64_t i) { return (*data)[i]; }
  const T& operator[](int64_t i) const { return (*data)[i]; }
  bool requires_grad() const { return node >= 0; }

  // Deep copy of the value (detached from any tape).
  TensorT clone() const {
    TensorT t;
    t.shape = shape;
    t.data = std::make_shared<std::vector<T>>(*data);
    return t;
  }
};

using Tensor = TensorT<float>;

template <class T>
void check_finite(const char* op, const TensorT<T>& t) {
  if (!finite_check_enabled()) return;
  for (const T& v : *t.data)
    if (!std::isfinite(static_cast<double>(v)))
      throw ValueError(std::string("non-finite value produced by ") + op);
}

// Reverse-mode tape. One tape per forward pass; backward() may run once.
template <class T>
class TapeT {
 public:
  TapeT() = default;
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  // Registers a value as a differentiable leaf. `key` optionally associates
  // the leaf with an external object (used for parameter lookup).
  TensorT<T> leaf(const TensorT<T>& t, const void* key = nullptr) {
    TensorT<T> out = t;
    out.tape = this;
    out.node = alloc_node(t.size());
    if (key) bindings_.push_back({key, out.node});
    return out;
  }

  int alloc_node(int64_t size) {
    nodes_.push_back(Node{std::vector<T>(size, T(0)), nullptr});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_backward(int id, std::function<void()> fn) {
    nodes_[id].back = std::move(fn);
  }

  std::vector<T>& grad_buf(int id) { return nodes_[id].grad; }

  void backward(const TensorT<T>& loss) {
    if (loss.size() != 1) throw UsageError("backward requires a scalar loss");
    if (loss.tape != this || loss.node < 0)
      throw UsageError("loss tensor does not belong to this tape");
    if (used_) throw UsageError("backward already run on this tape");
    used_ = true;
    nodes_[loss.node].grad[0] = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
  }

  std::vector<T> grad(const TensorT<T>& t) const {
    if (t.tape != this || t.node < 0)
      throw UsageError("tensor is not a differentiable node of this tape");
    return nodes_[t.node].grad;
  }

  const std::vector<T>* grad_for_key(const void* key) const {
    for (const auto& [k, id] : bindings_)
      if (k == key) return &nodes_[id].grad;
    return nullptr;
  }

  const std::vector<std::pair<const void*, int>>& bindings() const {
    return bindings_;
  }

  bool consumed() const { return used_; }

 private:
  struct Node {
    std::vector<T> grad;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<const void*, int>> bindings_;
  bool used_ = false;
};

using Tape = TapeT<float>;

namespace detail {

template <class T>
TapeT<T>* common_tape(std::initializer_list<const TensorT<T>*> ts) {
  TapeT<T>* tape = nullptr;
  for (const TensorT<T>* t : ts) {
    if (t->node < 0) continue;
    if (tape && tape != t->tape)
      throw UsageError("operands recorded on different tapes");
    tape = t->tape;
  }
  return tape;
}

}  // namespace detail

// ---- primitive ops ---------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape != b.shape)
    throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros(a.shape);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
  check_finite("add", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&a, &b})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int an = a.node, bn = b.node, on = out.node;
    tape->set_backward(on, [tape, an, bn, on]() {
      const std::vector<T>& g = tape->grad_buf(on);
      if (an >= 0) {
        std::vector<T>& ga = tape->grad_buf(an);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        std::vector<T>& gb = tape->grad_buf(bn);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

// y = a*x + b with scalar constants (used for the exploration bounding map).
template <class T>
TensorT<T> affine_const(const TensorT<T>& x, T a, T b) {
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = a * px[i] + b;
  check_finite("affine_const", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&x})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int xn = x.node, on = out.node;
    tape->set_backward(on, [tape, xn, on, a]() {
      const std::vector<T>& g = tape->grad_buf(on);
      std::vector<T>& gx = tape->grad_buf(xn);
      for (size_t i = 0; i < g.size(); ++i) gx[i] += a * g[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < x.size(); ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  check_finite("relu", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&x})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int xn = x.node, on = out.node;
    tape->set_backward(on, [tape, xn, on, xd = x.data]() {
      const std::vector<T>& g = tape->grad_buf(on);
      std::vector<T>& gx = tape->grad_buf(xn);
      const T* px = xd->data();
      for (size_t i = 0; i < g.size(); ++i)
        if (px[i] > T(0)) gx[i] += g[i];
    });
  }
  return out;
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t i = 0; i < x.size(); ++i)
    po[i] = T(1) / (T(1) + std::exp(-px[i]));
  check_finite("sigmoid", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&x})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int xn = x.node, on = out.node;
    tape->set_backward(on, [tape, xn, on, od = out.data]() {
      const std::vector<T>& g = tape->grad_buf(on);
      std::vector<T>& gx = tape->grad_buf(xn);
      const T* py = od->data();
      for (size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * py[i] * (T(1) - py[i]);
    });
  }
  return out;
}

// x:[B,m] w:[m,n] b:[n] -> [B,n]
template <class T>
TensorT<T> linear(const TensorT<T>& x, const TensorT<T>& w,
                  const TensorT<T>& b) {
  if (x.shape.size() != 2 || w.shape.size() != 2 || b.shape.size() != 1)
    throw ShapeError("linear: expected x[B,m] w[m,n] b[n]");
  int B = x.shape[0], m = x.shape[1], n = w.shape[1];
  if (w.shape[0] != m || b.shape[0] != n)
    throw ShapeError("linear: inner dimensions disagree: x" +
                     shape_str(x.shape) + " w" + shape_str(w.shape) + " b" +
                     shape_str(b.shape));
  TensorT<T> out = TensorT<T>::zeros({B, n});
  const T* px = x.ptr();
  const T* pw = w.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (int i = 0; i < B; ++i) {
    T* orow = po + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) orow[j] = pb[j];
    const T* xrow = px + static_cast<int64_t>(i) * m;
    for (int k = 0; k < m; ++k) {
      T xv = xrow[k];
      const T* wrow = pw + static_cast<int64_t>(k) * n;
      for (int j = 0; j < n; ++j) orow[j] += xv * wrow[j];
    }
  }
  check_finite("linear", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&x, &w, &b})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int xn = x.node, wn = w.node, bn = b.node, on = out.node;
    tape->set_backward(on, [tape, xn, wn, bn, on, xd = x.data, wd = w.data, B,
                            m, n]() {
      const std::vector<T>& g = tape->grad_buf(on);
      if (xn >= 0) {
        std::vector<T>& gx = tape->grad_buf(xn);
        const T* pw = wd->data();
        for (int i = 0; i < B; ++i)
          for (int k = 0; k < m; ++k) {
            T acc = T(0);
            const T* grow = g.data() + static_cast<int64_t>(i) * n;
            const T* wrow = pw + static_cast<int64_t>(k) * n;
            for (int j = 0; j < n; ++j) acc += grow[j] * wrow[j];
            gx[static_cast<int64_t>(i) * m + k] += acc;
          }
      }
      if (wn >= 0) {
        std::vector<T>& gw = tape->grad_buf(wn);
        const T* px = xd->data();
        for (int i = 0; i < B; ++i) {
          const T* xrow = px + static_cast<int64_t>(i) * m;
          const T* grow = g.data() + static_cast<int64_t>(i) * n;
          for (int k = 0; k < m; ++k) {
            T xv = xrow[k];
            T* gwrow = gw.data() + static_cast<int64_t>(k) * n;
            for (int j = 0; j < n; ++j) gwrow[j] += xv * grow[j];
          }
        }
      }
      if (bn >= 0) {
        std::vector<T>& gb = tape->grad_buf(bn);
        for (int i = 0; i < B; ++i) {
          const T* grow = g.data() + static_cast<int64_t>(i) * n;
          for (int j = 0; j < n; ++j) gb[j] += grow[j];
        }
      }
    });
  }
  return out;
}

inline int conv_out_extent(int in, int k, int stride, int pad) {
  int num = in + 2 * pad - k;
  if (num < 0)
    throw ShapeError("conv2d: kernel larger than padded input (in=" +
                     std::to_string(in) + " k=" + std::to_string(k) +
                     " pad=" + std::to_string(pad) + ")");
  return num / stride + 1;  // floor: a trailing row may go unvisited
}

// x:[B,C,H,W] k:[O,C,kh,kw] -> [B,O,H',W']  (cross-correlation, no bias)
template <class T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& k, int stride,
                  int pad) {
  if (x.shape.size() != 4 || k.shape.size() != 4)
    throw ShapeError("conv2d: expected x[B,C,H,W] and kernel[O,C,kh,kw]");
  int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  int O = k.shape[0], kh = k.shape[2], kw = k.shape[3];
  if (k.shape[1] != C) throw ShapeError("conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0)
    throw ShapeError("conv2d: only odd kernel extents are supported");
  if (stride != 1 && stride != 2)
    throw ShapeError("conv2d: stride must be 1 or 2");
  int Ho = conv_out_extent(H, kh, stride, pad);
  int Wo = conv_out_extent(W, kw, stride, pad);

  TensorT<T> out = TensorT<T>::zeros({B, O, Ho, Wo});
  const T* px = x.ptr();
  const T* pk = k.ptr();
  T* po = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int o = 0; o < O; ++o) {
      T* obase = po + (static_cast<int64_t>(b) * O + o) * Ho * Wo;
      for (int c = 0; c < C; ++c) {
        const T* xbase = px + (static_cast<int64_t>(b) * C + c) * H * W;
        const T* kbase = pk + (static_cast<int64_t>(o) * C + c) * kh * kw;
        for (int r = 0; r < kh; ++r)
          for (int s = 0; s < kw; ++s) {
            T kv = kbase[r * kw + s];
            int off = s - pad;
            // valid ow range so that iw = ow*stride + off lies in [0, W)
            int lo = off < 0 ? (-off + stride - 1) / stride : 0;
            int hi = std::min(Wo - 1, (W - 1 - off) / stride);
            for (int oh = 0; oh < Ho; ++oh) {
              int ih = oh * stride + r - pad;
              if (ih < 0 || ih >= H) continue;
              const T* xrow = xbase + static_cast<int64_t>(ih) * W;
              T* orow = obase + static_cast<int64_t>(oh) * Wo;
              for (int ow = lo; ow <= hi; ++ow)
                orow[ow] += xrow[ow * stride + off] * kv;
            }
          }
      }
    }
  check_finite("conv2d", out);

  if (TapeT<T>* tape = detail::common_tape<T>({&x, &k})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int xn = x.node, kn = k.node, on = out.node;
    tape->set_backward(on, [tape, xn, kn, on, xd = x.data, kd = k.data, B, C,
                            H, W, O, kh, kw, Ho, Wo, stride, pad]() {
      const std::vector<T>& g = tape->grad_buf(on);
      if (xn >= 0) {
        std::vector<T>& gx = tape->grad_buf(xn);
        const T* pk = kd->data();
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o) {
            const T* gbase = g.data() + (static_cast<int64_t>(b) * O + o) * Ho * Wo;
            for (int c = 0; c < C; ++c) {
              T* gxbase = gx.data() + (static_cast<int64_t>(b) * C + c) * H * W;
              const T* kbase = pk + (static_cast<int64_t>(o) * C + c) * kh * kw;
              for (int r = 0; r < kh; ++r)
                for (int s = 0; s < kw; ++s) {
                  T kv = kbase[r * kw + s];
                  int off = s - pad;
                  int lo = off < 0 ? (-off + stride - 1) / stride : 0;
                  int hi = std::min(Wo - 1, (W - 1 - off) / stride);
                  for (int oh = 0; oh < Ho; ++oh) {
                    int ih = oh * stride + r - pad;
                    if (ih < 0 || ih >= H) continue;
                    T* gxrow = gxbase + static_cast<int64_t>(ih) * W;
                    const T* grow = gbase + static_cast<int64_t>(oh) * Wo;
                    for (int ow = lo; ow <= hi; ++ow)
                      gxrow[ow * stride + off] += grow[ow] * kv;
                  }
                }
            }
          }
      }
      if (kn >= 0) {
        std::vector<T>& gk = tape->grad_buf(kn);
        const T* px = xd->data();
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o) {
            const T* gbase = g.data() + (static_cast<int64_t>(b) * O + o) * Ho * Wo;
            for (int c = 0; c < C; ++c) {
              const T* xbase = px + (static_cast<int64_t>(b) * C + c) * H * W;
              T* kbase = gk.data() + (static_cast<int64_t>(o) * C + c) * kh * kw;
              for (int r = 0; r < kh; ++r)
                for (int s = 0; s < kw; ++s) {
                  T acc = T(0);
                  int off = s - pad;
                  int lo = off < 0 ? (-off + stride - 1) / stride : 0;
                  int hi = std::min(Wo - 1, (W - 1 - off) / stride);
                  for (int oh = 0; oh < Ho; ++oh) {
                    int ih = oh * stride + r - pad;
                    if (ih < 0 || ih >= H) continue;
                    const T* xrow = xbase + static_cast<int64_t>(ih) * W;
                    const T* grow = gbase + static_cast<int64_t>(oh) * Wo;
                    for (int ow = lo; ow <= hi; ++ow)
                      acc += xrow[ow * stride + off] * grow[ow];
                  }
                  kbase[r * kw + s] += acc;
                }
            }
          }
      }
    });
  }
  return out;
}

// y[b,c,h,w] = x[b,c,h,w] * gamma[c] + beta[c]  (affine stand-in for BN)
template <class T>
TensorT<T> channel_affine(const TensorT<T>& x, const TensorT<T>& gamma,
                          const TensorT<T>& beta) {
  if (x.shape.size() != 4) throw ShapeError("channel_affine: expected [B,C,H,W]");
  int B = x.shape[0], C = x.shape[1];
  int64_t HW = static_cast<int64_t>(x.shape[2]) * x.shape[3];
  if (gamma.shape != Shape{C} || beta.shape != Shape{C})
    throw ShapeError("channel_affine: gamma/beta must have shape [C]");
  TensorT<T> out = TensorT<T>::zeros(x.shape);
  const T* px = x.ptr();
  const T* pg = gamma.ptr();
  const T* pb = beta.ptr();
  T* po = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      int64_t base = (static_cast<int64_t>(b) * C + c) * HW;
      T gv = pg[c], bv = pb[c];
      for (int64_t i = 0; i < HW; ++i) po[base + i] = px[base + i] * gv + bv;
    }
  check_finite("channel_affine", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&x, &gamma, &beta})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int xn = x.node, gn = gamma.node, bn = beta.node, on = out.node;
    tape->set_backward(on, [tape, xn, gn, bn, on, xd = x.data, gd = gamma.data,
                            B, C, HW]() {
      const std::vector<T>& g = tape->grad_buf(on);
      if (xn >= 0) {
        std::vector<T>& gx = tape->grad_buf(xn);
        const T* pg = gd->data();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            int64_t base = (static_cast<int64_t>(b) * C + c) * HW;
            T gv = pg[c];
            for (int64_t i = 0; i < HW; ++i) gx[base + i] += g[base + i] * gv;
          }
      }
      if (gn >= 0) {
        std::vector<T>& gg = tape->grad_buf(gn);
        const T* px = xd->data();
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            int64_t base = (static_cast<int64_t>(b) * C + c) * HW;
            T acc = T(0);
            for (int64_t i = 0; i < HW; ++i) acc += g[base + i] * px[base + i];
            gg[c] += acc;
          }
      }
      if (bn >= 0) {
        std::vector<T>& gb = tape->grad_buf(bn);
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            int64_t base = (static_cast<int64_t>(b) * C + c) * HW;
            T acc = T(0);
            for (int64_t i = 0; i < HW; ++i) acc += g[base + i];
            gb[c] += acc;
          }
      }
    });
  }
  return out;
}

// [B,C,H,W] -> [B,C]
template <class T>
TensorT<T> global_avg_pool(const TensorT<T>& x) {
  if (x.shape.size() != 4)
    throw ShapeError("global_avg_pool: expected [B,C,H,W]");
  int B = x.shape[0], C = x.shape[1];
  int64_t HW = static_cast<int64_t>(x.shape[2]) * x.shape[3];
  if (HW < 1) throw ShapeError("global_avg_pool: empty spatial extent");
  TensorT<T> out = TensorT<T>::zeros({B, C});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      int64_t base = (static_cast<int64_t>(b) * C + c) * HW;
      T acc = T(0);
      for (int64_t i = 0; i < HW; ++i) acc += px[base + i];
      po[static_cast<int64_t>(b) * C + c] = acc / static_cast<T>(HW);
    }
  check_finite("global_avg_pool", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&x})) {
    out.tape = tape;
    out.node = tape->alloc_node(out.size());
    int xn = x.node, on = out.node;
    tape->set_backward(on, [tape, xn, on, B, C, HW]() {
      const std::vector<T>& g = tape->grad_buf(on);
      std::vector<T>& gx = tape->grad_buf(xn);
      T inv = T(1) / static_cast<T>(HW);
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          int64_t base = (static_cast<int64_t>(b) * C + c) * HW;
          T gv = g[static_cast<int64_t>(b) * C + c] * inv;
          for (int64_t i = 0; i < HW; ++i) gx[base + i] += gv;
        }
    });
  }
  return out;
}

// Mean negative log-probability of the true class, max-shifted for stability.
template <class T>
TensorT<T> softmax_cross_entropy(const TensorT<T>& logits,
                                 const std::vector<int>& labels) {
  if (logits.shape.size() != 2)
    throw ShapeError("softmax_cross_entropy: expected logits[B,C]");
  int B = logits.shape[0], C = logits.shape[1];
  if (static_cast<int>(labels.size()) != B)
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= C)
      throw ValueError("softmax_cross_entropy: label out of range: " +
                       std::to_string(y));
  TensorT<T> out = TensorT<T>::zeros({1});
  const T* pz = logits.ptr();
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const T* row = pz + static_cast<int64_t>(b) * C;
    T mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double lse = 0.0;
    for (int c = 0; c < C; ++c) lse += std::exp(static_cast<double>(row[c] - mx));
    lse = std::log(lse) + static_cast<double>(mx);
    total += lse - static_cast<double>(row[labels[b]]);
  }
  (*out.data)[0] = static_cast<T>(total / B);
  check_finite("softmax_cross_entropy", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&logits})) {
    out.tape = tape;
    out.node = tape->alloc_node(1);
    int zn = logits.node, on = out.node;
    tape->set_backward(on, [tape, zn, on, zd = logits.data, labels, B, C]() {
      T gscale = tape->grad_buf(on)[0] / static_cast<T>(B);
      std::vector<T>& gz = tape->grad_buf(zn);
      const T* pz = zd->data();
      for (int b = 0; b < B; ++b) {
        const T* row = pz + static_cast<int64_t>(b) * C;
        T mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c)
          denom += std::exp(static_cast<double>(row[c] - mx));
        T* grow = gz.data() + static_cast<int64_t>(b) * C;
        for (int c = 0; c < C; ++c) {
          double p = std::exp(static_cast<double>(row[c] - mx)) / denom;
          double delta = (c == labels[b]) ? 1.0 : 0.0;
          grow[c] += gscale * static_cast<T>(p - delta);
        }
      }
    });
  }
  return out;
}

// Per-row Bernoulli log-likelihood: out[b] = sum_k mask[b,k] *
// log(s[b,k]*u[b,k] + (1-s[b,k])*(1-u[b,k])). Probabilities are clamped at
// machine epsilon; a clamp can only occur with a saturated distribution
// (alpha = 1).
template <class T>
TensorT<T> bernoulli_loglik(const TensorT<T>& s,
                            const std::vector<uint8_t>& u,
                            const std::vector<uint8_t>& mask) {
  if (s.shape.size() != 2) throw ShapeError("bernoulli_loglik: expected s[B,K]");
  int B = s.shape[0], K = s.shape[1];
  if (static_cast<int>(u.size()) != B * K ||
      static_cast<int>(mask.size()) != B * K)
    throw ShapeError("bernoulli_loglik: action/mask length mismatch");
  const T eps = std::numeric_limits<T>::epsilon();
  TensorT<T> out = TensorT<T>::zeros({B});
  const T* ps = s.ptr();
  T* po = out.ptr();
  for (int b = 0; b < B; ++b) {
    double acc = 0.0;
    for (int k = 0; k < K; ++k) {
      int64_t i = static_cast<int64_t>(b) * K + k;
      if (!mask[i]) continue;
      T p = u[i] ? ps[i] : T(1) - ps[i];
      acc += std::log(static_cast<double>(std::max(p, eps)));
    }
    po[b] = static_cast<T>(acc);
  }
  check_finite("bernoulli_loglik", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&s})) {
    out.tape = tape;
    out.node = tape->alloc_node(B);
    int sn = s.node, on = out.node;
    tape->set_backward(on, [tape, sn, on, sd = s.data, u, mask, B, K, eps]() {
      const std::vector<T>& g = tape->grad_buf(on);
      std::vector<T>& gs = tape->grad_buf(sn);
      const T* ps = sd->data();
      for (int b = 0; b < B; ++b) {
        T gv = g[b];
        for (int k = 0; k < K; ++k) {
          int64_t i = static_cast<int64_t>(b) * K + k;
          if (!mask[i]) continue;
          T p = u[i] ? ps[i] : T(1) - ps[i];
          p = std::max(p, eps);
          gs[i] += gv * (u[i] ? T(1) / p : -T(1) / p);
        }
      }
    });
  }
  return out;
}

// (1/B) * sum_b w[b] * v[b]; w is a constant.
template <class T>
TensorT<T> weighted_mean(const TensorT<T>& v, const std::vector<T>& w) {
  if (v.shape.size() != 1) throw ShapeError("weighted_mean: expected v[B]");
  int B = v.shape[0];
  if (static_cast<int>(w.size()) != B)
    throw ShapeError("weighted_mean: weight count mismatch");
  TensorT<T> out = TensorT<T>::zeros({1});
  double acc = 0.0;
  for (int b = 0; b < B; ++b) acc += static_cast<double>(w[b]) * (*v.data)[b];
  (*out.data)[0] = static_cast<T>(acc / B);
  check_finite("weighted_mean", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&v})) {
    out.tape = tape;
    out.node = tape->alloc_node(1);
    int vn = v.node, on = out.node;
    tape->set_backward(on, [tape, vn, on, w, B]() {
      T g = tape->grad_buf(on)[0];
      std::vector<T>& gv = tape->grad_buf(vn);
      for (int b = 0; b < B; ++b) gv[b] += g * w[b] / static_cast<T>(B);
    });
  }
  return out;
}

// out[b] = log softmax(logits[b,:])[pick[b]]  (sequential-gate log-prob)
template <class T>
TensorT<T> log_softmax_pick(const TensorT<T>& logits,
                            const std::vector<int>& pick) {
  if (logits.shape.size() != 2)
    throw ShapeError("log_softmax_pick: expected logits[B,C]");
  int B = logits.shape[0], C = logits.shape[1];
  if (static_cast<int>(pick.size()) != B)
    throw ShapeError("log_softmax_pick: pick count mismatch");
  for (int p : pick)
    if (p < 0 || p >= C) throw ValueError("log_softmax_pick: index out of range");
  TensorT<T> out = TensorT<T>::zeros({B});
  const T* pz = logits.ptr();
  for (int b = 0; b < B; ++b) {
    const T* row = pz + static_cast<int64_t>(b) * C;
    T mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double lse = 0.0;
    for (int c = 0; c < C; ++c) lse += std::exp(static_cast<double>(row[c] - mx));
    (*out.data)[b] = static_cast<T>(static_cast<double>(row[pick[b]] - mx) -
                                    std::log(lse));
  }
  check_finite("log_softmax_pick", out);
  if (TapeT<T>* tape = detail::common_tape<T>({&logits})) {
    out.tape = tape;
    out.node = tape->alloc_node(B);
    int zn = logits.node, on = out.node;
    tape->set_backward(on, [tape, zn, on, zd = logits.data, pick, B, C]() {
      const std::vector<T>& g = tape->grad_buf(on);
      std::vector<T>& gz = tape->grad_buf(zn);
      const T* pz = zd->data();
      for (int b = 0; b < B; ++b) {
        const T* row = pz + static_cast<int64_t>(b) * C;
        T mx = row[0];
        for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        double denom = 0.0;
        for (int c = 0; c < C; ++c)
          denom += std::exp(static_cast<double>(row[c] - mx));
        T* grow = gz.data() + static_cast<int64_t>(b) * C;
        for (int c = 0; c < C; ++c) {
          double p = std::exp(static_cast<double>(row[c] - mx)) / denom;
          double delta = (c == pick[b]) ? 1.0 : 0.0;
          grow[c] += g[b] * static_cast<T>(delta - p);
        }
      }
    });
  }
  return out;
}

template <class T>
TensorT<T> sum_all(const TensorT<T>& x) {
  TensorT<T> out = TensorT<T>::zeros({1});
  double acc = 0.0;
  for (int64_t i = 0; i < x.size(); ++i) acc += (*x.data)[i];
  (*out.data)[0] = static_cast<T>(acc);
  if (TapeT<T>* tape = detail::common_tape<T>({&x})) {
    out.tape = tape;
    out.node = tape->alloc_node(1);
    int xn = x.node, on = out.node;
    tape->set_backward(on, [tape, xn, on]() {
      T g = tape->grad_buf(on)[0];
      std::vector<T>& gx = tape->grad_buf(xn);
      for (T& v : gx) v += g;
    });
  }
  return out;
}

// Row argmax for [B,C] tensors (prediction extraction; not differentiable).
template <class T>
std::vector<int> argmax_rows(const TensorT<T>& x) {
  if (x.shape.size() != 2) throw ShapeError("argmax_rows: expected [B,C]");
  int B = x.shape[0], C = x.shape[1];
  std::vector<int> out(B);
  for (int b = 0; b < B; ++b) {
    const T* row = x.ptr() + static_cast<int64_t>(b) * C;
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (row[c] > row[best]) best = c;
    out[b] = best;
  }
  return out;
}

}  // namespace blockdrop
