#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tape.hpp"

namespace mcpinn {

// Scalar twin of the tape's activation kernel; keeps the plain evaluation
// path and the recorded path computing the same function.
inline double tanh_eval(double x) { return 1.0 - 2.0 / (std::exp(2.0 * x) + 1.0); }

struct NetworkSpec {
  int input_dim = 1;
  std::vector<int> hidden = {64, 64, 64, 64};
  std::string activation = "tanh";  // "tanh" or "identity"
  int output_dim = 1;

  void validate() const {
    if (input_dim < 1 || output_dim < 1) {
      throw std::invalid_argument("NetworkSpec: input_dim and output_dim must be >= 1");
    }
    for (int h : hidden) {
      if (h < 1) throw std::invalid_argument("NetworkSpec: hidden widths must be >= 1");
    }
    if (activation != "tanh" && activation != "identity") {
      throw std::invalid_argument("NetworkSpec: unknown activation '" + activation + "'");
    }
  }

  std::vector<int> widths() const {
    std::vector<int> w;
    w.push_back(input_dim);
    for (int h : hidden) w.push_back(h);
    w.push_back(output_dim);
    return w;
  }
};

// Offsets of optional trainable PDE coefficients appended after the network
// parameters; -1 marks an absent slot.
struct PdeSlots {
  int alpha = -1;
  int gamma = -1;
  int c = -1;
  int v = -1;
  int v_dim = 0;
};

struct ParamLayout {
  struct Layer {
    int w_off, b_off, in, out;
  };
  std::vector<Layer> layers;
  int n_net = 0;
  PdeSlots pde;
  int total = 0;
};

inline ParamLayout make_layout(const NetworkSpec& spec, bool train_alpha = false,
                               bool train_gamma = false, bool train_c = false,
                               int train_v_dim = 0) {
  spec.validate();
  ParamLayout lay;
  const std::vector<int> w = spec.widths();
  int off = 0;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    ParamLayout::Layer layer;
    layer.in = w[l];
    layer.out = w[l + 1];
    layer.w_off = off;
    layer.b_off = off + layer.in * layer.out;
    off = layer.b_off + layer.out;
    lay.layers.push_back(layer);
  }
  lay.n_net = off;
  if (train_alpha) lay.pde.alpha = off++;
  if (train_gamma) lay.pde.gamma = off++;
  if (train_c) lay.pde.c = off++;
  if (train_v_dim > 0) {
    lay.pde.v = off;
    lay.pde.v_dim = train_v_dim;
    off += train_v_dim;
  }
  lay.total = off;
  return lay;
}

// Flat trainable state: network weights and biases followed by any trainable
// PDE coefficients.
struct ParamVector {
  ParamLayout layout;
  AlignedBuffer values;
};

// Glorot uniform weights, zero biases, zero PDE slots (callers set those).
// Each layer draws from its own child stream, so adding layers never shifts
// the draws of earlier ones.
inline ParamVector init_params(const NetworkSpec& spec, const RngKey& key,
                               bool train_alpha = false, bool train_gamma = false,
                               bool train_c = false, int train_v_dim = 0) {
  ParamVector p;
  p.layout = make_layout(spec, train_alpha, train_gamma, train_c, train_v_dim);
  p.values.assign(p.layout.total, 0.0);
  for (std::size_t l = 0; l < p.layout.layers.size(); ++l) {
    const ParamLayout::Layer& layer = p.layout.layers[l];
    RngStream s = key.child(l).stream();
    const double a = std::sqrt(6.0 / (layer.in + layer.out));
    for (int i = 0; i < layer.in * layer.out; ++i) {
      p.values[layer.w_off + i] = a * (2.0 * s.next_uniform() - 1.0);
    }
  }
  return p;
}

struct EvalCounter {
  std::uint64_t forward = 0;
};

// Plain (non-recorded) forward pass. One increment of the counter per call.
inline double forward(const NetworkSpec& spec, const ParamVector& p,
                      std::span<const double> x, EvalCounter* counter = nullptr) {
  if (static_cast<int>(x.size()) != spec.input_dim) {
    throw std::invalid_argument("forward: input size does not match input_dim");
  }
  const bool tanh_act = spec.activation == "tanh";
  std::vector<double> a(x.begin(), x.end()), z;
  for (std::size_t l = 0; l < p.layout.layers.size(); ++l) {
    const ParamLayout::Layer& L = p.layout.layers[l];
    z.assign(L.out, 0.0);
    for (int i = 0; i < L.out; ++i) {
      const double* w = p.values.data() + L.w_off + static_cast<std::size_t>(i) * L.in;
      double acc = p.values[L.b_off + i];
      for (int k = 0; k < L.in; ++k) acc += w[k] * a[k];
      z[i] = acc;
    }
    const bool last = l + 1 == p.layout.layers.size();
    if (!last && tanh_act) {
      for (double& v : z) v = tanh_eval(v);
    }
    a.swap(z);
  }
  if (counter) counter->forward += 1;
  return a[0];
}

// Forward pass with forward-mode tangent propagation along dir; returns
// (value, directional derivative). Counts as one forward call.
inline std::pair<double, double> forward_with_tangent(const NetworkSpec& spec,
                                                      const ParamVector& p,
                                                      std::span<const double> x,
                                                      std::span<const double> dir,
                                                      EvalCounter* counter = nullptr) {
  if (x.size() != dir.size() || static_cast<int>(x.size()) != spec.input_dim) {
    throw std::invalid_argument("forward_with_tangent: size mismatch");
  }
  const bool tanh_act = spec.activation == "tanh";
  std::vector<double> a(x.begin(), x.end()), at(dir.begin(), dir.end()), z, zt;
  for (std::size_t l = 0; l < p.layout.layers.size(); ++l) {
    const ParamLayout::Layer& L = p.layout.layers[l];
    z.assign(L.out, 0.0);
    zt.assign(L.out, 0.0);
    for (int i = 0; i < L.out; ++i) {
      const double* w = p.values.data() + L.w_off + static_cast<std::size_t>(i) * L.in;
      double acc = p.values[L.b_off + i], acct = 0.0;
      for (int k = 0; k < L.in; ++k) {
        acc += w[k] * a[k];
        acct += w[k] * at[k];
      }
      z[i] = acc;
      zt[i] = acct;
    }
    const bool last = l + 1 == p.layout.layers.size();
    if (!last && tanh_act) {
      for (int i = 0; i < L.out; ++i) {
        z[i] = tanh_eval(z[i]);
        zt[i] *= 1.0 - z[i] * z[i];
      }
    }
    a.swap(z);
    at.swap(zt);
  }
  if (counter) counter->forward += 1;
  return {a[0], at[0]};
}

inline double directional_derivative(const NetworkSpec& spec, const ParamVector& p,
                                     std::span<const double> x, std::span<const double> dir,
                                     EvalCounter* counter = nullptr) {
  return forward_with_tangent(spec, p, x, dir, counter).second;
}

// One evaluation point for batched recorded evaluation: input = base + s*dir
// where s may be a recorded scalar (so sample radii stay differentiable in
// the fractional orders). Empty dir means a fixed point.
template <class T>
struct EvalPoint {
  std::span<const double> base;
  std::span<const double> dir = {};
  T s{};
  bool has_shift = false;
};

// Records batched network evaluations on a tape. Evaluations are raw network
// outputs; boundary ansatz factors are applied by the surrogate layer.
class NetTapeField {
 public:
  using scalar_type = Sc;

  NetTapeField(const NetworkSpec& spec, const ParamLayout& layout, Tape& tape,
               EvalCounter* counter = nullptr)
      : spec_(spec), layout_(layout), tape_(tape), counter_(counter) {
    tanh_act_ = spec.activation == "tanh";
  }

  Tape& tape() const { return tape_; }
  const NetworkSpec& spec() const { return spec_; }

  // Evaluates the network at all points in one record: one assemble node and
  // one node chain of affine/activation layers; out[i] is the scalar output
  // of row i. Counts one forward call per row.
  void eval_batch(std::span<const EvalPoint<Sc>> pts, Sc* out) {
    const int R = static_cast<int>(pts.size());
    const int C = spec_.input_dim;
    Tape::Assembler as(tape_, R, C);
    for (int r = 0; r < R; ++r) {
      as.set_base(r, pts[r].base);
      if (pts[r].has_shift) as.add_term(r, pts[r].s, pts[r].dir);
    }
    std::int32_t x = as.finish();
    for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
      const ParamLayout::Layer& L = layout_.layers[l];
      x = tape_.affine(x, L.w_off, L.b_off, L.out);
      if (l + 1 < layout_.layers.size() && tanh_act_) x = tape_.tanh_mat(x);
    }
    for (int r = 0; r < R; ++r) out[r] = tape_.pick(x, r, 0);
    if (counter_) counter_->forward += R;
  }

  Sc eval(const EvalPoint<Sc>& pt) {
    Sc out;
    eval_batch(std::span<const EvalPoint<Sc>>(&pt, 1), &out);
    return out;
  }

  // Forward-over-reverse directional derivative at a fixed point. The
  // direction is dir_const plus dir_scale[k]*e_k for each recorded component
  // (used when the advection velocity itself is trainable); the returned
  // derivative is a recorded scalar, so reverse mode differentiates through
  // it. Counts as one forward call.
  std::pair<Sc, Sc> eval_with_tangent(std::span<const double> base,
                                      std::span<const double> dir_const,
                                      std::span<const std::pair<int, Sc>> dir_scaled = {}) {
    const int C = spec_.input_dim;
    Tape::Assembler pas(tape_, 1, C);
    pas.set_base(0, base);
    std::int32_t x = pas.finish();

    Tape::Assembler tas(tape_, 1, C);
    tas.set_base(0, dir_const);
    std::vector<double> e(C, 0.0);
    for (const auto& [slot, s] : dir_scaled) {
      e[slot] = 1.0;
      tas.add_term(0, s, e);
      e[slot] = 0.0;
    }
    std::int32_t t = tas.finish();

    for (std::size_t l = 0; l < layout_.layers.size(); ++l) {
      const ParamLayout::Layer& L = layout_.layers[l];
      x = tape_.affine(x, L.w_off, L.b_off, L.out);
      t = tape_.tangent_affine(t, L.w_off, L.out);
      if (l + 1 < layout_.layers.size() && tanh_act_) {
        x = tape_.tanh_mat(x);
        t = tape_.tanh_tangent(x, 0, t);
      }
    }
    if (counter_) counter_->forward += 1;
    return {tape_.pick(x, 0, 0), tape_.pick(t, 0, 0)};
  }

 private:
  NetworkSpec spec_;
  ParamLayout layout_;
  Tape& tape_;
  EvalCounter* counter_;
  bool tanh_act_ = true;
};

}  // namespace mcpinn
