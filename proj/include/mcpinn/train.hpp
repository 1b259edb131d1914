#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "loss.hpp"
#include "net.hpp"
#include "problems.hpp"
#include "rng.hpp"

// The training loop: per-epoch residual batches, the recorded total loss,
// Adam with a step-decay schedule, and error reporting against the oracle.
//
// Determinism contract: a run is a pure function of (problem, config, seed),
// independent of the worker count. Every random draw is keyed by purpose and
// index rather than drawn from a shared stream, each residual point is
// recorded on its own tape, and per-point gradients are merged in point-index
// order on the main thread.

namespace mcpinn {

class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainConfig {
  int epochs = 10000;
  int batch_size = 128;
  double lr = 1e-3;  // decays by 10x at 50% and again at 75% of the epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  EstimatorConfig estimator;
  LossMode mode = LossMode::kPaired;
  LossWeights weights;
  std::uint64_t seed = 0;
  int workers = 1;
  int loss_stride = 100;  // epochs between loss-trace rows
  int n_test = 1000;      // test points for the relative L2 report

  void validate() const {
    if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs >= 0 required");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size >= 1 required");
    if (!(lr > 0.0)) throw std::invalid_argument("TrainConfig: lr > 0 required");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("TrainConfig: betas in [0,1) required");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("TrainConfig: adam_eps > 0 required");
    if (workers < 1) throw std::invalid_argument("TrainConfig: workers >= 1 required");
    if (loss_stride < 1) throw std::invalid_argument("TrainConfig: loss_stride >= 1 required");
    if (n_test < 1) throw std::invalid_argument("TrainConfig: n_test >= 1 required");
    estimator.validate();
    weights.validate();
  }

  // Reference epoch budgets: inverse runs train the PDE coefficients jointly
  // with the network and need the longer schedule.
  static TrainConfig defaults_for(const ProblemSpec& prob) {
    TrainConfig cfg;
    if (prob.family == Family::kInverseAde) cfg.epochs = 40000;
    return cfg;
  }

  double lr_at(int epoch) const {
    double f = 1.0;
    if (epochs > 0) {
      if (epoch >= (3 * epochs) / 4) {
        f = 0.01;
      } else if (epoch >= epochs / 2) {
        f = 0.1;
      }
    }
    return lr * f;
  }
};

struct LossTraceRow {
  int epoch = 0;      // loss evaluated with the parameters entering this epoch
  double total = 0.0;
  double equation = 0.0;
  double initial = 0.0;
  double data = 0.0;
  double lr = 0.0;
  std::vector<double> pde;  // trainable coefficients, layout order
};

struct ParamTraceRow {
  int epoch = 0;  // values after this epoch's update
  std::vector<double> pde;
};

struct TrainState {
  ParamVector params;
  std::vector<double> m1, m2;  // Adam moments
  int steps = 0;               // Adam step counter (bias correction)
  int epoch = 0;               // completed epochs
  RngKey root;
  std::vector<LossTraceRow> loss_trace;
  std::vector<ParamTraceRow> param_trace;

  // Field evaluations spent on residual estimates, for the run manifest.
  std::uint64_t residual_evals = 0;
  std::uint64_t residual_points = 0;
};

// Trainable PDE coefficients in layout order (alpha, gamma, c, v...).
inline std::vector<double> pde_snapshot(const ParamVector& p) {
  std::vector<double> out;
  const PdeSlots& s = p.layout.pde;
  if (s.alpha >= 0) out.push_back(p.values[s.alpha]);
  if (s.gamma >= 0) out.push_back(p.values[s.gamma]);
  if (s.c >= 0) out.push_back(p.values[s.c]);
  for (int k = 0; k < s.v_dim; ++k) out.push_back(p.values[s.v + k]);
  return out;
}

// Fresh state: Glorot network weights; inverse runs start the coefficients
// from the reference initial guesses alpha=1.7, gamma=0.9, c=0.5 and
// v ~ U[0, 0.1]^d.
inline TrainState init_train_state(const ProblemSpec& prob, const TrainConfig& cfg) {
  prob.validate();
  cfg.validate();
  TrainState st;
  st.root = RngKey(cfg.seed);
  const TrainableFlags f = trainable_flags(prob);
  st.params = init_params(prob.network(), st.root.child(kInitPurpose).child(0), f.alpha,
                          f.gamma_ord, f.c, f.v_dim);
  const PdeSlots& s = st.params.layout.pde;
  if (prob.family == Family::kInverseAde) {
    st.params.values[s.alpha] = 1.7;
    st.params.values[s.gamma] = 0.9;
    st.params.values[s.c] = 0.5;
    RngStream vs = st.root.child(kInitPurpose).child(1).stream();
    for (int k = 0; k < s.v_dim; ++k) {
      st.params.values[s.v + k] = 0.1 * vs.next_uniform();
    }
  }
  st.m1.assign(st.params.values.size(), 0.0);
  st.m2.assign(st.params.values.size(), 0.0);
  return st;
}

// One Adam update with bias correction, then the feasibility clamps on the
// fractional orders (alpha into [0.05, 1.95], gamma into [0.05, 0.95]).
inline void adam_step(TrainState& st, std::span<const double> grad, double lr,
                      const TrainConfig& cfg) {
  if (grad.size() != st.params.values.size()) {
    throw std::invalid_argument("adam_step: gradient size mismatch");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw TrainingError("adam_step: non-finite gradient in slot " + std::to_string(i) +
                          " at step " + std::to_string(st.steps));
    }
  }
  ++st.steps;
  const double c1 = 1.0 - std::pow(cfg.beta1, st.steps);
  const double c2 = 1.0 - std::pow(cfg.beta2, st.steps);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    st.m1[i] = cfg.beta1 * st.m1[i] + (1.0 - cfg.beta1) * grad[i];
    st.m2[i] = cfg.beta2 * st.m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = st.m1[i] / c1;
    const double vhat = st.m2[i] / c2;
    st.params.values[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
  }
  const PdeSlots& s = st.params.layout.pde;
  if (s.alpha >= 0) {
    st.params.values[s.alpha] = std::clamp(st.params.values[s.alpha], 0.05, 1.95);
  }
  if (s.gamma >= 0) {
    st.params.values[s.gamma] = std::clamp(st.params.values[s.gamma], 0.05, 0.95);
  }
}

// Relative discrete L2 error of a predictor against the labels of a test
// set: ||pred - value|| / ||value|| in the discrete 2-norm.
template <class F>
double relative_l2_over(F&& predict, std::span<const TaggedPoint> pts) {
  double num = 0.0, den = 0.0;
  for (const TaggedPoint& pt : pts) {
    const double diff = predict(std::span<const double>(pt.coords)) - pt.value;
    num += diff * diff;
    den += pt.value * pt.value;
  }
  if (!(den > 0.0)) throw std::domain_error("relative_l2: exact solution has zero norm");
  return std::sqrt(num / den);
}

// Error of the ansatz surrogate against the exact solution over n seeded
// test points.
inline double relative_l2(const ProblemSpec& prob, const ParamVector& p, const RngKey& root,
                          int n = 1000) {
  const std::vector<TaggedPoint> pts = make_test_points(prob, root.child(kTestPointsPurpose), n);
  return relative_l2_over(
      [&](std::span<const double> coords) { return surrogate_value(prob, p, coords); }, pts);
}

struct TrainReport {
  double rel_l2 = std::numeric_limits<double>::quiet_NaN();
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t residual_evals = 0;
  std::uint64_t residual_points = 0;
};

namespace detail {

// Equation-loss work of one epoch: per-point recorded losses and gradients.
// Results land in caller-indexed slots, so the reduction order downstream is
// independent of how points were assigned to workers.
struct EpochWork {
  std::vector<double> loss;          // per point
  std::vector<AlignedBuffer> grad;   // per point, flat layout
  std::uint64_t evals = 0;           // summed field evaluations
};

template <class Fn>
void run_on_workers(int n_items, int workers, Fn&& fn) {
  if (workers <= 1 || n_items <= 1) {
    for (int i = 0; i < n_items; ++i) fn(i, 0);
    return;
  }
  const int w = std::min(workers, n_items);
  std::vector<std::thread> pool;
  pool.reserve(w);
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([t, w, n_items, &fn] {
      for (int i = t; i < n_items; i += w) fn(i, t);
    });
  }
  for (std::thread& th : pool) th.join();
}

}  // namespace detail

// Runs (or continues) training for cfg.epochs epochs. The state must come
// from init_train_state with the same problem and config. Throws
// TrainingError on a non-finite loss or gradient, leaving the state at the
// last finite epoch.
inline TrainReport train(const ProblemSpec& prob, const TrainConfig& cfg, TrainState& st) {
  prob.validate();
  cfg.validate();
  const NetworkSpec net = prob.network();
  const ParamLayout& layout = st.params.layout;
  const bool inverse = prob.family == Family::kInverseAde;
  const int n_params = static_cast<int>(st.params.values.size());

  // Fixed data sets. Keys 0 and 1 of the data purpose are reserved for them;
  // epoch batches start at 2.
  const std::vector<TaggedPoint> initial = make_init_data(prob, st.root.child(kDataPurpose).child(0));
  const std::vector<TaggedPoint> sensors =
      inverse ? make_sensor_data(prob, st.root.child(kDataPurpose).child(1))
              : std::vector<TaggedPoint>{};

  const int nb = cfg.batch_size;
  detail::EpochWork work;
  work.loss.assign(nb, 0.0);
  work.grad.assign(nb, AlignedBuffer(n_params, 0.0));
  std::vector<std::uint64_t> worker_evals(std::max(cfg.workers, 1), 0);

  AlignedBuffer grad(n_params, 0.0);
  const double w_equ = cfg.weights.w_equ;
  const double w_g = cfg.weights.w_g;
  const double w_u = cfg.weights.w_u;
  const bool use_equ = w_equ > 0.0;
  const bool use_g = w_g > 0.0 && !initial.empty();
  const bool use_u = w_u > 0.0 && !sensors.empty();

  double last_loss = std::numeric_limits<double>::quiet_NaN();

  for (int e = 0; e < cfg.epochs; ++e) {
    const int epoch = st.epoch;
    double equ_loss = 0.0, g_loss = 0.0, u_loss = 0.0;
    std::fill(grad.begin(), grad.end(), 0.0);

    if (use_equ) {
      const std::vector<TaggedPoint> batch =
          sample_batch(prob, nb, st.root.child(kDataPurpose).child(2 + epoch));
      for (std::uint64_t& c : worker_evals) c = 0;

      detail::run_on_workers(nb, cfg.workers, [&](int i, int worker) {
        thread_local Tape tape;
        const GroupPair pair = draw_group_pair(st.root, epoch, i, cfg.estimator.m, prob.d);
        tape.reset(st.params.values.data(), st.params.values.size());
        EvalCounter counter;
        NetTapeField body(net, layout, tape, &counter);
        AnsatzField field(body, prob.d);
        const Sc loss = equation_loss_point(field, prob, layout, tape, batch[i], pair,
                                            cfg.estimator, cfg.mode);
        std::fill(work.grad[i].begin(), work.grad[i].end(), 0.0);
        tape.backward(loss, w_equ / nb, work.grad[i].data());
        work.loss[i] = loss.val();
        worker_evals[worker] += counter.forward;
      });

      for (int i = 0; i < nb; ++i) equ_loss += work.loss[i];
      equ_loss /= nb;
      for (int i = 0; i < nb; ++i) {
        const AlignedBuffer& gi = work.grad[i];
        for (int k = 0; k < n_params; ++k) grad[k] += gi[k];
      }
      for (std::uint64_t c : worker_evals) st.residual_evals += c;
      st.residual_points += static_cast<std::uint64_t>(nb);
    }

    if (use_g || use_u) {
      thread_local Tape tape;
      tape.reset(st.params.values.data(), st.params.values.size());
      NetTapeField body(net, layout, tape);
      AnsatzField field(body, prob.d);
      Sc acc = tape.constant(0.0);
      if (use_g) {
        const Sc g = value_misfit_loss(field, tape, initial);
        g_loss = g.val();
        acc = acc + w_g * g;
      }
      if (use_u) {
        const Sc u = value_misfit_loss(field, tape, sensors);
        u_loss = u.val();
        acc = acc + w_u * u;
      }
      tape.backward(acc, 1.0, grad.data());
    }

    const double total = w_equ * equ_loss + w_g * g_loss + w_u * u_loss;
    if (!std::isfinite(total)) {
      throw TrainingError("train: non-finite loss at epoch " + std::to_string(epoch));
    }
    last_loss = total;

    const double lr = cfg.lr_at(e);
    if (epoch % cfg.loss_stride == 0 || e == cfg.epochs - 1) {
      st.loss_trace.push_back(
          {epoch, total, equ_loss, g_loss, u_loss, lr, pde_snapshot(st.params)});
    }

    adam_step(st, grad, lr, cfg);
    ++st.epoch;
    if (inverse) st.param_trace.push_back({st.epoch, pde_snapshot(st.params)});
  }

  TrainReport report;
  report.rel_l2 = relative_l2(prob, st.params, st.root, cfg.n_test);
  report.final_loss = last_loss;
  report.residual_evals = st.residual_evals;
  report.residual_points = st.residual_points;
  return report;
}

}  // namespace mcpinn
