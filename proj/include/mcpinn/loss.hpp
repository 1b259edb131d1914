#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "frac_ops.hpp"
#include "net.hpp"
#include "problems.hpp"
#include "rng.hpp"
#include "samplers.hpp"
#include "tape.hpp"

// The training losses, recorded on a tape.
//
// The equation loss multiplies two residual estimates built from independent
// sample groups, so its expectation is the true squared residual: noise in
// one factor is uncorrelated with noise in the other. Instantaneous values
// can be negative; that is intended and must not be clipped.

namespace mcpinn {

enum class LossMode {
  kPaired,     // (1/(m N)) sum_i sum_j (R1_ij - f_i)(R2_ij - f_i)
  kGroupMean,  // (1/N) sum_i (mean_j R1_ij - f_i)(mean_j R2_ij - f_i)
};

struct LossWeights {
  double w_equ = 1.0;
  double w_g = 1.0;
  double w_u = 1.0;

  void validate() const {
    if (w_equ < 0.0 || w_g < 0.0 || w_u < 0.0) {
      throw std::invalid_argument("LossWeights: non-negative weights required");
    }
    if (w_equ == 0.0 && w_g == 0.0 && w_u == 0.0) {
      throw std::invalid_argument("LossWeights: at least one positive weight required");
    }
  }
};

// The two independent sample groups of one residual point.
struct GroupPair {
  SampleGroup first;
  SampleGroup second;
};

// Streams are keyed (purpose, epoch, point, group), so every (epoch, point)
// cell of the training run has its own reproducible pair, independent of the
// batch size and of any other draws.
inline GroupPair draw_group_pair(const RngKey& root, std::uint64_t epoch,
                                 std::uint64_t point, int m, int d) {
  const RngKey cell = root.child(kTrainPurpose).child(epoch).child(point);
  RngStream s1 = cell.child(0).stream();
  RngStream s2 = cell.child(1).stream();
  GroupPair pair{make_sample_group(m, d, s1), make_sample_group(m, d, s2)};
  return pair;
}

// Equation loss of one residual point given its two groups, as a tape scalar.
// Both modes subtract the forcing from each factor before multiplying.
template <class Field>
Sc equation_loss_point(Field& field, const ProblemSpec& prob, const ParamLayout& layout,
                       Tape& tape, const TaggedPoint& pt, const GroupPair& groups,
                       const EstimatorConfig& cfg, LossMode mode) {
  const ResidualCoeffs<Sc> coeffs = point_coeffs(prob, layout, tape, pt.coords);
  CenterCache<Sc> cache;
  std::vector<Sc> r1, r2;
  residual_op_samples(field, pt.coords, prob.d, groups.first, coeffs, cfg, cache, r1);
  residual_op_samples(field, pt.coords, prob.d, groups.second, coeffs, cfg, cache, r2);

  if (mode == LossMode::kGroupMean) {
    const Sc m1 = detail::mean(r1) - pt.value;
    const Sc m2 = detail::mean(r2) - pt.value;
    return m1 * m2;
  }
  std::vector<Sc> prods(r1.size());
  for (std::size_t j = 0; j < r1.size(); ++j) {
    prods[j] = (r1[j] - pt.value) * (r2[j] - pt.value);
  }
  return detail::mean(prods);
}

// Mean squared misfit of the ansatz-wrapped surrogate over a labeled set;
// zero when the set is empty (the term drops out of the total).
template <class Field>
Sc value_misfit_loss(Field& field, Tape& tape, std::span<const TaggedPoint> points) {
  if (points.empty()) return tape.constant(0.0);
  std::vector<EvalPoint<Sc>> pts;
  pts.reserve(points.size());
  for (const TaggedPoint& pt : points) pts.push_back({pt.coords});
  std::vector<Sc> vals(pts.size());
  field.eval_batch(pts, vals.data());
  std::vector<Sc> sq(pts.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const Sc d = vals[i] - points[i].value;
    sq[i] = d * d;
  }
  return detail::mean(sq);
}

// One recorded evaluation of the weighted total loss over a residual batch
// plus the full (small) initial and sensor sets.
struct LossBreakdown {
  Sc total;
  double equation = 0.0;
  double initial = 0.0;
  double data = 0.0;
};

template <class Field>
LossBreakdown total_loss(Field& field, const ProblemSpec& prob, const ParamLayout& layout,
                         Tape& tape, std::span<const TaggedPoint> batch,
                         std::span<const GroupPair> groups,
                         std::span<const TaggedPoint> initial,
                         std::span<const TaggedPoint> sensors, const EstimatorConfig& cfg,
                         LossMode mode, const LossWeights& w) {
  w.validate();
  if (batch.size() != groups.size()) {
    throw std::invalid_argument("total_loss: one group pair per residual point required");
  }
  LossBreakdown out;
  Sc acc = tape.constant(0.0);
  if (w.w_equ > 0.0 && !batch.empty()) {
    std::vector<Sc> per_point(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      per_point[i] = equation_loss_point(field, prob, layout, tape, batch[i], groups[i],
                                         cfg, mode);
    }
    const Sc equ = detail::mean(per_point);
    out.equation = equ.val();
    acc = acc + w.w_equ * equ;
  }
  if (w.w_g > 0.0 && !initial.empty()) {
    const Sc g = value_misfit_loss(field, tape, initial);
    out.initial = g.val();
    acc = acc + w.w_g * g;
  }
  if (w.w_u > 0.0 && !sensors.empty()) {
    const Sc u = value_misfit_loss(field, tape, sensors);
    out.data = u.val();
    acc = acc + w.w_u * u;
  }
  out.total = acc;
  return out;
}

}  // namespace mcpinn
