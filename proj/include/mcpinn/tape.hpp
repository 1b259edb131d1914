#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <new>
#include <span>
#include <stdexcept>
#include <vector>

namespace mcpinn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Vectorized kernels split their loops according to the runtime address of
// the operands, so two buffers holding the same numbers can sum in a
// different order and disagree in the last ulp. Every buffer a kernel maps
// (tape arenas, parameter and gradient vectors) is therefore allocated at a
// fixed 64-byte base, making the arithmetic a function of content alone.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  using is_always_equal = std::true_type;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
  template <class U>
  bool operator!=(const AlignedAllocator<U>&) const noexcept {
    return false;
  }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

class Tape;

// Handle to a recorded scalar. Cheap to copy; owned by its tape.
struct Sc {
  Tape* tape = nullptr;
  std::int32_t id = -1;
  inline double val() const;
};

// Reverse-mode tape over a fixed primitive set: input assembly, affine
// layers, the activation and its tangent, and the scalar operations the
// estimators and losses need. Matrix-valued nodes keep the record short (a
// full network evaluation over a batch of points is ~10 nodes) and let the
// heavy lifting run as dense matrix products.
//
// Values are computed eagerly while recording through the same compute()
// used by replay(), so replaying a record reproduces every value
// bit-for-bit. backward() accumulates exact reverse-mode gradients of one
// recorded scalar with respect to the bound parameter vector.
class Tape {
 public:
  enum Kind : std::uint8_t {
    kConst,
    kParam,
    kAdd,    // a + b
    kAddC,   // a + c
    kSub,    // a - b
    kRsubC,  // c - a
    kMul,    // a * b
    kMulC,   // a * c
    kDiv,    // a / b
    kRdivC,  // c / a
    kExp,
    kLog,
    kSin,
    kAbs,
    kPowC,  // a^c, a > 0
    kMaxC,  // max(a, c)
    kMax2,  // max(a, b)
    kSum,   // n-ary sum
    kAssemble,       // rows of base + sum_k s_k * dir_k
    kAffine,         // Y = X W^T + 1 b^T
    kTangentAffine,  // Yt = Xt W^T
    kTanh,           // elementwise
    kTanhTangent,    // (1 - Y_row^2) .* Xt for one row of an activation node
    kPick,           // scalar X(row, col)
  };

  struct Node {
    Kind kind;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::int32_t rows = 1;
    std::int32_t cols = 1;
    std::size_t off = 0;  // value offset in the arena
    double c = 0.0;
    std::int32_t i0 = 0;  // param offset / aux index / row index
    std::int32_t i1 = 0;
  };

 private:
  struct AssembleInfo {
    std::size_t base_off = 0;
    std::int32_t term_begin = 0;
    std::int32_t term_end = 0;
  };
  struct Term {
    std::int32_t row;
    std::int32_t node;
    std::size_t dir_off;
  };

 public:

  // Rebinds the tape to a parameter vector and discards all nodes.
  // Capacity is kept, so a reused tape stops allocating after warm-up.
  void reset(const double* params, std::size_t n_params) {
    params_ = params;
    n_params_ = n_params;
    nodes_.clear();
    vals_.clear();
    aux_f_.clear();
    terms_.clear();
    sum_args_.clear();
    assembles_.clear();
  }

  const double* params() const { return params_; }
  std::size_t size() const { return nodes_.size(); }
  std::size_t arena_size() const { return vals_.size(); }

  double value(std::int32_t id) const { return vals_[nodes_[id].off]; }
  const Node& node(std::int32_t id) const { return nodes_[id]; }
  const double* data(std::int32_t id) const { return vals_.data() + nodes_[id].off; }

  Sc constant(double v) {
    Node n{kConst};
    n.c = v;
    return {this, push(n)};
  }

  Sc param(std::int32_t offset) {
    if (offset < 0 || static_cast<std::size_t>(offset) >= n_params_) {
      throw std::invalid_argument("Tape::param: offset outside parameter vector");
    }
    Node n{kParam};
    n.i0 = offset;
    return {this, push(n)};
  }

  Sc binary(Kind k, Sc a, Sc b) {
    check(a);
    check(b);
    Node n{k};
    n.a = a.id;
    n.b = b.id;
    return {this, push(n)};
  }

  Sc unary(Kind k, Sc a, double c = 0.0) {
    check(a);
    Node n{k};
    n.a = a.id;
    n.c = c;
    return {this, push(n)};
  }

  Sc sum(std::span<const Sc> xs) {
    if (xs.empty()) return constant(0.0);
    Node n{kSum};
    n.i0 = static_cast<std::int32_t>(sum_args_.size());
    for (const Sc& x : xs) {
      check(x);
      sum_args_.push_back(x.id);
    }
    n.i1 = static_cast<std::int32_t>(sum_args_.size());
    return {this, push(n)};
  }

  // Builder for an evaluation-point matrix. Row r is
  //   base_r + sum over its terms of s * dir,
  // where each s is a recorded scalar; backward routes each row's cotangent
  // into the shift scalars through dot products with the directions.
  class Assembler {
   public:
    Assembler(Tape& t, int rows, int cols) : t_(t), rows_(rows), cols_(cols) {
      info_.base_off = t_.aux_f_.size();
      t_.aux_f_.resize(info_.base_off + static_cast<std::size_t>(rows) * cols, 0.0);
      info_.term_begin = static_cast<std::int32_t>(t_.terms_.size());
    }

    void set_base(int row, std::span<const double> base) {
      double* dst = t_.aux_f_.data() + info_.base_off + static_cast<std::size_t>(row) * cols_;
      for (int k = 0; k < cols_; ++k) dst[k] = k < static_cast<int>(base.size()) ? base[k] : 0.0;
    }

    void add_term(int row, Sc s, std::span<const double> dir) {
      t_.check(s);
      const std::size_t dir_off = t_.aux_f_.size();
      t_.aux_f_.resize(dir_off + cols_, 0.0);
      double* dst = t_.aux_f_.data() + dir_off;
      for (int k = 0; k < cols_; ++k) dst[k] = k < static_cast<int>(dir.size()) ? dir[k] : 0.0;
      t_.terms_.push_back({row, s.id, dir_off});
    }

    std::int32_t finish() {
      Node n{kAssemble};
      n.rows = rows_;
      n.cols = cols_;
      n.i0 = static_cast<std::int32_t>(t_.assembles_.size());
      info_.term_end = static_cast<std::int32_t>(t_.terms_.size());
      t_.assembles_.push_back(info_);
      return t_.push(n);
    }

   private:
    Tape& t_;
    int rows_, cols_;
    AssembleInfo info_;
  };

  std::int32_t affine(std::int32_t x, std::int32_t w_off, std::int32_t b_off, int out) {
    Node n{kAffine};
    n.a = x;
    n.rows = nodes_[x].rows;
    n.cols = out;
    n.i0 = w_off;
    n.i1 = b_off;
    return push(n);
  }

  std::int32_t tangent_affine(std::int32_t xt, std::int32_t w_off, int out) {
    Node n{kTangentAffine};
    n.a = xt;
    n.rows = nodes_[xt].rows;
    n.cols = out;
    n.i0 = w_off;
    return push(n);
  }

  std::int32_t tanh_mat(std::int32_t x) {
    Node n{kTanh};
    n.a = x;
    n.rows = nodes_[x].rows;
    n.cols = nodes_[x].cols;
    return push(n);
  }

  std::int32_t tanh_tangent(std::int32_t act, int act_row, std::int32_t xt) {
    Node n{kTanhTangent};
    n.a = act;
    n.b = xt;
    n.rows = nodes_[xt].rows;
    n.cols = nodes_[xt].cols;
    n.i0 = act_row;
    return push(n);
  }

  Sc pick(std::int32_t mat, int row, int col) {
    Node n{kPick};
    n.a = mat;
    n.i0 = row;
    n.i1 = col;
    return {this, push(n)};
  }

  // Recomputes every recorded value in order; the record is its own program.
  // Returns the value of the last node.
  double replay() {
    for (std::size_t i = 0; i < nodes_.size(); ++i) compute(nodes_[i]);
    return nodes_.empty() ? 0.0 : vals_[nodes_.back().off];
  }

  // Accumulates seed * d(out)/d(theta) into grad (length n_params). Performs
  // no field evaluations; only recorded values are touched.
  void backward(Sc out, double seed, double* grad) {
    check(out);
    bars_.assign(vals_.size(), 0.0);
    bars_[nodes_[out.id].off] = seed;
    for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
      pull(nodes_[i], grad);
    }
  }

 private:
  void check(const Sc& s) const {
    if (s.tape != this || s.id < 0) throw std::logic_error("Tape: scalar from another tape");
  }

  std::int32_t push(Node n) {
    n.off = vals_.size();
    vals_.resize(n.off + static_cast<std::size_t>(n.rows) * n.cols, 0.0);
    nodes_.push_back(n);
    compute(nodes_.back());
    return static_cast<std::int32_t>(nodes_.size() - 1);
  }

  double& v(const Node& n) { return vals_[n.off]; }
  double av(const Node& n) const { return vals_[nodes_[n.a].off]; }
  double bv(const Node& n) const { return vals_[nodes_[n.b].off]; }

  void compute(Node& n) {
    switch (n.kind) {
      case kConst: v(n) = n.c; break;
      case kParam: v(n) = params_[n.i0]; break;
      case kAdd: v(n) = av(n) + bv(n); break;
      case kAddC: v(n) = av(n) + n.c; break;
      case kSub: v(n) = av(n) - bv(n); break;
      case kRsubC: v(n) = n.c - av(n); break;
      case kMul: v(n) = av(n) * bv(n); break;
      case kMulC: v(n) = av(n) * n.c; break;
      case kDiv: v(n) = av(n) / bv(n); break;
      case kRdivC: v(n) = n.c / av(n); break;
      case kExp: v(n) = std::exp(av(n)); break;
      case kLog:
        if (!(av(n) > 0.0)) throw std::domain_error("Tape: log of non-positive value");
        v(n) = std::log(av(n));
        break;
      case kSin: v(n) = std::sin(av(n)); break;
      case kAbs: v(n) = std::abs(av(n)); break;
      case kPowC:
        if (!(av(n) > 0.0)) throw std::domain_error("Tape: pow of non-positive base");
        v(n) = std::pow(av(n), n.c);
        break;
      case kMaxC: v(n) = av(n) > n.c ? av(n) : n.c; break;
      case kMax2: v(n) = av(n) >= bv(n) ? av(n) : bv(n); break;
      case kSum: {
        double s = 0.0;
        for (std::int32_t k = n.i0; k < n.i1; ++k) s += vals_[nodes_[sum_args_[k]].off];
        v(n) = s;
        break;
      }
      case kAssemble: {
        const AssembleInfo& info = assembles_[n.i0];
        const std::size_t sz = static_cast<std::size_t>(n.rows) * n.cols;
        for (std::size_t k = 0; k < sz; ++k) vals_[n.off + k] = aux_f_[info.base_off + k];
        for (std::int32_t t = info.term_begin; t < info.term_end; ++t) {
          const Term& tm = terms_[t];
          const double s = vals_[nodes_[tm.node].off];
          double* row = &vals_[n.off + static_cast<std::size_t>(tm.row) * n.cols];
          const double* dir = &aux_f_[tm.dir_off];
          for (int k = 0; k < n.cols; ++k) row[k] += s * dir[k];
        }
        break;
      }
      case kAffine: {
        const Node& xn = nodes_[n.a];
        Eigen::Map<const RowMat> X(&vals_[xn.off], xn.rows, xn.cols);
        Eigen::Map<const RowMat> W(params_ + n.i0, n.cols, xn.cols);
        Eigen::Map<const Eigen::RowVectorXd> b(params_ + n.i1, n.cols);
        Eigen::Map<RowMat> Y(&vals_[n.off], n.rows, n.cols);
        Y.noalias() = X * W.transpose();
        Y.rowwise() += b;
        break;
      }
      case kTangentAffine: {
        const Node& xn = nodes_[n.a];
        Eigen::Map<const RowMat> Xt(&vals_[xn.off], xn.rows, xn.cols);
        Eigen::Map<const RowMat> W(params_ + n.i0, n.cols, xn.cols);
        Eigen::Map<RowMat> Yt(&vals_[n.off], n.rows, n.cols);
        Yt.noalias() = Xt * W.transpose();
        break;
      }
      case kTanh: {
        const Node& xn = nodes_[n.a];
        Eigen::Map<const Eigen::ArrayXd> X(&vals_[xn.off], static_cast<std::size_t>(n.rows) * n.cols);
        Eigen::Map<Eigen::ArrayXd> Y(&vals_[n.off], static_cast<std::size_t>(n.rows) * n.cols);
        // tanh(x) = 1 - 2/(exp(2x)+1); saturates cleanly at +-1 and runs
        // through the vectorised exp kernel.
        Y = 1.0 - 2.0 / ((2.0 * X).exp() + 1.0);
        break;
      }
      case kTanhTangent: {
        const Node& an = nodes_[n.a];
        const Node& tn = nodes_[n.b];
        Eigen::Map<const Eigen::ArrayXd> Yrow(&vals_[an.off + static_cast<std::size_t>(n.i0) * an.cols], an.cols);
        Eigen::Map<const Eigen::ArrayXd> Xt(&vals_[tn.off], tn.cols);
        Eigen::Map<Eigen::ArrayXd> Out(&vals_[n.off], n.cols);
        Out = (1.0 - Yrow * Yrow) * Xt;
        break;
      }
      case kPick: {
        const Node& xn = nodes_[n.a];
        v(n) = vals_[xn.off + static_cast<std::size_t>(n.i0) * xn.cols + n.i1];
        break;
      }
    }
  }

  void pull(const Node& n, double* grad) {
    const double bar = n.rows == 1 && n.cols == 1 ? bars_[n.off] : 0.0;
    switch (n.kind) {
      case kConst: break;
      case kParam: grad[n.i0] += bar; break;
      case kAdd:
        bars_[nodes_[n.a].off] += bar;
        bars_[nodes_[n.b].off] += bar;
        break;
      case kAddC: bars_[nodes_[n.a].off] += bar; break;
      case kSub:
        bars_[nodes_[n.a].off] += bar;
        bars_[nodes_[n.b].off] -= bar;
        break;
      case kRsubC: bars_[nodes_[n.a].off] -= bar; break;
      case kMul:
        bars_[nodes_[n.a].off] += bar * bv(n);
        bars_[nodes_[n.b].off] += bar * av(n);
        break;
      case kMulC: bars_[nodes_[n.a].off] += bar * n.c; break;
      case kDiv:
        bars_[nodes_[n.a].off] += bar / bv(n);
        bars_[nodes_[n.b].off] -= bar * vals_[n.off] / bv(n);
        break;
      case kRdivC: bars_[nodes_[n.a].off] -= bar * vals_[n.off] / av(n); break;
      case kExp: bars_[nodes_[n.a].off] += bar * vals_[n.off]; break;
      case kLog: bars_[nodes_[n.a].off] += bar / av(n); break;
      case kSin: bars_[nodes_[n.a].off] += bar * std::cos(av(n)); break;
      case kAbs: bars_[nodes_[n.a].off] += av(n) >= 0.0 ? bar : -bar; break;
      case kPowC: bars_[nodes_[n.a].off] += bar * n.c * vals_[n.off] / av(n); break;
      case kMaxC:
        if (av(n) > n.c) bars_[nodes_[n.a].off] += bar;
        break;
      case kMax2:
        if (av(n) >= bv(n)) {
          bars_[nodes_[n.a].off] += bar;
        } else {
          bars_[nodes_[n.b].off] += bar;
        }
        break;
      case kSum:
        for (std::int32_t k = n.i0; k < n.i1; ++k) bars_[nodes_[sum_args_[k]].off] += bar;
        break;
      case kAssemble: {
        const AssembleInfo& info = assembles_[n.i0];
        for (std::int32_t t = info.term_begin; t < info.term_end; ++t) {
          const Term& tm = terms_[t];
          const double* dir = &aux_f_[tm.dir_off];
          const double* brow = &bars_[n.off + static_cast<std::size_t>(tm.row) * n.cols];
          double acc = 0.0;
          for (int k = 0; k < n.cols; ++k) acc += dir[k] * brow[k];
          bars_[nodes_[tm.node].off] += acc;
        }
        break;
      }
      case kAffine: {
        const Node& xn = nodes_[n.a];
        Eigen::Map<const RowMat> X(&vals_[xn.off], xn.rows, xn.cols);
        Eigen::Map<const RowMat> W(params_ + n.i0, n.cols, xn.cols);
        Eigen::Map<const RowMat> barY(&bars_[n.off], n.rows, n.cols);
        Eigen::Map<RowMat> barX(&bars_[xn.off], xn.rows, xn.cols);
        Eigen::Map<RowMat> gW(grad + n.i0, n.cols, xn.cols);
        Eigen::Map<Eigen::RowVectorXd> gb(grad + n.i1, n.cols);
        barX.noalias() += barY * W;
        gW.noalias() += barY.transpose() * X;
        gb += barY.colwise().sum();
        break;
      }
      case kTangentAffine: {
        const Node& xn = nodes_[n.a];
        Eigen::Map<const RowMat> Xt(&vals_[xn.off], xn.rows, xn.cols);
        Eigen::Map<const RowMat> W(params_ + n.i0, n.cols, xn.cols);
        Eigen::Map<const RowMat> barY(&bars_[n.off], n.rows, n.cols);
        Eigen::Map<RowMat> barX(&bars_[xn.off], xn.rows, xn.cols);
        Eigen::Map<RowMat> gW(grad + n.i0, n.cols, xn.cols);
        barX.noalias() += barY * W;
        gW.noalias() += barY.transpose() * Xt;
        break;
      }
      case kTanh: {
        const Node& xn = nodes_[n.a];
        const std::size_t sz = static_cast<std::size_t>(n.rows) * n.cols;
        Eigen::Map<const Eigen::ArrayXd> Y(&vals_[n.off], sz);
        Eigen::Map<const Eigen::ArrayXd> barY(&bars_[n.off], sz);
        Eigen::Map<Eigen::ArrayXd> barX(&bars_[xn.off], sz);
        barX += (1.0 - Y * Y) * barY;
        break;
      }
      case kTanhTangent: {
        const Node& an = nodes_[n.a];
        const Node& tn = nodes_[n.b];
        const std::size_t arow = an.off + static_cast<std::size_t>(n.i0) * an.cols;
        Eigen::Map<const Eigen::ArrayXd> Yrow(&vals_[arow], an.cols);
        Eigen::Map<const Eigen::ArrayXd> Xt(&vals_[tn.off], tn.cols);
        Eigen::Map<const Eigen::ArrayXd> barV(&bars_[n.off], n.cols);
        Eigen::Map<Eigen::ArrayXd> barYrow(&bars_[arow], an.cols);
        Eigen::Map<Eigen::ArrayXd> barXt(&bars_[tn.off], tn.cols);
        barYrow += -2.0 * Yrow * Xt * barV;
        barXt += (1.0 - Yrow * Yrow) * barV;
        break;
      }
      case kPick: {
        const Node& xn = nodes_[n.a];
        bars_[xn.off + static_cast<std::size_t>(n.i0) * xn.cols + n.i1] += bar;
        break;
      }
    }
  }

  const double* params_ = nullptr;
  std::size_t n_params_ = 0;
  std::vector<Node> nodes_;
  AlignedBuffer vals_;
  AlignedBuffer bars_;
  std::vector<double> aux_f_;
  std::vector<Term> terms_;
  std::vector<std::int32_t> sum_args_;
  std::vector<AssembleInfo> assembles_;
};

inline double Sc::val() const { return tape->value(id); }

inline double scalar_value(const Sc& s) { return s.val(); }

inline Sc operator+(Sc a, Sc b) { return a.tape->binary(Tape::kAdd, a, b); }
inline Sc operator+(Sc a, double c) { return a.tape->unary(Tape::kAddC, a, c); }
inline Sc operator+(double c, Sc a) { return a.tape->unary(Tape::kAddC, a, c); }
inline Sc operator-(Sc a, Sc b) { return a.tape->binary(Tape::kSub, a, b); }
inline Sc operator-(Sc a, double c) { return a.tape->unary(Tape::kAddC, a, -c); }
inline Sc operator-(double c, Sc a) { return a.tape->unary(Tape::kRsubC, a, c); }
inline Sc operator-(Sc a) { return a.tape->unary(Tape::kMulC, a, -1.0); }
inline Sc operator*(Sc a, Sc b) { return a.tape->binary(Tape::kMul, a, b); }
inline Sc operator*(Sc a, double c) { return a.tape->unary(Tape::kMulC, a, c); }
inline Sc operator*(double c, Sc a) { return a.tape->unary(Tape::kMulC, a, c); }
inline Sc operator/(Sc a, Sc b) { return a.tape->binary(Tape::kDiv, a, b); }
inline Sc operator/(Sc a, double c) { return a.tape->unary(Tape::kMulC, a, 1.0 / c); }
inline Sc operator/(double c, Sc a) { return a.tape->unary(Tape::kRdivC, a, c); }
inline Sc exp(Sc a) { return a.tape->unary(Tape::kExp, a); }
inline Sc log(Sc a) { return a.tape->unary(Tape::kLog, a); }
inline Sc sin(Sc a) { return a.tape->unary(Tape::kSin, a); }
inline Sc abs(Sc a) { return a.tape->unary(Tape::kAbs, a); }
inline Sc pow(Sc a, double c) { return a.tape->unary(Tape::kPowC, a, c); }
inline Sc max(Sc a, double c) { return a.tape->unary(Tape::kMaxC, a, c); }
inline Sc max(Sc a, Sc b) { return a.tape->binary(Tape::kMax2, a, b); }
inline Sc relu(Sc a) { return a.tape->unary(Tape::kMaxC, a, 0.0); }
inline double relu(double a) { return a > 0.0 ? a : 0.0; }

}  // namespace mcpinn
