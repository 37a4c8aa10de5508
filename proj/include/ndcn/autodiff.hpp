#pragma once

#include <Eigen/Dense>
#include <functional>
#include <span>
#include <deque>
#include <vector>

#include "ndcn/odeint.hpp"
#include "ndcn/operators.hpp"

namespace ndcn {

class Tape;

/// A dense matrix value recorded on a Tape. Cheap to copy (a tape pointer and
/// a node id); the value itself lives on the tape.
class DiffMatrix {
 public:
  DiffMatrix() = default;
  DiffMatrix(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Gradients produced by one reverse sweep, indexed by tape node id.
class Gradients {
 public:
  explicit Gradients(std::vector<Matrix> grads) : grads_(std::move(grads)) {}

  /// Gradient of the loss with respect to x; all zeros if x did not
  /// contribute to the loss or does not require gradients.
  Matrix of(const DiffMatrix& x) const;

 private:
  std::vector<Matrix> grads_;
};

/// Append-only record of forward operations. A node's parents always have
/// smaller ids, so descending id order is a valid reverse topological order.
/// A tape has a single owner; it is not safe to record from several threads.
class Tape {
 public:
  /// Accumulates a node's upstream gradient into the gradients of its
  /// parents (only those that require gradients).
  class GradSink {
   public:
    GradSink(std::vector<Matrix>& grads, const std::vector<int>& parents,
             const std::vector<char>& req)
        : grads_(grads), parents_(parents), requires_(req) {}

    bool wants(std::size_t k) const { return requires_[parents_[k]]; }

    template <class Expr>
    void add(std::size_t k, const Expr& g) {
      if (!wants(k)) return;
      Matrix& slot = grads_[parents_[k]];
      if (slot.size() == 0) {
        slot = g;
      } else {
        slot += g;
      }
    }

   private:
    std::vector<Matrix>& grads_;
    const std::vector<int>& parents_;
    const std::vector<char>& requires_;
  };

  using BackwardFn = std::function<void(const Matrix& upstream, GradSink& sink)>;

  Tape();

  /// Leaf that receives gradients.
  DiffMatrix parameter(Matrix value);
  /// Leaf that never receives gradients.
  DiffMatrix constant(Matrix value);

  /// Records an op node. `parents` must already be on this tape.
  DiffMatrix record(Matrix value, std::vector<int> parents, BackwardFn backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return requires_[id]; }
  std::size_t size() const { return nodes_.size(); }
  void clear();

  /// Reverse sweep from a 1x1 loss node.
  Gradients backward(const DiffMatrix& loss) const;

  /// When set, every recorded value is checked for NaN/Inf. Defaults to on in
  /// debug builds.
  void set_check_finite(bool on) { check_finite_ = on; }

 private:
  struct Node {
    Matrix value;
    std::vector<int> parents;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;  // stable addresses: value() references survive appends
  std::vector<char> requires_;
  bool check_finite_;
};

inline const Matrix& DiffMatrix::value() const { return tape_->value(id_); }
inline bool DiffMatrix::requires_grad() const { return tape_->requires_grad(id_); }

namespace ad {

DiffMatrix matmul(const DiffMatrix& a, const DiffMatrix& b);
/// Phi * x with Phi held constant. `op` must outlive the tape's backward pass.
DiffMatrix sparse_apply(const DiffOp& op, const DiffMatrix& x);
/// x + 1 * bias, bias is 1 x cols(x).
DiffMatrix add_row_bias(const DiffMatrix& x, const DiffMatrix& bias);
DiffMatrix add(const DiffMatrix& a, const DiffMatrix& b);
DiffMatrix sub(const DiffMatrix& a, const DiffMatrix& b);
DiffMatrix mul(const DiffMatrix& a, const DiffMatrix& b);
DiffMatrix scale(const DiffMatrix& x, double c);
DiffMatrix tanh(const DiffMatrix& x);
/// relu'(0) = 0.
DiffMatrix relu(const DiffMatrix& x);
DiffMatrix sigmoid(const DiffMatrix& x);
/// 1x1 sum of all entries.
DiffMatrix sum(const DiffMatrix& x);
/// 1x1 sum of squared entries.
DiffMatrix squared_norm(const DiffMatrix& x);
/// 1x1 mean |x - target|; subgradient 0 where x == target.
DiffMatrix mean_abs_diff(const DiffMatrix& x, const Matrix& target);
DiffMatrix log_softmax_rows(const DiffMatrix& x);
/// base + sum_i coeffs[i] * terms[i].
DiffMatrix lincomb(const DiffMatrix& base, std::span<const double> coeffs,
                   std::span<const DiffMatrix* const> terms);

/// Mean negative log-likelihood of log_softmax_rows(logits) over rows where
/// mask is true. labels is n x c one-hot.
DiffMatrix cross_entropy_masked(const DiffMatrix& logits, const Matrix& labels,
                                const std::vector<bool>& mask);

}  // namespace ad

template <>
struct StateAlgebra<DiffMatrix> {
  static DiffMatrix combine(const DiffMatrix& base, std::span<const double> coeffs,
                            std::span<const DiffMatrix* const> terms) {
    return ad::lincomb(base, coeffs, terms);
  }
  static const Matrix& value(const DiffMatrix& x) { return x.value(); }
};

}  // namespace ndcn
