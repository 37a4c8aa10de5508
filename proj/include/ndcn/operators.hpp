#pragma once

#include <Eigen/Dense>
#include <vector>

#include "ndcn/graph.hpp"

namespace ndcn {

using Matrix = Eigen::MatrixXd;

/// Symmetric sparse n x n operator in compressed-row coordinate storage.
/// Immutable once built.
class DiffOp {
 public:
  struct Entry {
    int row;
    int col;
    double value;
  };

  DiffOp() = default;

  /// Builds from upper-or-diagonal entries (row <= col); each off-diagonal
  /// entry is mirrored so the stored matrix is exactly symmetric.
  static DiffOp from_upper(int n, const std::vector<Entry>& upper);

  static DiffOp identity(int n);

  int size() const { return n_; }
  std::size_t nonzeros() const { return values_.size(); }

  /// y = Phi * x; x must have size() rows.
  Matrix apply(const Matrix& x) const;

  /// Dense copy, for tests and small problems.
  Matrix to_dense() const;

  double entry(int i, int j) const;

 private:
  int n_ = 0;
  std::vector<int> row_ptr_{0};
  std::vector<int> cols_;
  std::vector<double> values_;
};

/// D^{-1/2} (D - A) D^{-1/2}; rows and columns of isolated nodes are zero.
DiffOp normalized_laplacian(const Graph& g);

/// D~^{-1/2} (alpha I + (1 - alpha) A) D~^{-1/2} with D~ = alpha I + (1 - alpha) D.
DiffOp tunable_diffusion(const Graph& g, double alpha);

inline Matrix apply(const DiffOp& op, const Matrix& x) { return op.apply(x); }

}  // namespace ndcn
