#include "ndcn/operators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ndcn/errors.hpp"

namespace ndcn {

DiffOp DiffOp::from_upper(int n, const std::vector<Entry>& upper) {
  std::vector<Entry> all;
  all.reserve(2 * upper.size());
  for (const auto& e : upper) {
    if (e.row < 0 || e.col < 0 || e.row >= n || e.col >= n || e.row > e.col) {
      throw InvalidArgument("operator entry outside upper triangle");
    }
    if (!std::isfinite(e.value)) throw DegenerateInput("non-finite operator entry");
    all.push_back(e);
    if (e.row != e.col) all.push_back({e.col, e.row, e.value});
  }
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) {
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  DiffOp op;
  op.n_ = n;
  op.row_ptr_.assign(n + 1, 0);
  for (std::size_t k = 0; k < all.size(); ++k) {
    const Entry& e = all[k];
    if (k > 0 && all[k - 1].row == e.row && all[k - 1].col == e.col) {
      op.values_.back() += e.value;
      continue;
    }
    ++op.row_ptr_[e.row + 1];
    op.cols_.push_back(e.col);
    op.values_.push_back(e.value);
  }
  for (int i = 0; i < n; ++i) op.row_ptr_[i + 1] += op.row_ptr_[i];
  return op;
}

DiffOp DiffOp::identity(int n) {
  std::vector<Entry> diag;
  diag.reserve(n);
  for (int i = 0; i < n; ++i) diag.push_back({i, i, 1.0});
  return from_upper(n, diag);
}

Matrix DiffOp::apply(const Matrix& x) const {
  if (x.rows() != n_) {
    throw InvalidArgument("operator of size " + std::to_string(n_) + " applied to " +
                          std::to_string(x.rows()) + " rows");
  }
  if (x.cols() == 1) {
    Matrix y(n_, 1);
    const double* xc = x.data();
    for (int i = 0; i < n_; ++i) {
      double acc = 0.0;
      for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) acc += values_[k] * xc[cols_[k]];
      y(i, 0) = acc;
    }
    return y;
  }
  // Row-major copies make each neighbor contribution a contiguous row update.
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMatrix xr = x;
  RowMatrix yr = RowMatrix::Zero(n_, x.cols());
  for (int i = 0; i < n_; ++i) {
    auto yi = yr.row(i);
    for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) yi += values_[k] * xr.row(cols_[k]);
  }
  return yr;
}

Matrix DiffOp::to_dense() const {
  Matrix d = Matrix::Zero(n_, n_);
  for (int i = 0; i < n_; ++i) {
    for (int k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) d(i, cols_[k]) = values_[k];
  }
  return d;
}

double DiffOp::entry(int i, int j) const {
  const auto b = cols_.begin() + row_ptr_[i];
  const auto e = cols_.begin() + row_ptr_[i + 1];
  const auto it = std::lower_bound(b, e, j);
  return (it != e && *it == j) ? values_[it - cols_.begin()] : 0.0;
}

DiffOp normalized_laplacian(const Graph& g) {
  const int n = g.num_nodes();
  std::vector<double> inv_sqrt(n, 0.0);
  for (int i = 0; i < n; ++i) {
    if (g.degree(i) > 0) inv_sqrt[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)));
  }
  std::vector<DiffOp::Entry> upper;
  upper.reserve(n + g.num_edges());
  for (int i = 0; i < n; ++i) {
    if (g.degree(i) > 0) upper.push_back({i, i, 1.0});
  }
  for (const auto& [i, j] : g.edges()) upper.push_back({i, j, -inv_sqrt[i] * inv_sqrt[j]});
  return DiffOp::from_upper(n, upper);
}

DiffOp tunable_diffusion(const Graph& g, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
  const int n = g.num_nodes();
  std::vector<double> inv_sqrt(n);
  for (int i = 0; i < n; ++i) {
    const double dt = alpha + (1.0 - alpha) * g.degree(i);
    if (dt <= 0.0) {
      throw DegenerateInput("zero normalizer at isolated node " + std::to_string(i) +
                            " with alpha=0");
    }
    inv_sqrt[i] = 1.0 / std::sqrt(dt);
  }
  std::vector<DiffOp::Entry> upper;
  upper.reserve(n + g.num_edges());
  if (alpha > 0.0) {
    for (int i = 0; i < n; ++i) upper.push_back({i, i, alpha * inv_sqrt[i] * inv_sqrt[i]});
  }
  if (alpha < 1.0) {
    for (const auto& [i, j] : g.edges()) {
      upper.push_back({i, j, (1.0 - alpha) * inv_sqrt[i] * inv_sqrt[j]});
    }
  }
  return DiffOp::from_upper(n, upper);
}

}  // namespace ndcn
