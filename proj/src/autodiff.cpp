#include "ndcn/autodiff.hpp"

#include <cmath>
#include <string>

#include "ndcn/errors.hpp"

namespace ndcn {
namespace {

std::string shape(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void same_tape(const DiffMatrix& a, const DiffMatrix& b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw InvalidArgument("operands recorded on different tapes");
  }
}

void same_shape(const DiffMatrix& a, const DiffMatrix& b, const char* op) {
  same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " +
                          shape(b.value()));
  }
}

}  // namespace

Tape::Tape() {
#ifdef NDEBUG
  check_finite_ = false;
#else
  check_finite_ = true;
#endif
}

DiffMatrix Tape::parameter(Matrix value) {
  nodes_.push_back({std::move(value), {}, nullptr});
  requires_.push_back(1);
  return {this, static_cast<int>(nodes_.size()) - 1};
}

DiffMatrix Tape::constant(Matrix value) {
  nodes_.push_back({std::move(value), {}, nullptr});
  requires_.push_back(0);
  return {this, static_cast<int>(nodes_.size()) - 1};
}

DiffMatrix Tape::record(Matrix value, std::vector<int> parents, BackwardFn backward) {
  if (check_finite_ && !value.allFinite()) {
    throw NumericError("non-finite value produced at tape node " +
                       std::to_string(nodes_.size()));
  }
  char req = 0;
  for (int p : parents) req |= requires_[p];
  nodes_.push_back({std::move(value), std::move(parents), req ? std::move(backward) : nullptr});
  requires_.push_back(req);
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::clear() {
  nodes_.clear();
  requires_.clear();
}

Gradients Tape::backward(const DiffMatrix& loss) const {
  if (loss.tape() != this) throw InvalidArgument("loss is not on this tape");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw InvalidArgument("backward needs a 1x1 loss, got " + shape(loss.value()));
  }
  std::vector<Matrix> grads(nodes_.size());
  grads[loss.id()] = Matrix::Ones(1, 1);
  for (int id = loss.id(); id >= 0; --id) {
    const Node& node = nodes_[id];
    if (!requires_[id] || !node.backward || grads[id].size() == 0) continue;
    GradSink sink(grads, node.parents, requires_);
    node.backward(grads[id], sink);
  }
  // Only leaves that asked for gradients keep them.
  for (std::size_t id = 0; id < nodes_.size(); ++id) {
    if (!requires_[id]) grads[id].resize(0, 0);
  }
  return Gradients(std::move(grads));
}

Matrix Gradients::of(const DiffMatrix& x) const {
  const Matrix& v = x.value();
  if (x.id() < 0 || x.id() >= static_cast<int>(grads_.size()) || grads_[x.id()].size() == 0) {
    return Matrix::Zero(v.rows(), v.cols());
  }
  return grads_[x.id()];
}

namespace ad {

DiffMatrix matmul(const DiffMatrix& a, const DiffMatrix& b) {
  same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw InvalidArgument("matmul: " + shape(a.value()) + " * " + shape(b.value()));
  }
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t->record(a.value() * b.value(), {ia, ib}, [t, ia, ib](const Matrix& g, auto& sink) {
    if (sink.wants(0)) sink.add(0, g * t->value(ib).transpose());
    if (sink.wants(1)) sink.add(1, t->value(ia).transpose() * g);
  });
}

DiffMatrix sparse_apply(const DiffOp& op, const DiffMatrix& x) {
  const DiffOp* p = &op;
  return x.tape()->record(op.apply(x.value()), {x.id()},
                          [p](const Matrix& g, auto& sink) { sink.add(0, p->apply(g)); });
}

DiffMatrix add_row_bias(const DiffMatrix& x, const DiffMatrix& bias) {
  same_tape(x, bias);
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw InvalidArgument("add_row_bias: bias " + shape(bias.value()) + " for " +
                          shape(x.value()));
  }
  Matrix v = x.value();
  v.rowwise() += bias.value().row(0);
  return x.tape()->record(std::move(v), {x.id(), bias.id()}, [](const Matrix& g, auto& sink) {
    sink.add(0, g);
    if (sink.wants(1)) sink.add(1, g.colwise().sum());
  });
}

DiffMatrix add(const DiffMatrix& a, const DiffMatrix& b) {
  same_shape(a, b, "add");
  return a.tape()->record(a.value() + b.value(), {a.id(), b.id()},
                          [](const Matrix& g, auto& sink) {
                            sink.add(0, g);
                            sink.add(1, g);
                          });
}

DiffMatrix sub(const DiffMatrix& a, const DiffMatrix& b) {
  same_shape(a, b, "sub");
  return a.tape()->record(a.value() - b.value(), {a.id(), b.id()},
                          [](const Matrix& g, auto& sink) {
                            sink.add(0, g);
                            if (sink.wants(1)) sink.add(1, -g);
                          });
}

DiffMatrix mul(const DiffMatrix& a, const DiffMatrix& b) {
  same_shape(a, b, "mul");
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t->record(a.value().cwiseProduct(b.value()), {ia, ib},
                   [t, ia, ib](const Matrix& g, auto& sink) {
                     if (sink.wants(0)) sink.add(0, g.cwiseProduct(t->value(ib)));
                     if (sink.wants(1)) sink.add(1, g.cwiseProduct(t->value(ia)));
                   });
}

DiffMatrix scale(const DiffMatrix& x, double c) {
  return x.tape()->record(c * x.value(), {x.id()},
                          [c](const Matrix& g, auto& sink) { sink.add(0, c * g); });
}

DiffMatrix tanh(const DiffMatrix& x) {
  Tape* t = x.tape();
  Matrix y = x.value().array().tanh().matrix();
  const int self = static_cast<int>(t->size());
  return t->record(std::move(y), {x.id()}, [t, self](const Matrix& g, auto& sink) {
    const auto& y = t->value(self).array();
    sink.add(0, (g.array() * (1.0 - y * y)).matrix());
  });
}

DiffMatrix relu(const DiffMatrix& x) {
  Tape* t = x.tape();
  const int ix = x.id();
  return t->record(x.value().cwiseMax(0.0), {ix}, [t, ix](const Matrix& g, auto& sink) {
    sink.add(0, (t->value(ix).array() > 0.0).select(g.array(), 0.0).matrix());
  });
}

DiffMatrix sigmoid(const DiffMatrix& x) {
  Tape* t = x.tape();
  Matrix y = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  const int self = static_cast<int>(t->size());
  return t->record(std::move(y), {x.id()}, [t, self](const Matrix& g, auto& sink) {
    const auto& y = t->value(self).array();
    sink.add(0, (g.array() * y * (1.0 - y)).matrix());
  });
}

DiffMatrix sum(const DiffMatrix& x) {
  Tape* t = x.tape();
  const Eigen::Index r = x.rows(), c = x.cols();
  Matrix v(1, 1);
  v(0, 0) = x.value().sum();
  return t->record(std::move(v), {x.id()}, [r, c](const Matrix& g, auto& sink) {
    sink.add(0, Matrix::Constant(r, c, g(0, 0)));
  });
}

DiffMatrix squared_norm(const DiffMatrix& x) {
  Tape* t = x.tape();
  const int ix = x.id();
  Matrix v(1, 1);
  v(0, 0) = x.value().squaredNorm();
  return t->record(std::move(v), {ix}, [t, ix](const Matrix& g, auto& sink) {
    sink.add(0, (2.0 * g(0, 0)) * t->value(ix));
  });
}

DiffMatrix mean_abs_diff(const DiffMatrix& x, const Matrix& target) {
  if (x.rows() != target.rows() || x.cols() != target.cols()) {
    throw InvalidArgument("mean_abs_diff: shape mismatch " + shape(x.value()) + " vs " +
                          shape(target));
  }
  Tape* t = x.tape();
  Matrix diff = x.value() - target;
  const double count = static_cast<double>(diff.size());
  Matrix v(1, 1);
  v(0, 0) = diff.cwiseAbs().sum() / count;
  // Keep only the sign pattern for the backward pass.
  Matrix sign = diff.unaryExpr([](double d) { return d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0); });
  return t->record(std::move(v), {x.id()},
                   [sign = std::move(sign), count](const Matrix& g, auto& sink) {
                     sink.add(0, (g(0, 0) / count) * sign);
                   });
}

DiffMatrix log_softmax_rows(const DiffMatrix& x) {
  Tape* t = x.tape();
  const Matrix& v = x.value();
  Matrix y(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const double mx = v.row(i).maxCoeff();
    const double lse = mx + std::log((v.row(i).array() - mx).exp().sum());
    y.row(i) = v.row(i).array() - lse;
  }
  const int self = static_cast<int>(t->size());
  return t->record(std::move(y), {x.id()}, [t, self](const Matrix& g, auto& sink) {
    const Matrix soft = t->value(self).array().exp().matrix();
    Matrix dx = g;
    const Eigen::VectorXd rowsum = g.rowwise().sum();
    for (Eigen::Index i = 0; i < g.rows(); ++i) dx.row(i) -= rowsum(i) * soft.row(i);
    sink.add(0, dx);
  });
}

DiffMatrix lincomb(const DiffMatrix& base, std::span<const double> coeffs,
                   std::span<const DiffMatrix* const> terms) {
  if (coeffs.size() != terms.size()) throw InvalidArgument("lincomb: size mismatch");
  Matrix v = base.value();
  std::vector<int> parents{base.id()};
  std::vector<double> kept;
  for (std::size_t i = 0; i < coeffs.size(); ++i) {
    same_shape(base, *terms[i], "lincomb");
    if (coeffs[i] == 0.0) continue;
    v.noalias() += coeffs[i] * terms[i]->value();
    parents.push_back(terms[i]->id());
    kept.push_back(coeffs[i]);
  }
  return base.tape()->record(std::move(v), std::move(parents),
                             [kept = std::move(kept)](const Matrix& g, auto& sink) {
                               sink.add(0, g);
                               for (std::size_t i = 0; i < kept.size(); ++i) {
                                 if (sink.wants(i + 1)) sink.add(i + 1, kept[i] * g);
                               }
                             });
}

DiffMatrix cross_entropy_masked(const DiffMatrix& logits, const Matrix& labels,
                                const std::vector<bool>& mask) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols() ||
      static_cast<Eigen::Index>(mask.size()) != logits.rows()) {
    throw InvalidArgument("cross_entropy_masked: shape mismatch");
  }
  Matrix weights = Matrix::Zero(labels.rows(), labels.cols());
  double count = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    weights.row(i) = labels.row(i);
    count += 1.0;
  }
  if (count == 0.0) throw InvalidArgument("cross_entropy_masked: empty mask");
  Tape* t = logits.tape();
  const DiffMatrix logp = log_softmax_rows(logits);
  const DiffMatrix picked = mul(logp, t->constant(std::move(weights)));
  return scale(sum(picked), -1.0 / count);
}

}  // namespace ad
}  // namespace ndcn
