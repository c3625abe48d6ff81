#include "njode/tape.hpp"

#include <algorithm>

#include "njode/errors.hpp"

namespace njode::nn {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw PreconditionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + ")");
}

}  // namespace

Var Tape::push(Matrix value, bool needs_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::parameter(const Parameter& p) {
  if (auto it = parameter_nodes_.find(&p); it != parameter_nodes_.end()) return Var{it->second};
  const Var v = push(p.value, true, nullptr);
  parameter_nodes_.emplace(&p, v.id);
  return v;
}

Matrix& Tape::grad(Var v) {
  Node& n = node(v.id);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::linear(Var x, Var weight, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(weight);
  const Matrix& bv = value(bias);
  if (xv.cols() != wv.rows() || bv.rows() != 1 || bv.cols() != wv.cols())
    throw PreconditionError("linear: input width " + std::to_string(xv.cols()) + " does not match weight " +
                            std::to_string(wv.rows()) + "x" + std::to_string(wv.cols()));
  Matrix out(xv.rows(), wv.cols());
  out.noalias() = xv * wv;
  out.rowwise() += bv.row(0);
  return push(std::move(out), wants(x) || wants(weight) || wants(bias), [x, weight, bias](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.wants(x)) t.accumulate(x.id, g * t.value(weight).transpose());
    if (t.wants(weight)) t.accumulate(weight.id, t.value(x).transpose() * g);
    if (t.wants(bias)) t.accumulate(bias.id, g.colwise().sum());
  });
}

Var Tape::tanh(Var x) {
  Matrix out = value(x).array().tanh().matrix();
  return push(std::move(out), wants(x), [x](Tape& t, int self) {
    const Matrix& y = t.value(Var{self});
    t.accumulate(x.id, (t.upstream(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var Tape::mul_const(Var x, Matrix factor) {
  require_same_shape(value(x), factor, "mul_const");
  Matrix out = value(x).cwiseProduct(factor);
  return push(std::move(out), wants(x), [x, f = std::move(factor)](Tape& t, int self) {
    t.accumulate(x.id, t.upstream(self).cwiseProduct(f));
  });
}

Var Tape::affine_const(Var x, Matrix scale, Matrix shift) {
  require_same_shape(value(x), scale, "affine_const");
  require_same_shape(value(x), shift, "affine_const");
  Matrix out = value(x).cwiseProduct(scale) + shift;
  return push(std::move(out), wants(x), [x, s = std::move(scale)](Tape& t, int self) {
    t.accumulate(x.id, t.upstream(self).cwiseProduct(s));
  });
}

Var Tape::add(Var a, Var b) {
  require_same_shape(value(a), value(b), "add");
  Matrix out = value(a) + value(b);
  return push(std::move(out), wants(a) || wants(b), [a, b](Tape& t, int self) {
    t.accumulate(a.id, t.upstream(self));
    t.accumulate(b.id, t.upstream(self));
  });
}

Var Tape::axpy(Var y, double alpha, Var x) {
  require_same_shape(value(y), value(x), "axpy");
  Matrix out = value(y) + alpha * value(x);
  return push(std::move(out), wants(y) || wants(x), [y, alpha, x](Tape& t, int self) {
    t.accumulate(y.id, t.upstream(self));
    t.accumulate(x.id, alpha * t.upstream(self));
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw PreconditionError("concat_cols: nothing to concatenate");
  const Eigen::Index rows = value(parts.front()).rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw PreconditionError("concat_cols: row count mismatch");
    cols += value(p).cols();
    needs = needs || wants(p);
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleCols(offset, value(p).cols()) = value(p);
    offset += value(p).cols();
  }
  return push(std::move(out), needs, [parts](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    Eigen::Index off = 0;
    for (Var p : parts) {
      const Eigen::Index c = t.value(p).cols();
      if (t.wants(p)) t.accumulate(p.id, g.middleCols(off, c));
      off += c;
    }
  });
}

Var Tape::slice_cols(Var x, int begin, int count) {
  if (begin < 0 || count < 0 || begin + count > value(x).cols()) throw PreconditionError("slice_cols: out of range");
  Matrix out = value(x).middleCols(begin, count);
  return push(std::move(out), wants(x), [x, begin, count](Tape& t, int self) {
    t.grad(x).middleCols(begin, count) += t.upstream(self);
  });
}

Var Tape::add_leading_cols(Var base, Var x) {
  if (value(base).rows() != value(x).rows()) throw PreconditionError("add_leading_cols: row count mismatch");
  const Eigen::Index n = std::min(value(base).cols(), value(x).cols());
  Matrix out = value(base);
  out.leftCols(n) += value(x).leftCols(n);
  return push(std::move(out), wants(base) || wants(x), [base, x, n](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(base.id, g);
    if (t.wants(x)) t.grad(x).leftCols(n) += g.leftCols(n);
  });
}

Var Tape::gather_rows(Var x, std::vector<int> rows) {
  const Matrix& xv = value(x);
  Matrix out(static_cast<Eigen::Index>(rows.size()), xv.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= xv.rows()) throw PreconditionError("gather_rows: row out of range");
    out.row(static_cast<Eigen::Index>(i)) = xv.row(rows[i]);
  }
  return push(std::move(out), wants(x), [x, rows = std::move(rows)](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    Matrix& gx = t.grad(x);
    for (std::size_t i = 0; i < rows.size(); ++i) gx.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::scatter_rows(Var base, std::vector<int> rows, Var src) {
  const Matrix& bv = value(base);
  const Matrix& sv = value(src);
  if (sv.rows() != static_cast<Eigen::Index>(rows.size()) || sv.cols() != bv.cols())
    throw PreconditionError("scatter_rows: source shape mismatch");
  Matrix out = bv;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= bv.rows()) throw PreconditionError("scatter_rows: row out of range");
    out.row(rows[i]) = sv.row(static_cast<Eigen::Index>(i));
  }
  return push(std::move(out), wants(base) || wants(src), [base, src, rows = std::move(rows)](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.wants(base)) {
      Matrix passed = g;
      for (int r : rows) passed.row(r).setZero();
      t.accumulate(base.id, passed);
    }
    if (t.wants(src)) {
      Matrix& gs = t.grad(src);
      for (std::size_t i = 0; i < rows.size(); ++i) gs.row(static_cast<Eigen::Index>(i)) += g.row(rows[i]);
    }
  });
}

void Tape::backward() {
  if (consumed_) throw PreconditionError("tape reuse after consumption: backward() already ran");
  consumed_ = true;
  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = node(id);
    if (n.backward && n.grad.size() > 0) n.backward(*this, id);
  }
}

const Matrix* Tape::parameter_grad(const Parameter& p) const {
  const auto it = parameter_nodes_.find(&p);
  if (it == parameter_nodes_.end()) return nullptr;
  const Node& n = nodes_[static_cast<std::size_t>(it->second)];
  return n.grad.size() > 0 ? &n.grad : nullptr;
}

}  // namespace njode::nn
