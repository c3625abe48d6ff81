#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace njode::nn {

// Rows are batch samples, columns are features.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Parameter {
  std::string name;
  Matrix value;
};

// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so the node vector is already topologically sorted. Seed output
// gradients with grad(), then call backward() exactly once.
class Tape {
 public:
  Tape() = default;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Data that never receives a gradient.
  Var constant(Matrix value);
  // A leaf whose gradient is wanted (e.g. a network input under test).
  Var input(Matrix value);
  // Leaf bound to a parameter; repeated calls return the same node so
  // gradients from every use accumulate in one place.
  Var parameter(const Parameter& p);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  // Gradient buffer of v, zero-filled on first access.
  Matrix& grad(Var v);
  bool has_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad.size() > 0; }
  std::size_t size() const { return nodes_.size(); }

  // x * W + b, with b a 1 x out row.
  Var linear(Var x, Var weight, Var bias);
  Var tanh(Var x);
  // Elementwise product with a constant matrix of the same shape.
  Var mul_const(Var x, Matrix factor);
  // scale .* x + shift, both constant.
  Var affine_const(Var x, Matrix scale, Matrix shift);
  Var add(Var a, Var b);
  // y + alpha * x
  Var axpy(Var y, double alpha, Var x);
  Var concat_cols(const std::vector<Var>& parts);
  Var slice_cols(Var x, int begin, int count);
  // base with x added onto its first min(cols) columns.
  Var add_leading_cols(Var base, Var x);
  Var gather_rows(Var x, std::vector<int> rows);
  // Copy of base with rows[i] replaced by src.row(i).
  Var scatter_rows(Var base, std::vector<int> rows, Var src);

  void backward();
  bool consumed() const { return consumed_; }

  // Accumulated gradient of a parameter, or nullptr if it was never used.
  const Matrix* parameter_grad(const Parameter& p) const;

 private:
  using Backward = std::function<void(Tape&, int self)>;
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad, Backward backward);
  bool wants(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  bool wants(Var v) const { return wants(v.id); }
  const Matrix& upstream(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  template <typename Expr>
  void accumulate(int id, const Expr& expr) {
    Node& n = node(id);
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = expr;
    else
      n.grad += expr;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> parameter_nodes_;
  bool consumed_ = false;
};

}  // namespace njode::nn
