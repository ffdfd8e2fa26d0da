#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace distalign {

// Handle into a GradientTape node.
struct Var {
  int index = -1;
  bool valid() const { return index >= 0; }
};

// Reverse-mode tape over dense Eigen values. Nodes are created in forward
// order, so reverse creation order is a valid topological order for the
// backward sweep. Ops that read model parameters accumulate directly into
// caller-owned gradient matrices, which is what ties the output layer to the
// embedding table: both ops add into the same buffer.
class GradientTape {
 public:
  Var constant(double value);
  Var constant(const Eigen::MatrixXd& value);

  // Mean of the given rows of `table` (column vector result). An empty row
  // list yields a zero vector of `cols` entries and no gradient.
  Var rows_mean(const Eigen::MatrixXd& table, Eigen::MatrixXd& table_grad,
                std::vector<int> rows, int cols);

  // Single row of `table` as a column vector.
  Var table_row(const Eigen::MatrixXd& table, Eigen::MatrixXd& table_grad, int row);

  // weight * x + bias.
  Var affine(const Eigen::MatrixXd& weight, Eigen::MatrixXd& weight_grad,
             const Eigen::VectorXd& bias, Eigen::VectorXd& bias_grad, Var x);

  Var add(Var a, Var b);        // elementwise, same shape
  Var sub(Var a, Var b);        // elementwise
  Var mul(Var a, Var b);        // elementwise
  Var div(Var a, Var b);        // scalar / scalar
  Var tanh(Var x);              // elementwise
  Var exp(Var x);               // elementwise
  Var log(Var x);               // elementwise
  Var neg(Var x);
  Var scale(Var x, double factor);
  Var add_scalar(Var x, double offset);

  // log softmax(logits)[index]; fused so only the picked entry materialises.
  Var log_softmax_at(Var logits, int index);

  Var sum(const std::vector<Var>& xs);   // scalars
  Var mean(const std::vector<Var>& xs);  // scalars
  Var sum_entries(Var x);                // reduces any node to a scalar

  double value(Var v) const;                 // scalar nodes
  const Eigen::MatrixXd& matrix(Var v) const;

  // Seeds the scalar loss with gradient 1 and sweeps the tape in reverse.
  void backward(Var loss);

  void reset();
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::function<void(GradientTape&, const Eigen::MatrixXd&)> pull;
  };

  Var push(Eigen::MatrixXd value, std::function<void(GradientTape&, const Eigen::MatrixXd&)> pull);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.index)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.index)]; }

  std::vector<Node> nodes_;
};

}  // namespace distalign
