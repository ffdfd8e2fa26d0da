#include "distalign/tape.hpp"

#include <cassert>
#include <stdexcept>

namespace distalign {

Var GradientTape::push(Eigen::MatrixXd value,
                       std::function<void(GradientTape&, const Eigen::MatrixXd&)> pull) {
  Node n;
  n.grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
  n.value = std::move(value);
  n.pull = std::move(pull);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var GradientTape::constant(double value) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = value;
  return push(std::move(m), nullptr);
}

Var GradientTape::constant(const Eigen::MatrixXd& value) { return push(value, nullptr); }

Var GradientTape::rows_mean(const Eigen::MatrixXd& table, Eigen::MatrixXd& table_grad,
                            std::vector<int> rows, int cols) {
  Eigen::MatrixXd value = Eigen::MatrixXd::Zero(cols, 1);
  for (const int r : rows) value += table.row(r).transpose();
  if (!rows.empty()) value /= static_cast<double>(rows.size());
  if (rows.empty()) return push(std::move(value), nullptr);
  return push(std::move(value),
              [&table_grad, rows = std::move(rows)](GradientTape&, const Eigen::MatrixXd& g) {
                const double inv = 1.0 / static_cast<double>(rows.size());
                for (const int r : rows) table_grad.row(r) += inv * g.transpose();
              });
}

Var GradientTape::table_row(const Eigen::MatrixXd& table, Eigen::MatrixXd& table_grad, int row) {
  return push(table.row(row).transpose(),
              [&table_grad, row](GradientTape&, const Eigen::MatrixXd& g) {
                table_grad.row(row) += g.transpose();
              });
}

Var GradientTape::affine(const Eigen::MatrixXd& weight, Eigen::MatrixXd& weight_grad,
                         const Eigen::VectorXd& bias, Eigen::VectorXd& bias_grad, Var x) {
  const Eigen::MatrixXd& xv = node(x).value;
  Eigen::MatrixXd value = weight * xv + bias;
  return push(std::move(value),
              [&weight, &weight_grad, &bias_grad, x](GradientTape& t, const Eigen::MatrixXd& g) {
                weight_grad += g * t.node(x).value.transpose();
                bias_grad += g;
                t.node(x).grad += weight.transpose() * g;
              });
}

Var GradientTape::add(Var a, Var b) {
  return push(node(a).value + node(b).value,
              [a, b](GradientTape& t, const Eigen::MatrixXd& g) {
                t.node(a).grad += g;
                t.node(b).grad += g;
              });
}

Var GradientTape::sub(Var a, Var b) {
  return push(node(a).value - node(b).value,
              [a, b](GradientTape& t, const Eigen::MatrixXd& g) {
                t.node(a).grad += g;
                t.node(b).grad -= g;
              });
}

Var GradientTape::mul(Var a, Var b) {
  return push(node(a).value.cwiseProduct(node(b).value),
              [a, b](GradientTape& t, const Eigen::MatrixXd& g) {
                t.node(a).grad += g.cwiseProduct(t.node(b).value);
                t.node(b).grad += g.cwiseProduct(t.node(a).value);
              });
}

Var GradientTape::div(Var a, Var b) {
  assert(node(a).value.size() == 1 && node(b).value.size() == 1);
  const double av = node(a).value(0, 0);
  const double bv = node(b).value(0, 0);
  Eigen::MatrixXd value(1, 1);
  value(0, 0) = av / bv;
  return push(std::move(value),
              [a, b](GradientTape& t, const Eigen::MatrixXd& g) {
                const double av = t.node(a).value(0, 0);
                const double bv = t.node(b).value(0, 0);
                t.node(a).grad(0, 0) += g(0, 0) / bv;
                t.node(b).grad(0, 0) -= g(0, 0) * av / (bv * bv);
              });
}

Var GradientTape::tanh(Var x) {
  Eigen::MatrixXd value = node(x).value.array().tanh().matrix();
  return push(value, [x, value](GradientTape& t, const Eigen::MatrixXd& g) {
    t.node(x).grad += (g.array() * (1.0 - value.array().square())).matrix();
  });
}

Var GradientTape::exp(Var x) {
  Eigen::MatrixXd value = node(x).value.array().exp().matrix();
  return push(value, [x, value](GradientTape& t, const Eigen::MatrixXd& g) {
    t.node(x).grad += g.cwiseProduct(value);
  });
}

Var GradientTape::log(Var x) {
  return push(node(x).value.array().log().matrix(),
              [x](GradientTape& t, const Eigen::MatrixXd& g) {
                t.node(x).grad += g.cwiseQuotient(t.node(x).value);
              });
}

Var GradientTape::neg(Var x) {
  return push(-node(x).value,
              [x](GradientTape& t, const Eigen::MatrixXd& g) { t.node(x).grad -= g; });
}

Var GradientTape::scale(Var x, double factor) {
  return push(node(x).value * factor,
              [x, factor](GradientTape& t, const Eigen::MatrixXd& g) {
                t.node(x).grad += factor * g;
              });
}

Var GradientTape::add_scalar(Var x, double offset) {
  return push((node(x).value.array() + offset).matrix(),
              [x](GradientTape& t, const Eigen::MatrixXd& g) { t.node(x).grad += g; });
}

Var GradientTape::log_softmax_at(Var logits, int index) {
  const Eigen::MatrixXd& z = node(logits).value;
  const double zmax = z.maxCoeff();
  const double lse = zmax + std::log((z.array() - zmax).exp().sum());
  Eigen::MatrixXd value(1, 1);
  value(0, 0) = z(index, 0) - lse;
  return push(std::move(value),
              [logits, index, lse](GradientTape& t, const Eigen::MatrixXd& g) {
                const Eigen::MatrixXd& z = t.node(logits).value;
                const Eigen::MatrixXd probs = (z.array() - lse).exp().matrix();
                t.node(logits).grad -= g(0, 0) * probs;
                t.node(logits).grad(index, 0) += g(0, 0);
              });
}

Var GradientTape::sum(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("sum over empty variable list");
  double total = 0.0;
  for (const Var v : xs) total += value(v);
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = total;
  return push(std::move(m), [xs](GradientTape& t, const Eigen::MatrixXd& g) {
    for (const Var v : xs) t.node(v).grad(0, 0) += g(0, 0);
  });
}

Var GradientTape::mean(const std::vector<Var>& xs) {
  if (xs.empty()) throw std::invalid_argument("mean over empty variable list");
  double total = 0.0;
  for (const Var v : xs) total += value(v);
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = total / static_cast<double>(xs.size());
  const double inv = 1.0 / static_cast<double>(xs.size());
  return push(std::move(m), [xs, inv](GradientTape& t, const Eigen::MatrixXd& g) {
    for (const Var v : xs) t.node(v).grad(0, 0) += inv * g(0, 0);
  });
}

Var GradientTape::sum_entries(Var x) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = node(x).value.sum();
  return push(std::move(m), [x](GradientTape& t, const Eigen::MatrixXd& g) {
    t.node(x).grad.array() += g(0, 0);
  });
}

double GradientTape::value(Var v) const {
  const Eigen::MatrixXd& m = node(v).value;
  assert(m.size() == 1);
  return m(0, 0);
}

const Eigen::MatrixXd& GradientTape::matrix(Var v) const { return node(v).value; }

void GradientTape::backward(Var loss) {
  if (!loss.valid() || node(loss).value.size() != 1) {
    throw std::invalid_argument("backward expects a valid scalar loss node");
  }
  node(loss).grad(0, 0) = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.pull && n.grad.cwiseAbs().maxCoeff() != 0.0) n.pull(*this, n.grad);
  }
}

void GradientTape::reset() { nodes_.clear(); }

}  // namespace distalign
