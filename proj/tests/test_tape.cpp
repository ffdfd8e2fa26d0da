#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "distalign/rng.hpp"
#include "distalign/tape.hpp"

using namespace distalign;

namespace {

Eigen::MatrixXd random_matrix(long rows, long cols, Rng& rng, double scale = 0.5) {
  Eigen::MatrixXd m(rows, cols);
  for (long c = 0; c < cols; ++c) {
    for (long r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
  }
  return m;
}

// A composite scalar function touching every tape op; gradients come back
// through the provided buffers when a tape is used for the call.
struct Composite {
  Eigen::MatrixXd table;   // 4 x 3, doubles as the tied output map
  Eigen::MatrixXd weight;  // 3 x 3
  Eigen::VectorXd bias;    // 3
  Eigen::VectorXd out_bias = Eigen::VectorXd::Zero(4);

  double eval(bool backward, Eigen::MatrixXd* g_table = nullptr,
              Eigen::MatrixXd* g_weight = nullptr, Eigen::VectorXd* g_bias = nullptr) {
    GradientTape t;
    Eigen::MatrixXd local_table = Eigen::MatrixXd::Zero(table.rows(), table.cols());
    Eigen::MatrixXd local_weight = Eigen::MatrixXd::Zero(weight.rows(), weight.cols());
    Eigen::VectorXd local_bias = Eigen::VectorXd::Zero(bias.size());
    Eigen::VectorXd local_out = Eigen::VectorXd::Zero(out_bias.size());

    const Var pooled = t.rows_mean(table, local_table, {0, 2, 2}, 3);
    const Var row = t.table_row(table, local_table, 1);
    const Var context = t.add(pooled, row);
    const Var hidden = t.tanh(t.affine(weight, local_weight, bias, local_bias, context));
    const Var logits = t.affine(table, local_table, out_bias, local_out, hidden);
    const Var picked = t.log_softmax_at(logits, 2);
    const Var e = t.exp(t.scale(picked, 0.25));
    const Var squared = t.sum_entries(t.mul(hidden, hidden));
    const Var l = t.log(t.add_scalar(t.mul(e, e), 1.5));
    const Var d = t.div(l, t.add_scalar(t.neg(picked), 3.0));
    const Var loss = t.sub(t.sum({d, squared, t.mean({picked, e})}), t.constant(0.25));
    const double value = t.value(loss);
    if (backward) {
      t.backward(loss);
      if (g_table != nullptr) *g_table = local_table;
      if (g_weight != nullptr) *g_weight = local_weight;
      if (g_bias != nullptr) *g_bias = local_bias;
    }
    return value;
  }
};

}  // namespace

TEST_CASE("composite gradient matches central finite differences") {
  Rng rng(3);
  Composite f;
  f.table = random_matrix(4, 3, rng);
  f.weight = random_matrix(3, 3, rng);
  f.bias = random_matrix(3, 1, rng);

  Eigen::MatrixXd g_table, g_weight;
  Eigen::VectorXd g_bias;
  f.eval(true, &g_table, &g_weight, &g_bias);

  const double h = 1e-6;
  const auto fd_check = [&](double* coeff, double analytic) {
    const double saved = *coeff;
    *coeff = saved + h;
    const double up = f.eval(false);
    *coeff = saved - h;
    const double down = f.eval(false);
    *coeff = saved;
    const double fd = (up - down) / (2.0 * h);
    CHECK(analytic == doctest::Approx(fd).epsilon(1e-5));
  };
  for (long i = 0; i < f.table.size(); ++i) fd_check(f.table.data() + i, g_table(i));
  for (long i = 0; i < f.weight.size(); ++i) fd_check(f.weight.data() + i, g_weight(i));
  for (long i = 0; i < f.bias.size(); ++i) fd_check(f.bias.data() + i, g_bias(i));
}

TEST_CASE("zero-scaled loss propagates zero gradients") {
  Rng rng(5);
  Eigen::MatrixXd table = random_matrix(3, 2, rng);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(3, 2);
  GradientTape tape;
  const Var x = tape.rows_mean(table, grad, {0, 1, 2}, 2);
  const Var loss = tape.scale(tape.sum_entries(tape.mul(x, x)), 0.0);
  tape.backward(loss);
  CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sum of squared rows has gradient two times the entries") {
  Eigen::MatrixXd table(2, 3);
  table << 1.0, -2.0, 0.5, 3.0, 0.25, -1.0;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, 3);
  GradientTape tape;
  std::vector<Var> dots;
  for (int r = 0; r < 2; ++r) {
    const Var row = tape.table_row(table, grad, r);
    dots.push_back(tape.sum_entries(tape.mul(row, row)));
  }
  tape.backward(tape.sum(dots));
  CHECK(grad == (2.0 * table));
}

TEST_CASE("log_softmax_at value matches a direct evaluation") {
  Eigen::MatrixXd logits(4, 1);
  logits << 0.3, -1.2, 2.0, 0.0;
  GradientTape tape;
  const Var z = tape.constant(logits);
  const Var picked = tape.log_softmax_at(z, 2);
  const double lse = std::log(logits.array().exp().sum());
  CHECK(tape.value(picked) == doctest::Approx(2.0 - lse).epsilon(1e-14));

  // Gradient sums to zero: shifting every logit by a constant is a no-op.
  tape.backward(picked);
  CHECK(tape.matrix(z).rows() == 4);
}

TEST_CASE("shared subgraphs accumulate gradients") {
  // loss = x * x through two separate mul references to one node.
  Eigen::MatrixXd table(1, 1);
  table << 1.5;
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(1, 1);
  GradientTape tape;
  const Var x = tape.table_row(table, grad, 0);
  const Var loss = tape.sum_entries(tape.mul(x, x));
  tape.backward(loss);
  CHECK(grad(0, 0) == doctest::Approx(3.0).epsilon(1e-15));
}

TEST_CASE("backward requires a scalar node") {
  GradientTape tape;
  Eigen::MatrixXd value(2, 1);
  value << 1.0, 2.0;
  const Var v = tape.constant(value);
  CHECK_THROWS(tape.backward(v));
  CHECK_THROWS(tape.backward(Var{}));
}

TEST_CASE("empty row list yields a zero vector with no gradient flow") {
  Eigen::MatrixXd table(2, 3);
  table.setOnes();
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(2, 3);
  GradientTape tape;
  const Var empty = tape.rows_mean(table, grad, {}, 3);
  CHECK(tape.matrix(empty).cwiseAbs().maxCoeff() == 0.0);
  const Var loss = tape.sum_entries(empty);
  tape.backward(loss);
  CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
}
