#pragma once

#include <Eigen/Dense>

namespace b2w::lp {

enum class Status { optimal, infeasible, unbounded };

struct Result {
  Status status = Status::infeasible;
  double value = 0.0;
  // Primal vertex (size n) and constraint duals (size m); valid when optimal.
  Eigen::VectorXd x;
  Eigen::VectorXd dual;
};

// maximize c.x subject to A x <= b, x free.
//
// Dense two-phase tableau simplex with Bland's rule. Intended for the tiny
// problems that arise from halfspace sets (a handful of variables, a few dozen
// rows). At an optimal vertex, dual(i) is the sensitivity of the optimum to
// b(i), and -dual(i) * x(j) its sensitivity to A(i, j).
Result maximize(const Eigen::VectorXd& c, const Eigen::MatrixXd& A, const Eigen::VectorXd& b);

}  // namespace b2w::lp
