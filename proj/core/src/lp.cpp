#include "b2w/lp.hpp"

#include <cmath>
#include <vector>

namespace b2w::lp {
namespace {

constexpr double kEps = 1e-11;

// Tableau layout: rows 0..m-1 are constraints, row m is the objective row
// holding (z_j - c_j); the last column is the right-hand side.
class Tableau {
 public:
  Tableau(int rows, int cols) : t_(Eigen::MatrixXd::Zero(rows + 1, cols + 1)), basis_(rows, -1), m_(rows), n_(cols) {}

  double& at(int r, int c) { return t_(r, c); }
  double rhs(int r) const { return t_(r, n_); }
  double& rhs(int r) { return t_(r, n_); }
  std::vector<int>& basis() { return basis_; }

  void pivot(int row, int col) {
    const double p = t_(row, col);
    t_.row(row) /= p;
    for (int r = 0; r <= m_; ++r) {
      if (r == row) continue;
      const double f = t_(r, col);
      if (f != 0.0) t_.row(r) -= f * t_.row(row);
    }
    basis_[row] = col;
  }

  // Sets the objective row to z_j - c_j for the given cost vector and current basis.
  void load_objective(const Eigen::VectorXd& cost) {
    t_.row(m_).setZero();
    for (int j = 0; j < n_; ++j) t_(m_, j) = -cost(j);
    for (int r = 0; r < m_; ++r) {
      const double cb = cost(basis_[r]);
      if (cb != 0.0) t_.row(m_) += cb * t_.row(r);
    }
  }

  // Runs primal simplex over columns [0, active_cols). Returns false if unbounded.
  bool optimize(int active_cols) {
    for (int iter = 0; iter < 10000; ++iter) {
      int enter = -1;
      for (int j = 0; j < active_cols; ++j) {
        if (t_(m_, j) < -kEps) {
          enter = j;  // Bland: lowest index
          break;
        }
      }
      if (enter < 0) return true;
      int leave = -1;
      double best = 0.0;
      for (int r = 0; r < m_; ++r) {
        const double a = t_(r, enter);
        if (a > kEps) {
          const double ratio = t_(r, n_) / a;
          if (leave < 0 || ratio < best - kEps ||
              (std::abs(ratio - best) <= kEps && basis_[r] < basis_[leave])) {
            leave = r;
            best = ratio;
          }
        }
      }
      if (leave < 0) return false;
      pivot(leave, enter);
    }
    return true;
  }

  double objective_row(int col) const { return t_(m_, col); }
  double objective_value() const { return t_(m_, n_); }
  int rows() const { return m_; }

 private:
  Eigen::MatrixXd t_;
  std::vector<int> basis_;
  int m_;
  int n_;
};

}  // namespace

Result maximize(const Eigen::VectorXd& c, const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const int m = static_cast<int>(A.rows());
  const int n = static_cast<int>(A.cols());
  // Columns: x+ (n), x- (n), slacks (m), artificials (m).
  const int n_struct = 2 * n + m;
  const int n_cols = n_struct + m;
  Tableau tab(m, n_cols);

  std::vector<double> flip(m, 1.0);
  for (int i = 0; i < m; ++i) {
    flip[i] = b(i) < 0.0 ? -1.0 : 1.0;
    for (int j = 0; j < n; ++j) {
      tab.at(i, j) = flip[i] * A(i, j);
      tab.at(i, n + j) = -flip[i] * A(i, j);
    }
    tab.at(i, 2 * n + i) = flip[i];
    tab.at(i, n_struct + i) = 1.0;
    tab.rhs(i) = flip[i] * b(i);
    tab.basis()[i] = n_struct + i;
  }

  Result result;

  // Phase 1: maximize -sum(artificials).
  Eigen::VectorXd phase1 = Eigen::VectorXd::Zero(n_cols);
  phase1.tail(m).setConstant(-1.0);
  tab.load_objective(phase1);
  tab.optimize(n_cols);
  double bscale = 1.0;
  for (int i = 0; i < m; ++i) bscale = std::max(bscale, std::abs(b(i)));
  if (tab.objective_value() < -1e-9 * bscale) {
    result.status = Status::infeasible;
    return result;
  }
  // Drive remaining artificials out of the basis where possible.
  for (int r = 0; r < m; ++r) {
    if (tab.basis()[r] < n_struct) continue;
    for (int j = 0; j < n_struct; ++j) {
      if (std::abs(tab.at(r, j)) > 1e-9) {
        tab.pivot(r, j);
        break;
      }
    }
  }

  // Phase 2 over structural columns only.
  Eigen::VectorXd phase2 = Eigen::VectorXd::Zero(n_cols);
  phase2.head(n) = c;
  phase2.segment(n, n) = -c;
  tab.load_objective(phase2);
  if (!tab.optimize(n_struct)) {
    result.status = Status::unbounded;
    return result;
  }

  result.status = Status::optimal;
  result.value = tab.objective_value();
  result.x = Eigen::VectorXd::Zero(n);
  for (int r = 0; r < m; ++r) {
    const int col = tab.basis()[r];
    if (col < n) {
      result.x(col) += tab.rhs(r);
    } else if (col < 2 * n) {
      result.x(col - n) -= tab.rhs(r);
    }
  }
  // Slack i enters the flipped row with coefficient flip[i], so its
  // objective-row entry already equals the dual of the original A_i x <= b_i.
  result.dual = Eigen::VectorXd::Zero(m);
  for (int i = 0; i < m; ++i) result.dual(i) = tab.objective_row(2 * n + i);
  return result;
}

}  // namespace b2w::lp
