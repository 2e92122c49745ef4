#pragma once

// Dense two-phase simplex for the small linear programs behind cone
// membership, separation and adjoint-lift feasibility (n <= 10 unknowns,
// up to a few thousand constraints).

#include <algorithm>
#include <cmath>
#include <vector>

#include "pmp/core.hpp"

namespace pmp::lp {

/// minimize cost·x  s.t.  eq·x = eq_rhs,  ub·x <= ub_rhs,  lower <= x <= upper.
/// Empty eq/ub matrices mean "no such rows"; empty bounds mean x >= 0.
struct LinearProgram {
  Vector cost;
  Matrix eq;
  Vector eq_rhs;
  Matrix ub;
  Vector ub_rhs;
  Vector lower;
  Vector upper;
};

enum class Status { optimal, infeasible, unbounded, iteration_limit };

struct Solution {
  Status status = Status::infeasible;
  Vector x;
  double objective = kInf;
  /// Phase-one optimum: the L1 norm of the smallest constraint violation
  /// (after row normalisation); zero for feasible programs.
  double infeasibility = kInf;
};

struct Options {
  double feasibility_tol = 1e-9;
  double pivot_tol = 1e-11;
  int max_iterations = 0;  // 0: 50 * (rows + columns)
};

namespace detail {

class Tableau {
 public:
  Tableau(Matrix a, Vector b) : rows_(a.rows()), cols_(a.cols()), t_(a.rows() + 1, a.cols() + 1) {
    t_.setZero();
    t_.topLeftCorner(rows_, cols_) = a;
    t_.block(0, cols_, rows_, 1) = b;
    basis_.assign(static_cast<std::size_t>(rows_), -1);
  }

  Eigen::Index rows() const { return rows_; }
  Eigen::Index cols() const { return cols_; }
  double& at(Eigen::Index i, Eigen::Index j) { return t_(i, j); }
  double at(Eigen::Index i, Eigen::Index j) const { return t_(i, j); }
  double rhs(Eigen::Index i) const { return t_(i, cols_); }
  std::vector<Eigen::Index>& basis() { return basis_; }
  const std::vector<Eigen::Index>& basis() const { return basis_; }

  // Objective row holds reduced costs; its rhs holds -z.
  void set_objective(const Vector& c) {
    t_.row(rows_).setZero();
    t_.block(rows_, 0, 1, cols_) = c.transpose();
    for (Eigen::Index i = 0; i < rows_; ++i) {
      const Eigen::Index bj = basis_[static_cast<std::size_t>(i)];
      const double cb = t_(rows_, bj);
      if (cb != 0.0) t_.row(rows_) -= cb * t_.row(i);
    }
  }

  double objective_value() const { return -t_(rows_, cols_); }

  void pivot(Eigen::Index r, Eigen::Index c) {
    t_.row(r) /= t_(r, c);
    for (Eigen::Index i = 0; i <= rows_; ++i) {
      if (i == r) continue;
      const double f = t_(i, c);
      if (f != 0.0) t_.row(i) -= f * t_.row(r);
    }
    basis_[static_cast<std::size_t>(r)] = c;
  }

  // Returns optimal / unbounded / iteration_limit.
  Status run(const std::vector<char>& allowed, const Options& opt, int max_iter) {
    int degenerate = 0;
    for (int it = 0; it < max_iter; ++it) {
      const bool bland = degenerate > 50;
      Eigen::Index enter = -1;
      double best = -opt.pivot_tol * 10.0;
      for (Eigen::Index j = 0; j < cols_; ++j) {
        if (!allowed[static_cast<std::size_t>(j)]) continue;
        const double d = t_(rows_, j);
        if (d < best) {
          enter = j;
          if (bland) break;
          best = d;
        }
      }
      if (enter < 0) return Status::optimal;

      Eigen::Index leave = -1;
      double ratio = kInf;
      for (Eigen::Index i = 0; i < rows_; ++i) {
        const double a = t_(i, enter);
        if (a <= opt.pivot_tol) continue;
        const double q = std::max(0.0, t_(i, cols_)) / a;
        if (q < ratio - 1e-14 ||
            (q <= ratio + 1e-14 && leave >= 0 &&
             basis_[static_cast<std::size_t>(i)] < basis_[static_cast<std::size_t>(leave)])) {
          ratio = q;
          leave = i;
        }
      }
      if (leave < 0) return Status::unbounded;
      degenerate = ratio <= 1e-14 ? degenerate + 1 : 0;
      pivot(leave, enter);
    }
    return Status::iteration_limit;
  }

 private:
  Eigen::Index rows_;
  Eigen::Index cols_;
  Matrix t_;
  std::vector<Eigen::Index> basis_;
};

}  // namespace detail

inline Solution solve(const LinearProgram& prog, const Options& opt = {}) {
  const Eigen::Index n = prog.cost.size();
  const Eigen::Index n_eq = prog.eq.rows();
  const Eigen::Index n_ub = prog.ub.rows();
  if (n_eq > 0) {
    require_dim(prog.eq.cols(), n, "lp equality matrix");
    require_dim(prog.eq_rhs.size(), n_eq, "lp equality rhs");
  }
  if (n_ub > 0) {
    require_dim(prog.ub.cols(), n, "lp inequality matrix");
    require_dim(prog.ub_rhs.size(), n_ub, "lp inequality rhs");
  }
  const Vector lower = prog.lower.size() == 0 ? Vector::Zero(n) : prog.lower;
  const Vector upper = prog.upper.size() == 0 ? Vector::Constant(n, kInf) : prog.upper;
  require_dim(lower.size(), n, "lp lower bounds");
  require_dim(upper.size(), n, "lp upper bounds");

  // x = offset + map * y with y >= 0.
  std::vector<std::pair<Eigen::Index, double>> bound_rows;  // (y column, capacity)
  Eigen::Index ny = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cols_of(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(lower(j)) || std::isfinite(upper(j))) {
      if (lower(j) > upper(j)) {
        Solution s;
        s.status = Status::infeasible;
        s.infeasibility = lower(j) - upper(j);
        return s;
      }
      cols_of[static_cast<std::size_t>(j)] = {ny, -1};
      if (std::isfinite(lower(j)) && std::isfinite(upper(j))) bound_rows.emplace_back(ny, upper(j) - lower(j));
      ++ny;
    } else {
      cols_of[static_cast<std::size_t>(j)] = {ny, ny + 1};
      ny += 2;
    }
  }
  Matrix map = Matrix::Zero(n, ny);
  Vector offset = Vector::Zero(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto [p, q] = cols_of[static_cast<std::size_t>(j)];
    if (q >= 0) {
      map(j, p) = 1.0;
      map(j, q) = -1.0;
    } else if (std::isfinite(lower(j))) {
      map(j, p) = 1.0;
      offset(j) = lower(j);
    } else {
      map(j, p) = -1.0;
      offset(j) = upper(j);
    }
  }

  const Eigen::Index n_bound = static_cast<Eigen::Index>(bound_rows.size());
  const Eigen::Index n_slack = n_ub + n_bound;
  const Eigen::Index rows = n_eq + n_ub + n_bound;
  const Eigen::Index core_cols = ny + n_slack;

  Matrix a = Matrix::Zero(rows, core_cols);
  Vector b(rows);
  if (n_eq > 0) {
    a.topLeftCorner(n_eq, ny) = prog.eq * map;
    b.head(n_eq) = prog.eq_rhs - prog.eq * offset;
  }
  if (n_ub > 0) {
    a.block(n_eq, 0, n_ub, ny) = prog.ub * map;
    b.segment(n_eq, n_ub) = prog.ub_rhs - prog.ub * offset;
    for (Eigen::Index i = 0; i < n_ub; ++i) a(n_eq + i, ny + i) = 1.0;
  }
  for (Eigen::Index k = 0; k < n_bound; ++k) {
    const Eigen::Index r = n_eq + n_ub + k;
    a(r, bound_rows[static_cast<std::size_t>(k)].first) = 1.0;
    a(r, ny + n_ub + k) = 1.0;
    b(r) = bound_rows[static_cast<std::size_t>(k)].second;
  }
  // Row scaling keeps the tolerances meaningful across wildly scaled rows.
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double s = a.row(i).cwiseAbs().maxCoeff();
    if (s > 0.0 && s != 1.0) {
      a.row(i) /= s;
      b(i) /= s;
    }
    if (b(i) < 0.0) {
      a.row(i) *= -1.0;
      b(i) *= -1.0;
    }
  }

  // Initial basis: a slack with +1 coefficient when available, else an artificial.
  std::vector<Eigen::Index> start(static_cast<std::size_t>(rows), -1);
  Eigen::Index n_art = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (i >= n_eq) {
      const Eigen::Index sc = ny + (i - n_eq);
      if (a(i, sc) > 0.0) {
        start[static_cast<std::size_t>(i)] = sc;
        continue;
      }
    }
    ++n_art;
  }
  const Eigen::Index total_cols = core_cols + n_art;
  Matrix full = Matrix::Zero(rows, total_cols);
  full.leftCols(core_cols) = a;
  {
    Eigen::Index k = 0;
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (start[static_cast<std::size_t>(i)] < 0) {
        full(i, core_cols + k) = 1.0;
        start[static_cast<std::size_t>(i)] = core_cols + k;
        ++k;
      } else {
        // Slack columns have a single nonzero; normalise it to exactly one.
        const Eigen::Index sc = start[static_cast<std::size_t>(i)];
        const double s = full(i, sc);
        full.row(i) /= s;
        b(i) /= s;
      }
    }
  }

  detail::Tableau tab(full, b);
  tab.basis() = start;
  const int max_iter = opt.max_iterations > 0 ? opt.max_iterations
                                              : static_cast<int>(50 * (rows + total_cols) + 100);

  Solution sol;
  std::vector<char> allowed(static_cast<std::size_t>(total_cols), 1);

  if (n_art > 0) {
    Vector c1 = Vector::Zero(total_cols);
    c1.tail(n_art).setOnes();
    tab.set_objective(c1);
    const Status st = tab.run(allowed, opt, max_iter);
    if (st == Status::iteration_limit) {
      sol.status = st;
      return sol;
    }
    sol.infeasibility = std::max(0.0, tab.objective_value());
    if (sol.infeasibility > opt.feasibility_tol * (1.0 + b.cwiseAbs().maxCoeff())) {
      sol.status = Status::infeasible;
      return sol;
    }
    // Drive remaining artificials out of the basis where possible.
    for (Eigen::Index i = 0; i < rows; ++i) {
      if (tab.basis()[static_cast<std::size_t>(i)] < core_cols) continue;
      for (Eigen::Index j = 0; j < core_cols; ++j) {
        if (std::abs(tab.at(i, j)) > 1e-9) {
          tab.pivot(i, j);
          break;
        }
      }
    }
    for (Eigen::Index j = core_cols; j < total_cols; ++j) allowed[static_cast<std::size_t>(j)] = 0;
  } else {
    sol.infeasibility = 0.0;
  }

  Vector c2 = Vector::Zero(total_cols);
  c2.head(ny) = map.transpose() * prog.cost;
  tab.set_objective(c2);
  const Status st = tab.run(allowed, opt, max_iter);
  sol.status = st;
  if (st != Status::optimal) return sol;

  Vector y = Vector::Zero(ny);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::Index bj = tab.basis()[static_cast<std::size_t>(i)];
    if (bj < ny) y(bj) = std::max(0.0, tab.rhs(i));
  }
  sol.x = offset + map * y;
  sol.objective = prog.cost.dot(sol.x);
  return sol;
}

}  // namespace pmp::lp
