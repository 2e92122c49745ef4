#pragma once

// Control systems x' = f(x, u) with running cost F(x, u), piecewise-constant
// control signals, trajectory simulation and the cost-augmented system.

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pmp/core.hpp"
#include "pmp/flows.hpp"

namespace pmp {

struct ControlSet {
  enum class Kind { box, finite, ball };

  Kind kind = Kind::box;
  Vector lo, hi;               // box (entries may be infinite)
  std::vector<Vector> points;  // finite
  Vector center;               // ball
  double radius = 0.0;

  static ControlSet box(Vector lo, Vector hi) {
    require_dim(hi.size(), lo.size(), "control box bounds");
    if (lo.size() < 1) throw InputError("control box must have dimension >= 1");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo(i) <= hi(i))) throw InputError("control box requires lo <= hi componentwise");
    ControlSet s;
    s.kind = Kind::box;
    s.lo = std::move(lo);
    s.hi = std::move(hi);
    return s;
  }
  static ControlSet interval(double lo, double hi) { return box(Vector::Constant(1, lo), Vector::Constant(1, hi)); }
  static ControlSet unbounded(Eigen::Index k) { return box(Vector::Constant(k, -kInf), Vector::Constant(k, kInf)); }
  static ControlSet finite(std::vector<Vector> pts) {
    if (pts.empty()) throw InputError("finite control set must be nonempty");
    for (const auto& p : pts) require_dim(p.size(), pts.front().size(), "finite control set point");
    ControlSet s;
    s.kind = Kind::finite;
    s.points = std::move(pts);
    return s;
  }
  static ControlSet ball(Vector c, double r) {
    if (!(r >= 0.0)) throw InputError("control ball radius must be nonnegative");
    ControlSet s;
    s.kind = Kind::ball;
    s.center = std::move(c);
    s.radius = r;
    return s;
  }

  Eigen::Index dim() const {
    switch (kind) {
      case Kind::box: return lo.size();
      case Kind::finite: return points.front().size();
      case Kind::ball: return center.size();
    }
    return 0;
  }

  bool bounded() const { return kind != Kind::box || (lo.allFinite() && hi.allFinite()); }

  bool contains(const Vector& u, double tol = 1e-12) const {
    if (u.size() != dim()) return false;
    switch (kind) {
      case Kind::box:
        return ((u - lo).array() >= -tol).all() && ((hi - u).array() >= -tol).all();
      case Kind::finite:
        return std::any_of(points.begin(), points.end(),
                           [&](const Vector& p) { return (p - u).lpNorm<Eigen::Infinity>() <= tol; });
      case Kind::ball:
        return (u - center).norm() <= radius + tol;
    }
    return false;
  }
};

/// Piecewise-constant u : [a, b] -> U, right-continuous at switches. Outside
/// [a, b] the first/last value is held.
struct ControlSignal {
  double a = 0.0;
  double b = 1.0;
  std::vector<double> switch_times;
  std::vector<Vector> values;
  /// Intervals occupied by needle variations applied so far.
  std::vector<std::pair<double, double>> needle_intervals;

  static ControlSignal constant(double a, double b, Vector u) {
    return piecewise(a, b, {}, {std::move(u)});
  }

  static ControlSignal piecewise(double a, double b, std::vector<double> switches, std::vector<Vector> vals) {
    ControlSignal s;
    s.a = a;
    s.b = b;
    s.switch_times = std::move(switches);
    s.values = std::move(vals);
    s.check_shape();
    return s;
  }

  void check_shape() const {
    if (!(b > a)) throw InputError("control signal requires b > a");
    if (values.size() != switch_times.size() + 1)
      throw InputError("control signal needs exactly one more value than switch times");
    for (std::size_t i = 0; i < switch_times.size(); ++i) {
      if (!(switch_times[i] > a && switch_times[i] < b)) throw InputError("control switch time outside (a, b)");
      if (i > 0 && !(switch_times[i] > switch_times[i - 1])) throw InputError("control switch times must increase");
    }
    for (const auto& v : values) {
      require_dim(v.size(), values.front().size(), "control value");
      if (!v.allFinite()) throw InputError("control value has non-finite entries");
    }
  }

  void validate(const ControlSet& set) const {
    check_shape();
    for (const auto& v : values)
      if (!set.contains(v, 1e-9)) throw InputError("control value outside the control set");
  }

  Eigen::Index dim() const { return values.front().size(); }

  std::size_t piece_index(double t) const {
    return static_cast<std::size_t>(std::upper_bound(switch_times.begin(), switch_times.end(), t) -
                                    switch_times.begin());
  }

  const Vector& at(double t) const { return values[piece_index(t)]; }

  bool is_switch(double t, double tol = 1e-12) const {
    return std::any_of(switch_times.begin(), switch_times.end(),
                       [&](double s) { return std::abs(s - t) <= tol * std::max(1.0, std::abs(s)); });
  }

  /// Overwrites u on [from, to] with `value`, inserting switches as needed.
  ControlSignal with_value_on(double from, double to, const Vector& value) const {
    if (!(from < to)) return *this;
    std::vector<double> sw;
    std::vector<Vector> vals;
    const double eps = 1e-13 * std::max(1.0, std::abs(b));
    auto push = [&](double t, const Vector& v) {
      if (!vals.empty() && (vals.back() - v).lpNorm<Eigen::Infinity>() == 0.0) return;
      if (!vals.empty()) sw.push_back(t);
      vals.push_back(v);
    };
    push(a, values.front());
    for (std::size_t i = 0; i < switch_times.size(); ++i) {
      const double t = switch_times[i];
      if (t < from - eps) push(t, values[i + 1]);
    }
    if (from > a + eps) {
      push(from, value);
    } else {
      vals.clear();
      sw.clear();
      vals.push_back(value);
    }
    if (to < b - eps) {
      push(to, at(to));
      for (std::size_t i = 0; i < switch_times.size(); ++i) {
        const double t = switch_times[i];
        if (t > to + eps) push(t, values[i + 1]);
      }
    }
    ControlSignal out = *this;
    out.switch_times = std::move(sw);
    out.values = std::move(vals);
    return out;
  }
};

struct ControlSystem {
  using Dynamics = std::function<Vector(const Vector&, const Vector&)>;
  using Cost = std::function<double(const Vector&, const Vector&)>;
  using DynamicsJacobian = std::function<Matrix(const Vector&, const Vector&)>;
  using CostGradient = std::function<Vector(const Vector&, const Vector&)>;

  std::string name;
  Eigen::Index m = 0;
  Eigen::Index k = 0;
  Dynamics f;
  Cost F;
  DynamicsJacobian df_dx;  // optional
  CostGradient dF_dx;      // optional
  ControlSet control_set;
  bool extended = false;

  Vector dynamics(const Vector& x, const Vector& u) const { return f(x, u); }
  double cost_rate(const Vector& x, const Vector& u) const { return F ? F(x, u) : 0.0; }

  Matrix jac_x(const Vector& x, const Vector& u) const {
    if (df_dx) return df_dx(x, u);
    const double h = 1e-6 * (1.0 + x.norm());
    Matrix j(m, m);
    Vector xp = x, xm = x;
    for (Eigen::Index i = 0; i < m; ++i) {
      xp(i) = x(i) + h;
      xm(i) = x(i) - h;
      j.col(i) = (f(xp, u) - f(xm, u)) / (2.0 * h);
      xp(i) = x(i);
      xm(i) = x(i);
    }
    return j;
  }

  Vector cost_grad(const Vector& x, const Vector& u) const {
    if (dF_dx) return dF_dx(x, u);
    if (!F) return Vector::Zero(m);
    const double h = 1e-6 * (1.0 + x.norm());
    Vector g(m);
    Vector xp = x, xm = x;
    for (Eigen::Index i = 0; i < m; ++i) {
      xp(i) = x(i) + h;
      xm(i) = x(i) - h;
      g(i) = (F(xp, u) - F(xm, u)) / (2.0 * h);
      xp(i) = x(i);
      xm(i) = x(i);
    }
    return g;
  }

  /// The time-dependent field X^{u}(t, x) = f(x, u(t)).
  TimeVectorField field(const ControlSignal& u) const {
    TimeVectorField X;
    X.dim = m;
    const ControlSystem sys = *this;
    X.eval = [sys, u](double t, const Vector& x) { return sys.dynamics(x, u.at(t)); };
    X.jacobian = [sys, u](double t, const Vector& x) { return sys.jac_x(x, u.at(t)); };
    X.breakpoints = u.switch_times;
    return X;
  }

  void check() const {
    if (m < 1 || k < 1) throw InputError("control system dimensions must be positive");
    if (!f) throw InputError("control system has no dynamics");
    require_dim(control_set.dim(), k, "control set");
  }
};

/// The (m+1)-dimensional system x^ = (x0, x) with x0' = F(x, u).
inline ControlSystem extend(const ControlSystem& sys) {
  if (sys.extended) throw InputError("extend: system is already cost-extended");
  sys.check();
  ControlSystem e;
  e.name = sys.name + "+cost";
  e.m = sys.m + 1;
  e.k = sys.k;
  e.control_set = sys.control_set;
  e.extended = true;
  const Eigen::Index m = sys.m;
  e.f = [sys, m](const Vector& xh, const Vector& u) {
    const Vector x = xh.tail(m);
    Vector out(m + 1);
    out(0) = sys.cost_rate(x, u);
    out.tail(m) = sys.dynamics(x, u);
    return out;
  };
  e.F = [sys, m](const Vector& xh, const Vector& u) { return sys.cost_rate(xh.tail(m), u); };
  e.df_dx = [sys, m](const Vector& xh, const Vector& u) {
    const Vector x = xh.tail(m);
    Matrix j = Matrix::Zero(m + 1, m + 1);
    j.block(0, 1, 1, m) = sys.cost_grad(x, u).transpose();
    j.block(1, 1, m, m) = sys.jac_x(x, u);
    return j;
  };
  e.dF_dx = [sys, m](const Vector& xh, const Vector& u) {
    Vector g = Vector::Zero(m + 1);
    g.tail(m) = sys.cost_grad(xh.tail(m), u);
    return g;
  };
  return e;
}

struct Trajectory {
  std::vector<double> grid;
  std::vector<Vector> states;
  ControlSignal control;
  bool extended = false;
  /// Base step of the integrator that produced the grid.
  double step = 1e-3;

  double a() const { return grid.front(); }
  double b() const { return grid.back(); }
  const Vector& final_state() const { return states.back(); }

  std::size_t interval_index(double t) const {
    if (t <= grid.front()) return 0;
    if (t >= grid.back()) return grid.size() - 2;
    return static_cast<std::size_t>(std::upper_bound(grid.begin(), grid.end(), t) - grid.begin()) - 1;
  }

  /// Cubic Hermite interpolation using the velocities of the active control piece.
  Vector state_at(const ControlSystem& sys, double t) const {
    if (grid.size() == 1) return states.front();
    const std::size_t i = interval_index(t);
    const double t0 = grid[i], t1 = grid[i + 1];
    const double h = t1 - t0;
    if (t == t0) return states[i];
    if (t == t1) return states[i + 1];
    const Vector& u = control.at(0.5 * (t0 + t1));
    const Vector v0 = sys.dynamics(states[i], u);
    const Vector v1 = sys.dynamics(states[i + 1], u);
    const double s = (t - t0) / h;
    const double h00 = 2 * s * s * s - 3 * s * s + 1, h10 = s * s * s - 2 * s * s + s;
    const double h01 = -2 * s * s * s + 3 * s * s, h11 = s * s * s - s * s;
    return h00 * states[i] + h10 * h * v0 + h01 * states[i + 1] + h11 * h * v1;
  }
};

using ExtendedTrajectory = Trajectory;

inline Trajectory simulate(const ControlSystem& sys, const ControlSignal& u, const Vector& x0,
                           const IntegratorConfig& cfg) {
  require_dim(x0.size(), sys.m, "simulate initial state");
  if (!x0.allFinite()) throw InputError("simulate: non-finite initial state");
  u.check_shape();
  require_dim(u.dim(), sys.k, "simulate control");
  Trajectory tr;
  auto [grid, states] = flow_path(sys.field(u), u.b, u.a, x0, cfg);
  tr.grid = std::move(grid);
  tr.states = std::move(states);
  tr.control = u;
  tr.extended = sys.extended;
  tr.step = cfg.step;
  return tr;
}

inline Trajectory simulate(const ControlSystem& sys, const ControlSignal& u, const Vector& x0) {
  return simulate(sys, u, x0, IntegratorConfig::for_interval(u.a, u.b));
}

/// Total running cost x0(b) of a cost-extended trajectory.
inline double cost(const ExtendedTrajectory& ext) {
  if (!ext.extended) throw InputError("cost: trajectory is not cost-extended");
  return ext.final_state()(0);
}

/// Candidates in the open interval (a, b) that are not switch times; for a
/// piecewise-constant control these are exactly its Lebesgue times.
inline std::vector<double> lebesgue_times(const ControlSignal& u, const std::vector<double>& candidates) {
  std::vector<double> out;
  for (double t : candidates)
    if (t > u.a && t < u.b && !u.is_switch(t)) out.push_back(t);
  return out;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  const Eigen::Index dim = tr.states.front().size();
  const Eigen::Index m = tr.extended ? dim - 1 : dim;
  const Eigen::Index off = tr.extended ? 1 : 0;
  os << "t";
  for (Eigen::Index i = 0; i < m; ++i) os << ",x" << i;
  if (tr.extended) os << ",xcost";
  os << '\n' << std::setprecision(17);
  for (std::size_t n = 0; n < tr.grid.size(); ++n) {
    os << tr.grid[n];
    for (Eigen::Index i = 0; i < m; ++i) os << ',' << tr.states[n](off + i);
    if (tr.extended) os << ',' << tr.states[n](0);
    os << '\n';
  }
}

}  // namespace pmp
