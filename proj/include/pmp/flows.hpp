#pragma once

// Evolution operators of time-dependent vector fields and their tangent and
// cotangent lifts, integrated by fixed-step RK4 on grids that hit every
// event time exactly.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "pmp/core.hpp"

namespace pmp {

/// X : I x R^m -> R^m. `breakpoints` lists times where X jumps in t (control
/// switches); between them X is smooth. At a breakpoint X takes its
/// right-hand value.
struct TimeVectorField {
  Eigen::Index dim = 0;
  std::function<Vector(double, const Vector&)> eval;
  std::function<Matrix(double, const Vector&)> jacobian;  // optional
  std::vector<double> breakpoints;

  Vector operator()(double t, const Vector& x) const { return eval(t, x); }

  /// Analytic Jacobian when supplied, else central differences with step 1e-6 (1 + |x|).
  Matrix jac(double t, const Vector& x) const {
    if (jacobian) return jacobian(t, x);
    const double h = 1e-6 * (1.0 + x.norm());
    Matrix j(dim, dim);
    Vector xp = x, xm = x;
    for (Eigen::Index k = 0; k < dim; ++k) {
      xp(k) = x(k) + h;
      xm(k) = x(k) - h;
      j.col(k) = (eval(t, xp) - eval(t, xm)) / (2.0 * h);
      xp(k) = x(k);
      xm(k) = x(k);
    }
    return j;
  }
};

struct IntegratorConfig {
  double step = 1e-3;
  std::vector<double> event_times;

  /// Default step 1e-3 (b - a).
  static IntegratorConfig for_interval(double a, double b, std::vector<double> events = {}) {
    IntegratorConfig c;
    c.step = 1e-3 * std::abs(b - a);
    if (!(c.step > 0.0)) c.step = 1e-3;
    c.event_times = std::move(events);
    return c;
  }
};

struct TangentState {
  Vector x;
  Vector v;
};

struct CotangentState {
  Vector x;
  Vector p;
};

/// Integration nodes from `from` to `to` (either direction) that contain every
/// event strictly between them; segments are split into equal steps no longer
/// than `step`.
inline std::vector<double> time_grid(double from, double to, double step, const std::vector<double>& events) {
  if (!(step > 0.0)) throw InputError("integrator step must be positive");
  std::vector<double> grid{from};
  if (from == to) return grid;
  const double lo = std::min(from, to), hi = std::max(from, to);
  const double eps = 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi)));
  std::vector<double> cuts;
  for (double e : events)
    if (e > lo + eps && e < hi - eps) cuts.push_back(e);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end(), [&](double a, double b) { return std::abs(a - b) <= eps; }),
             cuts.end());
  if (from > to) std::reverse(cuts.begin(), cuts.end());
  cuts.push_back(to);
  double prev = from;
  for (double c : cuts) {
    const double len = std::abs(c - prev);
    const auto n = static_cast<long>(std::max(1.0, std::ceil(len / step - 1e-9)));
    for (long i = 1; i < n; ++i) grid.push_back(prev + (c - prev) * static_cast<double>(i) / static_cast<double>(n));
    grid.push_back(c);
    prev = c;
  }
  return grid;
}

namespace detail {

using Rhs = std::function<Vector(double, const Vector&)>;

// Stage times that land on the upper end of a step are evaluated one ulp
// inside, so right-continuous piecewise fields see the value of the piece
// being integrated.
inline double inner_time(double t, double upper) {
  return t >= upper ? std::nextafter(upper, -kInf) : t;
}

inline Vector rk4_step(const Rhs& f, double t0, double t1, const Vector& y) {
  const double h = t1 - t0;
  const double upper = std::max(t0, t1);
  const double tm = t0 + 0.5 * h;
  const Vector k1 = f(inner_time(t0, upper), y);
  const Vector k2 = f(inner_time(tm, upper), y + 0.5 * h * k1);
  const Vector k3 = f(inner_time(tm, upper), y + 0.5 * h * k2);
  const Vector k4 = f(inner_time(t1, upper), y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline std::vector<Vector> integrate_on_grid(const Rhs& f, const Vector& y0, const std::vector<double>& grid) {
  std::vector<Vector> ys;
  ys.reserve(grid.size());
  ys.push_back(y0);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    Vector y = rk4_step(f, grid[i - 1], grid[i], ys.back());
    if (!y.allFinite()) {
      throw NumericalError("integration blow-up: non-finite state at t = " + std::to_string(grid[i]));
    }
    ys.push_back(std::move(y));
  }
  return ys;
}

inline Vector integrate_final(const Rhs& f, const Vector& y0, const std::vector<double>& grid) {
  Vector y = y0;
  for (std::size_t i = 1; i < grid.size(); ++i) {
    y = rk4_step(f, grid[i - 1], grid[i], y);
    if (!y.allFinite()) {
      throw NumericalError("integration blow-up: non-finite state at t = " + std::to_string(grid[i]));
    }
  }
  return y;
}

inline std::vector<double> merged_events(const IntegratorConfig& cfg, const TimeVectorField& x) {
  std::vector<double> ev = cfg.event_times;
  ev.insert(ev.end(), x.breakpoints.begin(), x.breakpoints.end());
  return ev;
}

}  // namespace detail

/// Phi^X(t, s, x0).
inline Vector flow(const TimeVectorField& field, double t, double s, const Vector& x0, const IntegratorConfig& cfg) {
  require_dim(x0.size(), field.dim, "flow initial state");
  const auto grid = time_grid(s, t, cfg.step, detail::merged_events(cfg, field));
  return detail::integrate_final([&](double tt, const Vector& x) { return field(tt, x); }, x0, grid);
}

/// Phi^X(t, s, x0) at every node of the integration grid.
inline std::pair<std::vector<double>, std::vector<Vector>> flow_path(const TimeVectorField& field, double t, double s,
                                                                     const Vector& x0, const IntegratorConfig& cfg) {
  require_dim(x0.size(), field.dim, "flow initial state");
  auto grid = time_grid(s, t, cfg.step, detail::merged_events(cfg, field));
  auto states = detail::integrate_on_grid([&](double tt, const Vector& x) { return field(tt, x); }, x0, grid);
  return {std::move(grid), std::move(states)};
}

/// Complete lift: x' = X(t,x), v' = DX(t,x) v.
inline TangentState tangent_lift_flow(const TimeVectorField& field, double t, double s, const TangentState& init,
                                      const IntegratorConfig& cfg) {
  const Eigen::Index m = field.dim;
  require_dim(init.x.size(), m, "tangent lift state");
  require_dim(init.v.size(), m, "tangent lift vector");
  Vector y(2 * m);
  y << init.x, init.v;
  const auto grid = time_grid(s, t, cfg.step, detail::merged_events(cfg, field));
  const Vector out = detail::integrate_final(
      [&](double tt, const Vector& z) {
        const Vector x = z.head(m);
        Vector dz(2 * m);
        dz << field(tt, x), field.jac(tt, x) * z.tail(m);
        return dz;
      },
      y, grid);
  return {out.head(m), out.tail(m)};
}

/// The state Phi(t, s, x0) together with the differential T_x0 Phi_(t,s).
inline std::pair<Vector, Matrix> tangent_lift_matrix(const TimeVectorField& field, double t, double s,
                                                     const Vector& x0, const IntegratorConfig& cfg) {
  const Eigen::Index m = field.dim;
  require_dim(x0.size(), m, "tangent lift state");
  Vector y(m + m * m);
  y.head(m) = x0;
  const Matrix eye = Matrix::Identity(m, m);
  y.tail(m * m) = Eigen::Map<const Vector>(eye.data(), m * m);
  const auto grid = time_grid(s, t, cfg.step, detail::merged_events(cfg, field));
  const Vector out = detail::integrate_final(
      [&](double tt, const Vector& z) {
        const Vector x = z.head(m);
        const Eigen::Map<const Matrix> mat(z.data() + m, m, m);
        Vector dz(m + m * m);
        dz.head(m) = field(tt, x);
        const Matrix dm = field.jac(tt, x) * mat;
        dz.tail(m * m) = Eigen::Map<const Vector>(dm.data(), m * m);
        return dz;
      },
      y, grid);
  return {out.head(m), Eigen::Map<const Matrix>(out.data() + m, m, m)};
}

/// Cotangent lift: x' = X(t,x), p' = -DX(t,x)^T p.
inline CotangentState cotangent_lift_flow(const TimeVectorField& field, double t, double s,
                                          const CotangentState& init, const IntegratorConfig& cfg) {
  const Eigen::Index m = field.dim;
  require_dim(init.x.size(), m, "cotangent lift state");
  require_dim(init.p.size(), m, "cotangent lift covector");
  Vector y(2 * m);
  y << init.x, init.p;
  const auto grid = time_grid(s, t, cfg.step, detail::merged_events(cfg, field));
  const Vector out = detail::integrate_final(
      [&](double tt, const Vector& z) {
        const Vector x = z.head(m);
        Vector dz(2 * m);
        dz << field(tt, x), -field.jac(tt, x).transpose() * z.tail(m);
        return dz;
      },
      y, grid);
  return {out.head(m), out.tail(m)};
}

/// max over the grid of |<p(t), v(t)> - <p0, v0>| with both lifts carried
/// along the same base trajectory on [from, to].
inline double pairing_drift(const TimeVectorField& field, double from, double to, const Vector& x0, const Vector& v0,
                            const Vector& p0, const IntegratorConfig& cfg) {
  const Eigen::Index m = field.dim;
  require_dim(x0.size(), m, "pairing_drift state");
  require_dim(v0.size(), m, "pairing_drift vector");
  require_dim(p0.size(), m, "pairing_drift covector");
  Vector y(3 * m);
  y << x0, v0, p0;
  const auto grid = time_grid(from, to, cfg.step, detail::merged_events(cfg, field));
  const auto ys = detail::integrate_on_grid(
      [&](double tt, const Vector& z) {
        const Vector x = z.head(m);
        const Matrix j = field.jac(tt, x);
        Vector dz(3 * m);
        dz << field(tt, x), j * z.segment(m, m), -j.transpose() * z.tail(m);
        return dz;
      },
      y, grid);
  const double ref = p0.dot(v0);
  double drift = 0.0;
  for (const auto& z : ys) drift = std::max(drift, std::abs(z.tail(m).dot(z.segment(m, m)) - ref));
  return drift;
}

inline TimeVectorField sum_field(const TimeVectorField& x, const TimeVectorField& y) {
  require_dim(y.dim, x.dim, "sum_field");
  TimeVectorField z;
  z.dim = x.dim;
  z.eval = [x, y](double t, const Vector& p) { return Vector(x(t, p) + y(t, p)); };
  z.jacobian = [x, y](double t, const Vector& p) { return Matrix(x.jac(t, p) + y.jac(t, p)); };
  z.breakpoints = x.breakpoints;
  z.breakpoints.insert(z.breakpoints.end(), y.breakpoints.begin(), y.breakpoints.end());
  return z;
}

/// Z(t, x) = (T_x Phi^X_(t,s))^{-1} Y(t, Phi^X_(t,s)(x)), the field whose flow
/// composed with that of X reproduces the flow of X + Y.
inline TimeVectorField pullback_field(const TimeVectorField& x_field, const TimeVectorField& y_field, double s,
                                      const IntegratorConfig& cfg, double max_condition = 1e12) {
  require_dim(y_field.dim, x_field.dim, "pullback_field");
  TimeVectorField z;
  z.dim = x_field.dim;
  IntegratorConfig inner = cfg;
  inner.event_times.insert(inner.event_times.end(), y_field.breakpoints.begin(), y_field.breakpoints.end());
  z.eval = [x_field, y_field, s, inner, max_condition](double t, const Vector& x) -> Vector {
    const auto [xt, d] = tangent_lift_matrix(x_field, t, s, x, inner);
    Eigen::JacobiSVD<Matrix> svd(d);
    const auto& sv = svd.singularValues();
    const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : kInf;
    if (!(cond <= max_condition)) {
      throw NumericalError("pullback_field: transported differential is singular (condition estimate " +
                           std::to_string(cond) + ")");
    }
    return d.partialPivLu().solve(y_field(t, xt));
  };
  z.breakpoints = x_field.breakpoints;
  z.breakpoints.insert(z.breakpoints.end(), y_field.breakpoints.begin(), y_field.breakpoints.end());
  return z;
}

/// |Phi^{X+Y}(t,s,x0) - Phi^X(t,s, Phi^Z(t,s,x0))| with Z the pullback of Y.
inline double flow_decomposition_residual(const TimeVectorField& x_field, const TimeVectorField& y_field, double t,
                                          double s, const Vector& x0, const IntegratorConfig& cfg) {
  const Vector direct = flow(sum_field(x_field, y_field), t, s, x0, cfg);
  const TimeVectorField z = pullback_field(x_field, y_field, s, cfg);
  const Vector composed = flow(x_field, t, s, flow(z, t, s, x0, cfg), cfg);
  return (direct - composed).norm();
}

}  // namespace pmp
