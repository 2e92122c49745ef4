#pragma once

// Indirect shooting: integrates the coupled state/costate system with the
// pointwise-maximising control and roots the boundary residual with a damped
// Newton iteration and deterministic multistart.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pmp/control_system.hpp"
#include "pmp/core.hpp"
#include "pmp/flows.hpp"
#include "pmp/maximum_principle.hpp"

namespace pmp {

/// Unknown layout: p(a) (m entries), then coordinates of x(a) along the
/// initial tangent basis (manifold start), then b (free time).
/// Residual layout: final-point mismatch, or final-manifold normal defects
/// followed by p(b) on the final tangent basis; then p(a) on the initial
/// tangent basis; then sup_u H at b (free time).
struct ShootingProblem {
  ControlSystem sys;
  BoundarySpec bounds;
  double p0 = -1.0;
  double a = 0.0;
  /// Final time (fixed mode) or its starting guess (free mode).
  double b = 1.0;
  int steps = 1000;

  Eigen::Index initial_coords() const { return static_cast<Eigen::Index>(bounds.initial.tangent_basis.size()); }
  Eigen::Index unknown_count() const {
    return sys.m + initial_coords() + (bounds.mode == BoundarySpec::Mode::free_time ? 1 : 0);
  }
  void check() const {
    sys.check();
    bounds.check(sys.m);
    if (p0 != -1.0 && p0 != 0.0) throw InputError("shooting: p0 must be -1 or 0");
    if (!(b > a)) throw InputError("shooting: final time must exceed the initial time");
    if (steps < 2) throw InputError("shooting: at least two steps are required");
  }
};

struct ShootingGuess {
  Vector p_a;
  std::optional<double> b;
  Vector initial_coords;
};

struct ShootingOptions {
  double tol = 1e-9;
  int max_iterations = 60;
  double fd_step = 1e-7;
  /// Number of pseudo-random unit covectors tried after the user guess, each at every scale.
  int multistart_directions = 8;
  std::vector<double> multistart_scales{0.1, 1.0, 10.0};
  unsigned seed = 7;
  /// Stop at the first converged start instead of running them all.
  bool stop_at_first = true;
  double switch_time_tol = 1e-10;
  int max_switches = 10000;
  MaximizeOptions maximize{};
};

struct ShootingResult {
  Extremal extremal;
  double residual_norm = kInf;
  int iterations = 0;
  bool converged = false;
  Vector unknowns;
  std::size_t start_index = 0;
  /// Singular values of the residual Jacobian at the returned iterate.
  Vector jacobian_singular_values;
  Eigen::Index jacobian_rank = 0;
};

/// One forward sweep of the coupled system.
struct ShootingSweep {
  std::vector<double> grid;
  std::vector<Vector> x;
  std::vector<Vector> p;
  std::vector<std::string> step_arc;  // per interval
  std::vector<Vector> step_u;        // per interval, control at the left node
  std::vector<double> switches;
  std::vector<std::string> arcs;  // per arc between switches
  Vector residual;
  double final_max_hamiltonian = 0.0;
};

namespace detail {

struct Unpacked {
  Vector p_a;
  Vector x_a;
  double b = 0.0;
};

inline Unpacked unpack(const ShootingProblem& pr, const Vector& z) {
  require_dim(z.size(), pr.unknown_count(), "shooting unknowns");
  Unpacked u;
  const Eigen::Index m = pr.sys.m;
  u.p_a = z.head(m);
  u.x_a = pr.bounds.initial.point;
  for (Eigen::Index i = 0; i < pr.initial_coords(); ++i)
    u.x_a += z(m + i) * pr.bounds.initial.tangent_basis[static_cast<std::size_t>(i)];
  u.b = pr.bounds.mode == BoundarySpec::Mode::free_time ? z(z.size() - 1) : pr.b;
  return u;
}

// Orthonormal basis of the complement of span(basis) in R^m.
inline Matrix normal_complement(const std::vector<Vector>& basis, Eigen::Index m) {
  if (basis.empty()) return Matrix::Identity(m, m);
  Matrix b(m, static_cast<Eigen::Index>(basis.size()));
  for (std::size_t i = 0; i < basis.size(); ++i) b.col(static_cast<Eigen::Index>(i)) = basis[i];
  Eigen::JacobiSVD<Matrix> svd(b, Eigen::ComputeFullU);
  return svd.matrixU().rightCols(m - b.cols());
}

}  // namespace detail

/// Integrates (x, p) forward under the maximising control for the unknowns z.
inline ShootingSweep shooting_sweep(const ShootingProblem& pr, const Vector& z, const ShootingOptions& opts = {}) {
  const auto un = detail::unpack(pr, z);
  const ControlSystem& sys = pr.sys;
  const Eigen::Index m = sys.m;
  const double p0 = pr.p0;
  if (!(un.b > pr.a)) throw NumericalError("shooting: trial final time is not after the initial time");

  auto arc_rhs = [&](const std::string& arc) -> detail::Rhs {
    return [&sys, p0, m, arc, &opts](double, const Vector& y) {
      const Vector x = y.head(m), p = y.tail(m);
      const Vector u = control_on_arc(sys, p0, p, x, arc, opts.maximize);
      Vector dy(2 * m);
      dy.head(m) = sys.dynamics(x, u);
      Vector dp = -sys.jac_x(x, u).transpose() * p;
      if (p0 != 0.0) dp -= p0 * sys.cost_grad(x, u);
      dy.tail(m) = dp;
      return dy;
    };
  };
  auto label_at = [&](const Vector& y) { return maximize_hamiltonian(sys, p0, y.tail(m), y.head(m), opts.maximize).arc; };
  auto ham_on = [&](const Vector& y, const std::string& arc) {
    const Vector x = y.head(m), p = y.tail(m);
    return hamiltonian(sys, p0, p, x, control_on_arc(sys, p0, p, x, arc, opts.maximize));
  };

  ShootingSweep sw;
  Vector y(2 * m);
  y.head(m) = un.x_a;
  y.tail(m) = un.p_a;
  double t = pr.a;
  std::string arc = label_at(y);
  sw.arcs.push_back(arc);
  sw.grid.push_back(t);
  sw.x.push_back(y.head(m));
  sw.p.push_back(y.tail(m));
  auto push_node = [&](double tn, const Vector& yn, const std::string& used_arc) {
    sw.step_arc.push_back(used_arc);
    sw.step_u.push_back(control_on_arc(sys, p0, sw.p.back(), sw.x.back(), used_arc, opts.maximize));
    sw.grid.push_back(tn);
    sw.x.push_back(yn.head(m));
    sw.p.push_back(yn.tail(m));
  };

  for (int i = 0; i < pr.steps; ++i) {
    const double t_next =
        i + 1 == pr.steps ? un.b : pr.a + (un.b - pr.a) * static_cast<double>(i + 1) / static_cast<double>(pr.steps);
    int guard = 0;
    while (true) {
      const auto rhs = arc_rhs(arc);
      const Vector y1 = detail::rk4_step(rhs, t, t_next, y);
      if (!y1.allFinite()) throw NumericalError("shooting: blow-up at t = " + std::to_string(t_next));
      const std::string next = label_at(y1);
      if (next == arc || static_cast<int>(sw.switches.size()) >= opts.max_switches || ++guard > 8) {
        push_node(t_next, y1, arc);
        y = y1;
        t = t_next;
        break;
      }
      // A switch inside (t, t_next): locate it on g = H_arc - H_next, which is
      // nonnegative before the switch and negative after.
      auto state_at = [&](double tau) { return Vector(detail::rk4_step(rhs, t, tau, y)); };
      auto g = [&](double tau) {
        const Vector ys = state_at(tau);
        return ham_on(ys, arc) - ham_on(ys, next);
      };
      double lo = t, hi = t_next;
      double glo = g(lo), ghi = g(hi);
      if (glo >= 0.0 && ghi < 0.0) {
        int side = 0;
        for (int it = 0; it < 200 && hi - lo > opts.switch_time_tol * 1e-3; ++it) {
          double mid = (lo * ghi - hi * glo) / (ghi - glo);
          if (!(mid > lo && mid < hi)) mid = 0.5 * (lo + hi);
          const double gm = g(mid);
          if (gm == 0.0) {
            hi = mid;
            break;
          }
          if (gm > 0.0) {
            lo = mid;
            glo = gm;
            if (side == -1) ghi *= 0.5;
            side = -1;
          } else {
            hi = mid;
            ghi = gm;
            if (side == 1) glo *= 0.5;
            side = 1;
          }
        }
      } else {
        for (int it = 0; it < 200 && hi - lo > opts.switch_time_tol; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (label_at(state_at(mid)) == arc) lo = mid;
          else hi = mid;
        }
      }
      const double tau = hi;
      if (tau - t <= opts.switch_time_tol * std::max(1.0, std::abs(t))) {
        // Switch at the left node itself.
        arc = next;
        if (sw.arcs.size() == 1 && sw.step_arc.empty()) sw.arcs.back() = arc;
        else {
          sw.switches.push_back(t);
          sw.arcs.push_back(arc);
        }
        continue;
      }
      const Vector ys = state_at(tau);
      push_node(tau, ys, arc);
      y = ys;
      t = tau;
      arc = next;
      sw.switches.push_back(tau);
      sw.arcs.push_back(arc);
      if (t_next - t <= opts.switch_time_tol * std::max(1.0, std::abs(t))) {
        // The switch landed on the step end; snap to it.
        sw.grid.back() = t_next;
        t = t_next;
        sw.switches.back() = t_next;
        break;
      }
    }
  }

  // Boundary residual.
  const Vector& xb = sw.x.back();
  const Vector& pb = sw.p.back();
  const Vector& pa = sw.p.front();
  std::vector<double> r;
  const auto& fin = pr.bounds.final;
  if (fin.tangent_basis.empty()) {
    for (Eigen::Index i = 0; i < m; ++i) r.push_back(xb(i) - fin.point(i));
  } else {
    const Matrix nrm = detail::normal_complement(fin.tangent_basis, m);
    const Vector d = nrm.transpose() * (xb - fin.point);
    for (Eigen::Index i = 0; i < d.size(); ++i) r.push_back(d(i));
    for (const auto& e : fin.tangent_basis) r.push_back(pb.dot(e));
  }
  for (const auto& e : pr.bounds.initial.tangent_basis) r.push_back(pa.dot(e));
  sw.final_max_hamiltonian = maximize_hamiltonian(sys, p0, pb, xb, opts.maximize).value;
  if (pr.bounds.mode == BoundarySpec::Mode::free_time) r.push_back(sw.final_max_hamiltonian);
  sw.residual = Eigen::Map<Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
  return sw;
}

inline Vector shooting_residual(const ShootingProblem& pr, const Vector& z, const ShootingOptions& opts = {}) {
  return shooting_sweep(pr, z, opts).residual;
}

/// Forward-difference Jacobian of the shooting residual.
inline Matrix shooting_jacobian(const ShootingProblem& pr, const Vector& z, double h, const ShootingOptions& opts = {},
                                const Vector* r0_in = nullptr) {
  const Vector r0 = r0_in != nullptr ? *r0_in : shooting_residual(pr, z, opts);
  Matrix j(r0.size(), z.size());
  for (Eigen::Index c = 0; c < z.size(); ++c) {
    Vector zp = z;
    const double step = h * std::max(1.0, std::abs(z(c)));
    zp(c) += step;
    j.col(c) = (shooting_residual(pr, zp, opts) - r0) / step;
  }
  return j;
}

/// Assembles the extremal (trajectory, per-step control, adjoint) of a sweep.
inline Extremal extremal_from_sweep(const ShootingProblem& pr, const ShootingSweep& sw) {
  std::vector<double> cuts;
  std::vector<Vector> vals{sw.step_u.front()};
  for (std::size_t i = 1; i < sw.step_u.size(); ++i) {
    if ((sw.step_u[i] - vals.back()).lpNorm<Eigen::Infinity>() == 0.0) continue;
    cuts.push_back(sw.grid[i]);
    vals.push_back(sw.step_u[i]);
  }
  Trajectory tr;
  tr.grid = sw.grid;
  tr.states = sw.x;
  tr.control = ControlSignal::piecewise(sw.grid.front(), sw.grid.back(), cuts, vals);
  tr.step = (sw.grid.back() - sw.grid.front()) / pr.steps;
  AdjointCurve ac;
  ac.grid = sw.grid;
  ac.sigma0 = pr.p0;
  ac.sigma = sw.p;
  Extremal ex = make_extremal(pr.sys, tr, std::move(ac));
  ex.switch_times = sw.switches;
  ex.arcs = sw.arcs;
  return ex;
}

inline ShootingResult shoot(const ShootingProblem& pr, const ShootingGuess& guess, const ShootingOptions& opts = {}) {
  pr.check();
  const Eigen::Index m = pr.sys.m;
  const Eigen::Index n = pr.unknown_count();
  require_dim(guess.p_a.size(), m, "shooting guess p(a)");
  Vector base(n);
  base.head(m) = guess.p_a;
  if (pr.initial_coords() > 0) {
    if (guess.initial_coords.size() == 0) base.segment(m, pr.initial_coords()).setZero();
    else {
      require_dim(guess.initial_coords.size(), pr.initial_coords(), "shooting guess initial coordinates");
      base.segment(m, pr.initial_coords()) = guess.initial_coords;
    }
  }
  const bool free_time = pr.bounds.mode == BoundarySpec::Mode::free_time;
  if (free_time) base(n - 1) = guess.b.value_or(pr.b);

  std::vector<Vector> starts{base};
  std::mt19937 rng(opts.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int d = 0; d < opts.multistart_directions; ++d) {
    Vector dir(m);
    for (Eigen::Index i = 0; i < m; ++i) dir(i) = gauss(rng);
    if (dir.norm() == 0.0) dir(0) = 1.0;
    dir.normalize();
    for (double sc : opts.multistart_scales) {
      Vector z = base;
      z.head(m) = sc * dir;
      starts.push_back(z);
    }
  }

  auto safe_residual = [&](const Vector& z, Vector& r) {
    try {
      if (free_time && !(z(n - 1) > pr.a)) return kInf;
      r = shooting_residual(pr, z, opts);
      return r.allFinite() ? r.norm() : kInf;
    } catch (const NumericalError&) {
      return kInf;
    }
  };

  ShootingResult best;
  std::optional<Vector> best_z;
  for (std::size_t si = 0; si < starts.size(); ++si) {
    Vector z = starts[si];
    Vector r;
    double rn = safe_residual(z, r);
    int it = 0;
    for (; it < opts.max_iterations && std::isfinite(rn) && rn > opts.tol; ++it) {
      Matrix jac;
      try {
        jac = shooting_jacobian(pr, z, opts.fd_step, opts, &r);
      } catch (const NumericalError&) {
        break;
      }
      if (!jac.allFinite()) break;
      const Vector dz = jac.completeOrthogonalDecomposition().solve(-r);
      double lambda = 1.0;
      bool moved = false;
      for (int ls = 0; ls < 30; ++ls, lambda *= 0.5) {
        Vector zt = z + lambda * dz;
        Vector rt;
        const double rnt = safe_residual(zt, rt);
        if (rnt < (1.0 - 1e-4 * lambda) * rn) {
          z = zt;
          r = rt;
          rn = rnt;
          moved = true;
          break;
        }
      }
      if (!moved) break;
    }
    if (std::isfinite(rn) && (!best_z || rn < best.residual_norm)) {
      best.residual_norm = rn;
      best.iterations = it;
      best.start_index = si;
      best_z = z;
    }
    if (rn <= opts.tol && opts.stop_at_first) break;
  }
  if (!best_z) throw NumericalError("shoot: every start blew up");

  const ShootingSweep sw = shooting_sweep(pr, *best_z, opts);
  best.extremal = extremal_from_sweep(pr, sw);
  best.unknowns = *best_z;
  best.converged = best.residual_norm <= opts.tol;
  try {
    const Matrix jac = shooting_jacobian(pr, *best_z, opts.fd_step, opts);
    Eigen::JacobiSVD<Matrix> svd(jac);
    best.jacobian_singular_values = svd.singularValues();
    const double smax = best.jacobian_singular_values.size() ? best.jacobian_singular_values(0) : 0.0;
    best.jacobian_rank = 0;
    for (Eigen::Index i = 0; i < best.jacobian_singular_values.size(); ++i)
      if (best.jacobian_singular_values(i) > 1e-8 * std::max(1.0, smax)) ++best.jacobian_rank;
  } catch (const NumericalError&) {
  }
  return best;
}

struct ArcInfo {
  double from = 0.0;
  double to = 0.0;
  std::string arc;
  Vector u_start;
};

struct SwitchingStructure {
  std::vector<double> switch_times;
  std::vector<ArcInfo> arcs;
};

inline SwitchingStructure switching_structure(const Extremal& ex) {
  SwitchingStructure s;
  s.switch_times = ex.switch_times;
  const double a = ex.ext_traj.a(), b = ex.ext_traj.b();
  std::vector<double> cuts{a};
  cuts.insert(cuts.end(), ex.switch_times.begin(), ex.switch_times.end());
  cuts.push_back(b);
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    ArcInfo info;
    info.from = cuts[i];
    info.to = cuts[i + 1];
    info.arc = i < ex.arcs.size() ? ex.arcs[i] : std::string();
    info.u_start = ex.control.at(cuts[i]);
    s.arcs.push_back(std::move(info));
  }
  return s;
}

}  // namespace pmp
