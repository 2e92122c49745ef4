#pragma once

// Hamiltonian maximisation, adjoint integration, residuals of the maximum
// principle conditions along a candidate extremal, and normal/abnormal
// classification of trajectory-control pairs.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pmp/cone_geometry.hpp"
#include "pmp/control_system.hpp"
#include "pmp/core.hpp"
#include "pmp/flows.hpp"
#include "pmp/linprog.hpp"
#include "pmp/perturbations.hpp"

namespace pmp {

/// p0 F(x, u) + p · f(x, u).
inline double hamiltonian(const ControlSystem& sys, double p0, const Vector& p, const Vector& x, const Vector& u) {
  require_dim(p.size(), sys.m, "hamiltonian covector");
  require_dim(x.size(), sys.m, "hamiltonian state");
  require_dim(u.size(), sys.k, "hamiltonian control");
  double h = p.dot(sys.dynamics(x, u));
  if (p0 != 0.0) h += p0 * sys.cost_rate(x, u);
  return h;
}

// ---------------------------------------------------------------------------
// Pointwise maximisation over U.

struct MaximizeOptions {
  int grid_per_dim = 21;
  int refine_rounds = 4;
  double quadratic_check_tol = 1e-8;
};

struct HamiltonianMax {
  Vector u_star;
  double value = -kInf;
  /// Identifies the extremising arc: per-coordinate L/H/F (at lower bound,
  /// upper bound, free stationary) for boxes, "P<i>" for finite sets, "B"/"C"
  /// for balls, "grid" for the general fallback.
  std::string arc;
  bool exact = true;
  double resolution = 0.0;
};

class UnboundedHamiltonian : public NumericalError {
 public:
  UnboundedHamiltonian() : NumericalError("maximize_hamiltonian: H is unbounded above along a ray in U") {}
};

namespace detail {

// Second-order model of u -> H(u) around `center` from central differences.
struct QuadraticModel {
  Vector center;
  double h0 = 0.0;
  Vector g;
  Matrix q;
  bool valid = false;
};

inline QuadraticModel fit_quadratic(const std::function<double(const Vector&)>& hfun, const Vector& center,
                                    const Vector& step, double check_tol) {
  const Eigen::Index k = center.size();
  QuadraticModel mdl;
  mdl.center = center;
  mdl.h0 = hfun(center);
  mdl.g = Vector(k);
  mdl.q = Matrix(k, k);
  std::vector<double> hp(static_cast<std::size_t>(k)), hm(static_cast<std::size_t>(k));
  for (Eigen::Index j = 0; j < k; ++j) {
    Vector up = center, um = center;
    up(j) += step(j);
    um(j) -= step(j);
    hp[static_cast<std::size_t>(j)] = hfun(up);
    hm[static_cast<std::size_t>(j)] = hfun(um);
    mdl.g(j) = (hp[static_cast<std::size_t>(j)] - hm[static_cast<std::size_t>(j)]) / (2.0 * step(j));
    mdl.q(j, j) = (hp[static_cast<std::size_t>(j)] - 2.0 * mdl.h0 + hm[static_cast<std::size_t>(j)]) /
                  (step(j) * step(j));
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = i + 1; j < k; ++j) {
      Vector u = center;
      u(i) += step(i);
      u(j) += step(j);
      const double hij = hfun(u);
      const double qij = (hij - hp[static_cast<std::size_t>(i)] - hp[static_cast<std::size_t>(j)] + mdl.h0) /
                         (step(i) * step(j));
      mdl.q(i, j) = qij;
      mdl.q(j, i) = qij;
    }
  }
  auto model = [&](const Vector& u) {
    const Vector d = u - center;
    return mdl.h0 + mdl.g.dot(d) + 0.5 * d.dot(mdl.q * d);
  };
  double scale = 1.0 + std::abs(mdl.h0) + (mdl.g.array() * step.array()).abs().sum();
  bool ok = true;
  for (Eigen::Index j = 0; j < k && ok; ++j) {
    Vector u = center;
    u(j) += 0.63 * step(j);
    if (k > 1) u((j + 1) % k) -= 0.41 * step((j + 1) % k);
    ok = std::abs(hfun(u) - model(u)) <= check_tol * scale;
    Vector w = center;
    w(j) -= 1.7 * step(j);
    ok = ok && std::abs(hfun(w) - model(w)) <= check_tol * scale;
  }
  mdl.valid = ok;
  return mdl;
}

inline bool better(double value, double best, double scale) { return value > best + 1e-12 * scale; }

inline HamiltonianMax maximize_quadratic_box(const std::function<double(const Vector&)>& hfun,
                                             const QuadraticModel& mdl, const Vector& lo, const Vector& hi,
                                             const std::string* only_arc = nullptr) {
  const Eigen::Index k = lo.size();
  const double scale = 1.0 + std::abs(mdl.h0) + mdl.g.lpNorm<1>();
  const double zero_tol = 1e-9 * scale;

  if (only_arc == nullptr) {
    for (Eigen::Index j = 0; j < k; ++j) {
      for (double dir : {1.0, -1.0}) {
        if (std::isfinite(dir > 0 ? hi(j) : lo(j))) continue;
        const double curv = mdl.q(j, j);
        const double slope = dir * mdl.g(j);
        if (curv > zero_tol || (std::abs(curv) <= zero_tol && slope > zero_tol &&
                                mdl.q.row(j).cwiseAbs().sum() - std::abs(curv) <= zero_tol)) {
          throw UnboundedHamiltonian();
        }
      }
    }
  }

  HamiltonianMax best;
  best.exact = true;
  // Enumerate faces: every coordinate at L, H or F. Vertices come first so ties
  // resolve to the lowest-index vertex.
  std::vector<std::string> patterns;
  const auto total = static_cast<long>(std::pow(3.0, static_cast<double>(k)));
  for (long code = 0; code < total; ++code) {
    std::string pat(static_cast<std::size_t>(k), 'L');
    long c = code;
    for (Eigen::Index j = k - 1; j >= 0; --j) {
      pat[static_cast<std::size_t>(j)] = "LHF"[c % 3];
      c /= 3;
    }
    patterns.push_back(pat);
  }
  std::stable_sort(patterns.begin(), patterns.end(), [](const std::string& a, const std::string& b) {
    return std::count(a.begin(), a.end(), 'F') < std::count(b.begin(), b.end(), 'F');
  });

  for (const std::string& pat : patterns) {
    if (only_arc != nullptr && pat != *only_arc) continue;
    Vector u(k);
    std::vector<Eigen::Index> free_idx;
    bool feasible_pattern = true;
    for (Eigen::Index j = 0; j < k; ++j) {
      const char c = pat[static_cast<std::size_t>(j)];
      if (c == 'L') {
        if (!std::isfinite(lo(j))) feasible_pattern = false;
        u(j) = lo(j);
      } else if (c == 'H') {
        if (!std::isfinite(hi(j))) feasible_pattern = false;
        u(j) = hi(j);
      } else {
        free_idx.push_back(j);
        u(j) = mdl.center(j);
      }
    }
    if (!feasible_pattern) continue;
    if (!free_idx.empty()) {
      const auto nf = static_cast<Eigen::Index>(free_idx.size());
      Matrix qff(nf, nf);
      Vector rhs(nf);
      const Vector d = u - mdl.center;
      for (Eigen::Index a = 0; a < nf; ++a) {
        double r = -mdl.g(free_idx[static_cast<std::size_t>(a)]);
        for (Eigen::Index j = 0; j < k; ++j) {
          if (pat[static_cast<std::size_t>(j)] != 'F') r -= mdl.q(free_idx[static_cast<std::size_t>(a)], j) * d(j);
        }
        rhs(a) = r;
        for (Eigen::Index b = 0; b < nf; ++b)
          qff(a, b) = mdl.q(free_idx[static_cast<std::size_t>(a)], free_idx[static_cast<std::size_t>(b)]);
      }
      const Vector df = qff.completeOrthogonalDecomposition().solve(rhs);
      if ((qff * df - rhs).norm() > 1e-8 * scale) continue;  // no stationary point on this face
      for (Eigen::Index a = 0; a < nf; ++a) {
        const Eigen::Index j = free_idx[static_cast<std::size_t>(a)];
        u(j) = mdl.center(j) + df(a);
        if (only_arc == nullptr && (u(j) < lo(j) - 1e-12 || u(j) > hi(j) + 1e-12)) feasible_pattern = false;
      }
      if (!feasible_pattern) continue;
    }
    const double val = hfun(u);
    if (best.u_star.size() == 0 || better(val, best.value, scale)) {
      best.u_star = u;
      best.value = val;
      best.arc = pat;
    }
  }
  return best;
}

inline HamiltonianMax maximize_grid_box(const std::function<double(const Vector&)>& hfun, const Vector& lo,
                                        const Vector& hi, const MaximizeOptions& opts) {
  const Eigen::Index k = lo.size();
  Vector l = lo, h = hi;
  HamiltonianMax best;
  best.exact = false;
  best.arc = "grid";
  const int n = std::max(2, opts.grid_per_dim);
  for (int round = 0; round <= opts.refine_rounds; ++round) {
    std::vector<int> idx(static_cast<std::size_t>(k), 0);
    while (true) {
      Vector u(k);
      for (Eigen::Index j = 0; j < k; ++j) u(j) = l(j) + (h(j) - l(j)) * idx[static_cast<std::size_t>(j)] / (n - 1);
      const double val = hfun(u);
      if (best.u_star.size() == 0 || better(val, best.value, 1.0 + std::abs(val))) {
        best.u_star = u;
        best.value = val;
      }
      Eigen::Index j = 0;
      while (j < k && ++idx[static_cast<std::size_t>(j)] == n) idx[static_cast<std::size_t>(j++)] = 0;
      if (j == k) break;
    }
    best.resolution = ((h - l) / (n - 1)).maxCoeff();
    const Vector half = (h - l) / (n - 1);
    l = (best.u_star - half).cwiseMax(lo);
    h = (best.u_star + half).cwiseMin(hi);
  }
  return best;
}

}  // namespace detail

/// sup over U of H(p0, p, x, .), with the extremising control.
inline HamiltonianMax maximize_hamiltonian(const ControlSystem& sys, double p0, const Vector& p, const Vector& x,
                                           const MaximizeOptions& opts = {}) {
  const std::function<double(const Vector&)> hfun = [&](const Vector& u) { return hamiltonian(sys, p0, p, x, u); };
  const ControlSet& set = sys.control_set;
  const Eigen::Index k = sys.k;
  switch (set.kind) {
    case ControlSet::Kind::finite: {
      HamiltonianMax best;
      for (std::size_t i = 0; i < set.points.size(); ++i) {
        const double val = hfun(set.points[i]);
        if (best.u_star.size() == 0 || detail::better(val, best.value, 1.0 + std::abs(val))) {
          best.u_star = set.points[i];
          best.value = val;
          best.arc = "P" + std::to_string(i);
        }
      }
      return best;
    }
    case ControlSet::Kind::box: {
      Vector center(k), step(k);
      for (Eigen::Index j = 0; j < k; ++j) {
        const bool fl = std::isfinite(set.lo(j)), fh = std::isfinite(set.hi(j));
        if (fl && fh) {
          center(j) = 0.5 * (set.lo(j) + set.hi(j));
          step(j) = set.hi(j) > set.lo(j) ? 0.5 * (set.hi(j) - set.lo(j)) : 1.0;
        } else {
          center(j) = fl ? set.lo(j) + 1.0 : (fh ? set.hi(j) - 1.0 : 0.0);
          step(j) = 1.0;
        }
      }
      const auto mdl = detail::fit_quadratic(hfun, center, step, opts.quadratic_check_tol);
      if (mdl.valid) return detail::maximize_quadratic_box(hfun, mdl, set.lo, set.hi);
      if (!set.bounded()) {
        throw InputError("maximize_hamiltonian: non-quadratic Hamiltonian over an unbounded control box");
      }
      return detail::maximize_grid_box(hfun, set.lo, set.hi, opts);
    }
    case ControlSet::Kind::ball: {
      const Vector step = Vector::Constant(k, set.radius > 0.0 ? set.radius : 1.0);
      const auto mdl = detail::fit_quadratic(hfun, set.center, step, opts.quadratic_check_tol);
      const double scale = 1.0 + std::abs(mdl.h0) + mdl.g.lpNorm<1>();
      HamiltonianMax best;
      if (mdl.valid && mdl.q.norm() <= 1e-9 * scale) {
        const double gn = mdl.g.norm();
        if (gn <= 1e-12 * scale || set.radius == 0.0) {
          best.u_star = set.center;
          best.arc = "C";
        } else {
          best.u_star = set.center + set.radius * mdl.g / gn;
          best.arc = "B";
        }
        best.value = hfun(best.u_star);
        return best;
      }
      // Sample the ball on concentric spheres, then refine the best sample.
      best.exact = false;
      best.arc = "grid";
      best.u_star = set.center;
      best.value = hfun(set.center);
      const auto dirs = sphere_directions(k, 64 * static_cast<int>(k));
      for (int ring = 1; ring <= 8; ++ring) {
        for (const auto& d : dirs) {
          const Vector u = set.center + set.radius * (ring / 8.0) * d;
          const double val = hfun(u);
          if (detail::better(val, best.value, 1.0 + std::abs(val))) {
            best.u_star = u;
            best.value = val;
          }
        }
      }
      double width = set.radius / 8.0;
      for (int round = 0; round < opts.refine_rounds * 4; ++round) {
        for (const auto& d : dirs) {
          Vector u = best.u_star + width * d;
          const Vector off = u - set.center;
          if (off.norm() > set.radius) u = set.center + off * (set.radius / off.norm());
          const double val = hfun(u);
          if (detail::better(val, best.value, 1.0 + std::abs(val))) {
            best.u_star = u;
            best.value = val;
          }
        }
        width *= 0.5;
      }
      best.resolution = width;
      return best;
    }
  }
  throw InputError("maximize_hamiltonian: unknown control set");
}

/// The extremising control of a given arc (as labelled by maximize_hamiltonian),
/// continued to (p0, p, x) even where another arc has become optimal.
inline Vector control_on_arc(const ControlSystem& sys, double p0, const Vector& p, const Vector& x,
                             const std::string& arc, const MaximizeOptions& opts = {}) {
  const ControlSet& set = sys.control_set;
  if (set.kind == ControlSet::Kind::finite && !arc.empty() && arc[0] == 'P') {
    return set.points.at(static_cast<std::size_t>(std::stoul(arc.substr(1))));
  }
  if (set.kind == ControlSet::Kind::box && static_cast<Eigen::Index>(arc.size()) == sys.k &&
      arc.find_first_not_of("LHF") == std::string::npos) {
    if (arc.find('F') == std::string::npos) {
      Vector u(sys.k);
      for (Eigen::Index j = 0; j < sys.k; ++j) u(j) = arc[static_cast<std::size_t>(j)] == 'L' ? set.lo(j) : set.hi(j);
      return u;
    }
    const std::function<double(const Vector&)> hfun = [&](const Vector& u) { return hamiltonian(sys, p0, p, x, u); };
    Vector center(sys.k), step(sys.k);
    for (Eigen::Index j = 0; j < sys.k; ++j) {
      const bool fl = std::isfinite(set.lo(j)), fh = std::isfinite(set.hi(j));
      center(j) = fl && fh ? 0.5 * (set.lo(j) + set.hi(j)) : (fl ? set.lo(j) + 1.0 : (fh ? set.hi(j) - 1.0 : 0.0));
      step(j) = fl && fh && set.hi(j) > set.lo(j) ? 0.5 * (set.hi(j) - set.lo(j)) : 1.0;
    }
    const auto mdl = detail::fit_quadratic(hfun, center, step, opts.quadratic_check_tol);
    if (mdl.valid) {
      const auto res = detail::maximize_quadratic_box(hfun, mdl, set.lo, set.hi, &arc);
      if (res.u_star.size() == sys.k) return res.u_star;
    }
  }
  return maximize_hamiltonian(sys, p0, p, x, opts).u_star;
}

// ---------------------------------------------------------------------------
// Adjoint curves and extremals.

struct AdjointCurve {
  std::vector<double> grid;
  double sigma0 = -1.0;
  std::vector<Vector> sigma;
};

struct BoundaryCondition {
  enum class Kind { point, manifold };
  Kind kind = Kind::point;
  /// The point itself, or the anchor of an affine manifold.
  Vector point;
  /// Tangent basis of the manifold at the anchor (empty for a point).
  std::vector<Vector> tangent_basis;

  static BoundaryCondition at(Vector x) { return {Kind::point, std::move(x), {}}; }
  static BoundaryCondition manifold(Vector anchor, std::vector<Vector> basis) {
    return {Kind::manifold, std::move(anchor), std::move(basis)};
  }
};

struct BoundarySpec {
  enum class Mode { fixed_time, free_time };
  Mode mode = Mode::fixed_time;
  BoundaryCondition initial;
  BoundaryCondition final;

  void check(Eigen::Index m) const {
    for (const auto* bc : {&initial, &final}) {
      require_dim(bc->point.size(), m, "boundary point");
      if (bc->tangent_basis.empty()) continue;
      Matrix b(m, static_cast<Eigen::Index>(bc->tangent_basis.size()));
      for (std::size_t i = 0; i < bc->tangent_basis.size(); ++i) {
        require_dim(bc->tangent_basis[i].size(), m, "boundary tangent basis vector");
        b.col(static_cast<Eigen::Index>(i)) = bc->tangent_basis[i];
      }
      Eigen::FullPivLU<Matrix> lu(b);
      if (lu.rank() != b.cols()) throw InputError("boundary tangent basis is not linearly independent");
    }
  }
};

struct Extremal {
  ExtendedTrajectory ext_traj;  // states (x0, x), cost coordinate first
  ControlSignal control;
  AdjointCurve adjoint;
  /// Times where the control is discontinuous; these are excluded from the
  /// Lebesgue grid. Defaults to the control's own switch times.
  std::vector<double> switch_times;
  /// Extremising arc on each interval between consecutive switch times, when known.
  std::vector<std::string> arcs;
};

/// The x-part of a cost-extended trajectory.
inline Trajectory base_trajectory(const ExtendedTrajectory& ext) {
  if (!ext.extended) return ext;
  Trajectory tr = ext;
  tr.extended = false;
  for (auto& s : tr.states) s = Vector(s.tail(s.size() - 1));
  return tr;
}

/// Adds the running-cost coordinate to a trajectory by RK4 quadrature of F
/// along its grid.
inline ExtendedTrajectory extend_trajectory(const ControlSystem& sys, const Trajectory& traj) {
  if (traj.extended) throw InputError("extend_trajectory: trajectory is already cost-extended");
  ExtendedTrajectory ext = traj;
  ext.extended = true;
  double cost_acc = 0.0;
  for (std::size_t i = 0; i < traj.grid.size(); ++i) {
    if (i > 0) {
      const double t0 = traj.grid[i - 1], t1 = traj.grid[i], h = t1 - t0;
      const Vector& u = traj.control.at(0.5 * (t0 + t1));
      const double tm = t0 + 0.5 * h;
      cost_acc += h / 6.0 *
                  (sys.cost_rate(traj.states[i - 1], u) + 4.0 * sys.cost_rate(traj.state_at(sys, tm), u) +
                   sys.cost_rate(traj.states[i], u));
    }
    Vector s(sys.m + 1);
    s(0) = cost_acc;
    s.tail(sys.m) = traj.states[i];
    ext.states[i] = s;
  }
  return ext;
}

inline Extremal make_extremal(const ControlSystem& sys, const Trajectory& traj, AdjointCurve adjoint) {
  Extremal e;
  e.ext_traj = extend_trajectory(sys, traj);
  e.control = traj.control;
  e.adjoint = std::move(adjoint);
  e.switch_times = traj.control.switch_times;
  return e;
}

namespace detail {

inline Vector adjoint_rhs(const ControlSystem& sys, const Trajectory& traj, double p0, double t, const Vector& p) {
  const Vector x = traj.state_at(sys, t);
  const Vector& u = traj.control.at(t);
  Vector dp = -sys.jac_x(x, u).transpose() * p;
  if (p0 != 0.0) dp -= p0 * sys.cost_grad(x, u);
  return dp;
}

}  // namespace detail

/// Integrates p' = -p0 grad_x F - (df/dx)^T p backward from p(b) = p_b along the trajectory's grid.
inline AdjointCurve adjoint_flow(const ControlSystem& sys, const Trajectory& traj, double p0, const Vector& p_b) {
  require_dim(p_b.size(), sys.m, "adjoint terminal covector");
  const Trajectory base = base_trajectory(traj);
  AdjointCurve ac;
  ac.grid = base.grid;
  ac.sigma0 = p0;
  ac.sigma.assign(base.grid.size(), Vector());
  const std::size_t n = base.grid.size();
  ac.sigma[n - 1] = p_b;
  const detail::Rhs rhs = [&](double t, const Vector& p) { return detail::adjoint_rhs(sys, base, p0, t, p); };
  for (std::size_t i = n - 1; i > 0; --i) {
    ac.sigma[i - 1] = detail::rk4_step(rhs, base.grid[i], base.grid[i - 1], ac.sigma[i]);
    if (!ac.sigma[i - 1].allFinite()) throw NumericalError("adjoint_flow: blow-up");
  }
  return ac;
}

// ---------------------------------------------------------------------------
// Condition residuals.

enum class Classification { normal, abnormal, strict_abnormal_certificate, strict_normal_certificate, undetermined };

inline const char* to_string(Classification c) {
  switch (c) {
    case Classification::normal: return "normal";
    case Classification::abnormal: return "abnormal";
    case Classification::strict_abnormal_certificate: return "strict_abnormal_certificate";
    case Classification::strict_normal_certificate: return "strict_normal_certificate";
    case Classification::undetermined: return "undetermined";
  }
  return "?";
}

struct PMPReport {
  double res_3a = 0.0;  // max over the Lebesgue grid of sup_u H - H(u*(t))
  double res_3b = 0.0;  // fixed time: max |M(t) - median M|; free time: max |M(t)|
  double res_3c = 0.0;  // min over the grid of |(sigma0, sigma(t))|
  double res_3d_drift = 0.0;
  bool res_3d_sign_ok = true;  // sigma0 <= 0
  double res_3e_initial = 0.0;
  double res_3e_final = 0.0;
  double adjoint_defect = 0.0;  // one-step RK4 mismatch of the stored adjoint
  double sigma0 = 0.0;
  double tol = 1e-6;
  std::size_t lebesgue_nodes = 0;
  bool exact_maximization = true;
  double maximization_resolution = 0.0;
  Classification classification = Classification::undetermined;

  bool passed() const {
    return res_3a <= tol && res_3b <= tol && res_3c > tol && res_3d_drift <= tol && res_3d_sign_ok &&
           res_3e_initial <= tol && res_3e_final <= tol;
  }
};

struct CheckOptions {
  double tol = 1e-6;
  double switch_exclusion = 1e-9;
  MaximizeOptions maximize{};
};

inline PMPReport check_pmp(const ControlSystem& sys, const Extremal& ex, const BoundarySpec& bounds,
                           const CheckOptions& opts = {}) {
  const Trajectory base = base_trajectory(ex.ext_traj);
  const auto& grid = base.grid;
  if (ex.adjoint.grid.size() != grid.size() || ex.adjoint.sigma.size() != grid.size())
    throw InputError("check_pmp: adjoint grid does not match the trajectory grid");
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (std::abs(ex.adjoint.grid[i] - grid[i]) > 1e-12 * std::max(1.0, std::abs(grid[i])))
      throw InputError("check_pmp: adjoint grid does not match the trajectory grid");
  bounds.check(sys.m);

  PMPReport rep;
  rep.tol = opts.tol;
  rep.sigma0 = ex.adjoint.sigma0;
  const double p0 = ex.adjoint.sigma0;

  std::vector<double> ham_max;
  rep.res_3c = kInf;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vector& p = ex.adjoint.sigma[i];
    rep.res_3c = std::min(rep.res_3c, std::sqrt(p0 * p0 + p.squaredNorm()));
    const double t = grid[i];
    const bool at_switch = std::any_of(ex.switch_times.begin(), ex.switch_times.end(), [&](double s) {
      return std::abs(s - t) <= opts.switch_exclusion * std::max(1.0, std::abs(s));
    });
    if (at_switch) continue;
    const Vector& x = base.states[i];
    const auto hm = maximize_hamiltonian(sys, p0, p, x, opts.maximize);
    rep.exact_maximization = rep.exact_maximization && hm.exact;
    rep.maximization_resolution = std::max(rep.maximization_resolution, hm.resolution);
    const double hu = hamiltonian(sys, p0, p, x, ex.control.at(t));
    rep.res_3a = std::max(rep.res_3a, std::max(0.0, hm.value - hu));
    ham_max.push_back(hm.value);
  }
  rep.lebesgue_nodes = ham_max.size();
  if (!ham_max.empty()) {
    if (bounds.mode == BoundarySpec::Mode::fixed_time) {
      std::vector<double> sorted = ham_max;
      std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(sorted.size() / 2), sorted.end());
      const double median = sorted[sorted.size() / 2];
      for (double v : ham_max) rep.res_3b = std::max(rep.res_3b, std::abs(v - median));
    } else {
      for (double v : ham_max) rep.res_3b = std::max(rep.res_3b, std::abs(v));
    }
  }

  // sigma0 re-check: integrate the cost component of the extended cotangent lift.
  {
    const ControlSystem ext = extend(sys);
    double drift = 0.0, sig0 = p0;
    auto d_sig0 = [&](double t, const Vector& p, double s0) {
      const Vector xh = ex.ext_traj.extended ? ex.ext_traj.state_at(ext, t) : Vector();
      Vector xfull(sys.m + 1);
      if (xh.size() == sys.m + 1) {
        xfull = xh;
      } else {
        xfull(0) = 0.0;
        xfull.tail(sys.m) = base.state_at(sys, t);
      }
      Vector ph(sys.m + 1);
      ph(0) = s0;
      ph.tail(sys.m) = p;
      return -ext.jac_x(xfull, ex.control.at(t)).col(0).dot(ph);
    };
    for (std::size_t i = 1; i < grid.size(); ++i) {
      const double h = grid[i] - grid[i - 1];
      const double upper = grid[i];
      const double k1 = d_sig0(grid[i - 1], ex.adjoint.sigma[i - 1], sig0);
      const double k4 = d_sig0(detail::inner_time(grid[i], upper), ex.adjoint.sigma[i], sig0);
      sig0 += 0.5 * h * (k1 + k4);
      drift = std::max(drift, std::abs(sig0 - p0));
    }
    rep.res_3d_drift = drift;
  }
  rep.res_3d_sign_ok = p0 <= 0.0;

  for (const auto& e : bounds.initial.tangent_basis)
    rep.res_3e_initial = std::max(rep.res_3e_initial, std::abs(ex.adjoint.sigma.front().dot(e)));
  for (const auto& e : bounds.final.tangent_basis)
    rep.res_3e_final = std::max(rep.res_3e_final, std::abs(ex.adjoint.sigma.back().dot(e)));

  {
    const detail::Rhs rhs = [&](double t, const Vector& p) { return detail::adjoint_rhs(sys, base, p0, t, p); };
    for (std::size_t i = grid.size() - 1; i > 0; --i) {
      const Vector pred = detail::rk4_step(rhs, grid[i], grid[i - 1], ex.adjoint.sigma[i]);
      rep.adjoint_defect = std::max(rep.adjoint_defect, (pred - ex.adjoint.sigma[i - 1]).norm() /
                                                            (1.0 + ex.adjoint.sigma[i - 1].norm()));
    }
  }

  if (rep.passed()) {
    if (p0 == -1.0) rep.classification = Classification::normal;
    if (p0 == 0.0) rep.classification = Classification::abnormal;
  }
  return rep;
}

/// A terminal covector (sigma0, sigma) for a perturbation cone in the
/// extended space (cost coordinate first): nonpositive on every generator,
/// sigma0 <= 0, and annihilating {0} x T S_f when a final basis is given.
/// A normal covector (sigma0 = -1) is preferred; nullopt when only zero fits.
inline std::optional<Vector> terminal_covector_from_cone(const PerturbationCone& cone_b,
                                                         const std::vector<Vector>& final_tangent_basis = {},
                                                         double tol = 1e-9) {
  const Eigen::Index n = cone_b.cone.dim;
  if (n < 2) throw InputError("terminal_covector_from_cone: cone must live in the extended space");
  const auto N = static_cast<Eigen::Index>(cone_b.cone.size());
  const auto nb = static_cast<Eigen::Index>(final_tangent_basis.size());
  const Matrix g = N > 0 ? cone_b.cone.unit_matrix() : Matrix(n, 0);
  Matrix annih(nb, n);
  for (Eigen::Index i = 0; i < nb; ++i) {
    require_dim(final_tangent_basis[static_cast<std::size_t>(i)].size(), n - 1, "final tangent basis vector");
    annih(i, 0) = 0.0;
    annih.row(i).tail(n - 1) = final_tangent_basis[static_cast<std::size_t>(i)].transpose();
  }

  // Normal: sigma0 = -1 fixed, sigma free.
  {
    lp::LinearProgram prog;
    prog.cost = Vector::Zero(n);
    if (N > 0) {
      prog.ub = g.transpose();
      prog.ub_rhs = Vector::Constant(N, tol);
    }
    if (nb > 0) {
      prog.eq = annih;
      prog.eq_rhs = Vector::Zero(nb);
    }
    prog.lower = Vector::Constant(n, -kInf);
    prog.upper = Vector::Constant(n, kInf);
    prog.lower(0) = -1.0;
    prog.upper(0) = -1.0;
    const auto sol = lp::solve(prog);
    if (sol.status == lp::Status::optimal) return sol.x;
  }
  // Abnormal: sigma0 = 0, sigma nonzero.
  for (Eigen::Index j = 1; j < n; ++j) {
    for (double sign : {1.0, -1.0}) {
      lp::LinearProgram prog;
      prog.cost = Vector::Zero(n);
      prog.cost(j) = -sign;
      if (N > 0) {
        prog.ub = g.transpose();
        prog.ub_rhs = Vector::Zero(N);
      }
      if (nb > 0) {
        prog.eq = annih;
        prog.eq_rhs = Vector::Zero(nb);
      }
      prog.lower = Vector::Constant(n, -1.0);
      prog.upper = Vector::Constant(n, 1.0);
      prog.lower(0) = 0.0;
      prog.upper(0) = 0.0;
      const auto sol = lp::solve(prog);
      if (sol.status == lp::Status::optimal && -sol.objective > tol) return Vector(sol.x / sol.x.norm());
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Classification.

struct ClassifyOptions {
  double tol = 1e-6;
  /// Lebesgue nodes used in the lift feasibility programs (evenly subsampled).
  int max_nodes = 120;
  /// Offsets probing unbounded control directions and local stationarity.
  std::vector<double> probe_offsets{1e-3, 1.0};
  CheckOptions check{};
};

struct ClassificationResult {
  Classification classification = Classification::undetermined;
  std::optional<Vector> normal_terminal;    // p(b) of a lift with sigma0 = -1
  std::optional<Vector> abnormal_terminal;  // p(b) of a nonzero lift with sigma0 = 0
  bool normal_infeasible_certified = false;
  bool abnormal_infeasible_certified = false;
  double normal_infeasibility = 0.0;
  std::optional<PMPReport> normal_report;
  std::optional<PMPReport> abnormal_report;
};

namespace detail {

inline std::vector<Vector> probe_controls(const ControlSet& set, const Vector& u_now, const std::vector<double>& offs) {
  std::vector<Vector> w;
  const Eigen::Index k = set.dim();
  switch (set.kind) {
    case ControlSet::Kind::finite: w = set.points; break;
    case ControlSet::Kind::box: {
      std::vector<Eigen::Index> bounded;
      for (Eigen::Index j = 0; j < k; ++j)
        if (std::isfinite(set.lo(j)) && std::isfinite(set.hi(j))) bounded.push_back(j);
      const auto nb = bounded.size();
      for (std::size_t mask = 0; mask < (std::size_t{1} << nb); ++mask) {
        Vector v = u_now;
        for (std::size_t b = 0; b < nb; ++b) {
          const Eigen::Index j = bounded[b];
          v(j) = (mask >> b) & 1U ? set.hi(j) : set.lo(j);
        }
        w.push_back(v);
      }
      for (Eigen::Index j = 0; j < k; ++j) {
        for (double o : offs) {
          for (double sgn : {1.0, -1.0}) {
            Vector v = u_now;
            v(j) += sgn * o;
            if (set.contains(v)) w.push_back(v);
          }
        }
      }
      break;
    }
    case ControlSet::Kind::ball: {
      for (const auto& d : sphere_directions(k, 16 * static_cast<int>(k))) w.push_back(set.center + set.radius * d);
      for (Eigen::Index j = 0; j < k; ++j) {
        for (double o : offs) {
          for (double sgn : {1.0, -1.0}) {
            Vector v = u_now;
            v(j) += sgn * o;
            if (set.contains(v)) w.push_back(v);
          }
        }
      }
      break;
    }
  }
  return w;
}

}  // namespace detail

/// Searches for adjoint lifts with sigma0 = -1 and with sigma0 = 0 through
/// linear feasibility on the terminal covector p(b): every adjoint is
/// p(t) = Phi(t) p(b) + sigma0 psi(t), so the maximum condition at sampled
/// controls, Hamiltonian constancy and transversality are linear in p(b).
inline ClassificationResult classify_extremal(const ControlSystem& sys, const Trajectory& traj_in,
                                              const BoundarySpec& bounds, const ClassifyOptions& opts = {}) {
  const Trajectory traj = base_trajectory(traj_in);
  const Eigen::Index m = sys.m;
  bounds.check(m);
  const auto& grid = traj.grid;
  const std::size_t n = grid.size();

  // Fundamental solutions of the adjoint equation.
  std::vector<AdjointCurve> cols;
  for (Eigen::Index j = 0; j < m; ++j) cols.push_back(adjoint_flow(sys, traj, 0.0, Vector::Unit(m, j)));
  const AdjointCurve psi = adjoint_flow(sys, traj, 1.0, Vector::Zero(m));
  auto phi_at = [&](std::size_t i) {
    Matrix phi(m, m);
    for (Eigen::Index j = 0; j < m; ++j) phi.col(j) = cols[static_cast<std::size_t>(j)].sigma[i];
    return phi;
  };

  std::vector<std::size_t> nodes;
  for (std::size_t i = 0; i < n; ++i)
    if (!traj.control.is_switch(grid[i], 1e-9)) nodes.push_back(i);
  if (static_cast<int>(nodes.size()) > opts.max_nodes) {
    std::vector<std::size_t> sub;
    for (int k = 0; k < opts.max_nodes; ++k)
      sub.push_back(nodes[static_cast<std::size_t>(
          std::llround(static_cast<double>(k) * static_cast<double>(nodes.size() - 1) / (opts.max_nodes - 1)))]);
    sub.push_back(nodes.back());
    std::sort(sub.begin(), sub.end());
    sub.erase(std::unique(sub.begin(), sub.end()), sub.end());
    nodes = sub;
  }

  // Rows as (coefficients on p(b), coefficient on sigma0).
  std::vector<Vector> ineq_a, eq_a;
  std::vector<double> ineq_c, eq_c;
  std::vector<std::pair<Vector, double>> ham_rows;
  for (std::size_t i : nodes) {
    const Vector& x = traj.states[i];
    const Vector& u = traj.control.at(grid[i]);
    const Matrix phi = phi_at(i);
    const Vector& ps = psi.sigma[i];
    const Vector fu = sys.dynamics(x, u);
    const double Fu = sys.cost_rate(x, u);
    for (const Vector& w : detail::probe_controls(sys.control_set, u, opts.probe_offsets)) {
      const Vector df = sys.dynamics(x, w) - fu;
      const double dF = sys.cost_rate(x, w) - Fu;
      ineq_a.push_back(phi.transpose() * df);
      ineq_c.push_back(dF + ps.dot(df));
    }
    ham_rows.emplace_back(phi.transpose() * fu, Fu + ps.dot(fu));
  }
  if (bounds.mode == BoundarySpec::Mode::free_time) {
    for (const auto& [a, c] : ham_rows) {
      eq_a.push_back(a);
      eq_c.push_back(c);
    }
  } else {
    for (std::size_t r = 1; r < ham_rows.size(); ++r) {
      eq_a.push_back(ham_rows[r].first - ham_rows[0].first);
      eq_c.push_back(ham_rows[r].second - ham_rows[0].second);
    }
  }
  for (const auto& e : bounds.final.tangent_basis) {
    eq_a.push_back(e);
    eq_c.push_back(0.0);
  }
  for (const auto& e : bounds.initial.tangent_basis) {
    eq_a.push_back(phi_at(0).transpose() * e);
    eq_c.push_back(psi.sigma[0].dot(e));
  }

  auto stack = [&](const std::vector<Vector>& rows) {
    Matrix a(static_cast<Eigen::Index>(rows.size()), m);
    for (std::size_t r = 0; r < rows.size(); ++r) a.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
    return a;
  };
  const Matrix A_in = stack(ineq_a);
  const Matrix A_eq = stack(eq_a);
  const Vector c_in = Eigen::Map<const Vector>(ineq_c.data(), static_cast<Eigen::Index>(ineq_c.size()));
  const Vector c_eq = Eigen::Map<const Vector>(eq_c.data(), static_cast<Eigen::Index>(eq_c.size()));

  ClassificationResult res;
  auto confirm = [&](double p0, const Vector& pb) {
    Extremal ex = make_extremal(sys, traj, adjoint_flow(sys, traj, p0, pb));
    return check_pmp(sys, ex, bounds, opts.check);
  };

  // sigma0 = -1: A p + (-1) c <= tol  and  |E p - c| <= tol.
  {
    lp::LinearProgram prog;
    // Minimise the total slack on equality rows.
    const auto ne = A_eq.rows();
    prog.cost = Vector::Zero(m + 2 * ne);
    prog.cost.tail(2 * ne).setOnes();
    if (A_in.rows() > 0) {
      prog.ub = Matrix::Zero(A_in.rows(), m + 2 * ne);
      prog.ub.leftCols(m) = A_in;
      prog.ub_rhs = c_in + Vector::Constant(A_in.rows(), opts.tol);
    }
    if (ne > 0) {
      prog.eq = Matrix::Zero(ne, m + 2 * ne);
      prog.eq.leftCols(m) = A_eq;
      prog.eq.block(0, m, ne, ne) = Matrix::Identity(ne, ne);
      prog.eq.block(0, m + ne, ne, ne) = -Matrix::Identity(ne, ne);
      prog.eq_rhs = c_eq;
    }
    prog.lower = Vector::Zero(m + 2 * ne);
    prog.lower.head(m).setConstant(-kInf);
    prog.upper = Vector::Constant(m + 2 * ne, kInf);
    const auto sol = lp::solve(prog);
    if (sol.status == lp::Status::optimal && sol.objective <= opts.tol * std::max<double>(1.0, static_cast<double>(ne))) {
      const Vector pb = sol.x.head(m);
      const PMPReport rep = confirm(-1.0, pb);
      res.normal_report = rep;
      if (rep.passed()) res.normal_terminal = pb;
    } else {
      res.normal_infeasibility = sol.status == lp::Status::optimal ? sol.objective : sol.infeasibility;
      res.normal_infeasible_certified = true;
    }
  }

  // sigma0 = 0: homogeneous cone {p : A p <= 0, E p = 0}; nonzero iff some coordinate can move.
  {
    std::optional<Vector> found;
    bool any_failure = false;
    for (Eigen::Index j = 0; j < m && !found; ++j) {
      for (double sign : {1.0, -1.0}) {
        lp::LinearProgram prog;
        prog.cost = Vector::Zero(m);
        prog.cost(j) = -sign;
        if (A_in.rows() > 0) {
          prog.ub = A_in;
          prog.ub_rhs = Vector::Zero(A_in.rows());
        }
        if (A_eq.rows() > 0) {
          prog.eq = A_eq;
          prog.eq_rhs = Vector::Zero(A_eq.rows());
        }
        prog.lower = Vector::Constant(m, -1.0);
        prog.upper = Vector::Constant(m, 1.0);
        const auto sol = lp::solve(prog);
        if (sol.status != lp::Status::optimal) {
          any_failure = true;
          continue;
        }
        if (-sol.objective > 1e-6) {
          found = sol.x;
          break;
        }
      }
    }
    if (found) {
      const PMPReport rep = confirm(0.0, *found);
      res.abnormal_report = rep;
      if (rep.passed()) res.abnormal_terminal = *found;
    } else if (!any_failure) {
      res.abnormal_infeasible_certified = true;
    }
  }

  const bool normal = res.normal_terminal.has_value();
  const bool abnormal = res.abnormal_terminal.has_value();
  if (normal && abnormal) {
    res.classification = Classification::abnormal;
  } else if (normal) {
    res.classification =
        res.abnormal_infeasible_certified ? Classification::strict_normal_certificate : Classification::normal;
  } else if (abnormal) {
    res.classification =
        res.normal_infeasible_certified ? Classification::strict_abnormal_certificate : Classification::abnormal;
  }
  return res;
}

}  // namespace pmp
