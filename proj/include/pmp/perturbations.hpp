#pragma once

// Needle-like variations of a reference control, their first-order effect
// on the trajectory (perturbation vectors), the cones those vectors generate,
// and the constructive realisation of interior cone directions by actual
// perturbed controls.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pmp/cone_geometry.hpp"
#include "pmp/control_system.hpp"
#include "pmp/core.hpp"
#include "pmp/flows.hpp"

namespace pmp {

/// Replace u by `u1` on [t1 - l1 s, t1].
struct NeedleData {
  double t1 = 0.0;
  double l1 = 0.0;
  Vector u1;
};

/// A needle at `tau` plus a shift of the final time by `delta_tau` s.
struct TimePerturbationData {
  double tau = 0.0;
  double l_tau = 0.0;
  double delta_tau = 0.0;
  Vector u_tau;
};

struct PerturbationVector {
  double base_time = 0.0;
  Vector vector;
};

struct ConeSampling {
  std::vector<double> times;
  std::vector<Vector> controls;
};

struct GeneratorProvenance {
  enum class Kind { needle, axis, initial };
  Kind kind = Kind::needle;
  double tau = 0.0;          // needle time, cone time for axis, a for initial
  double l = 1.0;            // needle length rate; sign (+1/-1) for axis and initial
  Vector u;                  // needle value; control at the cone time for axis
  std::size_t basis_index = 0;  // initial-manifold basis vector
};

inline const char* to_string(GeneratorProvenance::Kind k) {
  switch (k) {
    case GeneratorProvenance::Kind::needle: return "needle";
    case GeneratorProvenance::Kind::axis: return "axis";
    case GeneratorProvenance::Kind::initial: return "initial";
  }
  return "?";
}

struct PerturbationCone {
  enum class Kind { tangent, time, initial };
  Kind kind = Kind::tangent;
  double at_time = 0.0;
  GeneratedCone cone;
  std::vector<GeneratorProvenance> provenance;  // aligned with cone.generators
  ConeSampling sampling;
  std::vector<Vector> initial_basis;
};

namespace detail {

inline IntegratorConfig traj_config(const Trajectory& traj) {
  IntegratorConfig cfg;
  cfg.step = traj.step;
  return cfg;
}

inline void require_lebesgue(const Trajectory& traj, double t, const char* what) {
  if (!(t > traj.control.a && t <= traj.control.b))
    throw InputError(std::string(what) + ": time must lie in (a, b]");
  if (traj.control.is_switch(t)) throw InputError(std::string(what) + ": time is a control switch (not a Lebesgue time)");
}

}  // namespace detail

/// u with value u1 on [t1 - l1 s, t1].
inline ControlSignal apply_needle(const ControlSignal& u, const NeedleData& pi, double s) {
  if (!(s > 0.0)) throw InputError("apply_needle: s must be positive");
  if (pi.l1 < 0.0) throw InputError("apply_needle: negative needle length");
  if (pi.l1 == 0.0) return u;
  const double from = pi.t1 - pi.l1 * s;
  if (!(from > u.a) || pi.t1 > u.b) throw InputError("apply_needle: needle interval escapes [a, b]");
  for (const auto& [lo, hi] : u.needle_intervals) {
    if (from < hi && lo < pi.t1) throw InputError("apply_needle: overlapping needle intervals");
  }
  ControlSignal out = u.with_value_on(from, pi.t1, pi.u1);
  out.needle_intervals.emplace_back(from, pi.t1);
  return out;
}

/// Applies several needles at once. Needles sharing t1 are stacked back to
/// back ending at t1, later-listed ones innermost (closest to t1).
inline ControlSignal apply_needles(const ControlSignal& u, const std::vector<NeedleData>& needles, double s) {
  std::vector<NeedleData> placed;
  std::vector<bool> done(needles.size(), false);
  for (std::size_t i = 0; i < needles.size(); ++i) {
    if (done[i]) continue;
    std::vector<std::size_t> group;
    for (std::size_t j = i; j < needles.size(); ++j) {
      if (!done[j] && std::abs(needles[j].t1 - needles[i].t1) <= 1e-12 * std::max(1.0, std::abs(needles[i].t1))) {
        group.push_back(j);
        done[j] = true;
      }
    }
    double end = needles[i].t1;
    for (auto it = group.rbegin(); it != group.rend(); ++it) {
      const NeedleData& n = needles[*it];
      if (n.l1 < 0.0) throw InputError("apply_needles: negative needle length");
      if (n.l1 == 0.0) continue;
      // Shift the needle so that it ends at `end`: same value, same length.
      placed.push_back({end, n.l1, n.u1});
      end -= n.l1 * s;
    }
  }
  ControlSignal out = u;
  for (const auto& n : placed) out = apply_needle(out, n, s);
  return out;
}

/// Control realising a time perturbation at scale s, evaluated at
/// tau + delta_tau s. The needle ends at min(tau, tau + delta_tau s) so a
/// shortened horizon never cuts it off; past the reference horizon the
/// reference value is held, never the needle value.
struct TimePerturbedControl {
  ControlSignal control;
  double final_time = 0.0;
};

inline TimePerturbedControl apply_time_perturbation(const ControlSignal& u, const TimePerturbationData& pi, double s) {
  TimePerturbedControl out;
  out.final_time = pi.tau + s * pi.delta_tau;
  ControlSignal base = u;
  base.b = std::max(base.b, out.final_time);
  out.control = pi.l_tau > 0.0 ? apply_needle(base, {std::min(pi.tau, out.final_time), pi.l_tau, pi.u_tau}, s) : base;
  return out;
}

/// l1 (f(gamma(t1), u1) - f(gamma(t1), u(t1))).
inline PerturbationVector class1_vector(const ControlSystem& sys, const Trajectory& traj, const NeedleData& pi) {
  detail::require_lebesgue(traj, pi.t1, "class1_vector");
  require_dim(pi.u1.size(), sys.k, "class1_vector control");
  const Vector x = traj.state_at(sys, pi.t1);
  const Vector& u = traj.control.at(pi.t1);
  return {pi.t1, pi.l1 * (sys.dynamics(x, pi.u1) - sys.dynamics(x, u))};
}

/// V(t): the perturbation vector carried along the reference by the complete lift.
inline PerturbationVector transport_vector(const ControlSystem& sys, const Trajectory& traj,
                                           const PerturbationVector& v, double t) {
  if (t < v.base_time) throw InputError("transport_vector: target time precedes the base time");
  require_dim(v.vector.size(), sys.m, "transport_vector");
  if (t == v.base_time) return v;
  const TangentState init{traj.state_at(sys, v.base_time), v.vector};
  const TangentState out = tangent_lift_flow(sys.field(traj.control), t, v.base_time, init, detail::traj_config(traj));
  return {t, out.v};
}

/// Sum of the transported class-I vectors of a needle family, evaluated at t.
inline PerturbationVector multi_needle_vector(const ControlSystem& sys, const Trajectory& traj,
                                              const std::vector<NeedleData>& needles, double t) {
  PerturbationVector out{t, Vector::Zero(sys.m)};
  for (const auto& n : needles) {
    if (n.t1 > t) throw InputError("multi_needle_vector: needle time after evaluation time");
    out.vector += transport_vector(sys, traj, class1_vector(sys, traj, n), t).vector;
  }
  return out;
}

/// f(gamma(tau), u(tau)) delta_tau + l_tau (f(gamma(tau), u_tau) - f(gamma(tau), u(tau))).
inline PerturbationVector time_perturbation_vector(const ControlSystem& sys, const Trajectory& traj,
                                                   const TimePerturbationData& pi) {
  detail::require_lebesgue(traj, pi.tau, "time_perturbation_vector");
  const Vector x = traj.state_at(sys, pi.tau);
  const Vector& u = traj.control.at(pi.tau);
  const Vector drift = sys.dynamics(x, u);
  Vector v = drift * pi.delta_tau;
  if (pi.l_tau != 0.0) v += pi.l_tau * (sys.dynamics(x, pi.u_tau) - drift);
  return {pi.tau, v};
}

/// Endpoint of the trajectory driven by `control` from x0 at control.a up to t.
inline Vector perturbed_endpoint(const ControlSystem& sys, const ControlSignal& control, const Vector& x0, double t,
                                 const IntegratorConfig& cfg) {
  return flow(sys.field(control), t, control.a, x0, cfg);
}

namespace detail {

inline void add_needle_generators(const ControlSystem& sys, const Trajectory& traj, double t,
                                  const ConeSampling& sampling, std::vector<Vector>& raw,
                                  std::vector<GeneratorProvenance>& prov) {
  if (sampling.times.empty() || sampling.controls.empty()) throw InputError("perturbation cone: empty sampling");
  for (double tau : sampling.times) {
    if (tau > t) throw InputError("perturbation cone: sampled time after the cone time");
    require_lebesgue(traj, tau, "perturbation cone");
    // One transport of the full differential serves every control sample at tau.
    const Vector x = traj.state_at(sys, tau);
    const Matrix d = tangent_lift_matrix(sys.field(traj.control), t, tau, x, traj_config(traj)).second;
    const Vector base = sys.dynamics(x, traj.control.at(tau));
    for (const auto& u1 : sampling.controls) {
      require_dim(u1.size(), sys.k, "perturbation cone control sample");
      raw.push_back(d * (sys.dynamics(x, u1) - base));
      prov.push_back({GeneratorProvenance::Kind::needle, tau, 1.0, u1, 0});
    }
  }
}

inline PerturbationCone finish_cone(PerturbationCone::Kind kind, double t, Eigen::Index m,
                                    const std::vector<Vector>& raw, const std::vector<GeneratorProvenance>& prov,
                                    const ConeSampling& sampling, std::vector<Vector> basis = {}) {
  PerturbationCone pc;
  pc.kind = kind;
  pc.at_time = t;
  pc.cone = GeneratedCone::from(m, raw);
  for (std::size_t idx : pc.cone.origin) pc.provenance.push_back(prov[idx]);
  pc.sampling = sampling;
  pc.initial_basis = std::move(basis);
  return pc;
}

inline void add_axis_generators(const ControlSystem& sys, const Trajectory& traj, double t, std::vector<Vector>& raw,
                                std::vector<GeneratorProvenance>& prov) {
  require_lebesgue(traj, t, "time perturbation cone");
  const Vector& u = traj.control.at(t);
  const Vector drift = sys.dynamics(traj.state_at(sys, t), u);
  for (double sign : {1.0, -1.0}) {
    raw.push_back(sign * drift);
    prov.push_back({GeneratorProvenance::Kind::axis, t, sign, u, 0});
  }
}

}  // namespace detail

/// Extreme points of U: box vertices (with 0 and +-1 on unbounded axes),
/// every point of a finite set, or 8k boundary directions of a ball.
inline std::vector<Vector> extreme_controls(const ControlSet& set) {
  std::vector<Vector> out;
  const Eigen::Index k = set.dim();
  switch (set.kind) {
    case ControlSet::Kind::finite: return set.points;
    case ControlSet::Kind::ball:
      for (const auto& d : sphere_directions(k, 8 * static_cast<int>(k))) out.push_back(set.center + set.radius * d);
      return out;
    case ControlSet::Kind::box: {
      std::vector<std::vector<double>> choices(static_cast<std::size_t>(k));
      for (Eigen::Index j = 0; j < k; ++j) {
        auto& c = choices[static_cast<std::size_t>(j)];
        if (std::isfinite(set.lo(j))) c.push_back(set.lo(j));
        if (std::isfinite(set.hi(j)) && set.hi(j) != set.lo(j)) c.push_back(set.hi(j));
        if (!std::isfinite(set.lo(j)) || !std::isfinite(set.hi(j))) {
          const double base = std::isfinite(set.lo(j)) ? set.lo(j) : (std::isfinite(set.hi(j)) ? set.hi(j) : 0.0);
          for (double v : {base, base - 1.0, base + 1.0})
            if (v >= set.lo(j) && v <= set.hi(j) && std::find(c.begin(), c.end(), v) == c.end()) c.push_back(v);
        }
      }
      std::vector<std::size_t> idx(static_cast<std::size_t>(k), 0);
      while (true) {
        Vector u(k);
        for (Eigen::Index j = 0; j < k; ++j) u(j) = choices[static_cast<std::size_t>(j)][idx[static_cast<std::size_t>(j)]];
        out.push_back(u);
        Eigen::Index j = 0;
        while (j < k && ++idx[static_cast<std::size_t>(j)] == choices[static_cast<std::size_t>(j)].size())
          idx[static_cast<std::size_t>(j++)] = 0;
        if (j == k) break;
      }
      return out;
    }
  }
  return out;
}

/// n evenly spaced Lebesgue times in (a, t] crossed with the extreme controls of U.
inline ConeSampling uniform_sampling(const ControlSystem& sys, const Trajectory& traj, double t, int n_times) {
  if (n_times < 1) throw InputError("uniform_sampling: need at least one time");
  ConeSampling cs;
  const double a = traj.a();
  for (int i = 1; i <= n_times; ++i) {
    double tau = a + (t - a) * static_cast<double>(i) / static_cast<double>(n_times);
    if (traj.control.is_switch(tau, 1e-9)) tau -= 1e-6 * (t - a);
    if (tau > a) cs.times.push_back(tau);
  }
  cs.controls = extreme_controls(sys.control_set);
  return cs;
}

/// Cone generated by every sampled needle (tau, u1) with l1 = 1, transported to t.
inline PerturbationCone build_tangent_cone(const ControlSystem& sys, const Trajectory& traj, double t,
                                           const ConeSampling& sampling) {
  std::vector<Vector> raw;
  std::vector<GeneratorProvenance> prov;
  detail::add_needle_generators(sys, traj, t, sampling, raw, prov);
  return detail::finish_cone(PerturbationCone::Kind::tangent, t, sys.m, raw, prov, sampling);
}

/// Tangent cone plus the drift axis +-f(gamma(t), u(t)).
inline PerturbationCone build_time_cone(const ControlSystem& sys, const Trajectory& traj, double t,
                                        const ConeSampling& sampling) {
  std::vector<Vector> raw;
  std::vector<GeneratorProvenance> prov;
  detail::add_needle_generators(sys, traj, t, sampling, raw, prov);
  detail::add_axis_generators(sys, traj, t, raw, prov);
  return detail::finish_cone(PerturbationCone::Kind::time, t, sys.m, raw, prov, sampling);
}

/// Time cone plus the transported tangent space of the initial manifold.
inline PerturbationCone build_initial_cone(const ControlSystem& sys, const Trajectory& traj, double t,
                                           const ConeSampling& sampling, const std::vector<Vector>& initial_basis) {
  std::vector<Vector> raw;
  std::vector<GeneratorProvenance> prov;
  detail::add_needle_generators(sys, traj, t, sampling, raw, prov);
  detail::add_axis_generators(sys, traj, t, raw, prov);
  if (!initial_basis.empty()) {
    const Matrix d = tangent_lift_matrix(sys.field(traj.control), t, traj.a(), traj.states.front(),
                                         detail::traj_config(traj))
                         .second;
    for (std::size_t i = 0; i < initial_basis.size(); ++i) {
      require_dim(initial_basis[i].size(), sys.m, "initial manifold basis vector");
      for (double sign : {1.0, -1.0}) {
        raw.push_back(sign * (d * initial_basis[i]));
        prov.push_back({GeneratorProvenance::Kind::initial, traj.a(), sign, Vector(), i});
      }
    }
  }
  return detail::finish_cone(PerturbationCone::Kind::initial, t, sys.m, raw, prov, sampling, initial_basis);
}

struct ConeTransportReport {
  /// Largest normalised distance of a transported generator from the later cone.
  double max_violation = 0.0;
  /// |Phi_* f(gamma(t1), u(t1)) - f(gamma(t2), u(t2))|; NaN when the cone has no axis.
  double axis_identity_residual = std::numeric_limits<double>::quiet_NaN();
  /// The control switches in (t1, t2]; the axis identity only holds without such switches.
  bool switch_between = false;
  std::size_t generators_checked = 0;
};

/// Transports every generator of the cone at t1 to t2 and measures how far
/// each lands from the cone at t2. The later cone uses the union of the
/// earlier sampling with `later_times` evenly spaced times in (t1, t2]
/// (0: as many as the earlier sampling has), and at every switch in
/// (t1, t2) it also holds the right-limit needle vectors, which belong to
/// the closed cone.
inline ConeTransportReport cone_transport_check(const ControlSystem& sys, const Trajectory& traj, double t1, double t2,
                                                const PerturbationCone& cone_t1, double tol = 1e-9,
                                                int later_times = 0) {
  if (t2 < t1) throw InputError("cone_transport_check: requires t1 <= t2");
  ConeTransportReport rep;
  ConeSampling sampling = cone_t1.sampling;
  std::vector<double> switches;
  for (double ts : traj.control.switch_times)
    if (ts > t1 && ts <= t2) switches.push_back(ts);
  rep.switch_between = !switches.empty();
  if (t2 > t1) {
    const int n = later_times > 0 ? later_times : std::max<int>(1, static_cast<int>(sampling.times.size()));
    for (int i = 1; i <= n; ++i) {
      double tau = t1 + (t2 - t1) * static_cast<double>(i) / static_cast<double>(n);
      if (traj.control.is_switch(tau, 1e-9)) tau -= 1e-6 * (t2 - t1);
      if (tau > t1) sampling.times.push_back(tau);
    }
  }
  PerturbationCone later;
  switch (cone_t1.kind) {
    case PerturbationCone::Kind::tangent: later = build_tangent_cone(sys, traj, t2, sampling); break;
    case PerturbationCone::Kind::time: later = build_time_cone(sys, traj, t2, sampling); break;
    case PerturbationCone::Kind::initial:
      later = build_initial_cone(sys, traj, t2, sampling, cone_t1.initial_basis);
      break;
  }
  std::vector<Vector> gens = later.cone.generators;
  const TimeVectorField field = sys.field(traj.control);
  for (double ts : switches) {
    if (ts >= t2) continue;
    const Vector x = traj.state_at(sys, ts);
    const Matrix d = tangent_lift_matrix(field, t2, ts, x, detail::traj_config(traj)).second;
    const Vector base = sys.dynamics(x, traj.control.at(ts));
    for (const auto& w : sampling.controls) gens.push_back(d * (sys.dynamics(x, w) - base));
  }
  const GeneratedCone target = GeneratedCone::from(sys.m, gens);

  const Matrix d = tangent_lift_matrix(field, t2, t1, traj.state_at(sys, t1), detail::traj_config(traj)).second;
  for (std::size_t i = 0; i < cone_t1.cone.size(); ++i) {
    const Vector moved = d * cone_t1.cone.generators[i];
    if (moved.norm() == 0.0) continue;
    const auto mr = membership_report(target, moved, tol);
    rep.max_violation = std::max(rep.max_violation, mr.verdict == Membership::outside ? mr.distance : 0.0);
    ++rep.generators_checked;
  }
  if (cone_t1.kind != PerturbationCone::Kind::tangent) {
    const Vector f1 = sys.dynamics(traj.state_at(sys, t1), traj.control.at(t1));
    const Vector f2 = sys.dynamics(traj.state_at(sys, t2), traj.control.at(t2));
    rep.axis_identity_residual = (d * f1 - f2).norm();
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Realisation of interior directions.

struct RealizeOptions {
  double s_initial = 1e-2;
  int max_halvings = 10;
  /// Accept when |endpoint - (gamma(t) + s' v)| <= tol * s.
  double tol = 1e-6;
  /// Ball radius as a fraction of the largest radius keeping every coefficient nonnegative.
  double radius_fraction = 0.5;
  double membership_tol = 1e-9;
  CoveredPointOptions root{};
};

struct Realization {
  double s = 0.0;
  double s_prime = 0.0;
  ControlSignal control;
  Vector initial_state;
  double final_time = 0.0;
  Vector endpoint;
  double residual = kInf;
  /// Coefficients on the cone generators used at the root.
  Vector coefficients;
  std::vector<NeedleData> needles;
  double delta_t = 0.0;
};

/// Builds a perturbed control whose trajectory passes through gamma(t) + s' v
/// for some s' > 0, for v interior to the perturbation cone at t.
inline Realization realize_direction(const ControlSystem& sys, const Trajectory& traj, double t, const Vector& v,
                                     const PerturbationCone& cone, const RealizeOptions& opts = {}) {
  require_dim(v.size(), sys.m, "realize_direction");
  if (v.norm() == 0.0) throw InputError("realize_direction: direction must be nonzero");
  const MembershipReport mem = membership_report(cone.cone, v, opts.membership_tol);
  if (mem.verdict != Membership::interior) throw InputError("realize_direction: direction is not interior to the cone");

  const Eigen::Index m = sys.m;
  const Matrix g = cone.cone.matrix();
  const auto n_gen = g.cols();
  const double vv = v.squaredNorm();
  const Vector v_hat = v / std::sqrt(vv);

  // Orthonormal basis of v-perp within span(G).
  Eigen::JacobiSVD<Matrix> svd_g(g, Eigen::ComputeThinU);
  const double sv_tol = 1e-10 * std::max(1.0, svd_g.singularValues()(0));
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < svd_g.singularValues().size(); ++i)
    if (svd_g.singularValues()(i) > sv_tol) ++rank;
  const Matrix q = svd_g.matrixU().leftCols(rank);
  Matrix perp_basis(m, 0);
  if (rank > 1) {
    const Matrix qp = q - v_hat * (v_hat.transpose() * q);
    Eigen::JacobiSVD<Matrix> svd_p(qp, Eigen::ComputeThinU);
    perp_basis = svd_p.matrixU().leftCols(rank - 1);
  }
  const Eigen::Index d = perp_basis.cols();

  // Base coefficients: minimal total length subject to a positive floor, so
  // that nearby directions v + r stay representable.
  Vector floor_coeffs = Vector::Zero(n_gen);
  if (d > 0) {
    for (Eigen::Index i = 0; i < n_gen; ++i)
      floor_coeffs(i) = 0.5 * mem.depth * std::sqrt(vv) / g.col(i).norm();
  }
  lp::LinearProgram prog;
  prog.cost = Vector::Ones(n_gen);
  prog.eq = g;
  prog.eq_rhs = v;
  prog.lower = floor_coeffs;
  prog.upper = Vector::Constant(n_gen, kInf);
  // Prefer representations whose stacked needles fit between consecutive
  // sampled times at s_initial, even after the root search moves the
  // coefficients by up to radius_fraction of themselves.
  {
    std::vector<double> times;
    for (const auto& pv : cone.provenance)
      if (pv.kind == GeneratorProvenance::Kind::needle) times.push_back(pv.tau);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    if (!times.empty()) {
      Matrix fit = Matrix::Zero(static_cast<Eigen::Index>(times.size()), n_gen);
      Vector room(static_cast<Eigen::Index>(times.size()));
      for (std::size_t j = 0; j < times.size(); ++j) {
        const double prev = j == 0 ? traj.a() : times[j - 1];
        room(static_cast<Eigen::Index>(j)) = 0.99 * (times[j] - prev) / (opts.s_initial * (1.0 + opts.radius_fraction));
      }
      for (Eigen::Index i = 0; i < n_gen; ++i) {
        const auto& pv = cone.provenance[static_cast<std::size_t>(i)];
        if (pv.kind != GeneratorProvenance::Kind::needle) continue;
        const auto j = std::lower_bound(times.begin(), times.end(), pv.tau) - times.begin();
        fit(j, i) = pv.l;
      }
      prog.ub = fit;
      prog.ub_rhs = room;
    }
  }
  auto base_sol = lp::solve(prog);
  if (base_sol.status != lp::Status::optimal) {
    prog.ub.resize(0, 0);
    prog.ub_rhs.resize(0);
    base_sol = lp::solve(prog);
  }
  if (base_sol.status != lp::Status::optimal) throw NumericalError("realize_direction: no conic representation of v");
  const Vector lambda0 = base_sol.x;

  Matrix coeff_map = Matrix::Zero(n_gen, d);
  double radius = 1.0;
  if (d > 0) {
    coeff_map = g.completeOrthogonalDecomposition().pseudoInverse() * perp_basis;
    double rmax = kInf;
    for (Eigen::Index i = 0; i < n_gen; ++i) {
      const double rn = coeff_map.row(i).norm();
      if (rn > 1e-14) rmax = std::min(rmax, lambda0(i) / rn);
    }
    radius = std::isfinite(rmax) ? opts.radius_fraction * rmax : std::sqrt(vv);
    if (!(radius > 0.0)) throw NumericalError("realize_direction: degenerate representation (zero radius)");
  }

  const Vector gamma_t = traj.state_at(sys, t);
  const Vector x_a = traj.states.front();
  const IntegratorConfig cfg = detail::traj_config(traj);

  struct Assembled {
    ControlSignal control;
    Vector x0;
    double t_final;
    std::vector<NeedleData> needles;
    double delta_t;
  };
  auto assemble = [&](const Vector& coeffs, double s) {
    Assembled as{traj.control, x_a, t, {}, 0.0};
    // Group needle generators by time so same-time needles stack.
    for (Eigen::Index i = 0; i < n_gen; ++i) {
      const auto& pv = cone.provenance[static_cast<std::size_t>(i)];
      const double c = std::max(0.0, coeffs(i));
      if (c == 0.0) continue;
      switch (pv.kind) {
        case GeneratorProvenance::Kind::needle: as.needles.push_back({pv.tau, c * pv.l, pv.u}); break;
        case GeneratorProvenance::Kind::axis: as.delta_t += pv.l * c; break;
        case GeneratorProvenance::Kind::initial:
          as.x0 += s * pv.l * c * cone.initial_basis[pv.basis_index];
          break;
      }
    }
    std::stable_sort(as.needles.begin(), as.needles.end(),
                     [](const NeedleData& x, const NeedleData& y) { return x.t1 < y.t1; });
    as.t_final = t + s * as.delta_t;
    ControlSignal base = traj.control;
    base.b = std::max(base.b, as.t_final);
    as.control = apply_needles(base, as.needles, s);
    return as;
  };

  double s = opts.s_initial;
  std::optional<NumericalError> last_error;
  for (int attempt = 0; attempt <= opts.max_halvings; ++attempt, s *= 0.5) {
    try {
      auto displacement = [&](const Vector& rho) {
        const Assembled as = assemble(lambda0 + coeff_map * rho, s);
        return Vector(perturbed_endpoint(sys, as.control, as.x0, as.t_final, cfg) - gamma_t);
      };
      // G_s(rho): the v-perp component of the displacement rescaled onto the plane <w, v> = <v, v>.
      const BallMap gs = [&](const Vector& rho) -> Vector {
        const Vector delta = displacement(rho);
        const double dv = delta.dot(v);
        if (!(dv > 0.0)) return Vector::Constant(d, 1e6 * (1.0 + radius));
        return perp_basis.transpose() * ((vv / dv) * delta - v);
      };
      const CoveredPointResult root = covered_point_root(gs, Vector::Zero(d), radius, Vector::Zero(d), opts.root);
      const Vector coeffs = lambda0 + coeff_map * root.x;
      const Assembled as = assemble(coeffs, s);
      Realization out;
      out.s = s;
      out.control = as.control;
      out.initial_state = as.x0;
      out.final_time = as.t_final;
      out.endpoint = perturbed_endpoint(sys, as.control, as.x0, as.t_final, cfg);
      const Vector delta = out.endpoint - gamma_t;
      out.s_prime = delta.dot(v) / vv;
      out.residual = (delta - out.s_prime * v).norm();
      out.coefficients = coeffs;
      out.needles = as.needles;
      out.delta_t = as.delta_t;
      if (out.s_prime > 0.0 && out.residual <= opts.tol * s) return out;
      last_error = NumericalError("realize_direction: residual " + std::to_string(out.residual) +
                                  " above tolerance at s = " + std::to_string(s));
    } catch (const InputError&) {
      // Needle intervals escaped [a, b] or overlapped: retry with a smaller s.
      last_error = NumericalError("realize_direction: perturbation does not fit at s = " + std::to_string(s));
    } catch (const NumericalError& e) {
      last_error = e;
    }
  }
  throw *last_error;
}

inline void write_cone_csv(std::ostream& os, const PerturbationCone& pc, Eigen::Index control_dim) {
  const Eigen::Index n = pc.cone.dim;
  for (Eigen::Index i = 0; i < n; ++i) os << 'g' << i << ',';
  os << "tau,l";
  for (Eigen::Index i = 0; i < control_dim; ++i) os << ",u" << i;
  os << ",kind\n" << std::setprecision(17);
  for (std::size_t j = 0; j < pc.cone.size(); ++j) {
    const auto& g = pc.cone.generators[j];
    const auto& pv = pc.provenance[j];
    for (Eigen::Index i = 0; i < n; ++i) os << g(i) << ',';
    os << pv.tau << ',' << pv.l;
    for (Eigen::Index i = 0; i < control_dim; ++i) {
      os << ',';
      if (pv.u.size() == control_dim) os << pv.u(i);
    }
    os << ',' << to_string(pv.kind);
    if (pv.kind == GeneratorProvenance::Kind::initial) os << ':' << pv.basis_index;
    os << '\n';
  }
}

}  // namespace pmp
