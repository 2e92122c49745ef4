#pragma once

// Reachable-set sampling and checks of how well perturbation cones
// approximate it near a reference trajectory.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include "pmp/cone_geometry.hpp"
#include "pmp/control_system.hpp"
#include "pmp/core.hpp"
#include "pmp/flows.hpp"
#include "pmp/perturbations.hpp"

namespace pmp {

struct ReachPolicy {
  int n_controls = 200;
  int max_switches = 3;
  enum class Values { vertices, uniform };
  Values values = Values::vertices;
  unsigned seed = 1;
  /// When set, samples are the reference with up to max_switches random
  /// overwrites of length at most edit_length instead of fresh controls.
  std::optional<ControlSignal> reference;
  double edit_length = 0.05;
  /// Scale of samples along unbounded control directions.
  double unbounded_scale = 1.0;
};

struct ReachCloud {
  Vector x0;
  double a = 0.0;
  double T = 1.0;
  std::vector<Vector> points;
  std::vector<ControlSignal> controls;  // provenance, aligned with points
  std::vector<std::size_t> provenance_id;
  std::size_t skipped = 0;
  IntegratorConfig config;
};

namespace detail {

inline Vector sample_control_value(const ControlSet& set, ReachPolicy::Values mode, double unb, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Eigen::Index k = set.dim();
  switch (set.kind) {
    case ControlSet::Kind::finite: {
      std::uniform_int_distribution<std::size_t> pick(0, set.points.size() - 1);
      return set.points[pick(rng)];
    }
    case ControlSet::Kind::ball: {
      Vector d(k);
      for (Eigen::Index i = 0; i < k; ++i) d(i) = gauss(rng);
      if (d.norm() == 0.0) d(0) = 1.0;
      d.normalize();
      const double r = mode == ReachPolicy::Values::vertices ? 1.0 : std::pow(unif(rng), 1.0 / static_cast<double>(k));
      return set.center + set.radius * r * d;
    }
    case ControlSet::Kind::box: {
      Vector u(k);
      for (Eigen::Index i = 0; i < k; ++i) {
        const bool fl = std::isfinite(set.lo(i)), fh = std::isfinite(set.hi(i));
        if (fl && fh) {
          u(i) = mode == ReachPolicy::Values::vertices ? (unif(rng) < 0.5 ? set.lo(i) : set.hi(i))
                                                       : set.lo(i) + (set.hi(i) - set.lo(i)) * unif(rng);
        } else {
          const double base = fl ? set.lo(i) : (fh ? set.hi(i) : 0.0);
          double v = unb * gauss(rng);
          if (fl) v = std::abs(v);
          if (fh) v = -std::abs(v);
          u(i) = base + v;
        }
      }
      return u;
    }
  }
  throw InputError("sample_reachable: unknown control set");
}

}  // namespace detail

/// Endpoints of deterministic pseudo-random piecewise-constant controls on [a, T].
inline ReachCloud sample_reachable(const ControlSystem& sys, const Vector& x0, double a, double T,
                                   const ReachPolicy& policy = {}) {
  require_dim(x0.size(), sys.m, "sample_reachable initial state");
  if (!(T > a)) throw InputError("sample_reachable: requires T > a");
  if (policy.n_controls < 0 || policy.max_switches < 0) throw InputError("sample_reachable: negative policy counts");
  if (policy.reference) {
    if (policy.reference->a != a || policy.reference->b != T)
      throw InputError("sample_reachable: reference control must live on [a, T]");
    policy.reference->validate(sys.control_set);
  }
  ReachCloud cloud;
  cloud.x0 = x0;
  cloud.a = a;
  cloud.T = T;
  cloud.config = IntegratorConfig::for_interval(a, T);
  std::mt19937_64 rng(policy.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> nsw(0, policy.max_switches);

  for (int c = 0; c < policy.n_controls; ++c) {
    ControlSignal u;
    const int count = nsw(rng);
    if (policy.reference) {
      u = *policy.reference;
      for (int e = 0; e < count; ++e) {
        const double len = policy.edit_length * unif(rng);
        const double from = a + (T - a - len) * unif(rng);
        u = u.with_value_on(from, from + len,
                            detail::sample_control_value(sys.control_set, policy.values, policy.unbounded_scale, rng));
      }
      u.needle_intervals.clear();
    } else {
      std::vector<double> times;
      for (int e = 0; e < count; ++e) times.push_back(a + (T - a) * unif(rng));
      std::sort(times.begin(), times.end());
      times.erase(std::unique(times.begin(), times.end()), times.end());
      times.erase(std::remove_if(times.begin(), times.end(), [&](double t) { return !(t > a && t < T); }), times.end());
      std::vector<Vector> vals;
      for (std::size_t i = 0; i <= times.size(); ++i)
        vals.push_back(detail::sample_control_value(sys.control_set, policy.values, policy.unbounded_scale, rng));
      u = ControlSignal::piecewise(a, T, times, vals);
    }
    try {
      const Trajectory tr = simulate(sys, u, x0, cloud.config);
      cloud.points.push_back(tr.final_state());
      cloud.controls.push_back(u);
      cloud.provenance_id.push_back(static_cast<std::size_t>(c));
    } catch (const NumericalError&) {
      ++cloud.skipped;
    }
  }
  return cloud;
}

/// Re-simulates a stored sample.
inline Vector replay(const ControlSystem& sys, const ReachCloud& cloud, std::size_t index) {
  return simulate(sys, cloud.controls.at(index), cloud.x0, cloud.config).final_state();
}

struct ConeApproximationStats {
  double s_scale = 0.0;
  double tolerance = 0.0;
  std::size_t slice_size = 0;
  std::size_t inside = 0;
  double inside_fraction = 0.0;
  double max_distance = 0.0;
};

/// Fraction of cloud points y with |y - gamma(t)| <= s_scale whose offset lies
/// within kappa * s_scale^1.5 of the cone (L1 distance of the offset).
inline ConeApproximationStats cone_approximation_check(const ControlSystem& sys, const Trajectory& traj, double t,
                                                       const PerturbationCone& cone, const ReachCloud& cloud,
                                                       double s_scale, double kappa = 1.0) {
  require_dim(cone.cone.dim, sys.m, "cone_approximation_check cone");
  if (std::abs(cloud.T - t) > 1e-12 * std::max(1.0, std::abs(t)))
    throw InputError("cone_approximation_check: cloud horizon differs from t");
  if (!(s_scale > 0.0)) throw InputError("cone_approximation_check: s_scale must be positive");
  const Vector gt = traj.state_at(sys, t);
  ConeApproximationStats st;
  st.s_scale = s_scale;
  st.tolerance = kappa * std::pow(s_scale, 1.5);
  for (const Vector& y : cloud.points) {
    const Vector d = y - gt;
    if (d.norm() > s_scale) continue;
    ++st.slice_size;
    // membership_report measures the direction d/|d|; scale back to the offset itself.
    const double dist = d.norm() == 0.0 ? 0.0 : membership_report(cone.cone, d, 1e-12).distance * d.norm();
    st.max_distance = std::max(st.max_distance, dist);
    if (dist <= st.tolerance) ++st.inside;
  }
  if (st.slice_size == 0) throw InputError("cone_approximation_check: no cloud points within s_scale of gamma(t)");
  st.inside_fraction = static_cast<double>(st.inside) / static_cast<double>(st.slice_size);
  return st;
}

struct DecompositionReport {
  Vector direct;
  Vector composed;
  double residual = 0.0;
};

/// Endpoint of u_alt computed directly and as the flow of u_ref applied to
/// the flow of the pulled-back difference field.
inline DecompositionReport decomposition_reach_check(const ControlSystem& sys, const ControlSignal& u_ref,
                                                     const ControlSignal& u_alt, double t1, const Vector& x0,
                                                     std::optional<IntegratorConfig> cfg_in = std::nullopt) {
  require_dim(x0.size(), sys.m, "decomposition_reach_check initial state");
  if (u_ref.a != u_alt.a) throw InputError("decomposition_reach_check: controls start at different times");
  const double a = u_ref.a;
  if (!(t1 > a) || t1 > u_ref.b || t1 > u_alt.b)
    throw InputError("decomposition_reach_check: t1 must lie in (a, b] of both controls");
  const IntegratorConfig cfg = cfg_in.value_or(IntegratorConfig::for_interval(a, t1));
  const TimeVectorField x_ref = sys.field(u_ref);
  const TimeVectorField x_alt = sys.field(u_alt);
  TimeVectorField diff;
  diff.dim = sys.m;
  diff.eval = [x_ref, x_alt](double t, const Vector& x) { return Vector(x_alt(t, x) - x_ref(t, x)); };
  diff.jacobian = [x_ref, x_alt](double t, const Vector& x) { return Matrix(x_alt.jac(t, x) - x_ref.jac(t, x)); };
  diff.breakpoints = x_ref.breakpoints;
  diff.breakpoints.insert(diff.breakpoints.end(), x_alt.breakpoints.begin(), x_alt.breakpoints.end());

  DecompositionReport rep;
  rep.direct = flow(x_alt, t1, a, x0, cfg);
  const TimeVectorField z = pullback_field(x_ref, diff, a, cfg);
  rep.composed = flow(x_ref, t1, a, flow(z, t1, a, x0, cfg), cfg);
  rep.residual = (rep.direct - rep.composed).norm();
  return rep;
}

inline void write_cloud_csv(std::ostream& os, const ReachCloud& cloud) {
  const Eigen::Index m = cloud.x0.size();
  for (Eigen::Index i = 0; i < m; ++i) os << 'x' << i << ',';
  os << "provenance_id\n" << std::setprecision(17);
  for (std::size_t n = 0; n < cloud.points.size(); ++n) {
    for (Eigen::Index i = 0; i < m; ++i) os << cloud.points[n](i) << ',';
    os << cloud.provenance_id[n] << '\n';
  }
}

}  // namespace pmp
