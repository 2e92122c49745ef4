// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cone_oracle.hpp"
#include "systems.hpp"

using pmp::ControlSignal;
using pmp::make_vector;
using pmp::Matrix;
using pmp::Vector;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

pmp::ShootingProblem di_problem() {
  pmp::ShootingProblem pr;
  pr.sys = testsys::double_integrator();
  pr.bounds = testsys::di_time_optimal_bounds();
  pr.b = 1.5;
  return pr;
}

Outcome criterion1() {
  const testsys::BangBangOracle oracle{1.0};
  const auto start = std::chrono::steady_clock::now();
  const auto pr = di_problem();
  const auto res = pmp::shoot(pr, {make_vector({-0.5, -0.5}), 1.5, {}});
  const auto rep = pmp::check_pmp(pr.sys, res.extremal, pr.bounds);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const double b = res.extremal.ext_traj.b();
  const auto& sw = res.extremal.switch_times;
  const bool one_switch = sw.size() == 1 && std::abs(sw[0] - oracle.switch_time()) < 1e-3;
  std::ostringstream os;
  os << "t*=" << b << " switches=" << sw.size() << (sw.empty() ? "" : " at " + std::to_string(sw[0]))
     << " res_3a=" << rep.res_3a << " res_3b=" << rep.res_3b << " res_3c=" << rep.res_3c << " sigma0=" << rep.sigma0
     << " runtime=" << secs << "s";
  const bool ok = res.converged && std::abs(b - oracle.final_time()) < 1e-3 && one_switch && rep.res_3a < 1e-5 &&
                  rep.res_3b < 1e-5 && rep.res_3c > 0.1 && rep.sigma0 == -1.0 && secs < 10.0;
  return {ok, os.str()};
}

Outcome criterion2() {
  pmp::ShootingProblem pr;
  pr.sys = testsys::scalar_lqr();
  pr.bounds.initial = pmp::BoundaryCondition::at(make_vector({1.0}));
  pr.bounds.final = pmp::BoundaryCondition::manifold(make_vector({0.0}), {make_vector({1.0})});
  const auto res = pmp::shoot(pr, {make_vector({0.0}), {}, {}});
  testsys::RiccatiOracle oracle;
  oracle.solve();
  const auto base = pmp::base_trajectory(res.extremal.ext_traj);
  double sup = 0.0;
  for (std::size_t i = 0; i < base.grid.size(); ++i)
    sup = std::max(sup, std::abs(base.states[i](0) - oracle.state(base.grid[i])));
  const double p1 = std::abs(res.extremal.adjoint.sigma.back()(0));
  std::ostringstream os;
  os << "sup|x - x_riccati|=" << sup << " |p(1)|=" << p1;
  return {res.converged && sup < 1e-4 && p1 < 1e-6, os.str()};
}

Outcome criterion3() {
  std::mt19937 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + trial % 4;
    Matrix A(m, m), B(m, m);
    Vector c(m), x0(m), v0(m), p0(m);
    for (int i = 0; i < m; ++i) {
      c(i) = g(rng);
      x0(i) = g(rng);
      v0(i) = g(rng);
      p0(i) = g(rng);
      for (int j = 0; j < m; ++j) {
        A(i, j) = g(rng);
        B(i, j) = g(rng);
      }
    }
    pmp::TimeVectorField f;
    f.dim = m;
    f.eval = [A, B, c](double t, const Vector& x) {
      return Vector(0.5 * A * x + (B * x).array().sin().matrix() + c * std::cos(3.0 * t));
    };
    worst = std::max(worst, pmp::pairing_drift(f, 0.0, 1.0, x0, v0, p0, pmp::IntegratorConfig::for_interval(0, 1)));
  }
  return {worst < 1e-6, fmt("max pairing drift over 20 fields = %.3e", worst)};
}

// error/s must drop strictly as s shrinks.
bool monotone(const std::vector<double>& ratios) {
  for (std::size_t i = 1; i < ratios.size(); ++i)
    if (!(ratios[i] < 0.5 * ratios[i - 1] || ratios[i] < 1e-9)) return false;
  return true;
}

Outcome criterion4() {
  const auto sys = testsys::double_integrator();
  const auto uref = ControlSignal::constant(0, 1, make_vector({0.5}));
  const Vector x0 = make_vector({0.2, -0.1});
  const auto tr = pmp::simulate(sys, uref, x0);
  const auto cfg = pmp::IntegratorConfig::for_interval(0, 1);
  const Vector end = tr.final_state();
  const std::vector<double> scales{1e-2, 1e-3, 1e-4};
  int cases = 0, good = 0;
  double last_ratio = 0.0;

  auto run = [&](const std::function<Vector(double)>& endpoint, const Vector& v) {
    std::vector<double> ratios;
    for (double s : scales) ratios.push_back((endpoint(s) - end - s * v).norm() / s);
    ++cases;
    if (monotone(ratios)) ++good;
    last_ratio = std::max(last_ratio, ratios.back());
  };

  for (double tau : {0.25, 0.5, 0.75, 1.0}) {
    for (double u1 : {-1.0, 1.0, 0.0}) {
      for (double l : {1.0, 2.0}) {
        const pmp::NeedleData pi{tau, l, make_vector({u1})};
        const Vector v = pmp::transport_vector(sys, tr, pmp::class1_vector(sys, tr, pi), 1.0).vector;
        run([&](double s) { return pmp::perturbed_endpoint(sys, pmp::apply_needle(uref, pi, s), x0, 1.0, cfg); }, v);
      }
    }
  }
  const std::vector<std::vector<pmp::NeedleData>> pairs{
      {{0.3, 1.0, make_vector({1.0})}, {0.7, 2.0, make_vector({-1.0})}},
      {{0.5, 1.0, make_vector({-1.0})}, {0.5, 1.0, make_vector({1.0})}},
      {{0.2, 0.5, make_vector({0.0})}, {0.9, 1.5, make_vector({1.0})}}};
  for (const auto& ns : pairs) {
    const Vector v = pmp::multi_needle_vector(sys, tr, ns, 1.0).vector;
    run([&](double s) { return pmp::perturbed_endpoint(sys, pmp::apply_needles(uref, ns, s), x0, 1.0, cfg); }, v);
  }
  for (double dt : {1.0, -1.0, 2.5}) {
    for (double u1 : {-1.0, 1.0}) {
      const pmp::TimePerturbationData pi{1.0, 1.0, dt, make_vector({u1})};
      const Vector v = pmp::time_perturbation_vector(sys, tr, pi).vector;
      run([&](double s) {
            const auto w = pmp::apply_time_perturbation(uref, pi, s);
            return pmp::perturbed_endpoint(sys, w.control, x0, w.final_time, cfg);
          },
          v);
    }
  }
  std::ostringstream os;
  os << good << "/" << cases << " needle, two-needle and time variations with error/s decreasing; worst error/s at s=1e-4: "
     << last_ratio;
  return {good == cases, os.str()};
}

Outcome criterion5() {
  Matrix A(2, 2), B(2, 1);
  A << 0, 1, -1, 0;
  B << 0, 1;
  const auto lin = testsys::linear_system(A, B, pmp::ControlSet::interval(-1, 1));
  const double r_lin = pmp::decomposition_reach_check(lin, ControlSignal::constant(0, 1, make_vector({0.5})),
                                                      ControlSignal::constant(0, 1, make_vector({-1.0})), 1.0,
                                                      make_vector({0.2, -0.4}))
                           .residual;
  const auto scalar = testsys::scalar_integrator();
  const double r_sc = pmp::decomposition_reach_check(scalar, ControlSignal::constant(0, 1, make_vector({0.0})),
                                                     ControlSignal::constant(0, 1, make_vector({1.0})), 1.0,
                                                     make_vector({0.0}))
                          .residual;

  auto cubic = testsys::square_accumulator();
  cubic.f = [](const Vector& x, const Vector& u) { return make_vector({u(0) - x(0) * x(0) * x(0), x(0) * x(0)}); };
  cubic.df_dx = [](const Vector& x, const Vector&) {
    Matrix j(2, 2);
    j << -3 * x(0) * x(0), 0, 2 * x(0), 0;
    return j;
  };
  std::vector<double> res;
  for (double h : {0.25, 0.125, 0.0625}) {
    pmp::IntegratorConfig cfg;
    cfg.step = h;
    res.push_back(pmp::decomposition_reach_check(cubic, ControlSignal::constant(0, 1, make_vector({0.5})),
                                                 ControlSignal::constant(0, 1, make_vector({-0.7})), 1.0,
                                                 make_vector({1.0, 0.0}), cfg)
                      .residual);
  }
  const double o1 = std::log2(res[0] / res[1]), o2 = std::log2(res[1] / res[2]);
  std::ostringstream os;
  os << "linear=" << r_lin << " scalar=" << r_sc << " observed orders " << o1 << ", " << o2;
  return {r_lin < 1e-6 && r_sc < 1e-6 && o1 > 3.3 && o2 > 3.3, os.str()};
}

Outcome criterion6() {
  std::mt19937 rng(606);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> count(1, 4);
  int agree = 0, spans_ok = 0, total = 0, separated = 0;
  for (int n : {2, 3}) {
    for (int trial = 0; trial < 200; ++trial) {
      auto gens = [&] {
        std::vector<Vector> out;
        const int c = count(rng);
        for (int i = 0; i < c; ++i) {
          Vector v(n);
          for (int j = 0; j < n; ++j) v(j) = g(rng);
          out.push_back(v);
        }
        return out;
      };
      const auto g1 = gens(), g2 = gens();
      const auto c1 = pmp::GeneratedCone::from(n, g1), c2 = pmp::GeneratedCone::from(n, g2);
      const bool sep = pmp::separate(c1, c2).separated;
      ++total;
      separated += sep ? 1 : 0;
      agree += sep == oracle::separated(g1, g2) ? 1 : 0;
      spans_ok += pmp::difference_spans(c1, c2) == !sep ? 1 : 0;
    }
  }
  std::ostringstream os;
  os << agree << "/" << total << " agree with the brute-force oracle, " << spans_ok << "/" << total
     << " spans == !separated (" << separated << " separated pairs)";
  return {agree == total && spans_ok == total, os.str()};
}

Outcome criterion7() {
  const auto sys = testsys::double_integrator();
  const auto tr = pmp::simulate(sys, ControlSignal::constant(0, 1, make_vector({0.0})), make_vector({0, 0}));
  const auto cone = pmp::build_tangent_cone(sys, tr, 1.0, pmp::uniform_sampling(sys, tr, 1.0, 50));
  pmp::RealizeOptions opts;
  opts.s_initial = 1e-2;
  opts.max_halvings = 0;
  opts.tol = 0.05;
  double worst_res = 0.0, lo = pmp::kInf, hi = 0.0;
  int ok = 0;
  for (int k = 0; k < 10; ++k) {
    const double ang = 2.0 * M_PI * (k + 0.37) / 10.0;
    const Vector v = make_vector({std::cos(ang), std::sin(ang)});
    try {
      const auto r = pmp::realize_direction(sys, tr, 1.0, v, cone, opts);
      const double rel = r.residual / r.s, ratio = r.s_prime / r.s;
      worst_res = std::max(worst_res, rel);
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
      if (r.s == 1e-2 && rel < 0.05 && ratio >= 0.5 && ratio <= 2.0) ++ok;
    } catch (const std::exception&) {
    }
  }
  std::ostringstream os;
  os << ok << "/10 directions realized at s=1e-2; max residual/s=" << worst_res << " s'/s in [" << lo << ", " << hi
     << "]";
  return {ok == 10, os.str()};
}

Outcome criterion8() {
  const auto sys = testsys::double_integrator();
  const std::vector<ControlSignal> refs{
      ControlSignal::constant(0, 2, make_vector({0.0})), ControlSignal::constant(0, 2, make_vector({1.0})),
      ControlSignal::piecewise(0, 2, {1.0}, {make_vector({-1.0}), make_vector({1.0})}),
      ControlSignal::piecewise(0, 2, {0.6, 1.3}, {make_vector({0.3}), make_vector({-1.0}), make_vector({1.0})})};
  double viol = 0.0, axis = 0.0;
  std::size_t checked = 0;
  for (const auto& u : refs) {
    const auto tr = pmp::simulate(sys, u, make_vector({1.0, -0.5}));
    for (auto [t1, t2] : {std::pair{0.5, 1.5}, std::pair{0.9, 1.9}, std::pair{1.2, 2.0}}) {
      const auto sampling = pmp::uniform_sampling(sys, tr, t1, 8);
      for (int kind = 0; kind < 2; ++kind) {
        const auto cone = kind == 0 ? pmp::build_tangent_cone(sys, tr, t1, sampling)
                                    : pmp::build_time_cone(sys, tr, t1, sampling);
        const auto rep = pmp::cone_transport_check(sys, tr, t1, t2, cone);
        viol = std::max(viol, rep.max_violation);
        checked += rep.generators_checked;
        if (kind == 1 && !rep.switch_between) axis = std::max(axis, rep.axis_identity_residual);
      }
    }
  }
  std::ostringstream os;
  os << "max violation=" << viol << " over " << checked << " generators, axis identity residual=" << axis;
  return {viol < 1e-8 && axis < 1e-6, os.str()};
}

Outcome criterion9() {
  const auto pr = di_problem();
  const auto res = pmp::shoot(pr, {make_vector({-0.5, -0.5}), 1.5, {}});
  auto flipped = res.extremal;
  flipped.adjoint.sigma0 = -flipped.adjoint.sigma0;
  for (auto& p : flipped.adjoint.sigma) p = -p;
  const auto r_flip = pmp::check_pmp(pr.sys, flipped, pr.bounds);

  auto zeroed = res.extremal;
  zeroed.adjoint.sigma0 = 0.0;
  for (auto& p : zeroed.adjoint.sigma) p.setZero();
  const auto r_zero = pmp::check_pmp(pr.sys, zeroed, pr.bounds);

  auto weak = res.extremal;
  const double ts = weak.switch_times.empty() ? 1.0 : weak.switch_times.front();
  weak.control = weak.control.with_value_on(weak.control.a, ts, make_vector({0.0}));
  const auto r_weak = pmp::check_pmp(pr.sys, weak, pr.bounds);

  std::ostringstream os;
  os << "flipped: sign_ok=" << r_flip.res_3d_sign_ok << "; zeroed: res_3c=" << r_zero.res_3c
     << "; sub-maximal arc: res_3a=" << r_weak.res_3a;
  const bool ok = !r_flip.res_3d_sign_ok && !r_flip.passed() && r_zero.res_3c <= r_zero.tol && !r_zero.passed() &&
                  r_weak.res_3a > 1e-2 && !r_weak.passed();
  return {ok, os.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"time-optimal double integrator shooting and check", criterion1},
      {"scalar LQR against the Riccati oracle", criterion2},
      {"pairing invariance of tangent and cotangent lifts", criterion3},
      {"needle tangency slope test", criterion4},
      {"flow decomposition", criterion5},
      {"cone separation oracle equivalence", criterion6},
      {"realization of interior directions", criterion7},
      {"cone transport inclusion", criterion8},
      {"checker negative controls", criterion9},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    if (!o.pass) ++failures;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
