// Batch front end: simulate, check, shoot, cones, reach.
//
// Exit codes: 0 success, 1 check failure, 2 input error, 3 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "pmp/pmp.hpp"

namespace fs = std::filesystem;
using namespace pmp;

namespace {

struct Common {
  std::string problem;
  std::string out = ".";
  double tol = -1.0;
  unsigned seed = 1;
  std::string mode;
};

ProblemFile load(const Common& c) {
  ProblemFile pf = load_problem(c.problem);
  if (c.mode == "fixed") pf.mode = BoundarySpec::Mode::fixed_time;
  else if (c.mode == "free") pf.mode = BoundarySpec::Mode::free_time;
  else if (!c.mode.empty()) throw InputError("--mode must be 'fixed' or 'free'");
  if (c.tol > 0.0) pf.tolerance = c.tol;
  return pf;
}

std::ofstream open_out(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  std::ofstream os(fs::path(c.out) / name);
  if (!os) throw InputError("cannot write " + (fs::path(c.out) / name).string());
  return os;
}

void write_json(const Common& c, const std::string& name, const Json& j) {
  auto os = open_out(c, name);
  os << std::setprecision(17) << j.dump(2) << '\n';
}

Vector parse_list(const std::string& s, const std::string& what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw InputError(what + ": not a number '" + cell + "'");
    }
  }
  return Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// A constant "v0,v1,..." or a JSON file {"switch_times": [...], "values": [[...], ...]}.
ControlSignal parse_control(const std::string& spec, double a, double b, Eigen::Index k) {
  if (fs::exists(spec)) {
    std::ifstream in(spec);
    Json j;
    try {
      j = Json::parse(in);
    } catch (const Json::exception& e) {
      throw InputError("control file '" + spec + "': " + e.what());
    }
    std::vector<double> sw;
    for (const auto& t : j.value("switch_times", Json::array())) sw.push_back(t.get<double>());
    std::vector<Vector> vals;
    for (const auto& v : j.at("values")) {
      vals.push_back(detail::json_vector(v, "control values"));
      require_dim(vals.back().size(), k, "control value");
    }
    return ControlSignal::piecewise(a, b, sw, vals);
  }
  const Vector u = parse_list(spec, "--control");
  require_dim(u.size(), k, "--control");
  return ControlSignal::constant(a, b, u);
}

ControlSignal default_control(const ProblemFile& pf, const ControlSystem& sys, const std::string& spec) {
  if (!spec.empty()) return parse_control(spec, pf.a, pf.b, sys.k);
  const Vector zero = Vector::Zero(sys.k);
  if (!sys.control_set.contains(zero)) throw InputError("no --control given and 0 is not in U");
  return ControlSignal::constant(pf.a, pf.b, zero);
}

IntegratorConfig config_for(const ProblemFile& pf) {
  IntegratorConfig cfg = IntegratorConfig::for_interval(pf.a, pf.b);
  if (pf.step > 0.0) cfg.step = pf.step;
  return cfg;
}

int cmd_simulate(const Common& c, const std::string& control_spec) {
  const ProblemFile pf = load(c);
  const ControlSystem sys = pf.system();
  const ControlSignal u = default_control(pf, sys, control_spec);
  u.validate(sys.control_set);
  const ControlSystem ext = extend(sys);
  Vector x0(sys.m + 1);
  x0(0) = 0.0;
  x0.tail(sys.m) = pf.initial.point;
  const Trajectory tr = simulate(ext, u, x0, config_for(pf));
  {
    auto os = open_out(c, "trajectory.csv");
    write_trajectory_csv(os, tr);
  }
  Json summary = {{"cost", cost(tr)}, {"final_state", detail::vector_json(tr.final_state().tail(sys.m))}};
  write_json(c, "summary.json", summary);
  std::cout << std::setprecision(17) << "cost " << cost(tr) << '\n';
  return 0;
}

Extremal read_extremal(const ControlSystem& sys, const std::string& traj_csv, const std::string& adj_csv,
                       const std::string& ctrl_csv) {
  const CsvTable tt = read_csv(traj_csv);
  const CsvTable at = read_csv(adj_csv);
  const CsvTable ct = read_csv(ctrl_csv);
  const auto m = static_cast<std::size_t>(sys.m);
  const bool has_cost = !tt.header.empty() && tt.header.back() == "xcost";
  if (tt.header.size() != 1 + m + (has_cost ? 1 : 0)) throw InputError(traj_csv + ": wrong number of state columns");
  if (at.header.size() != 2 + m) throw InputError(adj_csv + ": expected t,sigma0,s0..");
  if (ct.header.size() != 2 + static_cast<std::size_t>(sys.k)) throw InputError(ctrl_csv + ": expected t,u0..,switch");
  if (tt.rows.size() < 2) throw InputError(traj_csv + ": need at least two rows");
  if (ct.rows.empty()) throw InputError(ctrl_csv + ": no control pieces");

  Trajectory tr;
  for (const auto& r : tt.rows) {
    tr.grid.push_back(r[0]);
    Vector x(sys.m);
    for (std::size_t i = 0; i < m; ++i) x(static_cast<Eigen::Index>(i)) = r[1 + i];
    tr.states.push_back(x);
  }
  std::vector<double> cuts, genuine;
  std::vector<Vector> vals;
  for (std::size_t p = 0; p < ct.rows.size(); ++p) {
    const auto& r = ct.rows[p];
    Vector u(sys.k);
    for (Eigen::Index i = 0; i < sys.k; ++i) u(i) = r[1 + static_cast<std::size_t>(i)];
    if (p > 0) cuts.push_back(r[0]);
    if (p > 0 && r.back() != 0.0) genuine.push_back(r[0]);
    vals.push_back(u);
  }
  tr.control = ControlSignal::piecewise(tr.grid.front(), tr.grid.back(), cuts, vals);
  tr.step = (tr.grid.back() - tr.grid.front()) / static_cast<double>(tr.grid.size() - 1);

  AdjointCurve ac;
  ac.sigma0 = at.rows.front()[1];
  for (const auto& r : at.rows) {
    ac.grid.push_back(r[0]);
    Vector p(sys.m);
    for (std::size_t i = 0; i < m; ++i) p(static_cast<Eigen::Index>(i)) = r[2 + i];
    ac.sigma.push_back(p);
  }
  Extremal ex = make_extremal(sys, tr, ac);
  ex.switch_times = genuine;
  return ex;
}

int cmd_check(const Common& c, const std::string& traj, const std::string& adj, const std::string& ctrl) {
  const ProblemFile pf = load(c);
  const ControlSystem sys = pf.system();
  const Extremal ex = read_extremal(sys, traj, adj, ctrl);
  CheckOptions co;
  co.tol = pf.tolerance;
  const PMPReport rep = check_pmp(sys, ex, pf.boundary(), co);
  write_json(c, "report.json", report_to_json(rep));
  std::cout << (rep.passed() ? "PASS" : "FAIL") << " classification " << to_string(rep.classification) << '\n';
  return rep.passed() ? 0 : 1;
}

int cmd_shoot(const Common& c) {
  const ProblemFile pf = load(c);
  ShootingProblem pr;
  pr.sys = pf.system();
  pr.bounds = pf.boundary();
  pr.p0 = pf.p0;
  pr.a = pf.a;
  pr.b = pf.b;
  pr.steps = pf.shooting_steps;
  ShootingGuess g;
  g.p_a = pf.guess_p.value_or(Vector::Zero(pr.sys.m));
  g.b = pf.guess_b;
  ShootingOptions so;
  so.seed = c.seed;
  const ShootingResult res = shoot(pr, g, so);
  {
    auto os = open_out(c, "trajectory.csv");
    write_trajectory_csv(os, res.extremal.ext_traj);
  }
  {
    auto os = open_out(c, "adjoint.csv");
    write_adjoint_csv(os, res.extremal.adjoint);
  }
  {
    auto os = open_out(c, "control.csv");
    write_control_csv(os, res.extremal.control, res.extremal.switch_times);
  }
  CheckOptions co;
  co.tol = pf.tolerance;
  const PMPReport rep = check_pmp(pr.sys, res.extremal, pr.bounds, co);
  const SwitchingStructure st = switching_structure(res.extremal);
  Json arcs = Json::array();
  for (const auto& a : st.arcs)
    arcs.push_back({{"from", a.from}, {"to", a.to}, {"arc", a.arc}, {"u", detail::vector_json(a.u_start)}});
  Json j = {{"shooting",
             {{"converged", res.converged},
              {"residual_norm", res.residual_norm},
              {"iterations", res.iterations},
              {"start_index", res.start_index},
              {"unknowns", detail::vector_json(res.unknowns)},
              {"final_time", res.extremal.ext_traj.b()},
              {"cost", cost(res.extremal.ext_traj)},
              {"jacobian_rank", res.jacobian_rank},
              {"jacobian_singular_values", detail::vector_json(res.jacobian_singular_values)},
              {"switch_times", st.switch_times},
              {"arcs", arcs}}},
            {"pmp", report_to_json(rep)}};
  write_json(c, "report.json", j);
  std::cout << std::setprecision(17) << (res.converged ? "converged" : "not converged") << " residual "
            << res.residual_norm << " b " << res.extremal.ext_traj.b() << '\n';
  if (!res.converged) return 3;
  return rep.passed() ? 0 : 1;
}

int cmd_cones(const Common& c, const std::string& control_spec, double t, const std::string& kind, int n_times,
              const std::vector<std::string>& queries) {
  const ProblemFile pf = load(c);
  const ControlSystem sys = pf.system();
  const ControlSignal u = default_control(pf, sys, control_spec);
  u.validate(sys.control_set);
  const Trajectory tr = simulate(sys, u, pf.initial.point, config_for(pf));
  if (t < 0.0) t = pf.b;
  const ConeSampling cs = uniform_sampling(sys, tr, t, n_times);
  PerturbationCone pc;
  if (kind == "tangent") pc = build_tangent_cone(sys, tr, t, cs);
  else if (kind == "time") pc = build_time_cone(sys, tr, t, cs);
  else if (kind == "initial") pc = build_initial_cone(sys, tr, t, cs, pf.boundary().initial.tangent_basis);
  else throw InputError("--kind must be tangent, time or initial");
  {
    auto os = open_out(c, "cone.csv");
    write_cone_csv(os, pc, sys.k);
  }
  Json qs = Json::array();
  for (const auto& q : queries) {
    const Vector v = parse_list(q, "--query");
    require_dim(v.size(), sys.m, "--query");
    const MembershipReport mr = membership_report(pc.cone, v);
    qs.push_back({{"vector", detail::vector_json(v)},
                  {"verdict", to_string(mr.verdict)},
                  {"distance", mr.distance},
                  {"depth", mr.depth}});
    std::cout << q << ' ' << to_string(mr.verdict) << '\n';
  }
  write_json(c, "cones.json",
             {{"kind", kind}, {"time", t}, {"generators", pc.cone.size()}, {"queries", qs}});
  return 0;
}

int cmd_reach(const Common& c, int n, int switches, double T) {
  const ProblemFile pf = load(c);
  const ControlSystem sys = pf.system();
  ReachPolicy pol;
  pol.n_controls = n;
  pol.max_switches = switches;
  pol.seed = c.seed;
  if (T < 0.0) T = pf.b;
  const ReachCloud cloud = sample_reachable(sys, pf.initial.point, pf.a, T, pol);
  {
    auto os = open_out(c, "cloud.csv");
    write_cloud_csv(os, cloud);
  }
  Json prov = Json::array();
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    Json vals = Json::array();
    for (const auto& v : cloud.controls[i].values) vals.push_back(detail::vector_json(v));
    prov.push_back({{"provenance_id", cloud.provenance_id[i]},
                    {"switch_times", cloud.controls[i].switch_times},
                    {"values", vals}});
  }
  write_json(c, "cloud.json",
             {{"x0", detail::vector_json(cloud.x0)},
              {"a", cloud.a},
              {"T", cloud.T},
              {"seed", c.seed},
              {"skipped", cloud.skipped},
              {"step", cloud.config.step},
              {"provenance", prov}});
  std::cout << cloud.points.size() << " points\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximum principle toolkit"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&c](CLI::App* sub) {
    sub->add_option("--problem", c.problem, "problem file (JSON)")->required();
    sub->add_option("--out", c.out, "output directory");
    sub->add_option("--tol", c.tol, "check tolerance");
    sub->add_option("--seed", c.seed, "seed for pseudo-random choices");
    sub->add_option("--mode", c.mode, "fixed|free (overrides the problem file)");
  };

  std::string control_spec, traj_csv, adj_csv, ctrl_csv, kind = "tangent";
  double time = -1.0, horizon = -1.0;
  int n_times = 20, n_controls = 200, switches = 3;
  std::vector<std::string> queries;

  auto* sim = app.add_subcommand("simulate", "simulate a control and write trajectory.csv");
  add_common(sim);
  sim->add_option("--control", control_spec, "constant 'v0,v1' or JSON control file");

  auto* chk = app.add_subcommand("check", "check the maximum principle conditions along an extremal");
  add_common(chk);
  chk->add_option("--trajectory", traj_csv)->required();
  chk->add_option("--adjoint", adj_csv)->required();
  chk->add_option("--control-csv", ctrl_csv)->required();

  auto* sh = app.add_subcommand("shoot", "solve for an extremal by indirect shooting");
  add_common(sh);

  auto* cn = app.add_subcommand("cones", "build a perturbation cone and answer membership queries");
  add_common(cn);
  cn->add_option("--control", control_spec, "reference control");
  cn->add_option("--time", time, "cone time (default: end of horizon)");
  cn->add_option("--kind", kind, "tangent|time|initial");
  cn->add_option("--times", n_times, "number of sampled needle times");
  cn->add_option("--query", queries, "vector 'v0,v1,...' to classify (repeatable)");

  auto* rc = app.add_subcommand("reach", "sample the reachable set");
  add_common(rc);
  rc->add_option("--n", n_controls, "number of sampled controls");
  rc->add_option("--switches", switches, "maximum switches per control");
  rc->add_option("--horizon", horizon, "final time (default: end of horizon)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(c, control_spec);
    if (chk->parsed()) return cmd_check(c, traj_csv, adj_csv, ctrl_csv);
    if (sh->parsed()) return cmd_shoot(c);
    if (cn->parsed()) return cmd_cones(c, control_spec, time, kind, n_times, queries);
    if (rc->parsed()) return cmd_reach(c, n_controls, switches, horizon);
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
