#include <gtest/gtest.h>

#include <cmath>

#include "systems.hpp"

using pmp::BoundaryCondition;
using pmp::BoundarySpec;
using pmp::make_vector;
using pmp::ShootingGuess;
using pmp::ShootingProblem;
using pmp::Vector;

namespace {

ShootingProblem di_problem() {
  ShootingProblem pr;
  pr.sys = testsys::double_integrator();
  pr.bounds = testsys::di_time_optimal_bounds();
  pr.b = 1.5;
  return pr;
}

ShootingProblem energy_problem(double target) {
  ShootingProblem pr;
  pr.sys = testsys::scalar_integrator(pmp::ControlSet::unbounded(1));
  pr.bounds.initial = BoundaryCondition::at(make_vector({0.0}));
  pr.bounds.final = BoundaryCondition::at(make_vector({target}));
  return pr;
}

ShootingProblem lqr_problem() {
  ShootingProblem pr;
  pr.sys = testsys::scalar_lqr();
  pr.bounds.initial = BoundaryCondition::at(make_vector({1.0}));
  pr.bounds.final = BoundaryCondition::manifold(make_vector({0.0}), {make_vector({1.0})});
  return pr;
}

void expect_cross_validated(const ShootingProblem& pr, const pmp::ShootingResult& res) {
  pmp::CheckOptions co;
  const auto rep = pmp::check_pmp(pr.sys, res.extremal, pr.bounds, co);
  const double bound = 10.0 * co.tol;
  EXPECT_LE(rep.res_3a, bound);
  EXPECT_LE(rep.res_3b, bound);
  EXPECT_GT(rep.res_3c, co.tol);
  EXPECT_LE(rep.res_3d_drift, bound);
  EXPECT_TRUE(rep.res_3d_sign_ok);
  EXPECT_LE(rep.res_3e_initial, bound);
  EXPECT_LE(rep.res_3e_final, bound);
}

}  // namespace

TEST(Shoot, EnergyZeroIsAFixedPoint) {
  const auto pr = energy_problem(0.0);
  const auto res = pmp::shoot(pr, {make_vector({0.3}), {}, {}});
  ASSERT_TRUE(res.converged);
  EXPECT_NEAR(res.unknowns(0), 0.0, 1e-9);
  EXPECT_NEAR(pmp::cost(res.extremal.ext_traj), 0.0, 1e-12);
  EXPECT_TRUE(pmp::switching_structure(res.extremal).switch_times.empty());
}

// x' = u, F = u^2 from 0 to 1 on [0, 1]: u = p / 2 = 1, so p = 2 and the cost is 1.
TEST(Shoot, EnergyTransferClosedForm) {
  const auto pr = energy_problem(1.0);
  const auto res = pmp::shoot(pr, {make_vector({0.0}), {}, {}});
  ASSERT_TRUE(res.converged);
  EXPECT_NEAR(res.unknowns(0), 2.0, 1e-8);
  EXPECT_NEAR(pmp::cost(res.extremal.ext_traj), 1.0, 1e-8);
  expect_cross_validated(pr, res);
}

TEST(Shoot, DoubleIntegratorTimeOptimal) {
  const auto pr = di_problem();
  const testsys::BangBangOracle oracle{1.0};
  const auto res = pmp::shoot(pr, {make_vector({-0.5, -0.5}), 1.5, {}});
  ASSERT_TRUE(res.converged);
  const double b = res.extremal.ext_traj.b();
  EXPECT_NEAR(b, oracle.final_time(), 1e-3);
  const auto st = pmp::switching_structure(res.extremal);
  ASSERT_EQ(st.switch_times.size(), 1u);
  EXPECT_NEAR(st.switch_times[0], oracle.switch_time(), 1e-3);
  ASSERT_EQ(st.arcs.size(), 2u);
  EXPECT_EQ(st.arcs[0].u_start(0), -1.0);
  EXPECT_EQ(st.arcs[1].u_start(0), 1.0);
  EXPECT_LT((res.extremal.adjoint.sigma.front() - oracle.costate(0.0)).norm(), 1e-6);
  expect_cross_validated(pr, res);

  // |H| stays small on the whole grid, not only at b.
  const auto base = pmp::base_trajectory(res.extremal.ext_traj);
  for (std::size_t i = 0; i < base.grid.size(); ++i) {
    const double h = pmp::hamiltonian(pr.sys, -1.0, res.extremal.adjoint.sigma[i], base.states[i],
                                      res.extremal.control.at(base.grid[i]));
    EXPECT_LT(std::abs(h), 1e-5) << "t = " << base.grid[i];
  }
}

TEST(Shoot, MaximizedHamiltonianHasSmallDerivative) {
  const auto pr = di_problem();
  const auto res = pmp::shoot(pr, {make_vector({-0.5, -0.5}), 1.5, {}});
  ASSERT_TRUE(res.converged);
  const auto base = pmp::base_trajectory(res.extremal.ext_traj);
  std::vector<double> m;
  for (std::size_t i = 0; i < base.grid.size(); ++i)
    m.push_back(pmp::maximize_hamiltonian(pr.sys, -1.0, res.extremal.adjoint.sigma[i], base.states[i]).value);
  for (std::size_t i = 1; i < m.size(); ++i) {
    const double dt = base.grid[i] - base.grid[i - 1];
    if (dt > 1e-9) {
      EXPECT_LT(std::abs(m[i] - m[i - 1]) / dt, 1e-3);
    }
  }
}

TEST(Shoot, LqrMatchesRiccatiOracle) {
  const auto pr = lqr_problem();
  const auto res = pmp::shoot(pr, {make_vector({0.0}), {}, {}});
  ASSERT_TRUE(res.converged);
  testsys::RiccatiOracle oracle;
  oracle.solve();
  const auto base = pmp::base_trajectory(res.extremal.ext_traj);
  double sup = 0.0;
  for (std::size_t i = 0; i < base.grid.size(); ++i)
    sup = std::max(sup, std::abs(base.states[i](0) - oracle.state(base.grid[i])));
  EXPECT_LT(sup, 1e-4);
  EXPECT_LT(std::abs(res.extremal.adjoint.sigma.back()(0)), 1e-6);
  // p(0) = -2 P(0) x0 for the feedback u = p / 2 = -P x.
  EXPECT_NEAR(res.unknowns(0), -2.0 * oracle.P.front(), 1e-6);
  expect_cross_validated(pr, res);
}

TEST(Shoot, JacobianConsistentAcrossSteps) {
  for (const auto& pr : {di_problem(), lqr_problem()}) {
    const bool free = pr.bounds.mode == BoundarySpec::Mode::free_time;
    const auto res = pmp::shoot(pr, {free ? make_vector({-0.5, -0.5}) : make_vector({0.0}), 1.5, {}});
    ASSERT_TRUE(res.converged);
    const auto j5 = pmp::shooting_jacobian(pr, res.unknowns, 1e-5);
    const auto j6 = pmp::shooting_jacobian(pr, res.unknowns, 1e-6);
    EXPECT_LT((j5 - j6).norm(), 1e-2 * j5.norm());
    EXPECT_EQ(res.jacobian_rank, res.unknowns.size());
  }
}

TEST(Shoot, MultistartRecoversFromPoorGuess) {
  const auto pr = energy_problem(1.0);
  pmp::ShootingOptions opts;
  opts.max_iterations = 0;
  const auto none = pmp::shoot(pr, {make_vector({50.0}), {}, {}}, opts);
  EXPECT_FALSE(none.converged);
  const auto res = pmp::shoot(pr, {make_vector({50.0}), {}, {}});
  EXPECT_TRUE(res.converged);
}

TEST(Shoot, RejectsBadInput) {
  auto pr = energy_problem(0.0);
  EXPECT_THROW(pmp::shoot(pr, {make_vector({0.0, 1.0}), {}, {}}), pmp::InputError);
  pr.p0 = 0.5;
  EXPECT_THROW(pmp::shoot(pr, {make_vector({0.0}), {}, {}}), pmp::InputError);
}

TEST(Shoot, AbnormalReportsRankDiagnostics) {
  auto pr = energy_problem(0.0);
  pr.sys = testsys::scalar_integrator(pmp::ControlSet::interval(-1, 1));
  pr.p0 = 0.0;
  const auto res = pmp::shoot(pr, {make_vector({0.0}), {}, {}});
  EXPECT_EQ(res.jacobian_singular_values.size(), 1);
  EXPECT_LE(res.jacobian_rank, 1);
}

TEST(SwitchingStructure, ConstantBangArc) {
  const auto sys = testsys::double_integrator();
  const auto tr = pmp::simulate(sys, pmp::ControlSignal::constant(0, 1, make_vector({1.0})), make_vector({0, 0}));
  auto ex = pmp::make_extremal(sys, tr, pmp::adjoint_flow(sys, tr, -1.0, make_vector({0, 1})));
  ex.arcs = {"H"};
  const auto st = pmp::switching_structure(ex);
  EXPECT_TRUE(st.switch_times.empty());
  ASSERT_EQ(st.arcs.size(), 1u);
  EXPECT_EQ(st.arcs[0].u_start(0), 1.0);
  EXPECT_EQ(st.arcs[0].arc, "H");
}
