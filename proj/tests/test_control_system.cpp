#include <gtest/gtest.h>

#include <sstream>

#include "systems.hpp"

using pmp::ControlSet;
using pmp::ControlSignal;
using pmp::make_vector;
using pmp::Vector;

TEST(ControlSet, Membership) {
  const auto box = ControlSet::interval(-1, 1);
  EXPECT_TRUE(box.contains(make_vector({0.5})));
  EXPECT_FALSE(box.contains(make_vector({1.5})));
  EXPECT_FALSE(box.contains(make_vector({0.0, 0.0})));
  const auto fin = ControlSet::finite({make_vector({0, 1}), make_vector({1, 0})});
  EXPECT_TRUE(fin.contains(make_vector({1, 0})));
  EXPECT_FALSE(fin.contains(make_vector({0.5, 0.5})));
  const auto ball = ControlSet::ball(make_vector({0, 0}), 2.0);
  EXPECT_TRUE(ball.contains(make_vector({1, 1})));
  EXPECT_FALSE(ball.contains(make_vector({2, 1})));
  EXPECT_FALSE(ControlSet::unbounded(2).bounded());
  EXPECT_THROW(ControlSet::interval(1, -1), pmp::InputError);
}

TEST(ControlSignal, RightContinuousWithHeldEnds) {
  const auto u = ControlSignal::piecewise(0, 2, {1.0}, {make_vector({-1}), make_vector({1})});
  EXPECT_EQ(u.at(0.5)(0), -1);
  EXPECT_EQ(u.at(1.0)(0), 1);
  EXPECT_EQ(u.at(-3.0)(0), -1);
  EXPECT_EQ(u.at(5.0)(0), 1);
  EXPECT_TRUE(u.is_switch(1.0));
  EXPECT_FALSE(u.is_switch(0.9));
}

TEST(ControlSignal, RejectsBadShapes) {
  EXPECT_THROW(ControlSignal::piecewise(0, 1, {0.5}, {make_vector({0})}), pmp::InputError);
  EXPECT_THROW(ControlSignal::piecewise(0, 1, {1.5}, {make_vector({0}), make_vector({1})}), pmp::InputError);
  EXPECT_THROW(ControlSignal::piecewise(1, 1, {}, {make_vector({0})}), pmp::InputError);
  const auto u = ControlSignal::constant(0, 1, make_vector({2.0}));
  EXPECT_THROW(u.validate(ControlSet::interval(-1, 1)), pmp::InputError);
}

TEST(ControlSignal, OverwriteInsertsSwitches) {
  const auto u = ControlSignal::constant(0, 1, make_vector({0}));
  const auto w = u.with_value_on(0.2, 0.4, make_vector({1}));
  ASSERT_EQ(w.switch_times.size(), 2u);
  EXPECT_EQ(w.at(0.1)(0), 0);
  EXPECT_EQ(w.at(0.3)(0), 1);
  EXPECT_EQ(w.at(0.5)(0), 0);
  const auto v = w.with_value_on(0.0, 0.3, make_vector({1}));
  ASSERT_EQ(v.switch_times.size(), 1u);
  EXPECT_DOUBLE_EQ(v.switch_times[0], 0.4);
}

TEST(Simulate, DoubleIntegratorConstantControl) {
  const auto sys = testsys::double_integrator();
  const auto tr = pmp::simulate(sys, ControlSignal::constant(0, 1, make_vector({1})), make_vector({0, 0}));
  EXPECT_NEAR(tr.final_state()(0), 0.5, 1e-12);
  EXPECT_NEAR(tr.final_state()(1), 1.0, 1e-12);
  EXPECT_NEAR(tr.state_at(sys, 0.3)(0), 0.045, 1e-12);
}

TEST(Simulate, BangBangMatchesOracleAndHitsSwitchExactly) {
  const auto sys = testsys::double_integrator();
  const testsys::BangBangOracle oracle{2.0};
  const double ts = oracle.switch_time(), tf = oracle.final_time();
  const auto u = ControlSignal::piecewise(0, tf, {ts}, {make_vector({-1}), make_vector({1})});
  const auto tr = pmp::simulate(sys, u, make_vector({2.0, 0.0}));
  EXPECT_NE(std::find(tr.grid.begin(), tr.grid.end(), ts), tr.grid.end());
  for (double t : {0.1, 0.9, ts, 1.7, tf}) EXPECT_LT((tr.state_at(sys, t) - oracle.state(t)).norm(), 1e-11) << t;
}

TEST(Extend, CostComponentIsRunningIntegral) {
  const auto sys = testsys::scalar_integrator();
  const auto ext = pmp::extend(sys);
  EXPECT_EQ(ext.m, 2);
  EXPECT_THROW(pmp::extend(ext), pmp::InputError);
  const auto u = ControlSignal::piecewise(0, 1, {0.25}, {make_vector({0.5}), make_vector({-1})});
  const auto tr = pmp::simulate(ext, u, make_vector({0.0, 0.2}));
  EXPECT_NEAR(pmp::cost(tr), 0.25 * 0.25 + 0.75 * 1.0, 1e-12);
  EXPECT_NEAR(tr.final_state()(1), 0.2 + 0.125 - 0.75, 1e-12);
  const auto base = pmp::simulate(sys, u, make_vector({0.2}));
  EXPECT_THROW(pmp::cost(base), pmp::InputError);
}

TEST(Extend, JacobianMatchesFiniteDifferences) {
  const auto ext = pmp::extend(testsys::scalar_lqr());
  const Vector x = make_vector({0.0, 0.7});
  const Vector u = make_vector({0.3});
  const auto J = ext.jac_x(x, u);
  EXPECT_NEAR(J(0, 1), 1.4, 1e-8);
  EXPECT_NEAR(J(1, 1), 0.0, 1e-12);
  EXPECT_NEAR(ext.cost_grad(x, u)(1), 1.4, 1e-8);
}

TEST(Lebesgue, ExcludesSwitchesAndEndpoints) {
  const auto u = ControlSignal::piecewise(0, 1, {0.5}, {make_vector({0}), make_vector({1})});
  const auto lt = pmp::lebesgue_times(u, {0.0, 0.25, 0.5, 0.75, 1.0});
  ASSERT_EQ(lt.size(), 2u);
  EXPECT_EQ(lt[0], 0.25);
  EXPECT_EQ(lt[1], 0.75);
}

TEST(TrajectoryCsv, HeaderAndPrecision) {
  const auto ext = pmp::extend(testsys::double_integrator());
  const auto tr = pmp::simulate(ext, ControlSignal::constant(0, 1, make_vector({1})), make_vector({0, 0, 0}));
  std::ostringstream os;
  pmp::write_trajectory_csv(os, tr);
  std::istringstream is(os.str());
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "t,x0,x1,xcost");
  EXPECT_EQ(first, "0,0,0,0");
  std::string line, last;
  while (std::getline(is, line)) last = line;
  EXPECT_EQ(last.substr(0, 2), "1,");
}
