#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "systems.hpp"

using pmp::ControlSignal;
using pmp::make_vector;
using pmp::NeedleData;
using pmp::Vector;

namespace {

struct Fixture {
  pmp::ControlSystem sys = testsys::double_integrator();
  pmp::Trajectory traj =
      pmp::simulate(sys, ControlSignal::constant(0, 1, make_vector({0.0})), make_vector({0.0, 0.0}));
};

}  // namespace

TEST(Needle, InsertsValueOnInterval) {
  const auto u = ControlSignal::constant(0, 1, make_vector({0.0}));
  const auto w = pmp::apply_needle(u, {0.5, 2.0, make_vector({1.0})}, 0.1);
  EXPECT_EQ(w.at(0.29)(0), 0.0);
  EXPECT_EQ(w.at(0.31)(0), 1.0);
  EXPECT_EQ(w.at(0.5)(0), 0.0);
  EXPECT_THROW(pmp::apply_needle(u, {0.05, 1.0, make_vector({1.0})}, 0.1), pmp::InputError);
  EXPECT_THROW(pmp::apply_needle(w, {0.45, 1.0, make_vector({1.0})}, 0.1), pmp::InputError);
  EXPECT_THROW(pmp::apply_needle(u, {0.5, 1.0, make_vector({1.0})}, 0.0), pmp::InputError);
}

TEST(Needle, SameTimeNeedlesStackBackToBack) {
  const auto u = ControlSignal::constant(0, 1, make_vector({0.0}));
  const auto w = pmp::apply_needles(u, {{0.5, 1.0, make_vector({1.0})}, {0.5, 1.0, make_vector({-1.0})}}, 0.1);
  EXPECT_EQ(w.at(0.45)(0), -1.0);
  EXPECT_EQ(w.at(0.35)(0), 1.0);
  EXPECT_EQ(w.at(0.25)(0), 0.0);
}

// With u = 0 from rest, a needle u1 = 1 of length s ending at 0.5 gives the
// exact endpoint (s/2 + s^2/2, s) at t = 1; the first-order vector is (0.5, 1).
TEST(Needle, FirstOrderVectorMatchesExactEndpoint) {
  Fixture fx;
  const NeedleData pi{0.5, 1.0, make_vector({1.0})};
  const auto v1 = pmp::class1_vector(fx.sys, fx.traj, pi);
  EXPECT_LT((v1.vector - make_vector({0.0, 1.0})).norm(), 1e-14);
  const auto v = pmp::transport_vector(fx.sys, fx.traj, v1, 1.0);
  EXPECT_LT((v.vector - make_vector({0.5, 1.0})).norm(), 1e-12);
  for (double s : {1e-2, 1e-3}) {
    const auto w = pmp::apply_needle(fx.traj.control, pi, s);
    const Vector end = pmp::perturbed_endpoint(fx.sys, w, make_vector({0, 0}), 1.0, pmp::IntegratorConfig{});
    EXPECT_NEAR(end(0), 0.5 * s + 0.5 * s * s, 1e-13);
    EXPECT_NEAR(end(1), s, 1e-13);
    EXPECT_NEAR((end - s * v.vector).norm(), 0.5 * s * s, 1e-13);
  }
}

TEST(Needle, RejectsSwitchTimes) {
  const auto sys = testsys::double_integrator();
  const auto tr = pmp::simulate(sys, ControlSignal::piecewise(0, 1, {0.5}, {make_vector({-1}), make_vector({1})}),
                                make_vector({0, 0}));
  EXPECT_THROW(pmp::class1_vector(sys, tr, {0.5, 1.0, make_vector({0.0})}), pmp::InputError);
  EXPECT_THROW(pmp::class1_vector(sys, tr, {0.0, 1.0, make_vector({0.0})}), pmp::InputError);
}

TEST(MultiNeedle, SumsTransportedVectors) {
  Fixture fx;
  const std::vector<NeedleData> ns{{0.25, 1.0, make_vector({1.0})}, {0.75, 2.0, make_vector({-1.0})}};
  const auto v = pmp::multi_needle_vector(fx.sys, fx.traj, ns, 1.0);
  // (1 - tau) l u1 in the first slot, l u1 in the second.
  EXPECT_LT((v.vector - make_vector({0.75 - 0.5, 1.0 - 2.0})).norm(), 1e-12);
}

TEST(TimePerturbation, DriftAndNeedleParts) {
  const auto sys = testsys::double_integrator();
  const auto tr = pmp::simulate(sys, ControlSignal::constant(0, 1, make_vector({1.0})), make_vector({0, 0}));
  const auto v = pmp::time_perturbation_vector(sys, tr, {1.0, 0.0, 2.0, make_vector({0.0})});
  EXPECT_LT((v.vector - make_vector({2.0, 2.0})).norm(), 1e-12);
  const auto w = pmp::time_perturbation_vector(sys, tr, {1.0, 1.0, 0.0, make_vector({-1.0})});
  EXPECT_LT((w.vector - make_vector({0.0, -2.0})).norm(), 1e-12);
}

TEST(ExtremeControls, BoxFiniteBall) {
  const auto box = pmp::extreme_controls(pmp::ControlSet::box(make_vector({-1, 0}), make_vector({1, 2})));
  EXPECT_EQ(box.size(), 4u);
  const auto half = pmp::extreme_controls(pmp::ControlSet::box(make_vector({0}), make_vector({pmp::kInf})));
  EXPECT_EQ(half.size(), 2u);
  const auto ball = pmp::extreme_controls(pmp::ControlSet::ball(make_vector({0, 0}), 2.0));
  EXPECT_EQ(ball.size(), 16u);
  for (const auto& u : ball) EXPECT_NEAR(u.norm(), 2.0, 1e-12);
}

TEST(Cones, DoubleIntegratorTangentConeIsThePlaneInterior) {
  Fixture fx;
  const auto sampling = pmp::uniform_sampling(fx.sys, fx.traj, 1.0, 10);
  const auto cone = pmp::build_tangent_cone(fx.sys, fx.traj, 1.0, sampling);
  // Generators +-(1 - tau, 1): spans the plane.
  for (std::size_t i = 0; i < cone.cone.size(); ++i) {
    const auto& g = cone.cone.generators[i];
    const auto& pv = cone.provenance[i];
    EXPECT_LT((g - pv.u(0) * make_vector({1.0 - pv.tau, 1.0})).norm(), 1e-12);
  }
  EXPECT_EQ(pmp::conic_membership(cone.cone, make_vector({0.3, -0.9})), pmp::Membership::interior);
  EXPECT_FALSE(pmp::supporting_hyperplane(cone.cone).has_value());
}

TEST(Cones, TimeAndInitialConesAddGenerators) {
  const auto sys = testsys::double_integrator();
  const auto tr = pmp::simulate(sys, ControlSignal::constant(0, 1, make_vector({1.0})), make_vector({0, 0}));
  pmp::ConeSampling sampling{{0.5}, {make_vector({-1.0})}};
  const auto tangent = pmp::build_tangent_cone(sys, tr, 1.0, sampling);
  EXPECT_EQ(tangent.cone.size(), 1u);
  const auto time = pmp::build_time_cone(sys, tr, 1.0, sampling);
  EXPECT_EQ(time.cone.size(), 3u);
  const auto init = pmp::build_initial_cone(sys, tr, 1.0, sampling, {make_vector({1.0, 0.0})});
  EXPECT_EQ(init.cone.size(), 5u);
  // Initial tangent (1, 0) is unchanged by the double integrator flow.
  EXPECT_LT((init.cone.generators[3] - make_vector({1.0, 0.0})).norm(), 1e-12);
}

TEST(Cones, TransportIntoLaterCone) {
  const auto sys = testsys::square_accumulator();
  const auto tr = pmp::simulate(sys, ControlSignal::constant(0, 1, make_vector({0.5})), make_vector({0.2, 0.0}));
  const auto sampling = pmp::uniform_sampling(sys, tr, 0.5, 5);
  for (auto kind : {0, 1}) {
    const auto cone = kind == 0 ? pmp::build_tangent_cone(sys, tr, 0.5, sampling)
                                : pmp::build_time_cone(sys, tr, 0.5, sampling);
    const auto rep = pmp::cone_transport_check(sys, tr, 0.5, 0.9, cone);
    EXPECT_LT(rep.max_violation, 1e-8);
    EXPECT_EQ(rep.generators_checked, cone.cone.size());
    if (kind == 1) {
      EXPECT_LT(rep.axis_identity_residual, 1e-6);
    }
  }
}

TEST(Realize, DirectionsInTheDoubleIntegratorCone) {
  Fixture fx;
  const auto cone = pmp::build_tangent_cone(fx.sys, fx.traj, 1.0, pmp::uniform_sampling(fx.sys, fx.traj, 1.0, 20));
  for (double ang : {0.3, 1.4, 2.9, 4.0, 5.5}) {
    const Vector v = make_vector({std::cos(ang), std::sin(ang)});
    const auto r = pmp::realize_direction(fx.sys, fx.traj, 1.0, v, cone);
    EXPECT_GT(r.s_prime, 0.0);
    EXPECT_LT(r.residual, 1e-6 * r.s);
    // Re-simulating the returned control reproduces the endpoint.
    const auto again = pmp::simulate(fx.sys, r.control, r.initial_state);
    EXPECT_LT((again.final_state() - r.endpoint).norm(), 1e-12);
    EXPECT_LT((r.endpoint - r.s_prime * v).norm(), 1e-6 * r.s);
  }
}

TEST(Realize, RejectsNonInteriorDirection) {
  const auto sys = testsys::double_integrator();
  const auto tr = pmp::simulate(sys, ControlSignal::constant(0, 1, make_vector({1.0})), make_vector({0, 0}));
  const auto cone = pmp::build_tangent_cone(sys, tr, 1.0, {{0.5}, {make_vector({-1.0})}});
  EXPECT_THROW(pmp::realize_direction(sys, tr, 1.0, make_vector({1.0, 0.0}), cone), pmp::InputError);
}

TEST(ConeCsv, OneRowPerGenerator) {
  Fixture fx;
  const auto cone = pmp::build_time_cone(fx.sys, fx.traj, 1.0, {{0.5}, {make_vector({1.0})}});
  std::ostringstream os;
  pmp::write_cone_csv(os, cone, 1);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "g0,g1,tau,l,u0,kind");
  std::size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, cone.cone.size());
}

// Double integrator from rest with u = 0: a unit needle u = 1 before the
// shifted final time gives exact endpoints (s^2/2, s) for delta_tau = -1 and
// (3 s^2 / 2, s) for delta_tau = +1.
TEST(TimePerturbation, ExactEndpointsBothSigns) {
  Fixture fx;
  for (double s : {1e-2, 1e-3}) {
    const auto shorter = pmp::apply_time_perturbation(fx.traj.control, {1.0, 1.0, -1.0, make_vector({1.0})}, s);
    EXPECT_DOUBLE_EQ(shorter.final_time, 1.0 - s);
    Vector end = pmp::perturbed_endpoint(fx.sys, shorter.control, make_vector({0, 0}), shorter.final_time,
                                         pmp::IntegratorConfig{});
    EXPECT_NEAR(end(0), 0.5 * s * s, 1e-13);
    EXPECT_NEAR(end(1), s, 1e-13);

    const auto longer = pmp::apply_time_perturbation(fx.traj.control, {1.0, 1.0, 1.0, make_vector({1.0})}, s);
    EXPECT_EQ(longer.control.at(1.0 + 0.5 * s)(0), 0.0);
    end = pmp::perturbed_endpoint(fx.sys, longer.control, make_vector({0, 0}), longer.final_time,
                                  pmp::IntegratorConfig{});
    EXPECT_NEAR(end(0), 1.5 * s * s, 1e-13);
    EXPECT_NEAR(end(1), s, 1e-13);
  }
}

TEST(Cones, TransportAcrossSwitch) {
  const auto sys = testsys::double_integrator();
  const auto u = ControlSignal::piecewise(0, 2, {1.0}, {make_vector({-1.0}), make_vector({1.0})});
  const auto tr = pmp::simulate(sys, u, make_vector({1.0, -0.5}));
  const auto sampling = pmp::uniform_sampling(sys, tr, 0.5, 8);
  const auto cone = pmp::build_time_cone(sys, tr, 0.5, sampling);
  const auto across = pmp::cone_transport_check(sys, tr, 0.5, 1.5, cone);
  EXPECT_TRUE(across.switch_between);
  EXPECT_LT(across.max_violation, 1e-8);
  // x2(0.5) = -1 and x2(1.5) = -1; the flow derivative is [[1, 1], [0, 1]], so
  // D f1 = (-2, -1) against f2 = (-1, 1).
  EXPECT_NEAR(across.axis_identity_residual, std::sqrt(5.0), 1e-9);
  const auto after = pmp::cone_transport_check(sys, tr, 1.2, 2.0, pmp::build_time_cone(sys, tr, 1.2, sampling));
  EXPECT_FALSE(after.switch_between);
  EXPECT_LT(after.axis_identity_residual, 1e-9);
}
