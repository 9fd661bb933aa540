#include <cmath>
#include <numbers>
#include <vector>

#include "equicontact/errors.hpp"
#include "equicontact/sim.hpp"
#include "test_util.hpp"

using namespace equicontact;
using equicontact::test::pose_error;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// End-effector pose whose tip sits at hole-frame point x with the peg aligned to the hole axis.
Pose tip_at(const Scene& scene, const PegHoleGeom& geom, const Vec3& x_hole) {
  const Pose h = scene.hole_world();
  return h * Pose::translation(x_hole) * h.inverse() * place_target(scene, geom);
}

}  // namespace

TEST(Scenario, CanonicalAndDeterministic) {
  const Scene flat = canonical_scene();
  const Scene again = build_scenario(ScenarioSpec{});
  EXPECT_EQ(pose_error(flat.hole_world(), again.hole_world()), 0.0);
  EXPECT_TRUE(flat.hole_world().R.matrix().isIdentity(0.0));

  ScenarioSpec spec;
  spec.translation_min = 0.01;
  spec.translation_max = 0.05;
  spec.yaw_range_deg = 90.0;
  spec.seed = 77;
  const Scene a = build_scenario(spec), b = build_scenario(spec);
  EXPECT_EQ(a.hole_world().matrix(), b.hole_world().matrix());
  EXPECT_EQ(a.g_peg_initial.matrix(), b.g_peg_initial.matrix());
  spec.seed = 78;
  EXPECT_GT(pose_error(build_scenario(spec).hole_world(), a.hole_world()), 1e-6);

  spec.tilt_deg = 70.0;
  EXPECT_THROW(build_scenario(spec), InvalidArgument);
}

TEST(Scenario, TiltIsExactlyAboutPlatformX) {
  ScenarioSpec spec;
  spec.tilt_deg = 30.0;
  const Scene tilted = build_scenario(spec);
  const Rotation rel = canonical_scene().hole_world().R.inverse() * tilted.hole_world().R;
  EXPECT_NEAR(rel.angle(), 30.0 * kDeg, 1e-12);
  EXPECT_LT((to_rotvec(rel).normalized() - Vec3::UnitX()).norm(), 1e-12);
}

TEST(Scenario, TransformMovesEveryPose) {
  Rng rng(1);
  const Pose gl = rng.random_pose(1);
  ScenarioSpec spec;
  spec.tilt_deg = 30.0;
  const Scene s = build_scenario(spec);
  spec.g_l = gl;
  const Scene t = build_scenario(spec);
  EXPECT_LT(pose_error(gl * s.hole_world(), t.hole_world()), 1e-14);
  EXPECT_LT(pose_error(gl * s.g_peg_initial, t.g_peg_initial), 1e-14);
  EXPECT_LT(pose_error(gl * s.g_ee_home, t.g_ee_home), 1e-14);
  EXPECT_LT(pose_error(gl, t.g_l_applied), 1e-15);
}

TEST(Contact, FarAboveIsZero) {
  const Scene s = canonical_scene();
  const PegHoleGeom geom;
  const auto c = contact_wrench(s.g_ee_home, Twist::zero(), s, geom, {});
  EXPECT_FALSE(c.active);
  EXPECT_TRUE(c.Fe.vector().isZero(0.0));
  const auto above = contact_wrench(tip_at(s, geom, Vec3(-0.04, 0, 0.001)), Twist::zero(), s, geom, {});
  EXPECT_FALSE(above.active);
}

TEST(Contact, FlatPenetrationForce) {
  const Scene s = canonical_scene();
  const PegHoleGeom geom;
  const ContactParams cp;
  for (double delta : {1e-5, 1e-4, 5e-4}) {
    for (double rate : {0.0, 0.002, 0.01}) {
      const Pose g = tip_at(s, geom, Vec3(-0.04, 0.01, -delta));
      Vec6 V = Vec6::Zero();
      V(2) = rate;  // body +z points into the surface
      const auto c = contact_wrench(g, Twist::body(V), s, geom, cp);
      ASSERT_TRUE(c.active);
      EXPECT_NEAR(c.max_penetration, delta, 1e-15);
      const double expect = cp.k_n * delta + cp.d_n * rate;
      EXPECT_NEAR(c.Fe.force().norm(), expect, 1e-9 * expect);
      EXPECT_NEAR(c.Fe.force().z(), -expect, 1e-9 * expect);  // pushes back along body -z
      EXPECT_LT(c.Fe.torque().norm(), 1e-9);
    }
  }
}

TEST(Contact, AlignedInsideBoreIsFree) {
  const Scene s = canonical_scene();
  const PegHoleGeom geom;
  const auto c = contact_wrench(tip_at(s, geom, Vec3(0, 0, -0.02)), Twist::zero(), s, geom, {});
  EXPECT_FALSE(c.active);
  const auto wall = contact_wrench(tip_at(s, geom, Vec3(0.0008, 0, -0.02)), Twist::zero(), s, geom, {});
  EXPECT_TRUE(wall.active);
  EXPECT_LT(wall.Fe.force().x(), 0.0);  // the wall pushes the peg back toward the axis (body x = world x here)
}

TEST(Contact, WrenchIsLeftInvariant) {
  Rng rng(2);
  const PegHoleGeom geom;
  const Scene s = canonical_scene();
  for (int i = 0; i < 200; ++i) {
    const Vec3 x(rng.uniform(-0.003, 0.003), rng.uniform(-0.003, 0.003), rng.uniform(-0.003, 0.0005));
    const Pose g = tip_at(s, geom, x) * Pose::rotation(from_rotvec(rng.normal_vec3(0.02)));
    const Twist V = Twist::body((Vec6() << rng.normal_vec3(0.01), rng.normal_vec3(0.05)).finished());
    const Pose gl = rng.random_pose(1);
    const auto a = contact_wrench(g, V, s, geom, {});
    const auto b = contact_wrench(gl * g, V, s.transformed(gl), geom, {});
    EXPECT_EQ(a.active, b.active);
    EXPECT_LT((a.Fe.vector() - b.Fe.vector()).norm(), 1e-8 * std::max(1.0, a.Fe.vector().norm()));
  }
}

TEST(Step, RolloutIsLeftEquivariant) {
  Rng rng(3);
  const PegHoleGeom geom;
  ScenarioSpec spec;
  spec.tilt_deg = 30.0;
  const Scene s = build_scenario(spec);
  // Aim past the mouth with a lateral offset so the peg lands on the chamfer and slides.
  const Pose target = tip_at(s, geom, Vec3(0.0025, -0.001, -0.01));
  for (int trial = 0; trial < 3; ++trial) {
    const Pose gl = rng.random_pose(1.0);
    const Scene t = s.transformed(gl);
    SimState a = initial_state(s), b = initial_state(t);
    a.g_ee = tip_at(s, geom, Vec3(0.002, -0.001, 0.01));
    b.g_ee = gl * a.g_ee;
    bool touched = false;
    double worst = 0.0;
    for (int k = 0; k < 2000; ++k) {
      Command ca{target, profile_gains(GainProfile::Insertion)};
      Command cb{gl * target, profile_gains(GainProfile::Insertion)};
      const auto ra = step(a, s, geom, {}, ca);
      const auto rb = step(b, t, geom, {}, cb);
      a = ra.state;
      b = rb.state;
      touched = touched || a.contact_active;
      const auto d = discrepancy(gl * a.g_ee, b.g_ee);
      worst = std::max({worst, d.translation, d.rotation});
    }
    EXPECT_TRUE(touched);
    EXPECT_LE(worst, 1e-6);
  }
}

TEST(Step, DeterministicAndBlowup) {
  const PegHoleGeom geom;
  const Scene s = canonical_scene();
  const Command c{tip_at(s, geom, Vec3(0.001, 0, -0.005)), profile_gains(GainProfile::Contact)};
  SimState a = initial_state(s), b = initial_state(s);
  a.g_ee = b.g_ee = tip_at(s, geom, Vec3(0.001, 0, 0.002));
  for (int k = 0; k < 500; ++k) {
    a = step(a, s, geom, {}, c).state;
    b = step(b, s, geom, {}, c).state;
  }
  EXPECT_EQ(a.g_ee.matrix(), b.g_ee.matrix());
  EXPECT_EQ(a.tick, 500);
  EXPECT_NEAR(a.t, 2.5, 1e-12);

  Command kick = c;
  Vec6 huge = Vec6::Zero();
  huge(0) = 1e6;
  kick.Fe_measured = Wrench::body(huge);
  EXPECT_THROW(step(a, s, geom, {}, kick), SimulationBlowup);
  EXPECT_THROW(step(a, s, geom, {}, c, 0.0), InvalidArgument);
}

TEST(Step, StiffTrackingIgnoresWrench) {
  const PegHoleGeom geom;
  const Scene s = canonical_scene();
  SimState st = initial_state(s);
  Command c{s.g_ee_home * Pose::translation(0.01, 0, 0), profile_gains(GainProfile::Free)};
  c.tracking = Tracking::Stiff;
  Vec6 F = Vec6::Zero();
  F(1) = 50.0;
  c.Fe_measured = Wrench::body(F);
  Command ref = c;
  ref.Fe_measured.reset();
  const auto a = step(st, s, geom, {}, c), b = step(st, s, geom, {}, ref);
  EXPECT_EQ(a.state.g_ee.matrix(), b.state.g_ee.matrix());
}

TEST(Step, KineticEnergyDecaysWithoutContact) {
  const PegHoleGeom geom;
  const Scene s = canonical_scene();
  SimState st = initial_state(s);
  Vec6 V;
  V << 0.05, -0.02, 0.01, 0.1, 0.2, -0.1;
  st.Vb = Twist::body(V);
  // Command frozen at the current pose: no spring load, only damping acts.
  const Command c{st.g_ee, profile_gains(GainProfile::Free)};
  const Mat6 M = c.gains.inertia();
  double prev = 0.5 * V.dot(M * V);
  for (int k = 0; k < 200; ++k) {
    const auto r = step(st, s, geom, {}, c);
    ASSERT_FALSE(r.state.contact_active);
    st = r.state;
    st.g_ee = s.g_ee_home;  // hold the pose so the spring never loads
    const Vec6 v = st.Vb.vector();
    const double E = 0.5 * v.dot(M * v);
    ASSERT_LE(E, prev);
    prev = E;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Sensing, NoiseFreeIdentityAndSeededStream) {
  Vec6 F;
  F << 1, 2, 3, 0.1, 0.2, 0.3;
  Rng rng(4);
  EXPECT_EQ(ft_sense(Wrench::body(F), {}, rng).vector(), F);
  FtNoiseConfig cfg;
  cfg.force_sigma = 0.5;
  cfg.torque_sigma = 0.02;
  FtSensor a(cfg, 9), b(cfg, 9), c(cfg, 10);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const Vec6 x = a.sense(Wrench::body(F)).vector();
    EXPECT_EQ(x, b.sense(Wrench::body(F)).vector());
    differs = differs || x != c.sense(Wrench::body(F)).vector();
  }
  EXPECT_TRUE(differs);
}

TEST(Sensing, BiasRemovedByRebias) {
  FtNoiseConfig cfg;
  cfg.force_sigma = 0.3;
  cfg.torque_sigma = 0.01;
  cfg.bias << 1, 0, 0, 0, 0, 0;
  FtSensor sensor(cfg, 5);
  FtConditioner cond;
  cond.request_rebias();
  for (std::size_t k = 0; k < kRebiasMinSamples; ++k) cond.filter(sensor.sense(Wrench::zero()));
  ASSERT_FALSE(cond.rebiasing());
  const double bound = 3.0 * cfg.force_sigma / std::sqrt(400.0);
  EXPECT_LT((cond.state().bias - cfg.bias).head<3>().cwiseAbs().maxCoeff(), bound);
  // Average the filtered output over a quiet second; the residual is the bias estimate error.
  Vec6 mean = Vec6::Zero();
  for (int k = 0; k < 200; ++k) mean += cond.filter(sensor.sense(Wrench::zero())).vector() / 200.0;
  EXPECT_LT(mean.head<3>().cwiseAbs().maxCoeff(), 2.0 * bound);
}

TEST(Success, Examples) {
  const PegHoleGeom geom;
  const Scene s = canonical_scene();
  SimState st = initial_state(s);
  st.g_ee = tip_at(s, geom, Vec3(0, 0, -geom.hole_depth));
  EXPECT_EQ(success_check(st, s, geom), TrialStatus::Success);
  const auto m = insertion_metrics(st.g_ee, s, geom);
  EXPECT_NEAR(m.depth, geom.hole_depth, 1e-12);
  EXPECT_NEAR(m.lateral, 0.0, 1e-12);
  EXPECT_NEAR(m.axis_angle, 0.0, 1e-7);

  st.g_ee = tip_at(s, geom, Vec3(0.002, 0, -geom.hole_depth));
  EXPECT_NE(success_check(st, s, geom), TrialStatus::Success);
  st.g_ee = tip_at(s, geom, Vec3(0, 0, -0.5 * geom.hole_depth));
  EXPECT_EQ(success_check(st, s, geom), TrialStatus::InProgress);

  st = initial_state(s);
  st.t = 20.5;
  EXPECT_EQ(success_check(st, s, geom), TrialStatus::Fail);

  // A peg that has been released does not count.
  st = initial_state(s, GripperState::Open);
  st.g_ee = tip_at(s, geom, Vec3(0, 0, -geom.hole_depth));
  EXPECT_NE(success_check(st, s, geom), TrialStatus::Success);
}

TEST(Success, InvariantUnderSceneTransform) {
  Rng rng(6);
  const PegHoleGeom geom;
  const Scene s = canonical_scene();
  for (int i = 0; i < 50; ++i) {
    const Pose gl = rng.random_pose(1);
    SimState st = initial_state(s);
    st.g_ee = tip_at(s, geom, Vec3(rng.uniform(-0.001, 0.001), 0, -rng.uniform(0, 0.03)));
    SimState moved = st;
    moved.g_ee = gl * st.g_ee;
    EXPECT_EQ(success_check(st, s, geom), success_check(moved, s.transformed(gl), geom));
  }
}

TEST(Geometry, Validation) {
  PegHoleGeom g;
  EXPECT_NO_THROW(g.validate());
  EXPECT_NEAR(g.clearance(), 0.001, 1e-15);
  g.hole_diameter = 0.019;
  EXPECT_THROW(g.validate(), InvalidArgument);
  ContactParams c;
  c.mu = -1.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(Grasp, KinematicTolerance) {
  const PegHoleGeom geom;
  const Scene s = canonical_scene();
  EXPECT_TRUE(grasp_succeeds(grasp_target(s, geom), s, geom));
  EXPECT_FALSE(grasp_succeeds(grasp_target(s, geom) * Pose::translation(0.02, 0, 0), s, geom));
  EXPECT_FALSE(grasp_succeeds(s.g_ee_home, s, geom));
}
