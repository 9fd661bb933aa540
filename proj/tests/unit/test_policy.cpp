#include <cmath>
#include <numbers>
#include <vector>

#include "equicontact/errors.hpp"
#include "equicontact/policy.hpp"
#include "test_util.hpp"

using namespace equicontact;
using equicontact::test::pose_error;

namespace {

Observation observe(const Pose& g, const Pose& g_ref, const Vec6& Fe = Vec6::Zero()) {
  Observation o;
  o.e_G = compute_gcev(g, g_ref);
  o.Fe = Wrench::body(Fe);
  return o;
}

Vec6 force_z(double fz) {
  Vec6 F = Vec6::Zero();
  F(2) = fz;
  return F;
}

}  // namespace

TEST(Gcev, Examples) {
  Rng rng(1);
  const Pose g = rng.random_pose(1);
  EXPECT_TRUE(compute_gcev(g, g).vector().isZero(1e-15));
  const auto e = compute_gcev(Pose::translation(0.1, -0.2, 0.3), Pose::identity());
  Vec6 expect;
  expect << 0.1, -0.2, 0.3, 0, 0, 0;
  EXPECT_LT((e.vector() - expect).norm(), 1e-15);
}

TEST(Gcev, LeftInvariantAndBounded) {
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const Pose g = rng.random_pose(1), r = rng.random_pose(1), gl = rng.random_pose(3);
    const auto a = compute_gcev(g, r), b = compute_gcev(gl * g, gl * r);
    EXPECT_LT((a.vector() - b.vector()).norm(), 1e-12);
    EXPECT_LE(a.e_R.norm(), 2.0 + 1e-12);
  }
}

TEST(ExpandChunk, Examples) {
  Rng rng(3);
  const Pose g = rng.random_pose(1);
  ActionChunk c;
  c.steps.resize(5);
  for (const auto& p : expand_chunk(g, c)) EXPECT_LT(pose_error(p, g), 1e-15);

  ActionChunk down;
  down.steps.push_back({Pose::translation(0, 0, -0.01)});
  const Pose out = expand_chunk(g, down).front();
  EXPECT_LT((out.p - (g.p - 0.01 * g.R.matrix().col(2))).norm(), 1e-15);

  const Pose gl = rng.random_pose(2);
  for (auto& s : c.steps) s.g_rel = rng.random_pose(0.1);
  const auto a = expand_chunk(gl * g, c), b = expand_chunk(g, c);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT(pose_error(a[i], gl * b[i]), 1e-12);
}

TEST(ActionChunk, Validate) {
  ActionChunk c;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.steps.push_back({});
  EXPECT_NO_THROW(c.validate());
  c.steps.back().kp_bar.x() = 200.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.steps.back().kp_bar.x() = 300.0;
  c.steps.back().kr_bar.z() = 1600.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}

TEST(TemporalEnsemble, Examples) {
  Rng rng(4);
  const Prediction a{rng.random_pose(1), Vec3(300, 400, 500), Vec3(600, 700, 800)};
  const std::vector<Prediction> one{a};
  const std::vector<double> w1{0.3};
  auto out = temporal_ensemble(one, w1);
  EXPECT_LT(pose_error(out.g_d, a.g_d), 1e-12);
  EXPECT_EQ(out.kp, a.kp);

  const std::vector<Prediction> same{a, a, a};
  const std::vector<double> w3{0.1, 2.0, 0.7};
  out = temporal_ensemble(same, w3);
  EXPECT_LT(pose_error(out.g_d, a.g_d), 1e-12);
  EXPECT_LT((out.kr - a.kr).norm(), 1e-12);

  const std::vector<Prediction> two{{Pose::identity()}, {Pose::translation(0.02, 0, 0)}};
  const std::vector<double> w2{1.0, 1.0};
  EXPECT_LT((temporal_ensemble(two, w2).g_d.p - Vec3(0.01, 0, 0)).norm(), 1e-15);

  EXPECT_THROW(temporal_ensemble(std::vector<Prediction>{}, std::vector<double>{}), InvalidArgument);
}

TEST(TemporalEnsemble, LeftEquivariantGainsInvariant) {
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    std::vector<Prediction> preds;
    std::vector<double> w;
    const Pose base = rng.random_pose(1);
    for (int j = 0; j < 8; ++j) {
      preds.push_back({base * exp_se3(Twist::body((Vec6() << rng.normal_vec3(0.01), rng.normal_vec3(0.1)).finished())),
                       rng.uniform_vec3(300, 1500), rng.uniform_vec3(300, 1500)});
      w.push_back(std::exp(-0.1 * j));
    }
    const Pose gl = rng.random_pose(2);
    auto moved = preds;
    for (auto& p : moved) p.g_d = gl * p.g_d;
    const auto a = temporal_ensemble(preds, w), b = temporal_ensemble(moved, w);
    EXPECT_LT(pose_error(gl * a.g_d, b.g_d), 1e-10);
    EXPECT_LT((a.kp - b.kp).norm(), 1e-12);
    EXPECT_LT((a.kr - b.kr).norm(), 1e-12);
  }
}

TEST(EnsembleBuffer, AgesAndWeights) {
  EnsembleBuffer buf(3, 0.1);
  auto chunk_at = [](double x) {
    std::vector<Prediction> v;
    for (int i = 0; i < 3; ++i) v.push_back({Pose::translation(x + i, 0, 0)});
    return v;
  };
  buf.add(0, chunk_at(0));
  buf.add(1, chunk_at(10));
  EXPECT_THROW(buf.add(1, chunk_at(20)), InvalidArgument);
  EXPECT_THROW(buf.ensemble(0), InvalidArgument);

  const auto e = buf.entries_for(2);  // index 1 of chunk 0 (age 1), index 0 of chunk 1 (age 0)
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].age, 1);
  EXPECT_EQ(e[1].age, 0);
  EXPECT_NEAR(e[0].weight, std::exp(-0.1), 1e-15);
  EXPECT_DOUBLE_EQ(e[1].weight, 1.0);
  const double w0 = std::exp(-0.1);
  EXPECT_NEAR(buf.ensemble(2).g_d.p.x(), (w0 * 1.0 + 10.0) / (w0 + 1.0), 1e-12);

  buf.prune(4);  // chunk 0 covers ticks 1..3 only
  EXPECT_EQ(buf.entries_for(3).size(), 1u);
  EXPECT_THROW(EnsembleBuffer(0, 0.1), InvalidArgument);
}

TEST(Augment, ZeroNoiseAndReproducible) {
  Rng rng(6);
  const Pose g = rng.random_pose(1);
  Rng a(7);
  EXPECT_LT(pose_error(augment_reference(g, a, {0.0, 0.0}), g), 1e-15);
  Rng r1(42), r2(42);
  for (int i = 0; i < 100; ++i) {
    const Pose x = augment_reference(g, r1), y = augment_reference(g, r2);
    EXPECT_EQ(x.p, y.p);
    EXPECT_EQ(x.R.matrix(), y.R.matrix());
  }
}

TEST(Augment, BoundsAndMean) {
  Rng rng(8);
  const Pose g{Vec3(0.3, -0.1, 0.5), Rotation::about_axis(Vec3(1, 1, 0).normalized(), 0.4)};
  const double deg8 = 8.0 * std::numbers::pi / 180.0;
  Vec3 sum = Vec3::Zero();
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Pose a = augment_reference(g, rng);
    const Vec3 np = a.p - g.p;
    const Vec3 nr = to_euler_xyz(g.R.inverse() * a.R);
    ASSERT_LE(np.cwiseAbs().maxCoeff(), 0.02 + 1e-15);
    ASSERT_LE(nr.cwiseAbs().maxCoeff(), deg8 + 1e-12);
    sum += np;
  }
  EXPECT_LT((sum / n).cwiseAbs().maxCoeff(), 0.0005);
}

TEST(InsertionPolicy, AlignedCaseDescendsWithInsertionGains) {
  InsertionPolicyConfig cfg;
  const auto chunk = scripted_insertion_policy(observe(Pose(), Pose()), cfg);
  EXPECT_EQ(chunk.phase, Phase::Descend);
  ASSERT_EQ(chunk.size(), cfg.chunk_size);
  EXPECT_NO_THROW(chunk.validate());
  const auto [kp, kr] = profile_stiffness(GainProfile::Insertion);
  for (const auto& s : chunk.steps) {
    EXPECT_EQ(s.kp_bar, kp);
    EXPECT_EQ(s.kr_bar, kr);
    EXPECT_LT(s.g_rel.R.distance(Rotation()), 1e-15);
    EXPECT_LT((s.g_rel.p - Vec3(0, 0, cfg.descend_lead)).norm(), 1e-15);
  }
}

TEST(InsertionPolicy, ContactWithLateralMisfitSpirals) {
  InsertionPolicyConfig cfg;
  const Pose g_ref = Pose::identity();
  const Pose g = Pose::translation(0.0005, 0, 0);
  const auto chunk = scripted_insertion_policy(observe(g, g_ref, force_z(-20.0)), cfg);
  EXPECT_EQ(chunk.phase, Phase::Search);
  EXPECT_NO_THROW(chunk.validate());
  EXPECT_LE(cfg.spiral_pitch, 0.0005);  // half the 1 mm clearance
  double prev_angle = -1.0;
  for (const auto& s : chunk.steps) {
    EXPECT_EQ(s.kp_bar.z(), 300.0);
    EXPECT_EQ(s.kp_bar.x(), 1500.0);
    // Lateral excursion about the hole centre stays within the spiral bound.
    const Vec3 rel = s.g_rel.p - Vec3(-0.0005, 0, cfg.search_press);
    EXPECT_NEAR(rel.z(), 0.0, 1e-15);
    EXPECT_LE(Eigen::Vector2d(rel.x(), rel.y()).norm(), cfg.spiral_max_radius + 1e-12);
    const double angle = std::atan2(rel.y(), rel.x());
    EXPECT_NE(angle, prev_angle);
    prev_angle = angle;
  }
  // Release and depth end the search.
  InsertionMemory mem;
  scripted_insertion_policy(observe(g, g_ref, force_z(-20.0)), cfg, mem);
  EXPECT_EQ(mem.phase, Phase::Search);
  scripted_insertion_policy(observe(Pose::translation(0, 0, 0.001), g_ref), cfg, mem);
  EXPECT_EQ(mem.phase, Phase::Descend);
}

TEST(InsertionPolicy, FarAwayApproachesWithFreeGains) {
  InsertionPolicyConfig cfg;
  const auto chunk = scripted_insertion_policy(observe(Pose::translation(0.1, 0.05, -0.2), Pose()), cfg);
  EXPECT_EQ(chunk.phase, Phase::Approach);
  for (const auto& s : chunk.steps) EXPECT_EQ(s.kp_bar, Vec3::Constant(1000));
  InsertionPolicyConfig fixed = cfg;
  fixed.schedule = GainSchedule::FixedHigh;
  const auto hi = scripted_insertion_policy(observe(Pose::translation(0.0005, 0, 0), Pose(), force_z(-20.0)), fixed);
  for (const auto& s : hi.steps) EXPECT_EQ(s.kp_bar, Vec3::Constant(1500));
}

TEST(InsertionPolicy, ConfigValidation) {
  InsertionPolicyConfig cfg;
  cfg.release_force = 10.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.chunk_size = 0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

TEST(PickPolicy, AlignedDescendsAndFarReducesError) {
  PickPolicyConfig cfg;
  const auto at = scripted_pick_policy(observe(Pose::translation(0, 0, -0.01), Pose()), cfg);
  EXPECT_EQ(at.phase, Phase::PickDescend);
  for (const auto& s : at.steps) {
    EXPECT_NEAR(s.g_rel.p.x(), 0.0, 1e-15);
    EXPECT_GT(s.g_rel.p.z(), 0.0);
  }
  const auto grasp = scripted_pick_policy(observe(Pose(), Pose()), cfg);
  EXPECT_EQ(grasp.phase, Phase::Grasp);
  EXPECT_EQ(grasp.steps.front().gripper, GripperCommand::Close);

  const Pose g = Pose::translation(0.05, 0, 0);
  const auto chunk = scripted_pick_policy(observe(g, Pose()), cfg);
  double prev = 0.05;
  for (const Pose& gd : expand_chunk(g, chunk)) {
    const double e = compute_gcev(gd, Pose()).e_p.norm();
    EXPECT_LT(e, prev);
    prev = e;
  }
  for (const auto& s : chunk.steps) EXPECT_EQ(s.kp_bar, Vec3::Constant(1000));
}

TEST(PickPolicy, IgnoresWrench) {
  PickPolicyConfig cfg;
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const Pose g = rng.random_pose(0.1);
    Observation a = observe(g, Pose());
    Observation b = a;
    b.Fe = Wrench::body((Vec6() << rng.normal_vec3(30), rng.normal_vec3(3)).finished());
    const auto ca = scripted_pick_policy(a, cfg), cb = scripted_pick_policy(b, cfg);
    ASSERT_EQ(ca.size(), cb.size());
    for (std::size_t k = 0; k < ca.size(); ++k) EXPECT_EQ(ca.steps[k].g_rel.matrix(), cb.steps[k].g_rel.matrix());
  }
}

TEST(Policies, SpatialEquivariance) {
  Rng rng(10);
  InsertionPolicyConfig icfg;
  PickPolicyConfig pcfg;
  for (int i = 0; i < 200; ++i) {
    const Pose g_ref = rng.random_pose(0.5);
    const Pose g = g_ref * exp_se3(Twist::body((Vec6() << rng.normal_vec3(0.01), rng.normal_vec3(0.05)).finished()));
    const Pose gl = rng.random_pose(2.0);
    const Vec6 Fe = force_z(rng.uniform(-25.0, 0.0));
    const Observation o = observe(g, g_ref, Fe), ol = observe(gl * g, gl * g_ref, Fe);
    for (int which = 0; which < 2; ++which) {
      const ActionChunk a = which == 0 ? scripted_insertion_policy(o, icfg) : scripted_pick_policy(o, pcfg);
      const ActionChunk b = which == 0 ? scripted_insertion_policy(ol, icfg) : scripted_pick_policy(ol, pcfg);
      const auto ea = expand_chunk(g, a), eb = expand_chunk(gl * g, b);
      ASSERT_EQ(ea.size(), eb.size());
      for (std::size_t k = 0; k < ea.size(); ++k) EXPECT_LT(pose_error(gl * ea[k], eb[k]), 1e-10);
    }
  }
}
