#include <cmath>
#include <numbers>
#include <vector>

#include "equicontact/admittance.hpp"
#include "equicontact/errors.hpp"
#include "equicontact/policy.hpp"
#include "test_util.hpp"

using namespace equicontact;
using equicontact::test::pose_error;

namespace {

Mat6 scaled_inertia(double m) { return m * Mat6::Identity(); }

Vec6 random_vec6(Rng& rng, double s) {
  Vec6 v;
  v << rng.normal_vec3(s), rng.normal_vec3(s);
  return v;
}

}  // namespace

TEST(Gains, ProfileValues) {
  auto [kp, kr] = profile_stiffness(GainProfile::Free);
  EXPECT_EQ(kp, Vec3::Constant(1000));
  EXPECT_EQ(kr, Vec3::Constant(1000));
  std::tie(kp, kr) = profile_stiffness(GainProfile::Contact);
  EXPECT_EQ(kp, Vec3(1500, 1500, 300));
  EXPECT_EQ(kr, Vec3::Constant(1500));
  std::tie(kp, kr) = profile_stiffness(GainProfile::Insertion);
  EXPECT_EQ(kp, Vec3(300, 300, 1500));
  EXPECT_EQ(kr, Vec3::Constant(300));
  std::tie(kp, kr) = profile_stiffness(GainProfile::Compliant);
  EXPECT_EQ(kp, Vec3::Constant(300));
  EXPECT_EQ(kr, Vec3::Constant(300));
  EXPECT_EQ(parse_gain_profile("insertion"), GainProfile::Insertion);
  EXPECT_THROW(parse_gain_profile("turbo"), InvalidArgument);
}

TEST(Gains, CriticalDampingAndValidation) {
  const Gains g = profile_gains(GainProfile::Free);
  EXPECT_EQ(g.inertia(), default_inertia());
  EXPECT_NEAR(g.damping()(0, 0), 2.0 * std::sqrt(10.0 * 1000.0), 1e-12);
  EXPECT_NEAR(g.damping()(5, 5), 2.0 * std::sqrt(1.0 * 1000.0), 1e-12);
  EXPECT_THROW(Gains::critically_damped(Vec3(0, 1, 1), Vec3::Ones()), InvalidArgument);
  Mat6 bad = default_inertia();
  bad(0, 1) = 5.0;
  EXPECT_THROW(Gains(Vec3::Ones(), Vec3::Ones(), bad, Mat6::Identity()), InvalidArgument);
  EXPECT_THROW(Gains(Vec3::Ones(), Vec3::Ones(), Mat6::Identity(), Mat6::Zero()), InvalidArgument);
}

TEST(ElasticWrench, Examples) {
  const Vec3 k = Vec3::Constant(1000);
  Rng rng(1);
  const Pose g = rng.random_pose(1);
  EXPECT_TRUE(elastic_wrench(g, g, k, k).vector().isZero(1e-12));

  const Wrench f = elastic_wrench(Pose::translation(0.01, 0, 0), Pose::identity(), k, k);
  EXPECT_LT((f.force() - Vec3(10, 0, 0)).norm(), 1e-12);
  EXPECT_LT(f.torque().norm(), 1e-15);
  EXPECT_EQ(f.frame(), Frame::Body);

  for (double th : {0.1, 0.5, 1.3, -0.7}) {
    const Wrench r = elastic_wrench(Pose::rotation(Rotation::about_z(th)), Pose::identity(), k, k);
    EXPECT_LT((r.torque() - Vec3(0, 0, 2 * 1000 * std::sin(th))).norm(), 1e-9);
    EXPECT_LT(r.force().norm(), 1e-15);
  }
}

TEST(ElasticWrench, DesiredFrameStiffness) {
  // Stiffness is expressed along the desired frame axes: a displacement along the
  // desired x axis sees Kp_x, whatever the world direction of that axis.
  const Pose g_d = Pose::rotation(Rotation::about_z(std::numbers::pi / 2));
  const Pose g{g_d * Vec3(0.01, 0, 0), g_d.R};
  const Wrench f = elastic_wrench(g, g_d, Vec3(100, 2000, 3000), Vec3::Ones());
  EXPECT_LT((f.force() - Vec3(1, 0, 0)).norm(), 1e-12);
}

TEST(ElasticWrench, LeftInvariantAndSpatiallyEquivariant) {
  Rng rng(2);
  const Vec3 kp(300, 700, 1500), kr(50, 80, 120);
  for (int i = 0; i < 500; ++i) {
    const Pose g = rng.random_pose(1), g_d = rng.random_pose(1), gl = rng.random_pose(2);
    const Wrench f = elastic_wrench(g, g_d, kp, kr);
    const Wrench fl = elastic_wrench(gl * g, gl * g_d, kp, kr);
    EXPECT_LT((f.vector() - fl.vector()).norm(), 1e-10);
    const Vec6 lhs = ad_wrench(gl * g, fl).vector();
    const Vec6 rhs = adjoint(gl.inverse()).transpose() * ad_wrench(g, f).vector();
    EXPECT_LT((lhs - rhs).norm(), 1e-10 * std::max(1.0, rhs.norm()));
  }
}

TEST(GacStep, Examples) {
  const Gains K = profile_gains(GainProfile::Contact);
  Rng rng(4);
  const Pose g = rng.random_pose(1);
  const auto rest = gac_step(g, g, Twist::zero(), Wrench::zero(), K);
  EXPECT_TRUE(rest.desired_velocity.vector().isZero());
  EXPECT_LT(pose_error(rest.command, g), 1e-15);

  // Force balance keeps the velocity.
  const Pose g_d = g * Pose::translation(0.01, -0.02, 0.005);
  const Vec6 V = random_vec6(rng, 0.1);
  const Wrench fG = elastic_wrench(g, g_d, K);
  const Wrench Fe = Wrench::body(fG.vector() + K.damping() * V);
  const auto bal = gac_step(g, g_d, Twist::body(V), Fe, K);
  EXPECT_LT((bal.desired_velocity.vector() - V).norm(), 1e-12);
  EXPECT_LT(pose_error(bal.command, g * exp_se3(Twist::body(V), kControlPeriod)), 1e-14);

  // Pure force on a scalar mass: Vd = Ts F / m.
  const double m = 4.0, F = 12.0, Ts = 0.005;
  const Gains Km = Gains::critically_damped(Vec3::Ones(), Vec3::Ones(), scaled_inertia(m));
  Vec6 Fv = Vec6::Zero();
  Fv(0) = F;
  const auto push = gac_step(g, g, Twist::zero(), Wrench::body(Fv), Km, Ts);
  Vec6 expect = Vec6::Zero();
  expect(0) = Ts * F / m;
  EXPECT_LT((push.desired_velocity.vector() - expect).norm(), 1e-15);
}

TEST(GacStep, RejectsWrongFrames) {
  const Gains K = profile_gains(GainProfile::Free);
  EXPECT_THROW(gac_step(Pose(), Pose(), Twist::zero(Frame::Spatial), Wrench::zero(), K), FrameMismatch);
  EXPECT_THROW(gac_step(Pose(), Pose(), Twist::zero(), Wrench::zero(Frame::Spatial), K), FrameMismatch);
}

TEST(GacStep, LeftEquivariant) {
  Rng rng(6);
  const Gains K = profile_gains(GainProfile::Insertion);
  for (int i = 0; i < 300; ++i) {
    const Pose g = rng.random_pose(0.5), gl = rng.random_pose(2.0);
    const Pose g_d = g * exp_se3(Twist::body(random_vec6(rng, 0.05)));
    const Twist V = Twist::body(random_vec6(rng, 0.2));
    const Wrench Fe = Wrench::body(random_vec6(rng, 10.0));
    const auto a = gac_step(g, g_d, V, Fe, K);
    const auto b = gac_step(gl * g, gl * g_d, V, Fe, K);
    EXPECT_LT((a.desired_velocity.vector() - b.desired_velocity.vector()).norm(), 1e-10);
    EXPECT_LT(pose_error(gl * a.command, b.command), 1e-10);
  }
}

namespace {

// Closed loop with perfect tracking: g(k+1) = g~_d(k), V(k+1) = V_d(k).
struct Loop {
  Pose g;
  Vec6 V = Vec6::Zero();
  void step(const Pose& g_d, const Gains& K) {
    const auto s = gac_step(g, g_d, Twist::body(V), Wrench::zero(), K);
    g = s.command;
    V = s.desired_velocity.vector();
  }
};

double total_energy(const Loop& l, const Pose& g_d, const Gains& K) {
  const Mat3 Rd = g_d.R.matrix();
  const Vec3 dp = Rd.transpose() * (l.g.p - g_d.p);
  const double trans = 0.5 * dp.dot(K.kp().asDiagonal() * dp);
  const double rot = (K.kr().asDiagonal() * (Mat3::Identity() - Rd.transpose() * l.g.R.matrix())).trace();
  return 0.5 * l.V.dot(K.inertia() * l.V) + trans + rot;
}

}  // namespace

TEST(Passivity, GcevNormNonIncreasingOverWindows) {
  Rng rng(8);
  for (GainProfile p : {GainProfile::Free, GainProfile::Contact, GainProfile::Insertion,
                        GainProfile::Compliant}) {
    const Gains K = profile_gains(p);
    for (int trial = 0; trial < 5; ++trial) {
      const Pose g_d = rng.random_pose(0.5);
      Loop loop{g_d * exp_se3(Twist::body(random_vec6(rng, 0.05)))};
      std::vector<double> e;
      for (int k = 0; k < 4000; ++k) {
        e.push_back(compute_gcev(loop.g, g_d).vector().norm());
        loop.step(g_d, K);
      }
      for (std::size_t k = 0; k + 1000 < e.size(); ++k) {
        ASSERT_LE(e[k + 1000], e[k] + 1e-12) << to_string(p) << " window at " << k;
      }
    }
  }
}

TEST(Passivity, TotalEnergyNonIncreasing) {
  Rng rng(10);
  for (GainProfile p : {GainProfile::Free, GainProfile::Contact, GainProfile::Insertion,
                        GainProfile::Compliant}) {
    const Gains K = profile_gains(p);
    const Pose g_d = rng.random_pose(0.5);
    Loop loop{g_d * exp_se3(Twist::body(random_vec6(rng, 0.05)))};
    double prev = total_energy(loop, g_d, K);
    for (int k = 0; k < 2000; ++k) {
      loop.step(g_d, K);
      const double E = total_energy(loop, g_d, K);
      ASSERT_LE(E, prev + 1e-9 * std::max(1.0, prev)) << to_string(p) << " step " << k;
      prev = E;
    }
  }
}

TEST(JointSpace, Examples) {
  const Gains K = profile_gains(GainProfile::Free);
  Rng rng(12);
  const Eigen::VectorXd q = Eigen::VectorXd::LinSpaced(6, 0.1, 0.6);
  const Eigen::MatrixXd J = Eigen::MatrixXd::Identity(6, 6) + 0.1 * Eigen::MatrixXd::Random(6, 6);

  const Wrench fG = Wrench::body(random_vec6(rng, 5));
  const auto rest = joint_space_step(q, Eigen::VectorXd::Zero(6), J, fG, fG, Twist::zero(), K);
  EXPECT_TRUE(rest.qdot_d.isZero(1e-15));
  EXPECT_EQ(rest.q_d, q);

  // Identity Jacobian reproduces the task-space velocity update.
  const Vec6 V = random_vec6(rng, 0.1);
  const Wrench Fe = Wrench::body(random_vec6(rng, 5));
  const auto js = joint_space_step(q, V, Eigen::MatrixXd::Identity(6, 6), Fe, fG, Twist::body(V), K);
  const Twist ts = gac_velocity(Twist::body(V), Fe, fG, K);
  EXPECT_LT((js.qdot_d - ts.vector()).norm(), 1e-14);
  EXPECT_LT((js.q_d - (q + kControlPeriod * js.qdot_d)).norm(), 1e-15);
}

TEST(JointSpace, DoublingInertiaHalvesIncrement) {
  Rng rng(14);
  const Eigen::VectorXd q = Eigen::VectorXd::Zero(6);
  const Eigen::VectorXd qdot = random_vec6(rng, 0.1);
  const Eigen::MatrixXd J = Eigen::MatrixXd::Identity(6, 6) + 0.2 * Eigen::MatrixXd::Random(6, 6);
  const Wrench Fe = Wrench::body(random_vec6(rng, 5)), fG = Wrench::body(random_vec6(rng, 5));
  const Twist Vb = Twist::body(J * qdot);
  const Mat6 M = default_inertia();
  const Mat6 Kd = profile_gains(GainProfile::Free).damping();
  const Gains K1(Vec3::Constant(1000), Vec3::Constant(1000), M, Kd);
  const Gains K2(Vec3::Constant(1000), Vec3::Constant(1000), 2.0 * M, Kd);
  const Eigen::VectorXd d1 = joint_space_step(q, qdot, J, Fe, fG, Vb, K1).qdot_d - qdot;
  const Eigen::VectorXd d2 = joint_space_step(q, qdot, J, Fe, fG, Vb, K2).qdot_d - qdot;
  EXPECT_LT((d2 - 0.5 * d1).norm(), 1e-12 * d1.norm());
}

TEST(JointSpace, SingularJacobianThrows) {
  const Gains K = profile_gains(GainProfile::Free);
  Eigen::MatrixXd J = Eigen::MatrixXd::Identity(6, 6);
  J(5, 5) = 1e-10;
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(6);
  EXPECT_THROW(joint_space_step(z, z, J, Wrench::zero(), Wrench::zero(), Twist::zero(), K),
               SingularityError);
  EXPECT_THROW(joint_space_step(z, z, Eigen::MatrixXd::Identity(6, 5), Wrench::zero(), Wrench::zero(),
                                Twist::zero(), K),
               InvalidArgument);
}

TEST(FrameAdaptors, Examples) {
  Vec6 V;
  V << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(body_velocity_from_spatial(Rotation(), Twist::spatial(V)).vector(), V);
  Vec6 vx = Vec6::Zero();
  vx(0) = 1.0;
  const Twist b = body_velocity_from_spatial(Rotation::about_z(std::numbers::pi / 2), Twist::spatial(vx));
  EXPECT_EQ(b.frame(), Frame::Body);
  EXPECT_LT((b.linear() - Vec3(0, -1, 0)).norm(), 1e-15);

  Rng rng(16);
  for (int i = 0; i < 100; ++i) {
    const Rotation R = rng.uniform_rotation();
    const Vec6 v = random_vec6(rng, 1);
    EXPECT_LT((body_velocity_from_spatial(R, spatial_velocity_from_body(R, Twist::body(v))).vector() - v).norm(),
              1e-12);
    const Jacobian Js{Eigen::MatrixXd::Random(6, 7), Frame::Spatial};
    const Jacobian Jb = body_jacobian_from_spatial(R, Js);
    EXPECT_EQ(Jb.frame, Frame::Body);
    const Eigen::VectorXd qd = Eigen::VectorXd::Random(7);
    EXPECT_LT((Jb.J * qd - body_velocity_from_spatial(R, Twist::spatial(Js.J * qd)).vector()).norm(), 1e-12);
    EXPECT_LT((spatial_jacobian_from_body(R, Jb).J - Js.J).norm(), 1e-12);
  }
  EXPECT_THROW(body_velocity_from_spatial(Rotation(), Twist::body(V)), FrameMismatch);
  EXPECT_THROW(body_jacobian_from_spatial(Rotation(), Jacobian{Eigen::MatrixXd::Zero(6, 6), Frame::Body}),
               FrameMismatch);
}

TEST(FtFilter, ConstantAtBiasConvergesToZero) {
  FtFilterState s;
  s.bias << 1, 2, 3, 0.1, 0.2, 0.3;
  Vec6 y = Vec6::Constant(5.0);
  s.y_prev = y;
  for (int k = 0; k < 400; ++k) {
    auto [ns, out] = ft_filter_step(s, Wrench::body(s.bias));
    s = ns;
    y = out.vector();
  }
  EXPECT_LT(y.norm(), 1e-12);
}

TEST(FtFilter, StepResponseTimeConstant) {
  for (double fc : {5.0, 10.0}) {
    FtFilterState s;
    s.cutoff_hz = fc;
    Vec6 step = Vec6::Zero();
    step(2) = 1.0;
    double prev = 0.0, crossing = -1.0;
    for (int k = 1; k < 200 && crossing < 0; ++k) {
      auto [ns, out] = ft_filter_step(s, Wrench::body(step));
      s = ns;
      const double y = out.vector()(2);
      if (y >= 0.632 && prev < 0.632) crossing = (k - 1 + (0.632 - prev) / (y - prev)) / s.sample_hz;
      prev = y;
    }
    const double tau = 1.0 / (2.0 * std::numbers::pi * fc);
    EXPECT_NEAR(crossing, tau, 0.05 * tau) << "cutoff " << fc;
  }
}

TEST(FtFilter, UnityDcGainAndValidation) {
  FtFilterState s;
  s.cutoff_hz = s.sample_hz / 4.0;  // half of Nyquist
  Vec6 c;
  c << 3, -1, 2, 0.5, 0.25, -0.75;
  Vec6 y;
  for (int k = 0; k < 200; ++k) {
    auto [ns, out] = ft_filter_step(s, Wrench::body(c));
    s = ns;
    y = out.vector();
  }
  EXPECT_LT((y - c).norm(), 1e-12);
  EXPECT_NEAR(FtFilterState{}.pole(), std::exp(-2.0 * std::numbers::pi * 10.0 / 200.0), 1e-15);

  FtFilterState bad;
  bad.cutoff_hz = 100.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad.cutoff_hz = 0.0;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  EXPECT_THROW(ft_filter_step(FtFilterState{}, Wrench::spatial(c)), FrameMismatch);
}

TEST(FtRebias, ConstantAndSampleCount) {
  Vec6 c;
  c << 1, -2, 3, 0.1, -0.2, 0.3;
  std::vector<Wrench> samples(400, Wrench::body(c));
  EXPECT_LT((ft_rebias(samples) - c).norm(), 1e-13);
  samples.pop_back();
  EXPECT_THROW(ft_rebias(samples), InvalidArgument);
}

TEST(FtRebias, SinusoidAveragesOut) {
  const double A = 2.0;
  const std::size_t N = 400;
  std::vector<Wrench> samples;
  for (std::size_t k = 0; k < N; ++k) {
    const double ph = 2.0 * std::numbers::pi * 4.0 * static_cast<double>(k) / static_cast<double>(N);
    samples.push_back(Wrench::body(Vec6::Constant(A * std::sin(ph))));
  }
  EXPECT_LT(ft_rebias(samples).cwiseAbs().maxCoeff(), A / std::sqrt(static_cast<double>(N)));
}

TEST(FtRebias, NoisyQuietPeriodWithinThreeSigma) {
  Rng rng(18);
  const double sigma = 0.5;
  Vec6 bias;
  bias << 2, -1, 0.5, 0.05, 0.02, -0.03;
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Wrench> samples;
    for (std::size_t k = 0; k < kRebiasMinSamples; ++k) samples.push_back(Wrench::body(bias + random_vec6(rng, sigma)));
    EXPECT_LT((ft_rebias(samples) - bias).cwiseAbs().maxCoeff(), 3.0 * sigma / std::sqrt(400.0) * 1.5);
  }
}

TEST(FtConditioner, RebiasReplacesBiasAfterCollection) {
  FtConditioner c;
  Vec6 b;
  b << 1, 1, 1, 0, 0, 0;
  c.request_rebias();
  EXPECT_TRUE(c.rebiasing());
  for (std::size_t k = 0; k < kRebiasMinSamples - 1; ++k) c.filter(Wrench::body(b));
  EXPECT_TRUE(c.rebiasing());
  EXPECT_TRUE(c.state().bias.isZero());
  c.filter(Wrench::body(b));
  EXPECT_FALSE(c.rebiasing());
  EXPECT_LT((c.state().bias - b).norm(), 1e-14);
  EXPECT_THROW(c.request_rebias(10), InvalidArgument);
}
