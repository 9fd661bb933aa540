#include "equicontact/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "equicontact/errors.hpp"

namespace equicontact {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Canonical layout, world frame (table top at z = 0).
const Vec3 kHoleMouth(0.45, 0.05, 0.05);
const Vec3 kHoleInPlatform(0.03, 0.0, 0.0);
const Vec3 kPegOnTable(0.40, -0.30, 0.0);
const Vec3 kHome(0.45, 0.0, 0.35);

constexpr int kRimPoints = 16;
constexpr int kInnerPoints = 8;
constexpr int kSideRings = 14;
constexpr double kSideSpacing = 0.0025;

}  // namespace

Scene Scene::transformed(const Pose& g_l) const {
  Scene s = *this;
  s.g_platform = g_l * g_platform;
  s.g_peg_initial = g_l * g_peg_initial;
  s.g_ee_home = g_l * g_ee_home;
  s.g_l_applied = g_l * g_l_applied;
  return s;
}

Scene build_scenario(const ScenarioSpec& spec) {
  if (spec.translation_min < 0.0 || spec.translation_max < spec.translation_min) {
    throw InvalidArgument("scenario: need 0 <= translation_min <= translation_max");
  }
  if (spec.tilt_deg < 0.0 || spec.tilt_deg > 60.0) {
    throw InvalidArgument("scenario: tilt must lie in [0, 60] degrees");
  }
  Rng rng(spec.seed, 0x5CE7E);
  Vec3 mouth = kHoleMouth;
  if (spec.translation_max > 0.0) {
    for (int i = 0; i < 2; ++i) {
      const double mag = rng.uniform(spec.translation_min, spec.translation_max);
      mouth(i) += rng.uniform() < 0.5 ? -mag : mag;
    }
  }
  const double yaw = spec.yaw_range_deg > 0.0
                         ? rng.uniform(-spec.yaw_range_deg, spec.yaw_range_deg) * kDeg
                         : 0.0;

  Scene s;
  s.id = spec.id;
  s.tilt_deg = spec.tilt_deg;
  s.distractor = spec.distractor;
  s.g_hole = Pose::translation(kHoleInPlatform);
  const Pose hole_world(mouth, Rotation::about_z(yaw) * Rotation::about_x(spec.tilt_deg * kDeg));
  s.g_platform = hole_world * s.g_hole.inverse();
  s.g_peg_initial = Pose::translation(kPegOnTable);
  s.g_ee_home = Pose(kHome, Rotation::about_x(std::numbers::pi));
  s.g_l_applied = Pose::identity();
  return s.transformed(spec.g_l);
}

Scene canonical_scene() { return build_scenario(ScenarioSpec{}); }

void PegHoleGeom::validate() const {
  if (!(peg_diameter > 0.0) || !(hole_diameter > peg_diameter)) {
    throw InvalidArgument("geometry: need 0 < peg_diameter < hole_diameter");
  }
  if (!(hole_depth > chamfer) || chamfer < 0.0) {
    throw InvalidArgument("geometry: need 0 <= chamfer < hole_depth");
  }
  if (!(platform_thickness > hole_depth) || !(platform_half_extent > hole_diameter)) {
    throw InvalidArgument("geometry: platform must contain the hole");
  }
  if (!(peg_length > 0.0)) throw InvalidArgument("geometry: peg_length must be positive");
}

void ContactParams::validate() const {
  if (!(k_n >= 0.0) || !(d_n >= 0.0) || !(mu >= 0.0) || !(k_t >= 0.0)) {
    throw InvalidArgument("contact parameters must be nonnegative");
  }
}

std::size_t tip_face_point_count() { return 1 + kInnerPoints + kRimPoints; }

std::vector<Vec3> peg_sample_points(const PegHoleGeom& geom) {
  const double r = 0.5 * geom.peg_diameter;
  const Vec3 tip = geom.tip_offset;
  std::vector<Vec3> pts;
  pts.reserve(tip_face_point_count() + kSideRings * kRimPoints);
  pts.push_back(tip);
  for (int j = 0; j < kInnerPoints; ++j) {
    const double a = 2.0 * std::numbers::pi * j / kInnerPoints;
    pts.push_back(tip + Vec3(0.5 * r * std::cos(a), 0.5 * r * std::sin(a), 0.0));
  }
  const int rings = std::min(kSideRings, static_cast<int>(geom.peg_length / kSideSpacing));
  for (int k = 0; k <= rings; ++k) {
    for (int j = 0; j < kRimPoints; ++j) {
      const double a = 2.0 * std::numbers::pi * j / kRimPoints;
      // Peg body extends from the tip back toward the end-effector (-z body).
      pts.push_back(tip + Vec3(r * std::cos(a), r * std::sin(a), -kSideSpacing * k));
    }
  }
  return pts;
}

std::optional<Penetration> platform_penetration(const Vec3& x, const Pose& g_hole_local,
                                                const PegHoleGeom& geom) {
  const Vec3 xp = g_hole_local * x;  // platform frame
  const double half = geom.platform_half_extent;
  if (xp.z() > 0.0 || xp.z() < -geom.platform_thickness || std::abs(xp.x()) > half ||
      std::abs(xp.y()) > half) {
    return std::nullopt;
  }
  const double z = x.z();
  const double rh = 0.5 * geom.hole_diameter;
  const double c = geom.chamfer;
  const double r = std::hypot(x.x(), x.y());
  const double r_here = rh + std::max(0.0, z + c);  // bore radius widened by the chamfer
  if (z > -geom.hole_depth && r < r_here) return std::nullopt;

  Penetration best{-z, Vec3::UnitZ()};
  auto consider = [&best](double depth, const Vec3& n) {
    if (depth < best.depth) best = {depth, n};
  };
  const Mat3& Rp = g_hole_local.R.matrix();
  consider(half - std::abs(xp.x()), Rp.transpose() * Vec3(xp.x() >= 0.0 ? 1.0 : -1.0, 0.0, 0.0));
  consider(half - std::abs(xp.y()), Rp.transpose() * Vec3(0.0, xp.y() >= 0.0 ? 1.0 : -1.0, 0.0));
  if (r > 1e-12) {
    const Vec3 radial(x.x() / r, x.y() / r, 0.0);
    if (z >= -c) {
      consider((r - r_here) / std::numbers::sqrt2, (Vec3::UnitZ() - radial) / std::numbers::sqrt2);
    } else if (r >= rh) {
      consider(r - rh, -radial);
    }
  }
  if (z < -geom.hole_depth) consider(-geom.hole_depth - z, Vec3::UnitZ());
  if (!(best.depth > 0.0)) return std::nullopt;
  return best;
}

ContactResult contact_wrench(const Pose& g_ee, const Twist& Vb, const Scene& scene,
                             const PegHoleGeom& geom, const ContactParams& params) {
  if (Vb.frame() != Frame::Body) throw FrameMismatch("contact: velocity must be body-frame");
  ContactResult out;
  const Pose g_he = scene.hole_world().inverse() * g_ee;  // end-effector in the hole frame
  const Mat3& R = g_he.R.matrix();
  const double n_face = static_cast<double>(tip_face_point_count());
  const double k = params.k_n / n_face;
  const double d = params.d_n / n_face;
  const double kt = params.k_t / n_face;
  const Vec3 v = Vb.linear();
  const Vec3 w = Vb.angular();
  Vec3 f_sum = Vec3::Zero();
  Vec3 tau_sum = Vec3::Zero();
  for (const Vec3& xb : peg_sample_points(geom)) {
    const Vec3 xh = g_he * xb;
    const auto pen = platform_penetration(xh, scene.g_hole, geom);
    if (!pen) continue;
    const Vec3 vh = R * (v + w.cross(xb));
    const double vn = vh.dot(pen->normal);
    const double fn = std::max(0.0, k * pen->depth - d * vn);
    Vec3 f = fn * pen->normal;
    const Vec3 vt = vh - vn * pen->normal;
    const double vt_norm = vt.norm();
    if (vt_norm > 1e-12) f -= std::min(params.mu * fn, kt * vt_norm) / vt_norm * vt;
    const Vec3 fb = R.transpose() * f;
    f_sum += fb;
    tau_sum += xb.cross(fb);
    out.active = true;
    out.max_penetration = std::max(out.max_penetration, pen->depth);
  }
  out.Fe = Wrench(f_sum, tau_sum, Frame::Body);
  return out;
}

SimState initial_state(const Scene& scene, GripperState gripper) {
  SimState s;
  s.g_ee = scene.g_ee_home;
  s.gripper = gripper;
  return s;
}

StepResult step(const SimState& state, const Scene& scene, const PegHoleGeom& geom,
                const ContactParams& cparams, const Command& command, double Ts) {
  if (!(Ts > 0.0)) throw InvalidArgument("step: Ts must be positive");
  const bool holding = state.gripper == GripperState::Holding;
  Wrench Fe = Wrench::zero(Frame::Body);
  if (command.tracking == Tracking::Compliant) {
    if (command.Fe_measured) {
      Fe = *command.Fe_measured;
    } else if (holding) {
      Fe = contact_wrench(state.g_ee, state.Vb, scene, geom, cparams).Fe;
    }
  }
  const GacStep g = gac_step(state.g_ee, command.g_d, state.Vb, Fe, command.gains, Ts);
  const Vec6 V = g.desired_velocity.vector();
  if (!V.allFinite() || V.norm() > kBlowupVelocity) {
    throw SimulationBlowup("simulation blowup: |V_b| = " + std::to_string(V.norm()) +
                           " at t = " + std::to_string(state.t));
  }
  StepResult out;
  out.state = state;
  out.state.g_ee = g.command;
  out.state.Vb = g.desired_velocity;
  out.state.tick = state.tick + 1;
  out.state.t = static_cast<double>(out.state.tick) * Ts;
  if (holding) {
    const ContactResult c = contact_wrench(out.state.g_ee, out.state.Vb, scene, geom, cparams);
    out.Fe_raw = c.Fe;
    out.state.contact_active = c.active;
  } else {
    out.state.contact_active = false;
  }
  return out;
}

Pose held_peg_pose(const Pose& g_ee, const PegHoleGeom& geom) {
  return g_ee * Pose(geom.tip_offset, Rotation::about_x(std::numbers::pi));
}

Pose place_target(const Scene& scene, const PegHoleGeom& geom) {
  return scene.hole_world() * Pose(geom.tip_offset, Rotation::about_x(std::numbers::pi));
}

Pose grasp_target(const Scene& scene, const PegHoleGeom& geom) {
  // The same in-hand transform as held_peg_pose, inverted.
  return scene.g_peg_initial * Pose(geom.tip_offset, Rotation::about_x(std::numbers::pi));
}

bool grasp_succeeds(const Pose& g_ee, const Scene& scene, const PegHoleGeom& geom,
                    const GraspTolerance& tol) {
  const Pose target = grasp_target(scene, geom);
  const Vec3 tcp = g_ee * geom.tcp_offset;
  const Vec3 tcp_target = target * geom.tcp_offset;
  const Vec3 axis = g_ee.R * Vec3::UnitZ();
  const Vec3 axis_target = target.R * Vec3::UnitZ();
  const double angle = std::acos(std::clamp(axis.dot(axis_target), -1.0, 1.0));
  return (tcp - tcp_target).norm() <= tol.position && angle <= tol.angle;
}

Wrench ft_sense(const Wrench& raw, const FtNoiseConfig& cfg, Rng& rng) {
  if (raw.frame() != Frame::Body) throw FrameMismatch("ft_sense expects a body-frame wrench");
  if (!cfg.enabled()) return raw;
  Vec6 n;
  for (int i = 0; i < 6; ++i) n(i) = rng.normal() * (i < 3 ? cfg.force_sigma : cfg.torque_sigma);
  return Wrench::body(raw.vector() + cfg.bias + n);
}

FeatureBias draw_feature_bias(Rng& rng, const FeatureConfig& cfg) {
  FeatureBias b;
  const double bx = rng.normal(0.0, cfg.bias_position_sigma);
  const double by = rng.normal(0.0, cfg.bias_position_sigma);
  b.offset = Vec3(bx, by, 0.0);
  const double ax = rng.normal(0.0, cfg.bias_axis_sigma);
  const double ay = rng.normal(0.0, cfg.bias_axis_sigma);
  b.tilt = from_rotvec(Vec3(ax, ay, 0.0));
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  b.corruption = cfg.corruption_offset * Vec3(std::cos(a), std::sin(a), 0.0);
  const double n = b.offset.norm();
  if (n < cfg.bias_position_min) {
    const Vec3 dir = n > 0.0 ? Vec3(b.offset / n) : Vec3(std::cos(a), std::sin(a), 0.0);
    b.offset = cfg.bias_position_min * dir;
  }
  return b;
}

bool features_corrupted(const Scene& scene, const FeatureConfig& cfg) {
  return cfg.brittle && (scene.distractor || scene.tilt_deg >= 45.0 - 1e-9);
}

LocalFeatures observe_features(const Pose& g_ee, const Scene& scene, const PegHoleGeom& geom,
                               const FeatureConfig& cfg, const FeatureBias& bias) {
  LocalFeatures z;
  const Pose hole = scene.hole_world();
  const Vec3 tip = g_ee * geom.tip_offset;
  const Vec3 tip_h = hole.inverse() * tip;
  const double lateral = std::hypot(tip_h.x(), tip_h.y());
  if (lateral > cfg.fov_lateral || tip_h.z() > cfg.fov_height ||
      tip_h.z() < -geom.hole_depth - 0.01) {
    return z;
  }
  Vec3 offset = bias.offset;
  if (features_corrupted(scene, cfg)) offset += bias.corruption;
  const Pose apparent = hole * Pose(offset, bias.tilt);
  const Rotation Rt = g_ee.R.inverse();
  z.visible = true;
  z.hole_offset = Rt * (apparent.p - tip);
  z.hole_axis = Rt * (apparent.R * Vec3::UnitZ());
  return z;
}

const char* to_string(TrialStatus s) {
  switch (s) {
    case TrialStatus::InProgress: return "in_progress";
    case TrialStatus::Success: return "success";
    case TrialStatus::Fail: return "fail";
  }
  return "unknown";
}

InsertionMetrics insertion_metrics(const Pose& g_ee, const Scene& scene, const PegHoleGeom& geom) {
  const Pose hole = scene.hole_world();
  const Vec3 tip_h = hole.inverse() * (g_ee * geom.tip_offset);
  const Vec3 axis_h = hole.R.inverse() * (g_ee.R * Vec3::UnitZ());  // points into the hole when aligned
  InsertionMetrics m;
  m.axis_angle = std::acos(std::clamp(-axis_h.z(), -1.0, 1.0));
  m.depth = -tip_h.z();
  m.lateral = std::hypot(tip_h.x(), tip_h.y());
  return m;
}

TrialStatus success_check(const SimState& state, const Scene& scene, const PegHoleGeom& geom,
                          const SuccessTolerance& tol) {
  if (state.gripper == GripperState::Holding) {
    const InsertionMetrics m = insertion_metrics(state.g_ee, scene, geom);
    if (m.axis_angle <= tol.axis_angle && m.depth >= tol.depth_fraction * geom.hole_depth &&
        m.lateral <= 0.5 * geom.clearance() + tol.lateral_slop) {
      return TrialStatus::Success;
    }
  }
  return state.t > tol.timeout ? TrialStatus::Fail : TrialStatus::InProgress;
}

}  // namespace equicontact
