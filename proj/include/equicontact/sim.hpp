#pragma once
// Peg-in-hole plant. The admittance law is the plant: the end-effector follows
// g(k+1) = g(k) exp(V_d Ts). Contact is a penalty model evaluated in the
// hole frame, so every physical quantity is relative to the platform and the
// whole simulation commutes with a global rigid motion of the scene.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "equicontact/admittance.hpp"
#include "equicontact/liegroup.hpp"
#include "equicontact/policy.hpp"
#include "equicontact/random.hpp"

namespace equicontact {

// Scene ------------------------------------------------------------------------

/// Ground-truth world. Frames:
///  platform: origin on the top surface, z out of the surface;
///  hole (platform-local): origin at the mouth center, z out of the surface;
///  peg: origin at the center of the bottom face, z along the axis (away from the tip).
struct Scene {
  std::string id = "flat";
  Pose g_platform;
  Pose g_hole;  // platform-local
  Pose g_peg_initial;
  Pose g_ee_home;
  double tilt_deg = 0.0;
  bool distractor = false;
  Pose g_l_applied;

  Pose hole_world() const { return g_platform * g_hole; }
  /// Every ground-truth pose left-multiplied by g_l.
  Scene transformed(const Pose& g_l) const;
};

struct ScenarioSpec {
  std::string id = "flat";
  double tilt_deg = 0.0;          // about the platform x axis, pivoting at the hole
  double translation_min = 0.0;   // m, per-axis |offset| range of the platform in the table plane
  double translation_max = 0.0;
  double yaw_range_deg = 0.0;     // platform yaw drawn from [-range, range]
  bool distractor = false;
  Pose g_l;
  std::uint64_t seed = 0;
};

/// Deterministic in its argument: the canonical scene randomized per `spec`
/// and then transformed by spec.g_l.
Scene build_scenario(const ScenarioSpec& spec);
Scene canonical_scene();

// Geometry and contact -----------------------------------------------------------

struct PegHoleGeom {
  double peg_diameter = 0.020;
  double hole_diameter = 0.021;
  double hole_depth = 0.030;
  double chamfer = 0.0015;      // 45 degree lead-in, radial and axial size
  double peg_length = 0.060;
  double platform_half_extent = 0.08;
  double platform_thickness = 0.05;
  Vec3 tip_offset = Vec3(0.0, 0.0, 0.10);   // end-effector -> peg tip, body frame
  Vec3 tcp_offset = Vec3(0.0, 0.0, 0.07);   // end-effector -> grasp point, body frame

  double clearance() const { return hole_diameter - peg_diameter; }
  void validate() const;
};

struct ContactParams {
  double k_n = 1.0e5;   // N/m, whole tip face
  double d_n = 50.0;    // N s/m, whole tip face
  double mu = 0.3;
  double k_t = 2000.0;  // N s/m, viscous tangential coefficient, whole tip face (capped by mu F_n)

  void validate() const;
};

/// Sample points on the held peg in the end-effector body frame: tip face
/// (center, inner ring, rim) followed by rings along the side.
std::vector<Vec3> peg_sample_points(const PegHoleGeom& geom);
/// Number of tip-face points; per-point stiffness is k_n divided by this.
std::size_t tip_face_point_count();

struct Penetration {
  double depth;  // m, > 0
  Vec3 normal;   // hole frame, out of the material
};

/// Penetration of a hole-frame point into the platform, if any.
std::optional<Penetration> platform_penetration(const Vec3& x_hole, const Pose& g_hole_local,
                                                const PegHoleGeom& geom);

struct ContactResult {
  Wrench Fe = Wrench::zero(Frame::Body);  // on the end-effector, body frame, about its origin
  bool active = false;
  double max_penetration = 0.0;
};

ContactResult contact_wrench(const Pose& g_ee, const Twist& Vb, const Scene& scene,
                             const PegHoleGeom& geom, const ContactParams& params);

// Plant ------------------------------------------------------------------------------

enum class GripperState { Open, Holding };

struct SimState {
  Pose g_ee;
  Twist Vb = Twist::zero(Frame::Body);
  GripperState gripper = GripperState::Holding;
  double t = 0.0;
  std::int64_t tick = 0;
  bool contact_active = false;
};

SimState initial_state(const Scene& scene, GripperState gripper = GripperState::Holding);

/// Compliant: the admittance law uses the measured wrench (or the ideal
/// contact wrench when none is supplied). Stiff: the wrench is ignored and
/// the same law reduces to position tracking.
enum class Tracking { Compliant, Stiff };

struct Command {
  Pose g_d;
  Gains gains = profile_gains(GainProfile::Free);
  std::optional<Wrench> Fe_measured;
  Tracking tracking = Tracking::Compliant;
};

struct StepResult {
  SimState state;
  Wrench Fe_raw = Wrench::zero(Frame::Body);  // contact wrench at the new state
};

inline constexpr double kBlowupVelocity = 10.0;  // m/s (or rad/s) on the body twist norm

/// One control period. Throws SimulationBlowup when |V_b| exceeds 10.
StepResult step(const SimState& state, const Scene& scene, const PegHoleGeom& geom,
                const ContactParams& cparams, const Command& command,
                double Ts = kControlPeriod);

/// Peg pose in the world while held.
Pose held_peg_pose(const Pose& g_ee, const PegHoleGeom& geom);

/// End-effector pose with the peg tip at the hole mouth, aligned with the hole axis.
Pose place_target(const Scene& scene, const PegHoleGeom& geom);
/// End-effector pose grasping the peg at its initial pose.
Pose grasp_target(const Scene& scene, const PegHoleGeom& geom);

struct GraspTolerance {
  double position = 0.010;                                  // m
  double angle = 10.0 * 3.14159265358979323846 / 180.0;     // rad
};
/// Kinematic grasp: true when the gripper is close enough to the peg to center it.
bool grasp_succeeds(const Pose& g_ee, const Scene& scene, const PegHoleGeom& geom,
                    const GraspTolerance& tol = {});

// Sensing -------------------------------------------------------------------------------

struct FtNoiseConfig {
  double force_sigma = 0.0;   // N
  double torque_sigma = 0.0;  // N m
  Vec6 bias = Vec6::Zero();   // body frame

  bool enabled() const { return force_sigma > 0.0 || torque_sigma > 0.0 || !bias.isZero(0.0); }
};

/// raw + bias + N(0, sigma) per axis, body frame.
Wrench ft_sense(const Wrench& raw, const FtNoiseConfig& cfg, Rng& rng);

class FtSensor {
 public:
  FtSensor(FtNoiseConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}
  Wrench sense(const Wrench& raw) { return ft_sense(raw, cfg_, rng_); }
  const FtNoiseConfig& config() const { return cfg_; }

 private:
  FtNoiseConfig cfg_;
  Rng rng_;
};

struct FeatureConfig {
  double fov_lateral = 0.05;   // m from the hole axis
  double fov_height = 0.10;    // m above the mouth
  double bias_position_sigma = 0.0015;                          // m, in the mouth plane
  double bias_axis_sigma = 0.5 * 3.14159265358979323846 / 180.0;  // rad, per tilt axis
  double bias_position_min = 0.0;  // m, floor on the drawn offset magnitude
  double corruption_offset = 0.006;  // m, applied when the channel is brittle and the scene is hard
  bool brittle = false;
};

/// Per-trial systematic error of the feature channel, drawn in the hole frame.
struct FeatureBias {
  Vec3 offset = Vec3::Zero();
  Rotation tilt;
  Vec3 corruption = Vec3::Zero();  // direction * corruption_offset, used only when corrupted
};

FeatureBias draw_feature_bias(Rng& rng, const FeatureConfig& cfg);
bool features_corrupted(const Scene& scene, const FeatureConfig& cfg);
LocalFeatures observe_features(const Pose& g_ee, const Scene& scene, const PegHoleGeom& geom,
                               const FeatureConfig& cfg, const FeatureBias& bias);

// Outcome -----------------------------------------------------------------------------------

enum class TrialStatus { InProgress, Success, Fail };
const char* to_string(TrialStatus s);

struct SuccessTolerance {
  double axis_angle = 3.0 * 3.14159265358979323846 / 180.0;
  double depth_fraction = 0.8;
  double timeout = 20.0;  // s
  // Penalty contact lets a peg resting on the bore wall sit this far past clearance/2.
  double lateral_slop = 1.0e-4;  // m
};

struct InsertionMetrics {
  double axis_angle;  // rad between peg axis and hole axis
  double depth;       // m of tip below the mouth
  double lateral;     // m of tip from the hole axis
};
InsertionMetrics insertion_metrics(const Pose& g_ee, const Scene& scene, const PegHoleGeom& geom);

/// Success iff the held peg is aligned, at least 80% deep and within half the
/// clearance (plus the contact slop) of the axis. Fail once t exceeds the timeout.
TrialStatus success_check(const SimState& state, const Scene& scene, const PegHoleGeom& geom,
                          const SuccessTolerance& tol = {});

}  // namespace equicontact
