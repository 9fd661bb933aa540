#pragma once
// Geometric admittance control on SE(3).
//
// Desired closed-loop dynamics  M dV/dt + Kd V + f_G(g, g_d) = F_e  with all
// quantities in the end-effector body frame, integrated in discrete time and
// mapped back to a pose command through the exponential.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "equicontact/liegroup.hpp"

namespace equicontact {

inline constexpr double kControlRateHz = 200.0;
inline constexpr double kControlPeriod = 1.0 / kControlRateHz;

/// Default admittance inertia, diag(10, 10, 10, 1, 1, 1).
Mat6 default_inertia();

/// Stiffness (diagonal, desired frame), admittance inertia and damping.
class Gains {
 public:
  /// Validates positive stiffness and symmetric positive definite M and Kd.
  Gains(const Vec3& kp_diag, const Vec3& kr_diag, const Mat6& inertia, const Mat6& damping);

  /// Kd = 2 sqrt(M_ii K_ii) per axis (critical damping of each decoupled axis).
  static Gains critically_damped(const Vec3& kp_diag, const Vec3& kr_diag,
                                 const Mat6& inertia = default_inertia());

  const Vec3& kp() const { return kp_; }
  const Vec3& kr() const { return kr_; }
  const Mat6& inertia() const { return m_; }
  const Mat6& damping() const { return kd_; }
  const Mat6& inertia_inverse() const { return m_inv_; }

 private:
  Vec3 kp_;
  Vec3 kr_;
  Mat6 m_;
  Mat6 kd_;
  Mat6 m_inv_;
};

/// Operator gain presets used during teleoperation and by the scripted policies.
enum class GainProfile { Free, Contact, Insertion, Compliant };

const char* to_string(GainProfile p);
/// Accepts "free", "contact", "insertion", "compliant"; throws InvalidArgument otherwise.
GainProfile parse_gain_profile(std::string_view key);

/// (translational, rotational) stiffness diagonals of a profile.
std::pair<Vec3, Vec3> profile_stiffness(GainProfile p);
Gains profile_gains(GainProfile p, const Mat6& inertia = default_inertia());

/// Elastic wrench f_G = [Rᵀ R_d Kp R_dᵀ (p - p_d); (K_R R_dᵀ R - Rᵀ R_d K_R)^v] in the body frame.
Wrench elastic_wrench(const Pose& g, const Pose& g_d, const Vec3& kp_diag, const Vec3& kr_diag);
Wrench elastic_wrench(const Pose& g, const Pose& g_d, const Gains& gains);

struct GacStep {
  Twist desired_velocity;  // V_d^b(k)
  Pose command;            // g(k) exp(V_d^b(k) Ts)
};

/// V_d = V + Ts M^-1 (F_e - f_G - Kd V); command = g exp(V_d Ts).
/// `Fe` is the filtered, rebiased body-frame measurement.
GacStep gac_step(const Pose& g, const Pose& g_d, const Twist& body_velocity, const Wrench& Fe,
                 const Gains& gains, double Ts = kControlPeriod);

/// Velocity update only, with the elastic wrench supplied by the caller.
Twist gac_velocity(const Twist& body_velocity, const Wrench& Fe, const Wrench& f_G,
                   const Gains& gains, double Ts = kControlPeriod);

struct JointStep {
  Eigen::VectorXd qdot_d;
  Eigen::VectorXd q_d;
};

/// Joint-space variant: qdot_d = qdot + Ts Jb^-1 M^-1 (F_e - f_G - Kd V^b), q_d = q + Ts qdot_d.
/// `Jb` must be a 6x6 body Jacobian; throws SingularityError when cond(Jb) > 1e8.
JointStep joint_space_step(const Eigen::VectorXd& q, const Eigen::VectorXd& qdot,
                           const Eigen::MatrixXd& Jb, const Wrench& Fe, const Wrench& f_G,
                           const Twist& body_velocity, const Gains& gains,
                           double Ts = kControlPeriod);

/// Frame-tagged geometric Jacobian (6 x n).
struct Jacobian {
  Eigen::MatrixXd J;
  Frame frame;
};

/// Cartesian (spatial-frame) end-effector velocity -> body velocity: blockdiag(Rᵀ, Rᵀ) V.
Twist body_velocity_from_spatial(const Rotation& R, const Twist& spatial);
Twist spatial_velocity_from_body(const Rotation& R, const Twist& body);
Jacobian body_jacobian_from_spatial(const Rotation& R, const Jacobian& spatial);
Jacobian spatial_jacobian_from_body(const Rotation& R, const Jacobian& body);

// Force/torque sensor conditioning ------------------------------------------

inline constexpr double kDefaultFtCutoffHz = 10.0;
inline constexpr std::size_t kRebiasMinSamples = 400;  // 2 s at 200 Hz

struct FtFilterState {
  Vec6 y_prev = Vec6::Zero();
  Vec6 bias = Vec6::Zero();
  double cutoff_hz = kDefaultFtCutoffHz;
  double sample_hz = kControlRateHz;

  /// Throws InvalidArgument unless 0 < cutoff < sample/2.
  void validate() const;
  /// Pole of the discrete filter, exp(-2 pi cutoff / sample).
  double pole() const;
};

/// y(k) = a y(k-1) + (1 - a)(raw - bias). Returns the new state and the filtered wrench.
std::pair<FtFilterState, Wrench> ft_filter_step(const FtFilterState& state, const Wrench& raw);

/// Mean of a quiet-period recording. Requires at least kRebiasMinSamples body-frame samples.
Vec6 ft_rebias(std::span<const Wrench> samples);

/// Stateful owner of an FtFilterState plus an in-progress rebias collection.
class FtConditioner {
 public:
  explicit FtConditioner(FtFilterState state = {});

  Wrench filter(const Wrench& raw);
  /// Start collecting `samples` raw readings; the bias is replaced once complete.
  void request_rebias(std::size_t samples = kRebiasMinSamples);
  bool rebiasing() const { return collecting_.has_value(); }
  const FtFilterState& state() const { return state_; }
  void reset_output() { state_.y_prev.setZero(); }

 private:
  FtFilterState state_;
  std::optional<std::size_t> collecting_;
  std::vector<Wrench> samples_;
};

}  // namespace equicontact
