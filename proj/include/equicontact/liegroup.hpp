#pragma once
// SE(3)/SO(3) primitives shared by the controller, policy and simulator.
//
// Conventions:
//   * twists and wrenches are ordered (linear, angular): V = [v; w], F = [f; tau]
//   * Pose g = (p, R) acts on points as x -> R x + p
//   * Euler angles are intrinsic xyz: R = Rx(a) * Ry(b) * Rz(c)

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <span>
#include <vector>

namespace equicontact {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat6 = Eigen::Matrix<double, 6, 6>;

enum class Frame { Body, Spatial };

const char* to_string(Frame f);

/// Element of SO(3). Construction from an arbitrary matrix is checked.
class Rotation {
 public:
  Rotation() : m_(Mat3::Identity()) {}

  /// Throws InvalidArgument unless R Rᵀ = I and det R = 1 within `tol`.
  static Rotation from_matrix(const Mat3& m, double tol = 1e-9);
  /// Skips validation; for results of group operations on valid rotations.
  static Rotation unchecked(const Mat3& m) { return Rotation(m); }

  static Rotation identity() { return Rotation(); }
  static Rotation about_x(double angle);
  static Rotation about_y(double angle);
  static Rotation about_z(double angle);
  static Rotation about_axis(const Vec3& axis, double angle);

  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

  Rotation inverse() const { return Rotation(m_.transpose()); }
  Rotation operator*(const Rotation& o) const { return Rotation(m_ * o.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }

  /// Rotation angle in [0, pi].
  double angle() const;
  /// Geodesic distance to `o` in radians.
  double distance(const Rotation& o) const;

  /// Re-orthonormalize after long products (nearest rotation via SVD).
  Rotation normalized() const;

 private:
  explicit Rotation(const Mat3& m) : m_(m) {}
  Mat3 m_;
};

bool is_rotation(const Mat3& m, double tol);

/// Element of SE(3).
struct Pose {
  Vec3 p = Vec3::Zero();
  Rotation R;

  Pose() = default;
  Pose(const Vec3& position, const Rotation& rotation) : p(position), R(rotation) {}

  static Pose identity() { return {}; }
  static Pose translation(const Vec3& t) { return {t, Rotation()}; }
  static Pose translation(double x, double y, double z) { return translation(Vec3(x, y, z)); }
  static Pose rotation(const Rotation& r) { return {Vec3::Zero(), r}; }
  static Pose from_matrix(const Mat4& T, double tol = 1e-9);

  Pose operator*(const Pose& o) const { return {R * o.p + p, R * o.R}; }
  Vec3 operator*(const Vec3& x) const { return R * x + p; }
  Pose inverse() const {
    const Rotation Rt = R.inverse();
    return {-(Rt * p), Rt};
  }
  Mat4 matrix() const;
};

/// Maximum of translation error (m) and rotation error (rad) between two poses.
struct PoseDiscrepancy {
  double translation = 0.0;
  double rotation = 0.0;
};
PoseDiscrepancy discrepancy(const Pose& a, const Pose& b);

/// Body or spatial velocity (v, w). The frame tag is fixed at construction.
class Twist {
 public:
  Twist(const Vec3& v, const Vec3& w, Frame frame) : v_(v), w_(w), frame_(frame) {}
  Twist(const Vec6& xi, Frame frame) : Twist(xi.head<3>(), xi.tail<3>(), frame) {}

  static Twist zero(Frame frame = Frame::Body) { return {Vec3::Zero(), Vec3::Zero(), frame}; }
  static Twist body(const Vec6& xi) { return {xi, Frame::Body}; }
  static Twist spatial(const Vec6& xi) { return {xi, Frame::Spatial}; }

  const Vec3& linear() const { return v_; }
  const Vec3& angular() const { return w_; }
  Frame frame() const { return frame_; }
  Vec6 vector() const {
    Vec6 out;
    out << v_, w_;
    return out;
  }

 private:
  Vec3 v_;
  Vec3 w_;
  Frame frame_;
};

/// Force/torque pair (f, tau). The frame tag is fixed at construction.
class Wrench {
 public:
  Wrench(const Vec3& f, const Vec3& tau, Frame frame) : f_(f), tau_(tau), frame_(frame) {}
  Wrench(const Vec6& F, Frame frame) : Wrench(F.head<3>(), F.tail<3>(), frame) {}

  static Wrench zero(Frame frame = Frame::Body) { return {Vec3::Zero(), Vec3::Zero(), frame}; }
  static Wrench body(const Vec6& F) { return {F, Frame::Body}; }
  static Wrench spatial(const Vec6& F) { return {F, Frame::Spatial}; }

  const Vec3& force() const { return f_; }
  const Vec3& torque() const { return tau_; }
  Frame frame() const { return frame_; }
  Vec6 vector() const {
    Vec6 out;
    out << f_, tau_;
    return out;
  }

 private:
  Vec3 f_;
  Vec3 tau_;
  Frame frame_;
};

// hat / vee ---------------------------------------------------------------

Mat3 hat(const Vec3& w);
Mat4 hat(const Vec6& xi);
/// Throws InvalidArgument when `m` is not skew-symmetric within `tol`.
Vec3 vee(const Mat3& m, double tol = 1e-9);
Vec6 vee(const Mat4& m, double tol = 1e-9);

/// vee of the skew-symmetric part, (m - mᵀ)/2, without a symmetry check.
Vec3 vee_skew_part(const Mat3& m);

// exponential / logarithm --------------------------------------------------

Rotation exp_so3(const Vec3& w);

/// Result of the SO(3) logarithm; `pi_branch` is set when the angle is within
/// 1e-9 of pi and the axis sign was fixed by convention (first nonzero of
/// z, y, x made positive).
struct LogSO3 {
  Vec3 w;
  bool pi_branch = false;
};
LogSO3 log_so3_checked(const Rotation& R);
Vec3 log_so3(const Rotation& R);

/// exp(xi^ * dt) in closed form (Rodrigues rotation plus left-Jacobian translation).
Pose exp_se3(const Twist& xi, double dt = 1.0);

struct LogSE3 {
  Twist xi;
  bool pi_branch = false;
};
LogSE3 log_se3_checked(const Pose& g);
/// Inverse of exp_se3(., 1). The result is tagged as a body twist.
Twist log_se3(const Pose& g);

// adjoint maps --------------------------------------------------------------

/// 6x6 twist adjoint Ad_g = [[R, p^R], [0, R]] for (v, w) ordering.
Mat6 adjoint(const Pose& g);

/// Body wrench -> spatial wrench, F_s = Ad_{g^-1}ᵀ F_b.
Wrench ad_wrench(const Pose& g, const Wrench& body);
/// Spatial wrench -> body wrench, inverse of ad_wrench.
Wrench ad_wrench_inverse(const Pose& g, const Wrench& spatial);

/// Body twist -> spatial twist, V_s = Ad_g V_b, and its inverse.
Twist body_to_spatial(const Pose& g, const Twist& body);
Twist spatial_to_body(const Pose& g, const Twist& spatial);

// rotation codecs ----------------------------------------------------------

Vec3 to_rotvec(const Rotation& R);
Rotation from_rotvec(const Vec3& rv);

/// First two columns of R, stacked column-major.
Vec6 to_rot6d(const Rotation& R);
/// Gram-Schmidt on the two columns, third column by cross product.
/// Throws InvalidArgument for zero or parallel columns.
Rotation from_rot6d(const Vec6& r6);

/// Intrinsic xyz Euler angles (a, b, c) with R = Rx(a) Ry(b) Rz(c).
Vec3 to_euler_xyz(const Rotation& R);
Rotation from_euler_xyz(const Vec3& abc);

// averaging ------------------------------------------------------------------

/// Chordal L2 weighted mean: orthogonal polar factor of sum(w_i R_i).
/// Throws InvalidArgument for negative/zero-sum weights or a rank-deficient sum.
Rotation weighted_rotation_mean(std::span<const Rotation> rotations, std::span<const double> weights);

}  // namespace equicontact
