#include "equicontact/liegroup.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "equicontact/errors.hpp"

namespace equicontact {

namespace {

constexpr double kPi = std::numbers::pi;
// Below this angle the trigonometric coefficients switch to Taylor series.
constexpr double kSmallAngle = 1e-3;
// Above pi - this angle the SO(3) log takes the axis from the symmetric part.
constexpr double kNearPi = 0.1;
constexpr double kPiBranchTol = 1e-9;

struct ExpCoefficients {
  double a;  // sin(t)/t
  double b;  // (1 - cos t)/t^2
  double c;  // (t - sin t)/t^3
};

ExpCoefficients exp_coefficients(double t) {
  if (t < kSmallAngle) {
    const double t2 = t * t;
    return {1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0};
  }
  const double s = std::sin(t);
  const double co = std::cos(t);
  return {s / t, (1.0 - co) / (t * t), (t - s) / (t * t * t)};
}

// Fix the sign of an axis whose sign is undetermined (rotation by pi).
Vec3 canonical_axis_sign(Vec3 axis) {
  for (int i = 2; i >= 0; --i) {
    if (std::abs(axis[i]) > 1e-12) {
      return axis[i] < 0.0 ? Vec3(-axis) : axis;
    }
  }
  return axis;
}

}  // namespace

const char* to_string(Frame f) { return f == Frame::Body ? "body" : "spatial"; }

bool is_rotation(const Mat3& m, double tol) {
  if (!m.allFinite()) return false;
  if ((m * m.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(m.determinant() - 1.0) <= tol;
}

Rotation Rotation::from_matrix(const Mat3& m, double tol) {
  if (!is_rotation(m, tol)) {
    throw InvalidArgument("matrix is not a rotation (orthonormality/determinant check failed)");
  }
  return Rotation(m);
}

Rotation Rotation::about_x(double angle) {
  return Rotation(Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix());
}
Rotation Rotation::about_y(double angle) {
  return Rotation(Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix());
}
Rotation Rotation::about_z(double angle) {
  return Rotation(Eigen::AngleAxisd(angle, Vec3::UnitZ()).toRotationMatrix());
}
Rotation Rotation::about_axis(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (!(n > 0.0)) throw InvalidArgument("rotation axis must be nonzero");
  return Rotation(Eigen::AngleAxisd(angle, axis / n).toRotationMatrix());
}

double Rotation::angle() const {
  const double s = vee_skew_part(m_).norm();
  const double c = 0.5 * (m_.trace() - 1.0);
  return std::atan2(s, c);
}

double Rotation::distance(const Rotation& o) const { return (inverse() * o).angle(); }

Rotation Rotation::normalized() const {
  Eigen::JacobiSVD<Mat3> svd(m_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return Rotation(svd.matrixU() * d * svd.matrixV().transpose());
}

Pose Pose::from_matrix(const Mat4& T, double tol) {
  if ((T.row(3) - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > tol) {
    throw InvalidArgument("homogeneous matrix must have last row (0, 0, 0, 1)");
  }
  return {T.block<3, 1>(0, 3), Rotation::from_matrix(T.block<3, 3>(0, 0), tol)};
}

Mat4 Pose::matrix() const {
  Mat4 T = Mat4::Identity();
  T.block<3, 3>(0, 0) = R.matrix();
  T.block<3, 1>(0, 3) = p;
  return T;
}

PoseDiscrepancy discrepancy(const Pose& a, const Pose& b) {
  return {(a.p - b.p).norm(), a.R.distance(b.R)};
}

Mat3 hat(const Vec3& w) {
  Mat3 s;
  // clang-format off
  s <<    0.0, -w.z(),  w.y(),
        w.z(),    0.0, -w.x(),
       -w.y(),  w.x(),    0.0;
  // clang-format on
  return s;
}

Mat4 hat(const Vec6& xi) {
  Mat4 m = Mat4::Zero();
  m.block<3, 3>(0, 0) = hat(Vec3(xi.tail<3>()));
  m.block<3, 1>(0, 3) = xi.head<3>();
  return m;
}

Vec3 vee(const Mat3& m, double tol) {
  if ((m + m.transpose()).cwiseAbs().maxCoeff() > tol) {
    throw InvalidArgument("vee: matrix is not skew-symmetric");
  }
  return {m(2, 1), m(0, 2), m(1, 0)};
}

Vec6 vee(const Mat4& m, double tol) {
  if (m.row(3).cwiseAbs().maxCoeff() > tol) {
    throw InvalidArgument("vee: se(3) element must have a zero last row");
  }
  Vec6 xi;
  xi << m.block<3, 1>(0, 3), vee(Mat3(m.block<3, 3>(0, 0)), tol);
  return xi;
}

Vec3 vee_skew_part(const Mat3& m) {
  return 0.5 * Vec3(m(2, 1) - m(1, 2), m(0, 2) - m(2, 0), m(1, 0) - m(0, 1));
}

Rotation exp_so3(const Vec3& w) {
  const double t = w.norm();
  const auto k = exp_coefficients(t);
  const Mat3 W = hat(w);
  return Rotation::unchecked(Mat3::Identity() + k.a * W + k.b * W * W);
}

LogSO3 log_so3_checked(const Rotation& rot) {
  const Mat3& R = rot.matrix();
  const Vec3 s = vee_skew_part(R);  // sin(t) * axis
  const double sin_t = s.norm();
  const double cos_t = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double t = std::atan2(sin_t, cos_t);

  if (t < kSmallAngle) {
    const double t2 = t * t;
    return {s * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0), false};
  }
  if (t < kPi - kNearPi) {
    return {s * (t / sin_t), false};
  }

  // Near pi: (R + Rᵀ)/2 - cos(t) I = (1 - cos t) a aᵀ.
  const Mat3 S = 0.5 * (R + R.transpose()) - cos_t * Mat3::Identity();
  int j = 0;
  S.diagonal().maxCoeff(&j);
  Vec3 axis = S.col(j) / std::sqrt(std::max(S(j, j), 0.0) * (1.0 - cos_t));
  axis.normalize();
  const bool ambiguous = (kPi - t) < kPiBranchTol;
  if (ambiguous) {
    axis = canonical_axis_sign(axis);
  } else if (axis.dot(s) < 0.0) {
    axis = -axis;
  }
  return {axis * t, ambiguous};
}

Vec3 log_so3(const Rotation& R) { return log_so3_checked(R).w; }

Pose exp_se3(const Twist& xi, double dt) {
  const Vec3 v = xi.linear() * dt;
  const Vec3 w = xi.angular() * dt;
  const double t = w.norm();
  const auto k = exp_coefficients(t);
  const Mat3 W = hat(w);
  const Mat3 W2 = W * W;
  const Mat3 R = Mat3::Identity() + k.a * W + k.b * W2;
  const Mat3 V = Mat3::Identity() + k.b * W + k.c * W2;
  return {V * v, Rotation::unchecked(R)};
}

LogSE3 log_se3_checked(const Pose& g) {
  const auto lr = log_so3_checked(g.R);
  const Vec3& w = lr.w;
  const double t = w.norm();
  const Mat3 W = hat(w);
  double d = 0.0;
  if (t < kSmallAngle) {
    const double t2 = t * t;
    d = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    const auto k = exp_coefficients(t);
    d = (1.0 - k.a / (2.0 * k.b)) / (t * t);
  }
  const Mat3 Vinv = Mat3::Identity() - 0.5 * W + d * W * W;
  return {Twist(Vinv * g.p, w, Frame::Body), lr.pi_branch};
}

Twist log_se3(const Pose& g) { return log_se3_checked(g).xi; }

Mat6 adjoint(const Pose& g) {
  Mat6 A = Mat6::Zero();
  const Mat3& R = g.R.matrix();
  A.block<3, 3>(0, 0) = R;
  A.block<3, 3>(0, 3) = hat(g.p) * R;
  A.block<3, 3>(3, 3) = R;
  return A;
}

Wrench ad_wrench(const Pose& g, const Wrench& body) {
  if (body.frame() != Frame::Body) throw FrameMismatch("ad_wrench expects a body-frame wrench");
  const Vec3 f = g.R * body.force();
  const Vec3 tau = g.p.cross(f) + g.R * body.torque();
  return {f, tau, Frame::Spatial};
}

Wrench ad_wrench_inverse(const Pose& g, const Wrench& spatial) {
  if (spatial.frame() != Frame::Spatial) {
    throw FrameMismatch("ad_wrench_inverse expects a spatial-frame wrench");
  }
  const Rotation Rt = g.R.inverse();
  const Vec3 f = Rt * spatial.force();
  const Vec3 tau = Rt * (spatial.torque() - g.p.cross(spatial.force()));
  return {f, tau, Frame::Body};
}

Twist body_to_spatial(const Pose& g, const Twist& body) {
  if (body.frame() != Frame::Body) throw FrameMismatch("body_to_spatial expects a body twist");
  const Vec3 w = g.R * body.angular();
  return {g.R * body.linear() + g.p.cross(w), w, Frame::Spatial};
}

Twist spatial_to_body(const Pose& g, const Twist& spatial) {
  if (spatial.frame() != Frame::Spatial) {
    throw FrameMismatch("spatial_to_body expects a spatial twist");
  }
  const Rotation Rt = g.R.inverse();
  return {Rt * (spatial.linear() - g.p.cross(spatial.angular())), Rt * spatial.angular(),
          Frame::Body};
}

Vec3 to_rotvec(const Rotation& R) { return log_so3(R); }
Rotation from_rotvec(const Vec3& rv) { return exp_so3(rv); }

Vec6 to_rot6d(const Rotation& R) {
  Vec6 out;
  out << R.matrix().col(0), R.matrix().col(1);
  return out;
}

Rotation from_rot6d(const Vec6& r6) {
  const Vec3 a = r6.head<3>();
  const Vec3 b = r6.tail<3>();
  const double na = a.norm();
  if (!(na > 1e-12)) throw InvalidArgument("rot6d: first column is zero");
  const Vec3 c0 = a / na;
  const Vec3 b_perp = b - c0.dot(b) * c0;
  const double nb = b_perp.norm();
  if (!(nb > 1e-12 * std::max(1.0, b.norm()))) {
    throw InvalidArgument("rot6d: columns are parallel or the second column is zero");
  }
  const Vec3 c1 = b_perp / nb;
  Mat3 m;
  m << c0, c1, c0.cross(c1);
  return Rotation::unchecked(m);
}

Vec3 to_euler_xyz(const Rotation& rot) {
  const Mat3& R = rot.matrix();
  const double sb = std::clamp(R(0, 2), -1.0, 1.0);
  const double b = std::asin(sb);
  if (std::abs(sb) < 1.0 - 1e-12) {
    return {std::atan2(-R(1, 2), R(2, 2)), b, std::atan2(-R(0, 1), R(0, 0))};
  }
  // Gimbal lock: only a +/- c is observable; put it all in a.
  return {std::atan2(R(2, 1), R(1, 1)), b, 0.0};
}

Rotation from_euler_xyz(const Vec3& abc) {
  return Rotation::about_x(abc.x()) * Rotation::about_y(abc.y()) * Rotation::about_z(abc.z());
}

Rotation weighted_rotation_mean(std::span<const Rotation> rotations,
                                std::span<const double> weights) {
  if (rotations.empty()) throw InvalidArgument("weighted_rotation_mean: no rotations");
  if (rotations.size() != weights.size()) {
    throw InvalidArgument("weighted_rotation_mean: rotations/weights size mismatch");
  }
  Mat3 sum = Mat3::Zero();
  double wsum = 0.0;
  for (std::size_t i = 0; i < rotations.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw InvalidArgument("weighted_rotation_mean: weights must be finite and nonnegative");
    }
    sum += weights[i] * rotations[i].matrix();
    wsum += weights[i];
  }
  if (!(wsum > 0.0)) throw InvalidArgument("weighted_rotation_mean: weights sum to zero");
  sum /= wsum;

  Eigen::JacobiSVD<Mat3> svd(sum, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (sv(2) <= 1e-10 * std::max(sv(0), 1e-300)) {
    throw InvalidArgument("weighted_rotation_mean: weighted sum is rank deficient");
  }
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return Rotation::unchecked(svd.matrixU() * d * svd.matrixV().transpose());
}

}  // namespace equicontact
