#include "equicontact/admittance.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>

#include "equicontact/errors.hpp"

namespace equicontact {

namespace {

bool is_spd(const Mat6& m) {
  if (!m.allFinite() || (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + m.norm())) {
    return false;
  }
  Eigen::LLT<Mat6> llt(m);
  return llt.info() == Eigen::Success;
}

Mat6 block_rotation(const Mat3& R) {
  Mat6 B = Mat6::Zero();
  B.block<3, 3>(0, 0) = R;
  B.block<3, 3>(3, 3) = R;
  return B;
}

}  // namespace

Mat6 default_inertia() {
  Vec6 d;
  d << 10.0, 10.0, 10.0, 1.0, 1.0, 1.0;
  return d.asDiagonal();
}

Gains::Gains(const Vec3& kp_diag, const Vec3& kr_diag, const Mat6& inertia, const Mat6& damping)
    : kp_(kp_diag), kr_(kr_diag), m_(inertia), kd_(damping) {
  if (!(kp_.minCoeff() > 0.0) || !(kr_.minCoeff() > 0.0) || !kp_.allFinite() ||
      !kr_.allFinite()) {
    throw InvalidArgument("Gains: stiffness entries must be finite and positive");
  }
  if (!is_spd(m_)) throw InvalidArgument("Gains: inertia must be symmetric positive definite");
  if (!is_spd(kd_)) throw InvalidArgument("Gains: damping must be symmetric positive definite");
  m_inv_ = m_.llt().solve(Mat6::Identity());
}

Gains Gains::critically_damped(const Vec3& kp_diag, const Vec3& kr_diag, const Mat6& inertia) {
  Vec6 k;
  k << kp_diag, kr_diag;
  Vec6 d;
  for (int i = 0; i < 6; ++i) d(i) = 2.0 * std::sqrt(std::max(inertia(i, i), 0.0) * std::max(k(i), 0.0));
  return Gains(kp_diag, kr_diag, inertia, d.asDiagonal());
}

const char* to_string(GainProfile p) {
  switch (p) {
    case GainProfile::Free: return "free";
    case GainProfile::Contact: return "contact";
    case GainProfile::Insertion: return "insertion";
    case GainProfile::Compliant: return "compliant";
  }
  return "free";
}

GainProfile parse_gain_profile(std::string_view key) {
  if (key == "free") return GainProfile::Free;
  if (key == "contact") return GainProfile::Contact;
  if (key == "insertion") return GainProfile::Insertion;
  if (key == "compliant") return GainProfile::Compliant;
  throw InvalidArgument("unknown gain mode '" + std::string(key) + "'");
}

std::pair<Vec3, Vec3> profile_stiffness(GainProfile p) {
  switch (p) {
    case GainProfile::Free: return {Vec3::Constant(1000.0), Vec3::Constant(1000.0)};
    case GainProfile::Contact: return {Vec3(1500.0, 1500.0, 300.0), Vec3::Constant(1500.0)};
    case GainProfile::Insertion: return {Vec3(300.0, 300.0, 1500.0), Vec3::Constant(300.0)};
    case GainProfile::Compliant: return {Vec3::Constant(300.0), Vec3::Constant(300.0)};
  }
  return {Vec3::Constant(1000.0), Vec3::Constant(1000.0)};
}

Gains profile_gains(GainProfile p, const Mat6& inertia) {
  const auto [kp, kr] = profile_stiffness(p);
  return Gains::critically_damped(kp, kr, inertia);
}

Wrench elastic_wrench(const Pose& g, const Pose& g_d, const Vec3& kp_diag, const Vec3& kr_diag) {
  const Mat3& R = g.R.matrix();
  const Mat3& Rd = g_d.R.matrix();
  const Vec3 f_p = R.transpose() * (Rd * (kp_diag.asDiagonal() * (Rd.transpose() * (g.p - g_d.p))));
  const Mat3 A = kr_diag.asDiagonal() * (Rd.transpose() * R);
  // A - Aᵀ is skew by construction; read off the vee directly.
  const Mat3 S = A - A.transpose();
  const Vec3 f_R(S(2, 1), S(0, 2), S(1, 0));
  return {f_p, f_R, Frame::Body};
}

Wrench elastic_wrench(const Pose& g, const Pose& g_d, const Gains& gains) {
  return elastic_wrench(g, g_d, gains.kp(), gains.kr());
}

Twist gac_velocity(const Twist& body_velocity, const Wrench& Fe, const Wrench& f_G,
                   const Gains& gains, double Ts) {
  if (body_velocity.frame() != Frame::Body) throw FrameMismatch("gac: velocity must be body-frame");
  if (Fe.frame() != Frame::Body || f_G.frame() != Frame::Body) {
    throw FrameMismatch("gac: wrenches must be body-frame");
  }
  if (!(Ts > 0.0)) throw InvalidArgument("gac: sampling time must be positive");
  const Vec6 V = body_velocity.vector();
  const Vec6 Vd = V + Ts * gains.inertia_inverse() * (Fe.vector() - f_G.vector() - gains.damping() * V);
  return Twist::body(Vd);
}

GacStep gac_step(const Pose& g, const Pose& g_d, const Twist& body_velocity, const Wrench& Fe,
                 const Gains& gains, double Ts) {
  const Twist Vd = gac_velocity(body_velocity, Fe, elastic_wrench(g, g_d, gains), gains, Ts);
  return {Vd, g * exp_se3(Vd, Ts)};
}

JointStep joint_space_step(const Eigen::VectorXd& q, const Eigen::VectorXd& qdot,
                           const Eigen::MatrixXd& Jb, const Wrench& Fe, const Wrench& f_G,
                           const Twist& body_velocity, const Gains& gains, double Ts) {
  if (Jb.rows() != 6 || Jb.cols() != 6) {
    throw InvalidArgument("joint_space_step: body Jacobian must be 6x6");
  }
  if (q.size() != 6 || qdot.size() != 6) {
    throw InvalidArgument("joint_space_step: joint vectors must have 6 entries");
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Jb);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  if (!(smin > 0.0) || sv(0) / smin > 1e8) {
    throw SingularityError("joint_space_step: body Jacobian is singular (condition number > 1e8)");
  }
  const Vec6 V = body_velocity.vector();
  const Vec6 accel = gains.inertia_inverse() * (Fe.vector() - f_G.vector() - gains.damping() * V);
  const Eigen::VectorXd dq = Jb.partialPivLu().solve(Eigen::VectorXd(accel));
  JointStep out;
  out.qdot_d = qdot + Ts * dq;
  out.q_d = q + Ts * out.qdot_d;
  return out;
}

Twist body_velocity_from_spatial(const Rotation& R, const Twist& spatial) {
  if (spatial.frame() != Frame::Spatial) throw FrameMismatch("expected a spatial-frame velocity");
  const Rotation Rt = R.inverse();
  return {Rt * spatial.linear(), Rt * spatial.angular(), Frame::Body};
}

Twist spatial_velocity_from_body(const Rotation& R, const Twist& body) {
  if (body.frame() != Frame::Body) throw FrameMismatch("expected a body-frame velocity");
  return {R * body.linear(), R * body.angular(), Frame::Spatial};
}

Jacobian body_jacobian_from_spatial(const Rotation& R, const Jacobian& spatial) {
  if (spatial.frame != Frame::Spatial) throw FrameMismatch("expected a spatial-frame Jacobian");
  if (spatial.J.rows() != 6) throw InvalidArgument("Jacobian must have 6 rows");
  return {block_rotation(R.matrix().transpose()) * spatial.J, Frame::Body};
}

Jacobian spatial_jacobian_from_body(const Rotation& R, const Jacobian& body) {
  if (body.frame != Frame::Body) throw FrameMismatch("expected a body-frame Jacobian");
  if (body.J.rows() != 6) throw InvalidArgument("Jacobian must have 6 rows");
  return {block_rotation(R.matrix()) * body.J, Frame::Spatial};
}

void FtFilterState::validate() const {
  if (!(cutoff_hz > 0.0) || !(cutoff_hz < 0.5 * sample_hz)) {
    throw InvalidArgument("FT filter: cutoff must satisfy 0 < cutoff < sample_rate / 2");
  }
}

double FtFilterState::pole() const {
  return std::exp(-2.0 * std::numbers::pi * cutoff_hz / sample_hz);
}

std::pair<FtFilterState, Wrench> ft_filter_step(const FtFilterState& state, const Wrench& raw) {
  if (raw.frame() != Frame::Body) throw FrameMismatch("FT filter expects body-frame wrenches");
  state.validate();
  const double a = state.pole();
  FtFilterState next = state;
  next.y_prev = a * state.y_prev + (1.0 - a) * (raw.vector() - state.bias);
  return {next, Wrench::body(next.y_prev)};
}

Vec6 ft_rebias(std::span<const Wrench> samples) {
  if (samples.size() < kRebiasMinSamples) {
    throw InvalidArgument("ft_rebias: need at least " + std::to_string(kRebiasMinSamples) +
                          " samples, got " + std::to_string(samples.size()));
  }
  Vec6 sum = Vec6::Zero();
  for (const auto& s : samples) {
    if (s.frame() != Frame::Body) throw FrameMismatch("ft_rebias expects body-frame wrenches");
    sum += s.vector();
  }
  return sum / static_cast<double>(samples.size());
}

FtConditioner::FtConditioner(FtFilterState state) : state_(state) { state_.validate(); }

Wrench FtConditioner::filter(const Wrench& raw) {
  if (collecting_) {
    samples_.push_back(raw);
    if (samples_.size() >= *collecting_) {
      state_.bias = ft_rebias(samples_);
      state_.y_prev.setZero();
      samples_.clear();
      collecting_.reset();
    }
  }
  auto [next, out] = ft_filter_step(state_, raw);
  state_ = next;
  return out;
}

void FtConditioner::request_rebias(std::size_t samples) {
  if (samples < kRebiasMinSamples) {
    throw InvalidArgument("rebias window shorter than " + std::to_string(kRebiasMinSamples) +
                          " samples");
  }
  samples_.clear();
  samples_.reserve(samples);
  collecting_ = samples;
}

}  // namespace equicontact
