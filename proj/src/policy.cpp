#include "equicontact/policy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "equicontact/errors.hpp"

namespace equicontact {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Rotation (body frame) that takes the current orientation toward the
// reference, recovered from the skew residual e_R = -2 sin(t) axis.
Vec3 rotation_from_residual(const Vec3& e_R) {
  const double n = e_R.norm();
  if (n < 1e-15) return Vec3::Zero();
  return -e_R / n * std::asin(std::min(0.5 * n, 1.0));
}

// Rotation vector taking body +z onto unit vector d.
Vec3 rotation_onto(const Vec3& d) {
  const Vec3 z = Vec3::UnitZ();
  const Vec3 c = z.cross(d);
  const double s = c.norm();
  const double angle = std::atan2(s, z.dot(d));
  if (s < 1e-15) {
    return angle > 1.0 ? Vec3(std::numbers::pi, 0.0, 0.0) : Vec3::Zero();
  }
  return c / s * angle;
}

Vec3 clamp_norm(const Vec3& v, double limit) {
  const double n = v.norm();
  return n > limit ? Vec3(v * (limit / n)) : v;
}

struct StepGains {
  Vec3 kp;
  Vec3 kr;
};

StepGains phase_gains(Phase phase, GainSchedule schedule) {
  if (schedule == GainSchedule::FixedHigh) {
    return {Vec3::Constant(kGainEnvelopeMax), Vec3::Constant(kGainEnvelopeMax)};
  }
  GainProfile profile = GainProfile::Free;
  switch (phase) {
    case Phase::Descend:
    case Phase::Insert:
    case Phase::Seated: profile = GainProfile::Insertion; break;
    case Phase::Search: profile = GainProfile::Contact; break;
    default: break;
  }
  const auto [kp, kr] = profile_stiffness(profile);
  return {kp, kr};
}

// Relative end-effector pose that rotates by `w` (body frame) and moves the
// point `tip` (body frame) by `delta`.
Pose tip_motion(const Vec3& tip, const Vec3& delta, const Vec3& w) {
  const Rotation dR = exp_so3(w);
  return {tip + delta - dR * tip, dR};
}

// Chunk whose i-th step moves the tip toward `delta` and rotates toward `w`,
// limited by the given speeds over (lead + i Ts).
ActionChunk motion_chunk(const Vec3& tip, const Vec3& delta, const Vec3& w, double speed,
                         double rotation_speed, double lead_time, double Ts, std::size_t n,
                         const StepGains& gains, Phase phase) {
  ActionChunk chunk;
  chunk.phase = phase;
  chunk.steps.reserve(n);
  for (std::size_t i = 1; i <= n; ++i) {
    const double horizon = lead_time + static_cast<double>(i) * Ts;
    ActionStep step;
    step.g_rel = tip_motion(tip, clamp_norm(delta, speed * horizon),
                            clamp_norm(w, rotation_speed * horizon));
    step.kp_bar = gains.kp;
    step.kr_bar = gains.kr;
    chunk.steps.push_back(step);
  }
  return chunk;
}

struct HoleEstimate {
  Vec3 offset;  // tip -> hole mouth center, body frame
  Vec3 dir;     // insertion direction, body frame
};

HoleEstimate estimate_hole(const Observation& obs, const Vec3& tip) {
  if (obs.z.visible) {
    const double n = obs.z.hole_axis.norm();
    const Vec3 dir = n > 0.0 ? Vec3(-obs.z.hole_axis / n) : Vec3(Vec3::UnitZ());
    return {obs.z.hole_offset, dir};
  }
  Vec3 w = rotation_from_residual(obs.e_G.e_R);
  const Rotation dR = exp_so3(w);
  // Reference end-effector sits at -e_p with orientation dR; its tip is the mouth.
  return {-obs.e_G.e_p + dR * tip - tip, dR * Vec3::UnitZ()};
}

// Orthonormal basis of the plane normal to d, fixed relative to the body x axis.
std::pair<Vec3, Vec3> lateral_basis(const Vec3& d) {
  Vec3 e1 = Vec3::UnitX() - Vec3::UnitX().dot(d) * d;
  if (e1.norm() < 1e-6) e1 = Vec3::UnitY() - Vec3::UnitY().dot(d) * d;
  e1.normalize();
  return {e1, d.cross(e1)};
}

double spiral_radius(double angle, double pitch) { return pitch * angle / kTwoPi; }

double spiral_increment(double angle, double pitch, double arc) {
  const double b = pitch / kTwoPi;
  const double r = spiral_radius(angle, pitch);
  return arc / std::sqrt(r * r + b * b);
}

}  // namespace

Gcev compute_gcev(const Pose& g, const Pose& g_ref) {
  const Mat3& R = g.R.matrix();
  const Mat3& Rr = g_ref.R.matrix();
  Gcev e;
  e.e_p = R.transpose() * (g.p - g_ref.p);
  const Mat3 A = Rr.transpose() * R;
  const Mat3 S = A - A.transpose();
  e.e_R = Vec3(S(2, 1), S(0, 2), S(1, 0));
  return e;
}

Eigen::Matrix<double, 7, 1> LocalFeatures::vector() const {
  Eigen::Matrix<double, 7, 1> v;
  v << (visible ? 1.0 : 0.0), hole_offset, hole_axis;
  return v;
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Approach: return "approach";
    case Phase::Align: return "align";
    case Phase::Descend: return "descend";
    case Phase::Search: return "search";
    case Phase::Insert: return "insert";
    case Phase::Seated: return "seated";
    case Phase::PickApproach: return "pick_approach";
    case Phase::PickDescend: return "pick_descend";
    case Phase::Grasp: return "grasp";
    case Phase::Replay: return "replay";
  }
  return "unknown";
}

void ActionChunk::validate() const {
  if (steps.empty()) throw InvalidArgument("ActionChunk: at least one step required");
  for (const auto& s : steps) {
    for (const Vec3* k : {&s.kp_bar, &s.kr_bar}) {
      if (!(k->minCoeff() >= kGainEnvelopeMin) || !(k->maxCoeff() <= kGainEnvelopeMax)) {
        throw InvalidArgument("ActionChunk: gain outside [300, 1500]");
      }
    }
  }
}

std::vector<Pose> expand_chunk(const Pose& g_now, const ActionChunk& chunk) {
  std::vector<Pose> out;
  out.reserve(chunk.steps.size());
  for (const auto& s : chunk.steps) out.push_back(g_now * s.g_rel);
  return out;
}

EnsembleOutput temporal_ensemble(std::span<const Prediction> predictions,
                                 std::span<const double> weights) {
  if (predictions.empty()) throw InvalidArgument("temporal_ensemble: empty buffer");
  if (predictions.size() != weights.size()) {
    throw InvalidArgument("temporal_ensemble: predictions/weights size mismatch");
  }
  double wsum = 0.0;
  Vec3 p = Vec3::Zero();
  Vec3 kp = Vec3::Zero();
  Vec3 kr = Vec3::Zero();
  std::vector<Rotation> rotations;
  rotations.reserve(predictions.size());
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double w = weights[i];
    if (!(w >= 0.0)) throw InvalidArgument("temporal_ensemble: negative weight");
    wsum += w;
    p += w * predictions[i].g_d.p;
    kp += w * predictions[i].kp;
    kr += w * predictions[i].kr;
    rotations.push_back(predictions[i].g_d.R);
  }
  if (!(wsum > 0.0)) throw InvalidArgument("temporal_ensemble: weights sum to zero");
  return {Pose(p / wsum, weighted_rotation_mean(rotations, weights)), kp / wsum, kr / wsum};
}

EnsembleBuffer::EnsembleBuffer(std::size_t horizon, double decay)
    : horizon_(horizon), decay_(decay) {
  if (horizon_ == 0) throw InvalidArgument("EnsembleBuffer: horizon must be positive");
  if (!(decay_ >= 0.0)) throw InvalidArgument("EnsembleBuffer: decay must be nonnegative");
}

void EnsembleBuffer::add(std::int64_t issued_tick, const Pose& g_now, const ActionChunk& chunk) {
  std::vector<Prediction> preds;
  preds.reserve(chunk.steps.size());
  for (const auto& s : chunk.steps) preds.push_back({g_now * s.g_rel, s.kp_bar, s.kr_bar});
  add(issued_tick, std::move(preds));
}

void EnsembleBuffer::add(std::int64_t issued_tick, std::vector<Prediction> predictions) {
  if (predictions.empty()) throw InvalidArgument("EnsembleBuffer: empty chunk");
  if (predictions.size() > horizon_) predictions.resize(horizon_);
  if (!chunks_.empty() && issued_tick <= chunks_.back().tick) {
    throw InvalidArgument("EnsembleBuffer: chunks must be added in increasing tick order");
  }
  chunks_.push_back({issued_tick, std::move(predictions)});
}

std::vector<EnsembleBuffer::Entry> EnsembleBuffer::entries_for(std::int64_t target_tick) const {
  std::vector<Entry> out;
  for (const auto& c : chunks_) {
    const std::int64_t idx = target_tick - c.tick - 1;
    if (idx < 0 || idx >= static_cast<std::int64_t>(c.predictions.size())) continue;
    const int age = static_cast<int>(idx);
    out.push_back({c.predictions[static_cast<std::size_t>(idx)], age,
                   std::exp(-decay_ * static_cast<double>(age))});
  }
  return out;
}

EnsembleOutput EnsembleBuffer::ensemble(std::int64_t target_tick) const {
  const auto entries = entries_for(target_tick);
  if (entries.empty()) throw InvalidArgument("EnsembleBuffer: no prediction for requested tick");
  std::vector<Prediction> preds;
  std::vector<double> weights;
  preds.reserve(entries.size());
  weights.reserve(entries.size());
  for (const auto& e : entries) {
    preds.push_back(e.prediction);
    weights.push_back(e.weight);
  }
  return temporal_ensemble(preds, weights);
}

void EnsembleBuffer::prune(std::int64_t target_tick) {
  while (!chunks_.empty() &&
         chunks_.front().tick + static_cast<std::int64_t>(chunks_.front().predictions.size()) <
             target_tick) {
    chunks_.pop_front();
  }
}

Pose augment_reference(const Pose& g_ref, Rng& rng, const AugmentationNoise& noise) {
  const Vec3 n_p = rng.uniform_vec3(-noise.position_bound, noise.position_bound);
  const Vec3 n_r = rng.uniform_vec3(-noise.rotation_bound, noise.rotation_bound);
  return {g_ref.p + n_p, g_ref.R * from_euler_xyz(n_r)};
}

void InsertionPolicyConfig::validate() const {
  if (chunk_size == 0) throw InvalidArgument("policy: chunk_size must be positive");
  if (!(control_period > 0.0)) throw InvalidArgument("policy: control_period must be positive");
  if (!(contact_force > release_force) || !(release_force > 0.0)) {
    throw InvalidArgument("policy: need contact_force > release_force > 0");
  }
  if (!(spiral_pitch > 0.0) || !(spiral_max_radius > 0.0) || !(spiral_speed > 0.0)) {
    throw InvalidArgument("policy: spiral parameters must be positive");
  }
  if (!(align_tolerance < realign_tolerance) || !(angle_tolerance < reangle_tolerance)) {
    throw InvalidArgument("policy: realign tolerances must exceed align tolerances");
  }
}

ActionChunk scripted_insertion_policy(const Observation& obs, const InsertionPolicyConfig& cfg,
                                      InsertionMemory& memory) {
  const Vec3 tip(0.0, 0.0, cfg.tip_offset);
  const HoleEstimate est = estimate_hole(obs, tip);
  const Vec3& d = est.dir;
  const auto [e1, e2] = lateral_basis(d);
  const double s = est.offset.dot(d);  // distance to the mouth along the axis
  const Vec3 lateral = est.offset - s * d;
  const Vec3 found = memory.found_offset.x() * e1 + memory.found_offset.y() * e2;
  const Vec3 w_align = rotation_onto(d);
  const double tilt = w_align.norm();
  const double depth = -s;
  const double fz = obs.Fe.force().z();
  const bool contact = fz < -cfg.contact_force;
  // Once the tip is past the mouth the chamfer and bore guide it; never back out sideways.
  const bool below_mouth = depth > 0.0;
  const bool far =
      lateral.norm() > cfg.approach_radius || s > cfg.hover_height + cfg.approach_radius;

  Phase next = memory.phase;
  if (far) {
    next = Phase::Approach;
  } else if (depth > cfg.seated_depth) {
    next = contact ? Phase::Seated : Phase::Insert;
  } else {
    switch (memory.phase) {
      case Phase::Search:
        // The hole is found once the push is released and the tip has dropped.
        if (std::abs(fz) < cfg.release_force && depth > cfg.found_depth) next = Phase::Descend;
        break;
      case Phase::Descend:
      case Phase::Insert:
      case Phase::Seated:
        if (contact) {
          next = Phase::Search;
        } else if (!below_mouth && ((lateral + found).norm() > cfg.realign_tolerance ||
                                    tilt > cfg.reangle_tolerance)) {
          next = Phase::Align;
        } else {
          next = Phase::Descend;
        }
        break;
      default:
        if (contact) {
          next = Phase::Search;
        } else if (below_mouth ||
                   (lateral.norm() < cfg.align_tolerance && tilt < cfg.angle_tolerance)) {
          next = Phase::Descend;
        } else {
          next = Phase::Align;
        }
        break;
    }
  }

  // Phase entry bookkeeping.
  if (next == Phase::Search && memory.phase != Phase::Search) memory.found_offset.setZero();
  if (next == Phase::Descend && memory.phase == Phase::Search) {
    const double r = spiral_radius(memory.spiral_angle, cfg.spiral_pitch);
    memory.found_offset =
        r * Eigen::Vector2d(std::cos(memory.spiral_angle), std::sin(memory.spiral_angle));
  }
  if (next == Phase::Approach || next == Phase::Align) {
    memory.found_offset.setZero();
    memory.spiral_angle = 0.0;
  }
  memory.phase = next;

  const StepGains gains = phase_gains(next, cfg.schedule);
  const double Ts = cfg.control_period;
  const std::size_t n = cfg.chunk_size;
  const Vec3 lateral_target =
      lateral + memory.found_offset.x() * e1 + memory.found_offset.y() * e2;

  switch (next) {
    case Phase::Approach:
      return motion_chunk(tip, est.offset - cfg.hover_height * d, w_align, cfg.approach_speed,
                          cfg.rotation_speed, cfg.lead_time, Ts, n, gains, next);
    case Phase::Align: {
      const Vec3 delta = lateral + std::max(s - cfg.hover_height, 0.0) * d;
      return motion_chunk(tip, delta, w_align, cfg.align_speed, cfg.rotation_speed, cfg.lead_time,
                          Ts, n, gains, next);
    }
    case Phase::Search: {
      ActionChunk chunk;
      chunk.phase = next;
      chunk.steps.reserve(n);
      double angle = memory.spiral_angle;
      const double arc = cfg.spiral_speed * Ts;
      for (std::size_t i = 1; i <= n; ++i) {
        angle += spiral_increment(angle, cfg.spiral_pitch, arc);
        if (spiral_radius(angle, cfg.spiral_pitch) > cfg.spiral_max_radius) angle = 0.0;
        const double r = spiral_radius(angle, cfg.spiral_pitch);
        const Vec3 spiral = r * (std::cos(angle) * e1 + std::sin(angle) * e2);
        const double horizon = cfg.lead_time + static_cast<double>(i) * Ts;
        ActionStep step;
        step.g_rel = tip_motion(tip, lateral + spiral + cfg.search_press * d,
                                clamp_norm(w_align, cfg.rotation_speed * horizon));
        step.kp_bar = gains.kp;
        step.kr_bar = gains.kr;
        chunk.steps.push_back(step);
        if (i == 1) {
          memory.spiral_angle = angle;
        }
      }
      return chunk;
    }
    case Phase::Seated:
    case Phase::Descend:
    case Phase::Insert:
    default: {
      const double press = next == Phase::Seated ? cfg.seated_press : cfg.descend_lead;
      // Inside the bore the walls center the peg; only press along the axis.
      const bool in_bore = next != Phase::Descend;
      ActionChunk chunk;
      chunk.phase = next;
      chunk.steps.reserve(n);
      for (std::size_t i = 1; i <= n; ++i) {
        const double horizon = cfg.lead_time + static_cast<double>(i) * Ts;
        ActionStep step;
        const Vec3 delta =
            (in_bore ? Vec3::Zero() : clamp_norm(lateral_target, cfg.align_speed * horizon)) +
            press * d;
        step.g_rel = tip_motion(tip, delta, in_bore ? Vec3::Zero() : clamp_norm(w_align, cfg.rotation_speed * horizon));
        step.kp_bar = gains.kp;
        step.kr_bar = gains.kr;
        chunk.steps.push_back(step);
      }
      return chunk;
    }
  }
}

ActionChunk scripted_insertion_policy(const Observation& obs, const InsertionPolicyConfig& cfg) {
  InsertionMemory memory;
  return scripted_insertion_policy(obs, cfg, memory);
}

void PickPolicyConfig::validate() const {
  if (chunk_size == 0) throw InvalidArgument("pick policy: chunk_size must be positive");
  if (!(control_period > 0.0)) throw InvalidArgument("pick policy: control_period must be positive");
  if (!(hover_height > 0.0) || !(grasp_tolerance > 0.0) || !(lateral_tolerance > 0.0)) {
    throw InvalidArgument("pick policy: heights and tolerances must be positive");
  }
}

ActionChunk scripted_pick_policy(const Observation& obs, const PickPolicyConfig& cfg) {
  const Vec3& e_p = obs.e_G.e_p;
  Vec3 w = rotation_from_residual(obs.e_G.e_R);
  w.z() = 0.0;  // the peg is symmetric about the gripper axis
  const Vec3 to_ref = -e_p;
  const double lateral = Vec3(to_ref.x(), to_ref.y(), 0.0).norm();

  const auto [kp, kr] = profile_stiffness(GainProfile::Free);
  const StepGains gains{kp, kr};
  const Vec3 origin = Vec3::Zero();

  if (lateral > cfg.lateral_tolerance || w.norm() > cfg.angle_tolerance) {
    // Body +z points down toward the object: stay hover_height above it until aligned.
    Vec3 target = to_ref;
    target.z() -= cfg.hover_height;
    return motion_chunk(origin, target, w, cfg.approach_speed, cfg.rotation_speed, cfg.lead_time,
                        cfg.control_period, cfg.chunk_size, gains, Phase::PickApproach);
  }
  if (to_ref.norm() > cfg.grasp_tolerance) {
    return motion_chunk(origin, to_ref, w, cfg.descend_speed, cfg.rotation_speed, cfg.lead_time,
                        cfg.control_period, cfg.chunk_size, gains, Phase::PickDescend);
  }
  ActionChunk chunk = motion_chunk(origin, to_ref, w, cfg.descend_speed, cfg.rotation_speed,
                                   cfg.lead_time, cfg.control_period, cfg.chunk_size, gains,
                                   Phase::Grasp);
  for (auto& step : chunk.steps) step.gripper = GripperCommand::Close;
  return chunk;
}

}  // namespace equicontact
