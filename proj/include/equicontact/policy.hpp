#pragma once
// Localized policy layer. Policies see only left-invariant inputs (GCEV,
// body-frame wrench, platform-local features) and emit chunks of poses
// relative to the current end-effector frame.

#include <cstdint>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include "equicontact/admittance.hpp"
#include "equicontact/liegroup.hpp"
#include "equicontact/random.hpp"

namespace equicontact {

/// Geometrically consistent error vector between g and a reference g_ref.
struct Gcev {
  Vec3 e_p = Vec3::Zero();  // Rᵀ (p - p_ref)
  Vec3 e_R = Vec3::Zero();  // (R_refᵀ R - Rᵀ R_ref)^v

  Vec6 vector() const {
    Vec6 v;
    v << e_p, e_R;
    return v;
  }
};

Gcev compute_gcev(const Pose& g, const Pose& g_ref);

/// Left-invariant feature channel: where the hole looks to be from the peg tip,
/// expressed in the end-effector body frame.
struct LocalFeatures {
  bool visible = false;
  Vec3 hole_offset = Vec3::Zero();            // peg tip -> hole mouth center (m)
  Vec3 hole_axis = Vec3(0.0, 0.0, -1.0);      // unit normal out of the platform

  /// [visible, offset(3), axis(3)].
  Eigen::Matrix<double, 7, 1> vector() const;
};

struct Observation {
  Gcev e_G;
  Wrench Fe = Wrench::zero(Frame::Body);
  LocalFeatures z;
};

enum class GripperCommand { Hold, Open, Close };

enum class Phase { Approach, Align, Descend, Search, Insert, Seated, PickApproach, PickDescend, Grasp, Replay };
const char* to_string(Phase p);

inline constexpr double kGainEnvelopeMin = 300.0;
inline constexpr double kGainEnvelopeMax = 1500.0;

struct ActionStep {
  Pose g_rel;
  Vec3 kp_bar = Vec3::Constant(1000.0);
  Vec3 kr_bar = Vec3::Constant(1000.0);
  GripperCommand gripper = GripperCommand::Hold;
};

/// N relative-pose actions with temporary gains.
struct ActionChunk {
  std::vector<ActionStep> steps;
  Phase phase = Phase::Approach;

  /// Throws InvalidArgument when empty or a gain leaves [300, 1500].
  void validate() const;
  std::size_t size() const { return steps.size(); }
};

/// i-th output = g_now * g_rel(i).
std::vector<Pose> expand_chunk(const Pose& g_now, const ActionChunk& chunk);

struct Prediction {
  Pose g_d;
  Vec3 kp = Vec3::Constant(1000.0);
  Vec3 kr = Vec3::Constant(1000.0);
};

struct EnsembleOutput {
  Pose g_d;
  Vec3 kp;
  Vec3 kr;
};

/// Weighted position mean, chordal rotation mean, componentwise gain mean.
EnsembleOutput temporal_ensemble(std::span<const Prediction> predictions,
                                 std::span<const double> weights);

inline constexpr std::size_t kDefaultChunkSize = 20;
inline constexpr double kDefaultEnsembleDecay = 0.1;

/// Predictions from overlapping chunks, indexed by the tick they target.
/// A chunk issued at tick k predicts ticks k+1 .. k+N. The prediction for
/// tick t issued at k has age t - k - 1 and weight exp(-decay * age).
class EnsembleBuffer {
 public:
  explicit EnsembleBuffer(std::size_t horizon = kDefaultChunkSize,
                          double decay = kDefaultEnsembleDecay);

  void add(std::int64_t issued_tick, const Pose& g_now, const ActionChunk& chunk);
  void add(std::int64_t issued_tick, std::vector<Prediction> predictions);

  struct Entry {
    Prediction prediction;
    int age;
    double weight;  // unnormalized
  };
  std::vector<Entry> entries_for(std::int64_t target_tick) const;

  /// Throws InvalidArgument when no prediction targets `target_tick`.
  EnsembleOutput ensemble(std::int64_t target_tick) const;

  void prune(std::int64_t target_tick);
  void clear() { chunks_.clear(); }
  bool empty() const { return chunks_.empty(); }
  std::size_t horizon() const { return horizon_; }
  double decay() const { return decay_; }

 private:
  struct Issued {
    std::int64_t tick;
    std::vector<Prediction> predictions;
  };
  std::size_t horizon_;
  double decay_;
  std::deque<Issued> chunks_;
};

/// Uniform reference-pose noise used for training-style augmentation.
struct AugmentationNoise {
  double position_bound = 0.02;              // m, per axis
  double rotation_bound = 8.0 * 3.14159265358979323846 / 180.0;  // rad, per Euler angle
};

/// p̃ = p + n_p, R̃ = R euler_xyz(n_r), n_p, n_r uniform per axis.
Pose augment_reference(const Pose& g_ref, Rng& rng, const AugmentationNoise& noise = {});

// Scripted policies ------------------------------------------------------------

enum class GainSchedule { Adaptive, FixedHigh };

struct InsertionPolicyConfig {
  std::size_t chunk_size = kDefaultChunkSize;
  double control_period = kControlPeriod;
  double tip_offset = 0.10;          // m, peg tip along body +z
  double contact_force = 5.0;        // N, |F_z| entering search
  double release_force = 2.0;        // N, |F_z| below which the hole counts as found
  double hover_height = 0.010;       // m
  double approach_radius = 0.020;    // m, e_G distance handled by the fine phases
  double spiral_pitch = 0.0004;      // m per revolution
  double spiral_max_radius = 0.004;  // m
  double spiral_speed = 0.010;       // m/s along the spiral
  double approach_speed = 0.08;      // m/s
  double align_speed = 0.02;         // m/s
  double rotation_speed = 0.8;       // rad/s
  double lead_time = 0.2;            // s, target lead of each chunk
  double descend_lead = 0.005;       // m
  double search_press = 0.020;       // m
  double seated_press = 0.002;       // m
  double align_tolerance = 0.0003;   // m
  double realign_tolerance = 0.0012; // m
  double angle_tolerance = 0.5 * 3.14159265358979323846 / 180.0;
  double reangle_tolerance = 2.0 * 3.14159265358979323846 / 180.0;
  double seated_depth = 0.005;       // m below the hole mouth
  double found_depth = 0.0005;       // m below the mouth ending a search
  GainSchedule schedule = GainSchedule::Adaptive;

  void validate() const;
};

/// Internal state of the scripted insertion policy. It is updated from the
/// left-invariant observation stream only.
struct InsertionMemory {
  Phase phase = Phase::Approach;
  double spiral_angle = 0.0;
  Eigen::Vector2d found_offset = Eigen::Vector2d::Zero();  // lateral hit, in the mouth plane
};

/// Approach on e_G, align over the hole, descend with Insertion gains and run a
/// bounded spiral search with Contact gains while the surface blocks the peg.
ActionChunk scripted_insertion_policy(const Observation& obs, const InsertionPolicyConfig& cfg,
                                      InsertionMemory& memory);
/// Fresh-memory convenience overload.
ActionChunk scripted_insertion_policy(const Observation& obs, const InsertionPolicyConfig& cfg);

struct PickPolicyConfig {
  std::size_t chunk_size = kDefaultChunkSize;
  double control_period = kControlPeriod;
  double hover_height = 0.05;         // m above the grasp pose
  double approach_speed = 0.08;       // m/s
  double descend_speed = 0.03;        // m/s
  double rotation_speed = 0.8;        // rad/s
  double lead_time = 0.2;             // s
  double lateral_tolerance = 0.002;   // m, descend once this aligned
  double grasp_tolerance = 0.002;     // m, close once this close
  double angle_tolerance = 2.0 * 3.14159265358979323846 / 180.0;

  void validate() const;
};

/// Approach above, descend, close the gripper at alignment. Fixed Free gains;
/// the wrench in `obs` is ignored.
ActionChunk scripted_pick_policy(const Observation& obs, const PickPolicyConfig& cfg);

}  // namespace equicontact
