#pragma once
// Teleoperation core: the SpaceMouse-style pose update, gain-mode keys and a
// single-threaded session that owns the simulator, sensor and filter state.
// The network service in teleop_server.hpp drives a session from its loop.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "equicontact/admittance.hpp"
#include "equicontact/liegroup.hpp"
#include "equicontact/sim.hpp"

namespace equicontact {

enum class SpeedLevel { Low, Med, High };
const char* to_string(SpeedLevel s);
SpeedLevel parse_speed_level(std::string_view s);
/// 0.25, 1.0, 2.5.
double speed_scale(SpeedLevel s);

enum class CommandFrame { Base, Ee };
const char* to_string(CommandFrame f);
CommandFrame parse_command_frame(std::string_view s);

struct TeleopCommand {
  Vec6 V_sm = Vec6::Zero();  // (v, w) stick deflection, each in [-1, 1]
  std::optional<GainProfile> mode_key;
  SpeedLevel speed = SpeedLevel::Med;
  CommandFrame frame = CommandFrame::Base;
  bool gripper_toggle = false;

  /// Throws InvalidArgument when a component leaves [-1, 1] or is not finite.
  void validate() const;
};

struct TeleopOffsets {
  double pos_offset = 0.0005;  // m per unit deflection per tick at medium speed
  double rot_offset = 0.005;   // rad per unit deflection per tick at medium speed
  void validate() const;
};

/// p_d += R_frame v_sm pos_offset s; R_d <- R_d exp(w_sm rot_offset s) with s the speed scale.
/// R_frame is identity in base mode and R_d in ee mode.
Pose teleop_update(const Pose& g_d, const TeleopCommand& cmd, const TeleopOffsets& offsets = {});

/// "free", "contact", "insertion", "compliant" -> critically damped profile gains.
Gains set_gain_mode(std::string_view mode_key);

// Demonstrations ---------------------------------------------------------------------

inline constexpr int kDemoSchemaVersion = 1;
inline constexpr double kRecordRateHz = 30.0;
inline constexpr double kStateRateHz = 30.0;
/// A held stick deflection keeps moving g_d for this many ticks (0.2 s) without a new command.
inline constexpr std::int64_t kCommandHoldTicks = 40;

struct DemoSample {
  std::int64_t tick = 0;
  double t = 0.0;
  Pose g_ee;
  Pose g_d;
  GainProfile mode = GainProfile::Free;
  Vec6 Fe = Vec6::Zero();  // filtered, body frame
  GripperState gripper = GripperState::Holding;
};

/// A command as consumed by the loop, at most one per tick.
struct DemoEvent {
  enum class Kind { Command, Rebias };
  std::int64_t tick = 0;
  Kind kind = Kind::Command;
  TeleopCommand command;
};

struct TeleopConfig {
  Scene scene = canonical_scene();
  PegHoleGeom geom;
  ContactParams contact;
  FtNoiseConfig ft_noise;
  double ft_cutoff_hz = kDefaultFtCutoffHz;
  TeleopOffsets offsets;
  GainProfile initial_mode = GainProfile::Free;
  GripperState initial_gripper = GripperState::Holding;
  std::uint64_t seed = 1;  // sensor noise stream

  void validate() const;
};

/// Header + 30 Hz samples + consumed command log. Replaying the log through a
/// session built from the header reproduces the samples.
struct DemoRecord {
  int schema = kDemoSchemaVersion;
  std::string name;
  TeleopConfig config;
  // Session state when recording started.
  SimState initial;
  Pose initial_g_d;
  GainProfile initial_mode = GainProfile::Free;
  SpeedLevel initial_speed = SpeedLevel::Med;
  CommandFrame initial_frame = CommandFrame::Base;
  Vec6 initial_filter = Vec6::Zero();  // filter output
  Vec6 initial_bias = Vec6::Zero();    // filter bias
  std::optional<TeleopCommand> initial_held;
  std::int64_t initial_held_tick = 0;
  std::uint64_t sensor_seed = 0;
  std::int64_t end_tick = 0;
  std::vector<DemoSample> samples;
  std::vector<DemoEvent> events;

  /// Throws SchemaError on non-monotone ticks or sample spacing off 1/30 s by more than a tick.
  void validate() const;
};

/// One line per record: header, then "sample" and "event" lines in tick order.
void write_demo_jsonl(std::ostream& os, const DemoRecord& demo);
DemoRecord read_demo_jsonl(std::istream& is);

// Session ----------------------------------------------------------------------------------

struct ReplayResult;

struct StateFrame {
  std::int64_t tick = 0;
  double t = 0.0;
  Pose g_ee;
  Pose g_d;
  Vec6 Fe = Vec6::Zero();
  GainProfile mode = GainProfile::Free;
  GripperState gripper = GripperState::Holding;
  SpeedLevel speed = SpeedLevel::Med;
  CommandFrame frame = CommandFrame::Base;
  bool recording = false;
  bool rebiasing = false;
  bool contact = false;
  TrialStatus status = TrialStatus::InProgress;
  Pose hole;      // world
  Pose platform;  // world
  Pose peg;       // world
};

class TeleopSession {
 public:
  explicit TeleopSession(TeleopConfig cfg);

  /// Advances one control period. `cmd` is the command consumed this tick (latest-wins
  /// sampling happens outside); modes, speed, frame and gripper toggles latch.
  void tick(const std::optional<TeleopCommand>& cmd = std::nullopt);
  void request_rebias(std::size_t samples = kRebiasMinSamples);
  /// Returns the end-effector (and the desired pose) to the scene's home pose.
  void reset(const Scene& scene);

  void start_recording(std::string name = {});
  /// Nullopt when not recording.
  std::optional<DemoRecord> stop_recording();
  bool recording() const { return recording_.has_value(); }

  StateFrame snapshot() const;
  const SimState& state() const { return state_; }
  const Pose& desired() const { return g_d_; }
  GainProfile mode() const { return mode_; }
  const TeleopConfig& config() const { return cfg_; }
  std::size_t blowups() const { return blowups_; }

 private:
  friend ReplayResult record_replay(const DemoRecord&, double,
                                    const std::optional<TeleopConfig>&);
  void record_sample();

  TeleopConfig cfg_;
  SimState state_;
  Pose g_d_;
  GainProfile mode_;
  Gains gains_;
  SpeedLevel speed_ = SpeedLevel::Med;
  CommandFrame frame_ = CommandFrame::Base;
  FtSensor sensor_;
  FtConditioner conditioner_;
  Wrench Fe_filt_ = Wrench::zero(Frame::Body);
  std::optional<TeleopCommand> held_;
  std::int64_t held_tick_ = 0;
  std::optional<DemoRecord> recording_;
  std::int64_t record_start_tick_ = 0;
  std::int64_t samples_taken_ = 0;
  std::uint64_t recordings_ = 0;
  std::size_t blowups_ = 0;
};

struct ReplayResult {
  bool reproduced = true;
  std::size_t samples_compared = 0;
  double max_position_error = 0.0;  // m
  double max_rotation_error = 0.0;  // rad
  std::optional<std::int64_t> first_divergence_tick;
  TrialStatus final_status = TrialStatus::InProgress;
};

/// Re-simulates the demo from its header. `override_cfg` (e.g. another seed or
/// noise) replaces the recorded configuration; divergence is reported, not thrown.
ReplayResult record_replay(const DemoRecord& demo, double tolerance = 1e-6,
                           const std::optional<TeleopConfig>& override_cfg = std::nullopt);

// Wire helpers (shared with the server and the Python bindings) --------------------------

nlohmann::json pose_to_json(const Pose& g);
Pose pose_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TeleopCommand& c);
/// Parses a "cmd" frame. Throws ProtocolError on malformed input.
TeleopCommand command_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StateFrame& s);

}  // namespace equicontact
