#pragma once
// Closed-loop trials (reference estimate -> local policy -> ensemble -> GAC ->
// plant), equivariance suites, benchmarks and result export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "equicontact/admittance.hpp"
#include "equicontact/policy.hpp"
#include "equicontact/refframe.hpp"
#include "equicontact/sim.hpp"

namespace equicontact {

enum class PolicyKind { GcevLocal, WorldFrameReplay };
const char* to_string(PolicyKind k);
PolicyKind parse_policy_kind(std::string_view s);

const char* to_string(GainSchedule s);
GainSchedule parse_gain_schedule(std::string_view s);

enum class Outcome { Success, Fail, Blowup };
const char* to_string(Outcome o);
Outcome parse_outcome(std::string_view s);

enum class FailReason { None, Timeout, ForceLimit, Blowup, GraspMiss };
const char* to_string(FailReason r);
FailReason parse_fail_reason(std::string_view s);

/// Sensor model of a trial: the bias is drawn per trial from N(0, bias_sigma).
struct FtSettings {
  double force_sigma = 0.1;         // N
  double torque_sigma = 0.005;      // N m
  double bias_force_sigma = 1.0;    // N
  double bias_torque_sigma = 0.05;  // N m
  double cutoff_hz = kDefaultFtCutoffHz;
  std::size_t rebias_ticks = kRebiasMinSamples;
};

struct BenchmarkConfig {
  PolicyKind policy = PolicyKind::GcevLocal;
  bool compliance = true;
  std::string scenario_set = "flat-ood";
  std::size_t trials = 20;
  std::string noise_preset = "moderate";
  std::uint64_t seed = 1;

  InsertionPolicyConfig policy_cfg;
  PickPolicyConfig pick_cfg;
  double ensemble_decay = kDefaultEnsembleDecay;
  PegHoleGeom geom;
  ContactParams contact;
  FeatureConfig features;
  FtSettings ft;
  SuccessTolerance success;
  double force_limit = 50.0;  // N on |f| of the raw contact wrench

  /// e.g. "gcev-local/compliance-on/adaptive/augmented".
  std::string policy_id() const;
  void validate() const;
};

/// Contact-rich variant of `base` for force-profile comparisons: flat scene and a
/// fixed 2.5 mm feature offset, so every trial lands on the chamfer or top face.
BenchmarkConfig force_profile_config(const BenchmarkConfig& base, GainSchedule schedule);
inline constexpr double kForceProfileFeatureOffset = 0.0025;  // m

/// Scenario ids: flat, flat-ood, tilt30-ood, tilt45, distractor. Throws InvalidArgument otherwise.
ScenarioSpec scenario_for(std::string_view scenario_set, std::uint64_t seed);
const std::vector<std::string>& scenario_sets();

struct TrialReport {
  std::string scenario_id;
  std::string policy_id;
  Outcome outcome = Outcome::Fail;
  FailReason reason = FailReason::Timeout;
  std::int64_t steps = 0;
  Vec6 peak_abs_wrench = Vec6::Zero();  // raw contact wrench, per axis
  std::uint64_t seed = 0;               // trial seed; replaying it reproduces the report
  std::size_t trial_index = 0;

  bool operator==(const TrialReport& o) const;
};

struct CommandSample {
  Pose g_d;
  Vec3 kp;
  Vec3 kr;
};

struct ForceSample {
  double t;
  Vec6 Fe_raw;
  Vec6 Fe_filtered;
  Phase phase;
};

struct TrajectorySample {
  double t;
  Pose g_ee;
  Vec6 Vb;
  Vec6 Fe;  // filtered
  Vec3 kp;
  Vec3 kr;
  Phase phase;
};

struct RolloutOptions {
  std::size_t max_steps = 0;       // 0: until the trial resolves
  bool stop_on_outcome = true;
  bool record_trajectory = false;
  bool record_forces = false;
  bool record_commands = false;
};

struct RolloutRecord {
  std::vector<TrajectorySample> trajectory;
  std::vector<ForceSample> forces;
  std::vector<CommandSample> commands;
};

struct TrialResult {
  TrialReport report;
  RolloutRecord record;
};

/// Seeded streams of a trial.
struct TrialSeeds {
  std::uint64_t scene;
  std::uint64_t reference;
  std::uint64_t sensor;
  std::uint64_t features;
  static TrialSeeds from(std::uint64_t trial_seed);
};

/// Insertion trial with the peg in hand from the home pose. The reference frame
/// comes from the candidate mock (noise preset of `cfg`); `replay` supplies the
/// command stream for world-frame replay.
TrialResult run_insertion_trial(const BenchmarkConfig& cfg, const Scene& scene,
                                std::uint64_t trial_seed, const RolloutOptions& opts = {},
                                const std::vector<CommandSample>* replay = nullptr);

/// Command stream of a noise-free gcev-local insertion in the canonical flat scene.
std::vector<CommandSample> nominal_command_trace(const BenchmarkConfig& cfg);

std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t trial_index);

struct BenchmarkResult {
  BenchmarkConfig config;
  std::vector<TrialReport> reports;
  std::vector<std::vector<ForceSample>> force_traces;  // parallel to reports

  std::size_t count(Outcome o) const;
  std::size_t count(FailReason r) const;
};

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, bool record_forces = true);
/// Re-runs one trial from its report's seed.
TrialReport replay_trial(const BenchmarkConfig& cfg, const TrialReport& report);

// Pick-then-place --------------------------------------------------------------------

struct PipelineReport {
  std::string scenario_id;
  bool grasped = false;
  TrialReport place;
  std::int64_t pick_steps = 0;
  std::uint64_t seed = 0;
};

/// Pick with the pick mock (pick_table noise), lift, then insert with the place
/// mock (place_table noise unless cfg.noise_preset overrides with a non-table preset).
PipelineReport run_pipeline_trial(const BenchmarkConfig& cfg, const Scene& scene,
                                  std::uint64_t trial_seed);

// Equivariance suite ---------------------------------------------------------------------

using GcevFn = std::function<Gcev(const Pose&, const Pose&)>;

struct SuiteOptions {
  std::size_t samples = 1000;
  double tolerance = 1e-9;
  std::uint64_t seed = 7;
  bool identity_action = false;  // draw g_l = identity (self-check)
  std::size_t rollouts = 0;      // 0 skips the closed-loop check
  std::size_t rollout_steps = 2000;
  double rollout_tolerance = 1e-6;
  GcevFn gcev;                   // empty: compute_gcev
};

struct SuiteCheck {
  std::string name;
  std::size_t samples = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::string offending;  // JSON of the worst tuple when failed
};

struct SuiteReport {
  std::vector<SuiteCheck> checks;
  double seconds = 0.0;
  bool passed() const;
  const SuiteCheck& check(std::string_view name) const;
};

SuiteReport run_equivariance_suite(const SuiteOptions& opts, const BenchmarkConfig& cfg = {});

struct RolloutEquivariance {
  double max_translation = 0.0;  // m
  double max_rotation = 0.0;     // rad
  std::size_t steps = 0;
};

/// Runs the trial in `scene` and in g_l * scene with the same seed and compares
/// g_l * trajectory with the re-simulated trajectory step by step.
RolloutEquivariance rollout_equivariance(const BenchmarkConfig& cfg, const Scene& scene,
                                         const Pose& g_l, std::uint64_t trial_seed,
                                         std::size_t steps);

// Export ------------------------------------------------------------------------------------

nlohmann::json to_json(const TrialReport& r);
TrialReport trial_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BenchmarkConfig& c);
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SuiteReport& r);

/// Writes <dir>/summary.csv, trials.csv, forces.csv and results.json.
/// Throws InvalidArgument for empty input and Error when the directory is unwritable.
void export_results(const std::vector<BenchmarkResult>& results, const std::filesystem::path& dir);
/// Reads results.json written by export_results.
std::vector<BenchmarkResult> load_results(const std::filesystem::path& results_json);

/// Line-delimited trajectory log: t, g_ee (p, R), Vb, Fe, gains, phase.
void write_trajectory_jsonl(std::ostream& os, const std::vector<TrajectorySample>& traj);

}  // namespace equicontact
