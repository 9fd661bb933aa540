#include "equicontact/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "equicontact/errors.hpp"
#include "equicontact/random.hpp"
#include "json_io.hpp"

namespace equicontact {

NLOHMANN_JSON_SERIALIZE_ENUM(PolicyKind, {{PolicyKind::GcevLocal, "gcev-local"},
                                          {PolicyKind::WorldFrameReplay, "world-frame-replay"}})

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FtSettings, force_sigma, torque_sigma,
                                                bias_force_sigma, bias_torque_sigma, cutoff_hz,
                                                rebias_ticks)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SuccessTolerance, axis_angle, depth_fraction,
                                                timeout, lateral_slop)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BenchmarkConfig, policy, compliance,
                                                scenario_set, trials, noise_preset, seed,
                                                policy_cfg, pick_cfg, ensemble_decay, geom,
                                                contact, features, ft, success, force_limit)

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kLiftHeight = 0.12;        // m, along body -z after the grasp
constexpr std::int64_t kLiftTicks = 300;
constexpr double kPickTimeout = 15.0;       // s

Vec6 abs6(const Wrench& w) { return w.vector().cwiseAbs(); }

nlohmann::json pose_json(const Pose& g) { return pose_to_json_rowmajor(g); }

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// One closed loop: sensing, policy, ensembling, admittance plant.
class TrialRunner {
 public:
  TrialRunner(const BenchmarkConfig& cfg, const Scene& scene, std::uint64_t seed,
              GripperState gripper)
      : cfg_(cfg),
        scene_(scene),
        seeds_(TrialSeeds::from(seed)),
        state_(initial_state(scene, gripper)),
        sensor_(draw_sensor(cfg.ft, seeds_.sensor), mix_seed(seeds_.sensor, 1)),
        conditioner_(FtFilterState{Vec6::Zero(), Vec6::Zero(), cfg.ft.cutoff_hz, kControlRateHz}),
        buffer_(cfg.policy_cfg.chunk_size, cfg.ensemble_decay) {
    Rng frng(seeds_.features);
    bias_ = draw_feature_bias(frng, cfg.features);
  }

  static FtNoiseConfig draw_sensor(const FtSettings& s, std::uint64_t seed) {
    Rng rng(seed);
    FtNoiseConfig c;
    c.force_sigma = s.force_sigma;
    c.torque_sigma = s.torque_sigma;
    for (int i = 0; i < 6; ++i) {
      c.bias(i) = rng.normal(0.0, i < 3 ? s.bias_force_sigma : s.bias_torque_sigma);
    }
    return c;
  }

  // Quiet period with the arm held still while the sensor bias is estimated.
  void rebias() {
    if (cfg_.ft.rebias_ticks == 0) return;
    conditioner_.request_rebias(cfg_.ft.rebias_ticks);
    const Pose hold = state_.g_ee;
    const Gains gains = profile_gains(GainProfile::Free);
    for (std::size_t i = 0; i < cfg_.ft.rebias_ticks; ++i) {
      Command cmd{hold, gains, std::nullopt, Tracking::Stiff};
      advance(cmd);
    }
  }

  void advance(const Command& cmd) {
    const StepResult r = step(state_, scene_, cfg_.geom, cfg_.contact, cmd, kControlPeriod);
    state_ = r.state;
    Fe_raw_ = r.Fe_raw;
    Fe_filt_ = conditioner_.filter(sensor_.sense(Fe_raw_));
  }

  Command make_command(const Pose& g_d, const Vec3& kp, const Vec3& kr) const {
    Command cmd{g_d, Gains::critically_damped(kp, kr), Fe_filt_,
                cfg_.compliance ? Tracking::Compliant : Tracking::Stiff};
    return cmd;
  }

  Observation observe(const Pose& g_ref) const {
    Observation o;
    o.e_G = compute_gcev(state_.g_ee, g_ref);
    o.Fe = Fe_filt_;
    o.z = observe_features(state_.g_ee, scene_, cfg_.geom, cfg_.features, bias_);
    return o;
  }

  // Insertion loop from the current state. Returns the report; fills `rec`.
  TrialReport insert(const Pose& g_ref, const RolloutOptions& opts,
                     const std::vector<CommandSample>* replay, RolloutRecord& rec) {
    TrialReport rep;
    rep.scenario_id = scene_.id;
    rep.policy_id = cfg_.policy_id();
    SuccessTolerance tol = cfg_.success;
    tol.timeout += state_.t;
    InsertionMemory memory;
    buffer_.clear();
    std::int64_t k = 0;
    bool resolved = false;
    for (;;) {
      if (opts.max_steps > 0 && static_cast<std::size_t>(k) >= opts.max_steps) break;
      Phase phase = Phase::Replay;
      Pose g_d;
      Vec3 kp;
      Vec3 kr;
      if (replay != nullptr) {
        if (replay->empty()) throw InvalidArgument("replay: empty command trace");
        const CommandSample& c =
            (*replay)[std::min(static_cast<std::size_t>(k), replay->size() - 1)];
        g_d = c.g_d;
        kp = c.kp;
        kr = c.kr;
      } else {
        const ActionChunk chunk = scripted_insertion_policy(observe(g_ref), cfg_.policy_cfg, memory);
        chunk.validate();
        phase = chunk.phase;
        buffer_.add(k, state_.g_ee, chunk);
        const EnsembleOutput out = buffer_.ensemble(k + 1);
        buffer_.prune(k + 1);
        g_d = out.g_d;
        kp = out.kp;
        kr = out.kr;
      }
      if (opts.record_commands) rec.commands.push_back({g_d, kp, kr});
      try {
        advance(make_command(g_d, kp, kr));
      } catch (const SimulationBlowup&) {
        ++k;
        if (!resolved) {
          rep.outcome = Outcome::Blowup;
          rep.reason = FailReason::Blowup;
          rep.steps = k;
        }
        break;
      }
      ++k;
      if (opts.record_trajectory) {
        rec.trajectory.push_back(
            {state_.t, state_.g_ee, state_.Vb.vector(), Fe_filt_.vector(), kp, kr, phase});
      }
      if (opts.record_forces) {
        rec.forces.push_back({state_.t, Fe_raw_.vector(), Fe_filt_.vector(), phase});
      }
      if (resolved) continue;
      rep.peak_abs_wrench = rep.peak_abs_wrench.cwiseMax(abs6(Fe_raw_));
      TrialStatus status = success_check(state_, scene_, cfg_.geom, tol);
      FailReason reason = FailReason::Timeout;
      if (Fe_raw_.force().norm() > cfg_.force_limit) {
        status = TrialStatus::Fail;
        reason = FailReason::ForceLimit;
      }
      if (status != TrialStatus::InProgress) {
        rep.outcome = status == TrialStatus::Success ? Outcome::Success : Outcome::Fail;
        rep.reason = status == TrialStatus::Success ? FailReason::None : reason;
        rep.steps = k;
        resolved = true;
        if (opts.stop_on_outcome) break;
      }
    }
    if (!resolved && rep.outcome != Outcome::Blowup) {
      rep.outcome = Outcome::Fail;
      rep.reason = FailReason::Timeout;
      rep.steps = k;
    }
    return rep;
  }

  // Pick loop: true once the gripper closed on the peg.
  bool pick(const Pose& g_ref, std::int64_t& steps) {
    buffer_.clear();
    std::int64_t k = 0;
    const double t_end = state_.t + kPickTimeout;
    while (state_.t < t_end) {
      const ActionChunk chunk = scripted_pick_policy(observe(g_ref), cfg_.pick_cfg);
      chunk.validate();
      if (chunk.steps.front().gripper == GripperCommand::Close) {
        steps = k;
        return grasp_succeeds(state_.g_ee, scene_, cfg_.geom);
      }
      buffer_.add(k, state_.g_ee, chunk);
      const EnsembleOutput out = buffer_.ensemble(k + 1);
      buffer_.prune(k + 1);
      advance(make_command(out.g_d, out.kp, out.kr));
      ++k;
    }
    steps = k;
    return false;
  }

  void lift() {
    const Pose target = state_.g_ee * Pose::translation(0.0, 0.0, -kLiftHeight);
    const auto [kp, kr] = profile_stiffness(GainProfile::Free);
    for (std::int64_t i = 0; i < kLiftTicks; ++i) advance(make_command(target, kp, kr));
  }

  SimState& state() { return state_; }
  const TrialSeeds& seeds() const { return seeds_; }

 private:
  const BenchmarkConfig& cfg_;
  const Scene& scene_;
  TrialSeeds seeds_;
  SimState state_;
  FtSensor sensor_;
  FtConditioner conditioner_;
  EnsembleBuffer buffer_;
  FeatureBias bias_;
  Wrench Fe_raw_ = Wrench::zero(Frame::Body);
  Wrench Fe_filt_ = Wrench::zero(Frame::Body);
};

Pose place_reference(const BenchmarkConfig& cfg, const Scene& scene, std::uint64_t seed,
                     const EstimatorNoise& noise) {
  const CandidatePoseSet cands = mock_candidates(scene, cfg.geom, CandidateKind::Place, noise, seed);
  return refine_place(cands, ToolOffset::place());
}

}  // namespace

// Enums ------------------------------------------------------------------------------------

const char* to_string(PolicyKind k) {
  return k == PolicyKind::GcevLocal ? "gcev-local" : "world-frame-replay";
}

PolicyKind parse_policy_kind(std::string_view s) {
  if (s == "gcev-local") return PolicyKind::GcevLocal;
  if (s == "world-frame-replay") return PolicyKind::WorldFrameReplay;
  throw InvalidArgument("unknown policy '" + std::string(s) + "'");
}

const char* to_string(GainSchedule s) {
  return s == GainSchedule::Adaptive ? "adaptive" : "fixed-high";
}

GainSchedule parse_gain_schedule(std::string_view s) {
  if (s == "adaptive") return GainSchedule::Adaptive;
  if (s == "fixed-high") return GainSchedule::FixedHigh;
  throw InvalidArgument("unknown gain schedule '" + std::string(s) + "'");
}

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Success: return "success";
    case Outcome::Fail: return "fail";
    case Outcome::Blowup: return "blowup";
  }
  return "fail";
}

Outcome parse_outcome(std::string_view s) {
  if (s == "success") return Outcome::Success;
  if (s == "fail") return Outcome::Fail;
  if (s == "blowup") return Outcome::Blowup;
  throw SchemaError("unknown outcome '" + std::string(s) + "'");
}

const char* to_string(FailReason r) {
  switch (r) {
    case FailReason::None: return "none";
    case FailReason::Timeout: return "timeout";
    case FailReason::ForceLimit: return "force_limit";
    case FailReason::Blowup: return "blowup";
    case FailReason::GraspMiss: return "grasp_miss";
  }
  return "none";
}

FailReason parse_fail_reason(std::string_view s) {
  if (s == "none") return FailReason::None;
  if (s == "timeout") return FailReason::Timeout;
  if (s == "force_limit") return FailReason::ForceLimit;
  if (s == "blowup") return FailReason::Blowup;
  if (s == "grasp_miss") return FailReason::GraspMiss;
  throw SchemaError("unknown failure reason '" + std::string(s) + "'");
}

// Config -------------------------------------------------------------------------------------

std::string BenchmarkConfig::policy_id() const {
  std::string id = to_string(policy);
  id += compliance ? "/compliance-on/" : "/compliance-off/";
  id += to_string(policy_cfg.schedule);
  id += features.brittle ? "/brittle" : "/augmented";
  return id;
}

void BenchmarkConfig::validate() const {
  if (trials == 0) throw InvalidArgument("benchmark: trials must be positive");
  if (!(force_limit > 0.0)) throw InvalidArgument("benchmark: force_limit must be positive");
  (void)scenario_for(scenario_set, 0);
  EstimatorNoise::preset(noise_preset).validate();
  policy_cfg.validate();
  pick_cfg.validate();
  geom.validate();
  contact.validate();
  if (ft.rebias_ticks != 0 && ft.rebias_ticks < kRebiasMinSamples) {
    throw InvalidArgument("benchmark: rebias needs at least 400 samples (or 0 to skip)");
  }
}

BenchmarkConfig force_profile_config(const BenchmarkConfig& base, GainSchedule schedule) {
  BenchmarkConfig c = base;
  c.scenario_set = "flat";
  c.policy = PolicyKind::GcevLocal;
  c.compliance = true;
  c.policy_cfg.schedule = schedule;
  c.features.bias_position_sigma = 0.0;
  c.features.bias_position_min = kForceProfileFeatureOffset;
  return c;
}

const std::vector<std::string>& scenario_sets() {
  static const std::vector<std::string> sets{"flat", "flat-ood", "tilt30-ood", "tilt45",
                                             "distractor"};
  return sets;
}

ScenarioSpec scenario_for(std::string_view set, std::uint64_t seed) {
  ScenarioSpec s;
  s.id = std::string(set);
  s.seed = seed;
  if (set == "flat") return s;
  s.translation_min = 0.05;
  s.translation_max = 0.15;
  s.yaw_range_deg = 30.0;
  if (set == "flat-ood") return s;
  if (set == "tilt30-ood") {
    s.tilt_deg = 30.0;
    return s;
  }
  if (set == "tilt45") {
    s.tilt_deg = 45.0;
    return s;
  }
  if (set == "distractor") {
    s.distractor = true;
    return s;
  }
  throw InvalidArgument("unknown scenario id '" + std::string(set) + "'");
}

TrialSeeds TrialSeeds::from(std::uint64_t seed) {
  return {mix_seed(seed, 1), mix_seed(seed, 2), mix_seed(seed, 3), mix_seed(seed, 4)};
}

std::uint64_t trial_seed(std::uint64_t base_seed, std::size_t trial_index) {
  return mix_seed(base_seed, 1000 + trial_index);
}

bool TrialReport::operator==(const TrialReport& o) const {
  return scenario_id == o.scenario_id && policy_id == o.policy_id && outcome == o.outcome &&
         reason == o.reason && steps == o.steps && peak_abs_wrench == o.peak_abs_wrench &&
         seed == o.seed && trial_index == o.trial_index;
}

// Trials ---------------------------------------------------------------------------------------

TrialResult run_insertion_trial(const BenchmarkConfig& cfg, const Scene& scene,
                                std::uint64_t seed, const RolloutOptions& opts,
                                const std::vector<CommandSample>* replay) {
  TrialRunner runner(cfg, scene, seed, GripperState::Holding);
  const Pose g_ref =
      place_reference(cfg, scene, runner.seeds().reference, EstimatorNoise::preset(cfg.noise_preset));
  TrialResult result;
  runner.rebias();
  result.report = runner.insert(g_ref, opts, replay, result.record);
  result.report.seed = seed;
  return result;
}

std::vector<CommandSample> nominal_command_trace(const BenchmarkConfig& cfg) {
  BenchmarkConfig nominal = cfg;
  nominal.policy = PolicyKind::GcevLocal;
  nominal.compliance = true;
  nominal.noise_preset = "none";
  nominal.ft = FtSettings{0.0, 0.0, 0.0, 0.0, cfg.ft.cutoff_hz, cfg.ft.rebias_ticks};
  nominal.features.bias_position_sigma = 0.0;
  nominal.features.bias_axis_sigma = 0.0;
  nominal.features.brittle = false;
  const Scene scene = build_scenario(scenario_for("flat", cfg.seed));
  RolloutOptions opts;
  opts.record_commands = true;
  TrialResult r = run_insertion_trial(nominal, scene, cfg.seed, opts);
  if (r.report.outcome != Outcome::Success) {
    throw Error("nominal run for world-frame replay did not succeed in the canonical scene");
  }
  return std::move(r.record.commands);
}

std::size_t BenchmarkResult::count(Outcome o) const {
  return static_cast<std::size_t>(
      std::count_if(reports.begin(), reports.end(), [o](const auto& r) { return r.outcome == o; }));
}

std::size_t BenchmarkResult::count(FailReason f) const {
  return static_cast<std::size_t>(
      std::count_if(reports.begin(), reports.end(), [f](const auto& r) { return r.reason == f; }));
}

namespace {

TrialResult run_indexed_trial(const BenchmarkConfig& cfg, std::size_t index, std::uint64_t seed,
                              const std::vector<CommandSample>* replay, bool record_forces) {
  const Scene scene = build_scenario(scenario_for(cfg.scenario_set, TrialSeeds::from(seed).scene));
  RolloutOptions opts;
  opts.record_forces = record_forces;
  TrialResult r = run_insertion_trial(cfg, scene, seed, opts, replay);
  r.report.trial_index = index;
  return r;
}

}  // namespace

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, bool record_forces) {
  cfg.validate();
  BenchmarkResult out;
  out.config = cfg;
  std::vector<CommandSample> trace;
  if (cfg.policy == PolicyKind::WorldFrameReplay) trace = nominal_command_trace(cfg);
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    TrialResult r = run_indexed_trial(cfg, i, trial_seed(cfg.seed, i),
                                      cfg.policy == PolicyKind::WorldFrameReplay ? &trace : nullptr,
                                      record_forces);
    out.reports.push_back(r.report);
    out.force_traces.push_back(std::move(r.record.forces));
  }
  return out;
}

TrialReport replay_trial(const BenchmarkConfig& cfg, const TrialReport& report) {
  std::vector<CommandSample> trace;
  if (cfg.policy == PolicyKind::WorldFrameReplay) trace = nominal_command_trace(cfg);
  return run_indexed_trial(cfg, report.trial_index, report.seed,
                           cfg.policy == PolicyKind::WorldFrameReplay ? &trace : nullptr, false)
      .report;
}

PipelineReport run_pipeline_trial(const BenchmarkConfig& cfg, const Scene& scene,
                                  std::uint64_t seed) {
  PipelineReport rep;
  rep.scenario_id = scene.id;
  rep.seed = seed;
  TrialRunner runner(cfg, scene, seed, GripperState::Open);
  runner.rebias();

  const bool table = cfg.noise_preset == "none" || cfg.noise_preset == "moderate";
  const EstimatorNoise pick_noise =
      table ? EstimatorNoise::preset(cfg.noise_preset) : EstimatorNoise::pick_table();
  const EstimatorNoise place_noise =
      table ? EstimatorNoise::preset(cfg.noise_preset) : EstimatorNoise::place_table();

  const CandidatePoseSet pick_cands =
      mock_candidates(scene, cfg.geom, CandidateKind::Pick, pick_noise, runner.seeds().reference);
  const Rotation R_grasp = grasp_target(scene, cfg.geom).R;
  const Pose g_pick = refine_pick(pick_cands, R_grasp, ToolOffset::pick());

  rep.place.scenario_id = scene.id;
  rep.place.policy_id = cfg.policy_id();
  rep.place.seed = seed;
  rep.grasped = runner.pick(g_pick, rep.pick_steps);
  if (!rep.grasped) {
    rep.place.outcome = Outcome::Fail;
    rep.place.reason = FailReason::GraspMiss;
    return rep;
  }
  runner.state().gripper = GripperState::Holding;
  runner.lift();
  const Pose g_place =
      place_reference(cfg, scene, mix_seed(runner.seeds().reference, 9), place_noise);
  RolloutRecord rec;
  rep.place = runner.insert(g_place, RolloutOptions{}, nullptr, rec);
  rep.place.seed = seed;
  return rep;
}

// Equivariance ------------------------------------------------------------------------------------

RolloutEquivariance rollout_equivariance(const BenchmarkConfig& cfg, const Scene& scene,
                                         const Pose& g_l, std::uint64_t seed, std::size_t steps) {
  RolloutOptions opts;
  opts.max_steps = steps;
  opts.stop_on_outcome = false;
  opts.record_trajectory = true;
  const TrialResult a = run_insertion_trial(cfg, scene, seed, opts);
  const TrialResult b = run_insertion_trial(cfg, scene.transformed(g_l), seed, opts);
  RolloutEquivariance out;
  const std::size_t n = std::min(a.record.trajectory.size(), b.record.trajectory.size());
  if (a.record.trajectory.size() != b.record.trajectory.size()) {
    out.max_translation = std::numeric_limits<double>::infinity();
    out.max_rotation = std::numeric_limits<double>::infinity();
  }
  for (std::size_t i = 0; i < n; ++i) {
    const PoseDiscrepancy d =
        discrepancy(g_l * a.record.trajectory[i].g_ee, b.record.trajectory[i].g_ee);
    out.max_translation = std::max(out.max_translation, d.translation);
    out.max_rotation = std::max(out.max_rotation, d.rotation);
  }
  out.steps = n;
  return out;
}

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const SuiteCheck& SuiteReport::check(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw InvalidArgument("suite: no check named '" + std::string(name) + "'");
}

namespace {

struct Worst {
  double error = -1.0;
  nlohmann::json tuple;
  void offer(double e, const std::function<nlohmann::json()>& make) {
    if (e > error) {
      error = e;
      tuple = make();
    }
  }
};

double pose_error(const Pose& a, const Pose& b) {
  const PoseDiscrepancy d = discrepancy(a, b);
  return std::max(d.translation, d.rotation);
}

Pose perturbed(const Pose& g, Rng& rng, double pos, double rot) {
  return {g.p + rng.uniform_vec3(-pos, pos), g.R * from_euler_xyz(rng.uniform_vec3(-rot, rot))};
}

}  // namespace

SuiteReport run_equivariance_suite(const SuiteOptions& opts, const BenchmarkConfig& cfg) {
  if (opts.samples == 0) throw InvalidArgument("suite: samples must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  const GcevFn gcev = opts.gcev ? opts.gcev : GcevFn(compute_gcev);
  Rng rng(opts.seed, 0x5017E);
  Worst w_gcev, w_elastic, w_adjoint, w_ensemble, w_chunk;

  for (std::size_t s = 0; s < opts.samples; ++s) {
    const Pose g_l = opts.identity_action ? Pose::identity() : rng.random_pose(1.0);
    const Pose g = rng.random_pose(0.5);
    const Pose g_ref = perturbed(g, rng, 0.05, 0.5);
    const Pose g_d = perturbed(g, rng, 0.05, 0.5);
    const Vec3 kp = rng.uniform_vec3(kGainEnvelopeMin, kGainEnvelopeMax);
    const Vec3 kr = rng.uniform_vec3(kGainEnvelopeMin, kGainEnvelopeMax);
    auto tuple = [&] {
      return nlohmann::json{{"g_l", pose_json(g_l)}, {"g", pose_json(g)}, {"g_ref", pose_json(g_ref)},
                            {"g_d", pose_json(g_d)}, {"kp", kp}, {"kr", kr}};
    };

    // (a) GCEV left-invariance.
    const Vec6 e0 = gcev(g, g_ref).vector();
    const Vec6 e1 = gcev(g_l * g, g_l * g_ref).vector();
    w_gcev.offer((e1 - e0).cwiseAbs().maxCoeff(), tuple);

    // (b) Elastic wrench left-invariance.
    const Wrench f0 = elastic_wrench(g, g_d, kp, kr);
    const Wrench f1 = elastic_wrench(g_l * g, g_l * g_d, kp, kr);
    w_elastic.offer((f1.vector() - f0.vector()).cwiseAbs().maxCoeff(), tuple);

    // (c) Spatial wrench transforms by the Adjoint of g_l.
    const Wrench s0 = ad_wrench(g, f0);
    const Wrench s1 = ad_wrench(g_l * g, f1);
    const Wrench expected = ad_wrench(g_l, Wrench::body(s0.vector()));
    w_adjoint.offer((s1.vector() - expected.vector()).cwiseAbs().maxCoeff(), tuple);

    // (d) Temporal ensemble equivariance.
    const std::size_t n = 2 + static_cast<std::size_t>(rng.uniform() * 19.0);
    std::vector<Prediction> preds;
    std::vector<Prediction> moved;
    std::vector<double> weights;
    for (std::size_t i = 0; i < n; ++i) {
      const Prediction p{perturbed(g_d, rng, 0.02, 8.0 * kDeg),
                         rng.uniform_vec3(kGainEnvelopeMin, kGainEnvelopeMax),
                         rng.uniform_vec3(kGainEnvelopeMin, kGainEnvelopeMax)};
      preds.push_back(p);
      moved.push_back({g_l * p.g_d, p.kp, p.kr});
      weights.push_back(std::exp(-kDefaultEnsembleDecay * static_cast<double>(i)));
    }
    const EnsembleOutput a = temporal_ensemble(preds, weights);
    const EnsembleOutput b = temporal_ensemble(moved, weights);
    const double gain_err = std::max((a.kp - b.kp).cwiseAbs().maxCoeff(),
                                     (a.kr - b.kr).cwiseAbs().maxCoeff());
    w_ensemble.offer(std::max(pose_error(g_l * a.g_d, b.g_d), gain_err), tuple);

    // (e) Chunk expansion equivariance.
    ActionChunk chunk;
    for (std::size_t i = 0; i < kDefaultChunkSize; ++i) {
      chunk.steps.push_back({perturbed(Pose::identity(), rng, 0.02, 5.0 * kDeg), kp, kr,
                             GripperCommand::Hold});
    }
    const auto c0 = expand_chunk(g, chunk);
    const auto c1 = expand_chunk(g_l * g, chunk);
    double chunk_err = 0.0;
    for (std::size_t i = 0; i < c0.size(); ++i) {
      chunk_err = std::max(chunk_err, pose_error(g_l * c0[i], c1[i]));
    }
    w_chunk.offer(chunk_err, tuple);
  }

  SuiteReport report;
  auto add = [&](const char* name, const Worst& w, std::size_t samples, double tol) {
    SuiteCheck c;
    c.name = name;
    c.samples = samples;
    c.max_error = std::max(w.error, 0.0);
    c.tolerance = tol;
    c.passed = c.max_error <= tol;
    if (!c.passed) c.offending = w.tuple.dump();
    report.checks.push_back(c);
  };
  add("gcev_invariance", w_gcev, opts.samples, opts.tolerance);
  add("elastic_wrench_invariance", w_elastic, opts.samples, opts.tolerance);
  add("adjoint_wrench_equivariance", w_adjoint, opts.samples, opts.tolerance);
  add("ensemble_equivariance", w_ensemble, opts.samples, opts.tolerance);
  add("chunk_expansion_equivariance", w_chunk, opts.samples, opts.tolerance);

  if (opts.rollouts > 0) {
    Worst w_roll;
    Rng rrng(opts.seed, 0x7011);
    for (std::size_t i = 0; i < opts.rollouts; ++i) {
      const Pose g_l = opts.identity_action ? Pose::identity() : rrng.random_pose(1.0);
      const std::uint64_t seed = trial_seed(opts.seed, i);
      const Scene scene = build_scenario(scenario_for("flat", seed));
      const RolloutEquivariance r = rollout_equivariance(cfg, scene, g_l, seed, opts.rollout_steps);
      w_roll.offer(std::max(r.max_translation, r.max_rotation), [&] {
        return nlohmann::json{{"g_l", pose_json(g_l)}, {"seed", seed},
                              {"max_translation", r.max_translation},
                              {"max_rotation", r.max_rotation}};
      });
    }
    add("rollout_equivariance", w_roll, opts.rollouts, opts.rollout_tolerance);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

// Export --------------------------------------------------------------------------------------------

nlohmann::json to_json(const TrialReport& r) {
  return {{"scenario_id", r.scenario_id},
          {"policy_id", r.policy_id},
          {"outcome", to_string(r.outcome)},
          {"reason", to_string(r.reason)},
          {"steps", r.steps},
          {"peak_abs_wrench", r.peak_abs_wrench},
          {"seed", r.seed},
          {"trial_index", r.trial_index}};
}

TrialReport trial_report_from_json(const nlohmann::json& j) {
  try {
    TrialReport r;
    r.scenario_id = j.at("scenario_id").get<std::string>();
    r.policy_id = j.at("policy_id").get<std::string>();
    r.outcome = parse_outcome(j.at("outcome").get<std::string>());
    r.reason = parse_fail_reason(j.at("reason").get<std::string>());
    r.steps = j.at("steps").get<std::int64_t>();
    r.peak_abs_wrench = j.at("peak_abs_wrench").get<Vec6>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.trial_index = j.at("trial_index").get<std::size_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("trial report: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("trial report: ") + e.what());
  }
}

nlohmann::json to_json(const BenchmarkConfig& c) {
  nlohmann::json j;
  equicontact::to_json(j, c);
  return j;
}

BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j) {
  try {
    BenchmarkConfig c = j.get<BenchmarkConfig>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("benchmark config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("benchmark config: ") + e.what());
  }
}

nlohmann::json to_json(const SuiteReport& r) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : r.checks) {
    checks.push_back({{"name", c.name},
                      {"samples", c.samples},
                      {"max_error", c.max_error},
                      {"tolerance", c.tolerance},
                      {"passed", c.passed},
                      {"offending", c.offending}});
  }
  return {{"passed", r.passed()}, {"seconds", r.seconds}, {"checks", checks}};
}

void export_results(const std::vector<BenchmarkResult>& results, const std::filesystem::path& dir) {
  if (results.empty() || std::all_of(results.begin(), results.end(),
                                     [](const auto& r) { return r.reports.empty(); })) {
    throw InvalidArgument("export: no trial reports to export");
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&dir](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw Error("export: cannot write " + (dir / name).string());
    return f;
  };

  std::ofstream summary = open("summary.csv");
  summary << "scenario_set,policy_id,noise_preset,trials,success,fail,blowup,force_limit,timeout,"
             "success_rate,base_seed\n";
  std::ofstream trials = open("trials.csv");
  trials << "scenario_set,policy_id,trial_index,seed,outcome,reason,steps,peak_fx,peak_fy,peak_fz,"
            "peak_tx,peak_ty,peak_tz\n";
  std::ofstream forces = open("forces.csv");
  forces << "scenario_set,policy_id,trial_index,t,fx,fy,fz,tx,ty,tz,fz_filtered,phase\n";

  nlohmann::json all = nlohmann::json::array();
  for (const auto& res : results) {
    const auto& c = res.config;
    const std::string pid = c.policy_id();
    const std::size_t n = res.reports.size();
    summary << c.scenario_set << ',' << pid << ',' << c.noise_preset << ',' << n << ','
            << res.count(Outcome::Success) << ',' << res.count(Outcome::Fail) << ','
            << res.count(Outcome::Blowup) << ',' << res.count(FailReason::ForceLimit) << ','
            << res.count(FailReason::Timeout) << ','
            << fmt(n ? static_cast<double>(res.count(Outcome::Success)) / n : 0.0) << ','
            << c.seed << '\n';
    nlohmann::json rj;
    rj["config"] = to_json(c);
    rj["reports"] = nlohmann::json::array();
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = res.reports[i];
      trials << c.scenario_set << ',' << pid << ',' << r.trial_index << ',' << r.seed << ','
             << to_string(r.outcome) << ',' << to_string(r.reason) << ',' << r.steps;
      for (int a = 0; a < 6; ++a) trials << ',' << fmt(r.peak_abs_wrench(a));
      trials << '\n';
      rj["reports"].push_back(to_json(r));
      if (i < res.force_traces.size()) {
        for (const auto& s : res.force_traces[i]) {
          forces << c.scenario_set << ',' << pid << ',' << r.trial_index << ',' << fmt(s.t);
          for (int a = 0; a < 6; ++a) forces << ',' << fmt(s.Fe_raw(a));
          forces << ',' << fmt(s.Fe_filtered(2)) << ',' << to_string(s.phase) << '\n';
        }
      }
    }
    all.push_back(rj);
  }
  std::ofstream js = open("results.json");
  js << nlohmann::json{{"schema", "equicontact.results/1"}, {"benchmarks", all}}.dump(2) << '\n';
  if (!summary || !trials || !forces || !js) throw Error("export: write failed in " + dir.string());
}

std::vector<BenchmarkResult> load_results(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (j.value("schema", "") != "equicontact.results/1") {
    throw SchemaError(path.string() + ": unsupported results schema");
  }
  std::vector<BenchmarkResult> out;
  for (const auto& bj : j.at("benchmarks")) {
    BenchmarkResult r;
    r.config = benchmark_config_from_json(bj.at("config"));
    for (const auto& rj : bj.at("reports")) r.reports.push_back(trial_report_from_json(rj));
    out.push_back(std::move(r));
  }
  return out;
}

void write_trajectory_jsonl(std::ostream& os, const std::vector<TrajectorySample>& traj) {
  for (const auto& s : traj) {
    nlohmann::json j{{"t", s.t},        {"g_ee", pose_json(s.g_ee)}, {"Vb", s.Vb},
                     {"Fe", s.Fe},      {"kp", s.kp},                {"kr", s.kr},
                     {"phase", to_string(s.phase)}};
    os << j.dump() << '\n';
  }
}

}  // namespace equicontact
