#include "equicontact/teleop.hpp"

#include <cmath>
#include <istream>
#include <limits>
#include <ostream>

#include "equicontact/errors.hpp"
#include "equicontact/random.hpp"
#include "json_io.hpp"

namespace equicontact {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TeleopOffsets, pos_offset, rot_offset)

namespace {

using nlohmann::json;

GripperState parse_gripper(std::string_view s) {
  if (s == "open") return GripperState::Open;
  if (s == "holding") return GripperState::Holding;
  throw SchemaError("unknown gripper state '" + std::string(s) + "'");
}

const char* gripper_name(GripperState g) { return g == GripperState::Open ? "open" : "holding"; }

json scene_json(const Scene& s) {
  return {{"id", s.id},
          {"g_platform", pose_to_json(s.g_platform)},
          {"g_hole", pose_to_json(s.g_hole)},
          {"g_peg_initial", pose_to_json(s.g_peg_initial)},
          {"g_ee_home", pose_to_json(s.g_ee_home)},
          {"tilt_deg", s.tilt_deg},
          {"distractor", s.distractor},
          {"g_l_applied", pose_to_json(s.g_l_applied)}};
}

Scene scene_from_json(const json& j) {
  Scene s;
  s.id = j.at("id").get<std::string>();
  s.g_platform = pose_from_json(j.at("g_platform"));
  s.g_hole = pose_from_json(j.at("g_hole"));
  s.g_peg_initial = pose_from_json(j.at("g_peg_initial"));
  s.g_ee_home = pose_from_json(j.at("g_ee_home"));
  s.tilt_deg = j.at("tilt_deg").get<double>();
  s.distractor = j.at("distractor").get<bool>();
  s.g_l_applied = pose_from_json(j.at("g_l_applied"));
  return s;
}

json config_json(const TeleopConfig& c) {
  return {{"scene", scene_json(c.scene)},
          {"geom", c.geom},
          {"contact", c.contact},
          {"ft_noise",
           {{"force_sigma", c.ft_noise.force_sigma},
            {"torque_sigma", c.ft_noise.torque_sigma},
            {"bias", c.ft_noise.bias}}},
          {"ft_cutoff_hz", c.ft_cutoff_hz},
          {"offsets", c.offsets},
          {"initial_mode", to_string(c.initial_mode)},
          {"initial_gripper", gripper_name(c.initial_gripper)},
          {"seed", c.seed}};
}

TeleopConfig config_from_json(const json& j) {
  TeleopConfig c;
  c.scene = scene_from_json(j.at("scene"));
  c.geom = j.at("geom").get<PegHoleGeom>();
  c.contact = j.at("contact").get<ContactParams>();
  const json& n = j.at("ft_noise");
  c.ft_noise.force_sigma = n.at("force_sigma").get<double>();
  c.ft_noise.torque_sigma = n.at("torque_sigma").get<double>();
  c.ft_noise.bias = n.at("bias").get<Vec6>();
  c.ft_cutoff_hz = j.at("ft_cutoff_hz").get<double>();
  c.offsets = j.at("offsets").get<TeleopOffsets>();
  c.initial_mode = parse_gain_profile(j.at("initial_mode").get<std::string>());
  c.initial_gripper = parse_gripper(j.at("initial_gripper").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

json state_json(const SimState& s) {
  return {{"g_ee", pose_to_json(s.g_ee)}, {"Vb", s.Vb.vector()},
          {"gripper", gripper_name(s.gripper)}, {"t", s.t},
          {"tick", s.tick}, {"contact", s.contact_active}};
}

SimState state_from_json(const json& j) {
  SimState s;
  s.g_ee = pose_from_json(j.at("g_ee"));
  s.Vb = Twist::body(j.at("Vb").get<Vec6>());
  s.gripper = parse_gripper(j.at("gripper").get<std::string>());
  s.t = j.at("t").get<double>();
  s.tick = j.at("tick").get<std::int64_t>();
  s.contact_active = j.at("contact").get<bool>();
  return s;
}

// Sample n of a recording lands on the tick nearest n/30 s after the start.
std::int64_t sample_offset(std::int64_t n) {
  return std::llround(static_cast<double>(n) * kControlRateHz / kRecordRateHz);
}

}  // namespace

// Commands and pose update ------------------------------------------------------------

const char* to_string(SpeedLevel s) {
  switch (s) {
    case SpeedLevel::Low: return "low";
    case SpeedLevel::Med: return "med";
    case SpeedLevel::High: return "high";
  }
  return "?";
}

SpeedLevel parse_speed_level(std::string_view s) {
  if (s == "low") return SpeedLevel::Low;
  if (s == "med" || s == "medium") return SpeedLevel::Med;
  if (s == "high") return SpeedLevel::High;
  throw InvalidArgument("unknown speed level '" + std::string(s) + "'");
}

double speed_scale(SpeedLevel s) {
  switch (s) {
    case SpeedLevel::Low: return 0.25;
    case SpeedLevel::Med: return 1.0;
    case SpeedLevel::High: return 2.5;
  }
  return 1.0;
}

const char* to_string(CommandFrame f) { return f == CommandFrame::Base ? "base" : "ee"; }

CommandFrame parse_command_frame(std::string_view s) {
  if (s == "base") return CommandFrame::Base;
  if (s == "ee") return CommandFrame::Ee;
  throw InvalidArgument("unknown command frame '" + std::string(s) + "'");
}

void TeleopCommand::validate() const {
  for (int i = 0; i < 6; ++i) {
    if (!std::isfinite(V_sm(i)) || std::abs(V_sm(i)) > 1.0) {
      throw InvalidArgument("teleop command: deflection components must lie in [-1, 1]");
    }
  }
}

void TeleopOffsets::validate() const {
  if (!(pos_offset > 0.0) || !(rot_offset > 0.0) || !std::isfinite(pos_offset) ||
      !std::isfinite(rot_offset)) {
    throw InvalidArgument("teleop offsets must be positive");
  }
}

Pose teleop_update(const Pose& g_d, const TeleopCommand& cmd, const TeleopOffsets& offsets) {
  cmd.validate();
  offsets.validate();
  const double s = speed_scale(cmd.speed);
  Vec3 dp = cmd.V_sm.head<3>() * (offsets.pos_offset * s);
  if (cmd.frame == CommandFrame::Ee) dp = g_d.R * dp;
  const Vec3 dw = cmd.V_sm.tail<3>() * (offsets.rot_offset * s);
  return {g_d.p + dp, g_d.R * exp_so3(dw)};
}

Gains set_gain_mode(std::string_view mode_key) {
  return profile_gains(parse_gain_profile(mode_key));
}

void TeleopConfig::validate() const {
  geom.validate();
  contact.validate();
  offsets.validate();
  FtFilterState{Vec6::Zero(), Vec6::Zero(), ft_cutoff_hz, kControlRateHz}.validate();
  if (ft_noise.force_sigma < 0.0 || ft_noise.torque_sigma < 0.0) {
    throw InvalidArgument("teleop config: negative sensor noise");
  }
}

// Records ----------------------------------------------------------------------------------

void DemoRecord::validate() const {
  if (schema != kDemoSchemaVersion) {
    throw SchemaError("demo: unsupported schema version " + std::to_string(schema));
  }
  const double tol = 1.0 / kControlRateHz + 1e-9;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].tick <= initial.tick || samples[i].tick > end_tick) {
      throw SchemaError("demo: sample tick outside the recording");
    }
    if (i == 0) continue;
    if (samples[i].tick <= samples[i - 1].tick || !(samples[i].t > samples[i - 1].t)) {
      throw SchemaError("demo: sample timestamps must increase");
    }
    if (std::abs(samples[i].t - samples[i - 1].t - 1.0 / kRecordRateHz) > tol) {
      throw SchemaError("demo: sample spacing is not 1/30 s");
    }
  }
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].tick < initial.tick || events[i].tick >= end_tick) {
      throw SchemaError("demo: event tick outside the recording");
    }
    if (i > 0 && events[i].tick < events[i - 1].tick) {
      throw SchemaError("demo: event ticks must not decrease");
    }
  }
}

void write_demo_jsonl(std::ostream& os, const DemoRecord& d) {
  d.validate();
  json h{{"record", "header"},
         {"schema", d.schema},
         {"name", d.name},
         {"config", config_json(d.config)},
         {"initial", state_json(d.initial)},
         {"initial_g_d", pose_to_json(d.initial_g_d)},
         {"initial_mode", to_string(d.initial_mode)},
         {"initial_speed", to_string(d.initial_speed)},
         {"initial_frame", to_string(d.initial_frame)},
         {"initial_filter", d.initial_filter},
         {"initial_bias", d.initial_bias},
         {"initial_held", d.initial_held ? to_json(*d.initial_held) : json(nullptr)},
         {"initial_held_tick", d.initial_held_tick},
         {"sensor_seed", d.sensor_seed},
         {"end_tick", d.end_tick}};
  os << h.dump() << '\n';
  // Interleave by tick so the file reads as a timeline.
  std::size_t e = 0;
  for (const auto& s : d.samples) {
    for (; e < d.events.size() && d.events[e].tick < s.tick; ++e) {
      const auto& ev = d.events[e];
      json j{{"record", "event"}, {"tick", ev.tick}};
      if (ev.kind == DemoEvent::Kind::Rebias) {
        j["kind"] = "rebias";
      } else {
        j["kind"] = "cmd";
        j["cmd"] = to_json(ev.command);
      }
      os << j.dump() << '\n';
    }
    json j{{"record", "sample"},   {"tick", s.tick},
           {"t", s.t},             {"g_ee", pose_to_json(s.g_ee)},
           {"g_d", pose_to_json(s.g_d)}, {"mode", to_string(s.mode)},
           {"Fe", s.Fe},           {"gripper", gripper_name(s.gripper)}};
    os << j.dump() << '\n';
  }
  for (; e < d.events.size(); ++e) {
    const auto& ev = d.events[e];
    json j{{"record", "event"}, {"tick", ev.tick}};
    if (ev.kind == DemoEvent::Kind::Rebias) {
      j["kind"] = "rebias";
    } else {
      j["kind"] = "cmd";
      j["cmd"] = to_json(ev.command);
    }
    os << j.dump() << '\n';
  }
}

DemoRecord read_demo_jsonl(std::istream& is) {
  DemoRecord d;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const std::string kind = j.at("record").get<std::string>();
      if (kind == "header") {
        if (have_header) throw SchemaError("duplicate header");
        have_header = true;
        d.schema = j.at("schema").get<int>();
        if (d.schema != kDemoSchemaVersion) {
          throw SchemaError("unsupported schema version " + std::to_string(d.schema));
        }
        d.name = j.at("name").get<std::string>();
        d.config = config_from_json(j.at("config"));
        d.initial = state_from_json(j.at("initial"));
        d.initial_g_d = pose_from_json(j.at("initial_g_d"));
        d.initial_mode = parse_gain_profile(j.at("initial_mode").get<std::string>());
        d.initial_speed = parse_speed_level(j.at("initial_speed").get<std::string>());
        d.initial_frame = parse_command_frame(j.at("initial_frame").get<std::string>());
        d.initial_filter = j.at("initial_filter").get<Vec6>();
        d.initial_bias = j.at("initial_bias").get<Vec6>();
        if (!j.at("initial_held").is_null()) d.initial_held = command_from_json(j["initial_held"]);
        d.initial_held_tick = j.at("initial_held_tick").get<std::int64_t>();
        d.sensor_seed = j.at("sensor_seed").get<std::uint64_t>();
        d.end_tick = j.at("end_tick").get<std::int64_t>();
        continue;
      }
      if (!have_header) throw SchemaError("record before the header");
      if (kind == "sample") {
        DemoSample s;
        s.tick = j.at("tick").get<std::int64_t>();
        s.t = j.at("t").get<double>();
        s.g_ee = pose_from_json(j.at("g_ee"));
        s.g_d = pose_from_json(j.at("g_d"));
        s.mode = parse_gain_profile(j.at("mode").get<std::string>());
        s.Fe = j.at("Fe").get<Vec6>();
        s.gripper = parse_gripper(j.at("gripper").get<std::string>());
        d.samples.push_back(s);
      } else if (kind == "event") {
        DemoEvent ev;
        ev.tick = j.at("tick").get<std::int64_t>();
        const std::string k = j.at("kind").get<std::string>();
        if (k == "rebias") {
          ev.kind = DemoEvent::Kind::Rebias;
        } else if (k == "cmd") {
          ev.command = command_from_json(j.at("cmd"));
        } else {
          throw SchemaError("unknown event kind '" + k + "'");
        }
        d.events.push_back(ev);
      } else {
        throw SchemaError("unknown record '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw SchemaError("demo line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw SchemaError("demo line " + std::to_string(lineno) + ": " + e.what());
    } catch (const SchemaError&) {
      throw;
    } catch (const Error& e) {
      throw SchemaError("demo line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw SchemaError("demo: missing header");
  d.validate();
  return d;
}

// Session ------------------------------------------------------------------------------------

TeleopSession::TeleopSession(TeleopConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      state_(initial_state(cfg_.scene, cfg_.initial_gripper)),
      g_d_(state_.g_ee),
      mode_(cfg_.initial_mode),
      gains_(profile_gains(mode_)),
      sensor_(cfg_.ft_noise, cfg_.seed),
      conditioner_(FtFilterState{Vec6::Zero(), Vec6::Zero(), cfg_.ft_cutoff_hz, kControlRateHz}) {}

void TeleopSession::tick(const std::optional<TeleopCommand>& cmd) {
  if (cmd) {
    cmd->validate();
    if (recording_) {
      recording_->events.push_back({state_.tick, DemoEvent::Kind::Command, *cmd});
    }
    if (cmd->mode_key) {
      mode_ = *cmd->mode_key;
      gains_ = profile_gains(mode_);
    }
    speed_ = cmd->speed;
    frame_ = cmd->frame;
    if (cmd->gripper_toggle) {
      if (state_.gripper == GripperState::Holding) {
        cfg_.scene.g_peg_initial = held_peg_pose(state_.g_ee, cfg_.geom);
        state_.gripper = GripperState::Open;
      } else if (grasp_succeeds(state_.g_ee, cfg_.scene, cfg_.geom)) {
        state_.gripper = GripperState::Holding;
      }
    }
    held_ = *cmd;
    held_->mode_key.reset();
    held_->gripper_toggle = false;
    held_tick_ = state_.tick;
  }

  // The arm holds still while the sensor bias is being estimated.
  const bool quiet = conditioner_.rebiasing();
  if (!quiet && held_ && state_.tick - held_tick_ < kCommandHoldTicks) {
    g_d_ = teleop_update(g_d_, *held_, cfg_.offsets);
  }
  const Command c{g_d_, gains_, Fe_filt_, quiet ? Tracking::Stiff : Tracking::Compliant};
  try {
    const StepResult r = step(state_, cfg_.scene, cfg_.geom, cfg_.contact, c, kControlPeriod);
    state_ = r.state;
    Fe_filt_ = conditioner_.filter(sensor_.sense(r.Fe_raw));
  } catch (const SimulationBlowup&) {
    // Recover in place: stop the arm where it is and drop the pending motion.
    ++blowups_;
    state_.Vb = Twist::zero(Frame::Body);
    state_.t += kControlPeriod;
    ++state_.tick;
    g_d_ = state_.g_ee;
    held_.reset();
    Fe_filt_ = conditioner_.filter(sensor_.sense(Wrench::zero(Frame::Body)));
  }
  if (recording_) record_sample();
}

void TeleopSession::request_rebias(std::size_t samples) {
  if (recording_) {
    if (samples != kRebiasMinSamples) {
      throw InvalidArgument("rebias: only the default window can be recorded");
    }
    recording_->events.push_back({state_.tick, DemoEvent::Kind::Rebias, {}});
  }
  conditioner_.request_rebias(samples);
}

void TeleopSession::reset(const Scene& scene) {
  if (recording_) throw InvalidArgument("reset: stop the recording first");
  const std::int64_t tick = state_.tick;
  const double t = state_.t;
  cfg_.scene = scene;
  state_ = initial_state(scene, cfg_.initial_gripper);
  state_.tick = tick;
  state_.t = t;
  g_d_ = state_.g_ee;
  held_.reset();
  conditioner_.reset_output();
  Fe_filt_ = Wrench::zero(Frame::Body);
}

void TeleopSession::start_recording(std::string name) {
  if (recording_) throw InvalidArgument("record_start: already recording");
  if (conditioner_.rebiasing()) throw InvalidArgument("record_start: rebias in progress");
  // A fresh noise stream makes the recording self-contained.
  const std::uint64_t seed = mix_seed(cfg_.seed, 0x5EC0 + recordings_++);
  sensor_ = FtSensor(cfg_.ft_noise, seed);
  DemoRecord d;
  d.name = std::move(name);
  d.config = cfg_;
  d.initial = state_;
  d.initial_g_d = g_d_;
  d.initial_mode = mode_;
  d.initial_speed = speed_;
  d.initial_frame = frame_;
  d.initial_filter = conditioner_.state().y_prev;
  d.initial_bias = conditioner_.state().bias;
  d.initial_held = held_;
  d.initial_held_tick = held_tick_;
  d.sensor_seed = seed;
  d.end_tick = state_.tick;
  recording_ = std::move(d);
  record_start_tick_ = state_.tick;
  samples_taken_ = 0;
}

std::optional<DemoRecord> TeleopSession::stop_recording() {
  if (!recording_) return std::nullopt;
  DemoRecord d = std::move(*recording_);
  recording_.reset();
  d.end_tick = state_.tick;
  return d;
}

void TeleopSession::record_sample() {
  const std::int64_t due = record_start_tick_ + sample_offset(samples_taken_ + 1);
  if (state_.tick < due) return;
  ++samples_taken_;
  recording_->samples.push_back(
      {state_.tick, state_.t, state_.g_ee, g_d_, mode_, Fe_filt_.vector(), state_.gripper});
}

StateFrame TeleopSession::snapshot() const {
  StateFrame s;
  s.tick = state_.tick;
  s.t = state_.t;
  s.g_ee = state_.g_ee;
  s.g_d = g_d_;
  s.Fe = Fe_filt_.vector();
  s.mode = mode_;
  s.gripper = state_.gripper;
  s.speed = speed_;
  s.frame = frame_;
  s.recording = recording_.has_value();
  s.rebiasing = conditioner_.rebiasing();
  s.contact = state_.contact_active;
  if (state_.gripper == GripperState::Holding) {
    SuccessTolerance tol;
    tol.timeout = std::numeric_limits<double>::infinity();
    s.status = success_check(state_, cfg_.scene, cfg_.geom, tol);
    s.peg = held_peg_pose(state_.g_ee, cfg_.geom);
  } else {
    s.peg = cfg_.scene.g_peg_initial;
  }
  s.hole = cfg_.scene.hole_world();
  s.platform = cfg_.scene.g_platform;
  return s;
}

ReplayResult record_replay(const DemoRecord& demo, double tolerance,
                           const std::optional<TeleopConfig>& override_cfg) {
  demo.validate();
  ReplayResult out;
  const TeleopConfig& cfg = override_cfg ? *override_cfg : demo.config;
  TeleopSession s(cfg);
  s.state_ = demo.initial;
  s.g_d_ = demo.initial_g_d;
  s.mode_ = demo.initial_mode;
  s.gains_ = profile_gains(demo.initial_mode);
  s.speed_ = demo.initial_speed;
  s.frame_ = demo.initial_frame;
  s.conditioner_ = FtConditioner(
      FtFilterState{demo.initial_filter, demo.initial_bias, cfg.ft_cutoff_hz, kControlRateHz});
  s.Fe_filt_ = Wrench::body(demo.initial_filter);
  s.held_ = demo.initial_held;
  s.held_tick_ = demo.initial_held_tick;
  s.sensor_ = FtSensor(cfg.ft_noise, override_cfg ? mix_seed(cfg.seed, 0x5EC0) : demo.sensor_seed);

  std::size_t e = 0;
  std::size_t k = 0;
  while (s.state_.tick < demo.end_tick) {
    std::optional<TeleopCommand> cmd;
    for (; e < demo.events.size() && demo.events[e].tick == s.state_.tick; ++e) {
      const DemoEvent& ev = demo.events[e];
      if (ev.kind == DemoEvent::Kind::Rebias) {
        s.request_rebias();
      } else {
        cmd = ev.command;
      }
    }
    s.tick(cmd);
    if (k < demo.samples.size() && demo.samples[k].tick == s.state_.tick) {
      const PoseDiscrepancy d = discrepancy(s.state_.g_ee, demo.samples[k].g_ee);
      out.max_position_error = std::max(out.max_position_error, d.translation);
      out.max_rotation_error = std::max(out.max_rotation_error, d.rotation);
      if ((d.translation > tolerance || d.rotation > tolerance) && !out.first_divergence_tick) {
        out.first_divergence_tick = s.state_.tick;
        out.reproduced = false;
      }
      ++out.samples_compared;
      ++k;
    }
  }
  if (k != demo.samples.size()) {
    out.reproduced = false;
    if (!out.first_divergence_tick) out.first_divergence_tick = s.state_.tick;
  }
  out.final_status = s.snapshot().status;
  return out;
}

// Wire helpers ------------------------------------------------------------------------------

json pose_to_json(const Pose& g) { return pose_to_json_rowmajor(g); }

Pose pose_from_json(const json& j) { return pose_from_json_rowmajor(j); }

json to_json(const TeleopCommand& c) {
  json j{{"type", "cmd"},
         {"v_sm", c.V_sm},
         {"speed", to_string(c.speed)},
         {"frame", to_string(c.frame)},
         {"gripper_toggle", c.gripper_toggle}};
  j["mode"] = c.mode_key ? json(to_string(*c.mode_key)) : json(nullptr);
  return j;
}

TeleopCommand command_from_json(const json& j) {
  try {
    if (!j.is_object()) throw ProtocolError("cmd: expected an object");
    TeleopCommand c;
    c.V_sm = j.at("v_sm").get<Vec6>();
    if (j.contains("mode") && !j["mode"].is_null()) {
      c.mode_key = parse_gain_profile(j["mode"].get<std::string>());
    }
    if (j.contains("speed")) c.speed = parse_speed_level(j["speed"].get<std::string>());
    if (j.contains("frame")) c.frame = parse_command_frame(j["frame"].get<std::string>());
    if (j.contains("gripper_toggle")) c.gripper_toggle = j["gripper_toggle"].get<bool>();
    c.validate();
    return c;
  } catch (const ProtocolError&) {
    throw;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("cmd: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ProtocolError(std::string("cmd: ") + e.what());
  } catch (const Error& e) {
    throw ProtocolError(std::string("cmd: ") + e.what());
  }
}

json to_json(const StateFrame& s) {
  return {{"type", "state"},
          {"tick", s.tick},
          {"t", s.t},
          {"g_ee", pose_to_json(s.g_ee)},
          {"g_d", pose_to_json(s.g_d)},
          {"Fe", s.Fe},
          {"mode", to_string(s.mode)},
          {"gripper", gripper_name(s.gripper)},
          {"speed", to_string(s.speed)},
          {"frame", to_string(s.frame)},
          {"recording", s.recording},
          {"rebiasing", s.rebiasing},
          {"contact", s.contact},
          {"status", to_string(s.status)},
          {"hole", pose_to_json(s.hole)},
          {"platform", pose_to_json(s.platform)},
          {"peg", pose_to_json(s.peg)}};
}

}  // namespace equicontact
