#include <algorithm>
#include <sstream>
#include <string>

#include "equicontact/errors.hpp"
#include "equicontact/teleop.hpp"
#include "test_util.hpp"

using namespace equicontact;
using equicontact::test::pose_error;

namespace {

TeleopCommand stick(const Vec6& v, SpeedLevel speed = SpeedLevel::Med, CommandFrame frame = CommandFrame::Base) {
  TeleopCommand c;
  c.V_sm = v;
  c.speed = speed;
  c.frame = frame;
  return c;
}

Vec6 axis(int i, double s = 1.0) {
  Vec6 v = Vec6::Zero();
  v(i) = s;
  return v;
}

TeleopConfig noisy_config() {
  TeleopConfig c;
  c.ft_noise.force_sigma = 0.1;
  c.ft_noise.torque_sigma = 0.005;
  c.ft_noise.bias << 1, 0, 0, 0, 0, 0;
  return c;
}

// An operator who steers the desired pose toward the hole at ~67 Hz, then presses down.
DemoRecord record_insertion(TeleopSession& s) {
  const TeleopConfig& c = s.config();
  const Pose target = place_target(c.scene, c.geom);
  for (int i = 0; i < 50; ++i) s.tick();
  s.request_rebias();
  for (std::size_t i = 0; i < kRebiasMinSamples + 10; ++i) s.tick();
  s.start_recording("insertion");
  for (int i = 0; i < 4000; ++i) {
    std::optional<TeleopCommand> cmd;
    if (i % 3 == 0) {
      const Pose goal = i > 1500 ? target * Pose::translation(0, 0, 0.03) : target;
      Vec3 v = (goal.p - s.desired().p) / c.offsets.pos_offset;
      Vec3 w = log_so3(s.desired().R.inverse() * goal.R) / c.offsets.rot_offset;
      for (int a = 0; a < 3; ++a) {
        v(a) = std::clamp(v(a), -1.0, 1.0);
        w(a) = std::clamp(w(a), -1.0, 1.0);
      }
      TeleopCommand t;
      t.V_sm << v, w;
      if (i == 0) t.mode_key = GainProfile::Compliant;
      cmd = t;
    }
    s.tick(cmd);
  }
  return *s.stop_recording();
}

}  // namespace

TEST(TeleopUpdate, Examples) {
  Rng rng(1);
  const Pose g = rng.random_pose(0.5);
  EXPECT_EQ(pose_error(teleop_update(g, stick(Vec6::Zero())), g), 0.0);

  const TeleopOffsets off{0.001, 0.01};
  const Pose moved = teleop_update(g, stick(axis(0)), off);
  EXPECT_LT((moved.p - (g.p + Vec3(0.001, 0, 0))).norm(), 1e-15);
  EXPECT_EQ(moved.R.matrix(), g.R.matrix());

  const Pose turned = teleop_update(g, stick(axis(5)), off);
  EXPECT_LT((turned.R.matrix() - g.R.matrix() * test::rot_z(0.01)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(turned.p, g.p);
}

TEST(TeleopUpdate, SpeedScalesAndEeFrame) {
  EXPECT_EQ(speed_scale(SpeedLevel::Low), 0.25);
  EXPECT_EQ(speed_scale(SpeedLevel::Med), 1.0);
  EXPECT_EQ(speed_scale(SpeedLevel::High), 2.5);
  const Pose g{Vec3(0.1, 0.2, 0.3), Rotation::about_z(std::numbers::pi / 2)};
  const TeleopOffsets off{0.001, 0.01};
  const Pose fast = teleop_update(g, stick(axis(0), SpeedLevel::High), off);
  EXPECT_LT((fast.p - g.p - Vec3(0.0025, 0, 0)).norm(), 1e-15);
  const Pose ee = teleop_update(g, stick(axis(0), SpeedLevel::Med, CommandFrame::Ee), off);
  EXPECT_LT((ee.p - g.p - Vec3(0, 0.001, 0)).norm(), 1e-15);  // body x is world y here
  // Rotation is always about the end-effector axes, whichever translation frame is active.
  Vec6 both;
  both << 0.3, -0.2, 0.5, 0.4, -0.7, 0.2;
  const Pose b = teleop_update(g, stick(both, SpeedLevel::Med, CommandFrame::Base), off);
  const Pose e = teleop_update(g, stick(both, SpeedLevel::Med, CommandFrame::Ee), off);
  EXPECT_EQ(b.R.matrix(), e.R.matrix());
}

TEST(TeleopUpdate, Validation) {
  EXPECT_THROW(stick(axis(2, 1.5)).validate(), InvalidArgument);
  EXPECT_THROW(stick(axis(2, std::nan(""))).validate(), InvalidArgument);
  EXPECT_NO_THROW(stick(axis(2, -1.0)).validate());
  EXPECT_THROW((TeleopOffsets{0.0, 0.01}.validate()), InvalidArgument);
  EXPECT_EQ(parse_speed_level("medium"), SpeedLevel::Med);
  EXPECT_THROW(parse_speed_level("ludicrous"), InvalidArgument);
  EXPECT_THROW(parse_command_frame("tool"), InvalidArgument);
}

TEST(GainMode, Profiles) {
  EXPECT_EQ(set_gain_mode("insertion").kp(), Vec3(300, 300, 1500));
  EXPECT_EQ(set_gain_mode("insertion").kr(), Vec3::Constant(300));
  EXPECT_EQ(set_gain_mode("compliant").kp(), Vec3::Constant(300));
  EXPECT_EQ(set_gain_mode("compliant").kr(), Vec3::Constant(300));
  EXPECT_EQ(set_gain_mode("free").kp(), Vec3::Constant(1000));
  EXPECT_EQ(set_gain_mode("free").kr(), Vec3::Constant(1000));
  EXPECT_EQ(set_gain_mode("contact").kp(), Vec3(1500, 1500, 300));
  EXPECT_THROW(set_gain_mode("sport"), InvalidArgument);
}

TEST(Session, IdlesAtRest) {
  TeleopSession s{TeleopConfig{}};
  const Pose home = s.state().g_ee;
  for (int i = 0; i < 400; ++i) s.tick();
  EXPECT_LT(pose_error(s.state().g_ee, home), 1e-12);
  EXPECT_EQ(s.state().tick, 400);
  EXPECT_EQ(s.snapshot().status, TrialStatus::InProgress);
  EXPECT_FALSE(s.snapshot().contact);
}

TEST(Session, HeldCommandStopsAfterHoldWindow) {
  TeleopSession s{TeleopConfig{}};
  const Pose start = s.desired();
  s.tick(stick(axis(0)));
  for (int i = 0; i < 100; ++i) s.tick();
  const double pos = s.config().offsets.pos_offset;
  EXPECT_NEAR(s.desired().p.x() - start.p.x(), pos * kCommandHoldTicks, 1e-12);
  // A new zero command stops the motion immediately.
  s.tick(stick(axis(1)));
  s.tick(stick(Vec6::Zero()));
  for (int i = 0; i < 10; ++i) s.tick();
  EXPECT_NEAR(s.desired().p.y() - start.p.y(), pos, 1e-12);
}

TEST(Session, ModeKeysLatchAndGripperToggles) {
  TeleopSession s{TeleopConfig{}};
  EXPECT_EQ(s.mode(), GainProfile::Free);
  TeleopCommand c = stick(Vec6::Zero());
  c.mode_key = GainProfile::Insertion;
  s.tick(c);
  s.tick(stick(Vec6::Zero()));
  EXPECT_EQ(s.mode(), GainProfile::Insertion);
  EXPECT_EQ(s.snapshot().gripper, GripperState::Holding);
  TeleopCommand g = stick(Vec6::Zero());
  g.gripper_toggle = true;
  s.tick(g);
  EXPECT_EQ(s.snapshot().gripper, GripperState::Open);
  // The released peg is still between the fingers: closing again regrasps it.
  s.tick(g);
  EXPECT_EQ(s.snapshot().gripper, GripperState::Holding);
  s.tick(g);
  // Lift 20 mm away; the gripper then closes on nothing.
  s.tick(stick(axis(2, 1.0)));
  for (int i = 0; i < 200; ++i) s.tick();
  s.tick(g);
  EXPECT_EQ(s.snapshot().gripper, GripperState::Open);
}

TEST(Session, RecordingGuards) {
  TeleopSession s{TeleopConfig{}};
  EXPECT_FALSE(s.stop_recording().has_value());
  s.start_recording("a");
  EXPECT_THROW(s.start_recording("b"), InvalidArgument);
  EXPECT_THROW(s.reset(canonical_scene()), InvalidArgument);
  EXPECT_THROW(s.request_rebias(500), InvalidArgument);
  s.stop_recording();
  s.request_rebias();
  EXPECT_THROW(s.start_recording("c"), InvalidArgument);
}

TEST(Replay, EmptyDemoIsNoOp) {
  TeleopSession s{TeleopConfig{}};
  s.start_recording("empty");
  const DemoRecord d = *s.stop_recording();
  EXPECT_TRUE(d.samples.empty());
  const ReplayResult r = record_replay(d);
  EXPECT_TRUE(r.reproduced);
  EXPECT_EQ(r.samples_compared, 0u);
  EXPECT_FALSE(r.first_divergence_tick.has_value());
}

TEST(Replay, RecordedInsertionReplaysToSuccess) {
  TeleopSession s{noisy_config()};
  const DemoRecord demo = record_insertion(s);
  EXPECT_EQ(s.snapshot().status, TrialStatus::Success);
  EXPECT_EQ(s.blowups(), 0u);
  EXPECT_NO_THROW(demo.validate());
  EXPECT_EQ(demo.samples.size(), 600u);  // 4000 ticks at 30 Hz

  for (std::size_t i = 1; i < demo.samples.size(); ++i) {
    const double dt = demo.samples[i].t - demo.samples[i - 1].t;
    EXPECT_LE(std::abs(dt - 1.0 / 30.0), kControlPeriod + 1e-12);
  }

  std::stringstream ss;
  write_demo_jsonl(ss, demo);
  const DemoRecord back = read_demo_jsonl(ss);
  const ReplayResult r = record_replay(back);
  EXPECT_TRUE(r.reproduced);
  EXPECT_EQ(r.samples_compared, demo.samples.size());
  EXPECT_LE(r.max_position_error, 1e-6);
  EXPECT_EQ(r.final_status, TrialStatus::Success);

  TeleopConfig other = back.config;
  other.seed = 99;
  other.ft_noise.force_sigma = 0.5;
  const ReplayResult d = record_replay(back, 1e-6, other);
  EXPECT_FALSE(d.reproduced);
  ASSERT_TRUE(d.first_divergence_tick.has_value());
  EXPECT_GT(d.max_position_error, 1e-6);
}

TEST(Replay, SchemaErrors) {
  TeleopSession s{TeleopConfig{}};
  s.start_recording("short");
  for (int i = 0; i < 40; ++i) s.tick(i == 0 ? std::optional(stick(axis(2))) : std::nullopt);
  const DemoRecord d = *s.stop_recording();
  ASSERT_EQ(d.samples.size(), 6u);
  std::stringstream ok;
  write_demo_jsonl(ok, d);
  const std::string text = ok.str();

  std::stringstream garbage("{not json\n");
  EXPECT_THROW(read_demo_jsonl(garbage), SchemaError);
  std::stringstream empty("");
  EXPECT_THROW(read_demo_jsonl(empty), SchemaError);

  auto header = nlohmann::json::parse(text.substr(0, text.find('\n')));
  header["schema"] = 99;
  std::stringstream wrong(header.dump() + text.substr(text.find('\n')));
  EXPECT_THROW(read_demo_jsonl(wrong), SchemaError);

  DemoRecord gap = d;
  gap.samples.erase(gap.samples.begin() + 2);
  EXPECT_THROW(gap.validate(), SchemaError);
  EXPECT_THROW(record_replay(gap), SchemaError);
  DemoRecord back = d;
  std::swap(back.events, back.events);
  back.samples[3].tick = back.samples[2].tick;
  EXPECT_THROW(back.validate(), SchemaError);
}

TEST(Wire, CommandJson) {
  TeleopCommand c = stick(axis(3, -0.5), SpeedLevel::High, CommandFrame::Ee);
  c.mode_key = GainProfile::Contact;
  c.gripper_toggle = true;
  const auto j = to_json(c);
  EXPECT_EQ(j["type"], "cmd");
  EXPECT_EQ(j["mode"], "contact");
  EXPECT_EQ(j["speed"], "high");
  EXPECT_EQ(j["frame"], "ee");
  const TeleopCommand back = command_from_json(j);
  EXPECT_EQ(back.V_sm, c.V_sm);
  EXPECT_EQ(back.mode_key, c.mode_key);
  EXPECT_EQ(back.speed, c.speed);
  EXPECT_EQ(back.frame, c.frame);
  EXPECT_TRUE(back.gripper_toggle);

  const auto minimal = command_from_json(nlohmann::json{{"type", "cmd"}, {"v_sm", {0, 0, 0, 0, 0, 0}}});
  EXPECT_FALSE(minimal.mode_key.has_value());
  EXPECT_EQ(minimal.speed, SpeedLevel::Med);

  EXPECT_THROW(command_from_json(nlohmann::json{{"type", "cmd"}}), ProtocolError);
  EXPECT_THROW(command_from_json(nlohmann::json{{"v_sm", {0, 0, 2, 0, 0, 0}}}), ProtocolError);
  EXPECT_THROW(command_from_json(nlohmann::json{{"v_sm", {0, 0, 0}}}), ProtocolError);
  EXPECT_THROW(command_from_json(nlohmann::json{{"v_sm", {0, 0, 0, 0, 0, 0}}, {"mode", "turbo"}}), ProtocolError);
  EXPECT_THROW(command_from_json(nlohmann::json::array()), ProtocolError);
}

TEST(Wire, StateFrameFields) {
  TeleopSession s{TeleopConfig{}};
  s.tick();
  const auto j = to_json(s.snapshot());
  for (const char* key : {"type", "tick", "t", "g_ee", "g_d", "Fe", "mode", "gripper", "speed", "frame",
                          "recording", "rebiasing", "contact", "status", "hole", "platform", "peg"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["type"], "state");
  EXPECT_EQ(j["tick"], 1);
  EXPECT_EQ(j["mode"], "free");
  EXPECT_EQ(j["g_ee"]["R"].size(), 9u);
  EXPECT_LT(pose_error(pose_from_json(j["g_ee"]), s.state().g_ee), 1e-15);
}
