#pragma once
// INI configuration files. Sections map onto the configuration structs:
//
//   [benchmark]  policy, compliance, scenario_set, trials, noise_preset, seed,
//                ensemble_decay, force_limit
//   [policy] [pick] [geometry] [contact] [features] [ft] [success]
//   [teleop]     pos_offset, rot_offset, initial_mode, initial_gripper, seed
//   [scene]      scenario_set, seed (teleop only; absent: canonical flat scene)
//   [server]     bind, port, record_dir, randomize_set (read by teleopd)
//
// Values are SI (m, N, rad, s). A key with a `_deg` suffix is converted to
// radians. Vectors are whitespace- or comma-separated. Unknown sections and
// keys are rejected.

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "equicontact/harness.hpp"
#include "equicontact/teleop.hpp"

namespace equicontact {

/// Section -> key -> typed value (bool, integer, number, number array or string).
nlohmann::json read_ini(std::istream& is);
nlohmann::json read_ini(const std::filesystem::path& path);

BenchmarkConfig benchmark_config_from_ini(const nlohmann::json& ini);
BenchmarkConfig load_benchmark_config(const std::filesystem::path& path);

TeleopConfig teleop_config_from_ini(const nlohmann::json& ini);
TeleopConfig load_teleop_config(const std::filesystem::path& path);

}  // namespace equicontact
