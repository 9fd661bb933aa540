#include "equicontact/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "equicontact/errors.hpp"
#include "json_io.hpp"

namespace equicontact {

using nlohmann::json;

namespace {

json scalar(const std::string& raw) {
  const std::string s = raw.substr(0, raw.find_last_not_of(" \t\r") + 1);
  if (s == "true" || s == "on" || s == "yes") return true;
  if (s == "false" || s == "off" || s == "no") return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  std::uint64_t u = 0;
  if (auto [p, ec] = std::from_chars(b, e, u); ec == std::errc() && p == e) return u;
  std::int64_t i = 0;
  if (auto [p, ec] = std::from_chars(b, e, i); ec == std::errc() && p == e) return i;
  double d = 0.0;
  if (auto [p, ec] = std::from_chars(b, e, d); ec == std::errc() && p == e) return d;
  // Vectors: "0 0 0.1" or "0, 0, 0.1".
  std::string t = s;
  for (char& c : t) {
    if (c == ',') c = ' ';
  }
  std::istringstream is(t);
  std::vector<double> v;
  std::string tok;
  while (is >> tok) {
    double x = 0.0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), x);
    if (ec != std::errc() || p != tok.data() + tok.size()) return s;
    v.push_back(x);
  }
  if (v.size() > 1) return v;
  return s;
}

// Folds `key_deg` into `key` (radians) and rejects keys the defaults do not have.
json merge_section(const json& defaults, const json& section, const std::string& where) {
  json out = defaults;
  for (const auto& [key, value] : section.items()) {
    std::string k = key;
    json v = value;
    if (k.size() > 4 && k.ends_with("_deg") && defaults.contains(k.substr(0, k.size() - 4))) {
      if (!v.is_number()) throw SchemaError(where + "." + key + ": expected a number");
      k = k.substr(0, k.size() - 4);
      v = v.get<double>() * std::numbers::pi / 180.0;
    }
    if (!defaults.contains(k)) throw SchemaError(where + ": unknown key '" + key + "'");
    if (defaults[k].is_number_float() && v.is_number()) v = v.get<double>();
    out[k] = v;
  }
  return out;
}

void check_sections(const json& ini, const std::set<std::string>& allowed) {
  for (const auto& [name, _] : ini.items()) {
    if (!allowed.count(name)) throw SchemaError("config: unknown section [" + name + "]");
  }
}

json section(const json& ini, const char* name) {
  return ini.contains(name) ? ini[name] : json::object();
}

}  // namespace

json read_ini(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  json out = json::object();
  for (const auto& [name, sec] : tree) {
    if (sec.empty()) throw SchemaError("config: key '" + name + "' outside a section");
    json& j = out[name];
    j = json::object();
    for (const auto& [key, value] : sec) j[key] = scalar(value.get_value<std::string>());
  }
  return out;
}

json read_ini(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("config: cannot open " + path.string());
  return read_ini(is);
}

BenchmarkConfig benchmark_config_from_ini(const json& ini) {
  check_sections(ini, {"benchmark", "policy", "pick", "geometry", "contact", "features", "ft",
                       "success", "teleop", "scene", "server"});
  const json defaults = to_json(BenchmarkConfig{});
  json top = json::object();
  for (const char* k : {"policy", "compliance", "scenario_set", "trials", "noise_preset", "seed",
                        "ensemble_decay", "force_limit"}) {
    top[k] = defaults[k];
  }
  json j = merge_section(top, section(ini, "benchmark"), "[benchmark]");
  const std::pair<const char*, const char*> nested[] = {
      {"policy", "policy_cfg"}, {"pick", "pick_cfg"},       {"geometry", "geom"},
      {"contact", "contact"},   {"features", "features"},   {"ft", "ft"},
      {"success", "success"}};
  for (const auto& [sec, field] : nested) {
    j[field] = merge_section(defaults[field], section(ini, sec), std::string("[") + sec + "]");
  }
  return benchmark_config_from_json(j);
}

BenchmarkConfig load_benchmark_config(const std::filesystem::path& path) {
  return benchmark_config_from_ini(read_ini(path));
}

TeleopConfig teleop_config_from_ini(const json& ini) {
  check_sections(ini, {"benchmark", "policy", "pick", "geometry", "contact", "features", "ft",
                       "success", "teleop", "scene", "server"});
  TeleopConfig c;
  try {
    c.geom = merge_section(json(c.geom), section(ini, "geometry"), "[geometry]").get<PegHoleGeom>();
    c.contact =
        merge_section(json(c.contact), section(ini, "contact"), "[contact]").get<ContactParams>();

    const json ft_defaults{{"force_sigma", 0.0},
                           {"torque_sigma", 0.0},
                           {"bias", Vec6::Zero()},
                           {"cutoff_hz", kDefaultFtCutoffHz}};
    // The benchmark [ft] keys describe per-trial draws and are ignored here.
    json ft_sec = json::object();
    const json ft_in = section(ini, "ft");
    for (const auto& [k, v] : ft_in.items()) {
      if (ft_defaults.contains(k)) ft_sec[k] = v;
    }
    const json ft = merge_section(ft_defaults, ft_sec, "[ft]");
    c.ft_noise.force_sigma = ft["force_sigma"].get<double>();
    c.ft_noise.torque_sigma = ft["torque_sigma"].get<double>();
    c.ft_noise.bias = ft["bias"].get<Vec6>();
    c.ft_cutoff_hz = ft["cutoff_hz"].get<double>();

    const json t = merge_section(json{{"pos_offset", c.offsets.pos_offset},
                                      {"rot_offset", c.offsets.rot_offset},
                                      {"initial_mode", "free"},
                                      {"initial_gripper", "holding"},
                                      {"seed", c.seed}},
                                 section(ini, "teleop"), "[teleop]");
    c.offsets.pos_offset = t["pos_offset"].get<double>();
    c.offsets.rot_offset = t["rot_offset"].get<double>();
    c.initial_mode = parse_gain_profile(t["initial_mode"].get<std::string>());
    const std::string g = t["initial_gripper"].get<std::string>();
    if (g != "open" && g != "holding") throw SchemaError("[teleop].initial_gripper: open|holding");
    c.initial_gripper = g == "open" ? GripperState::Open : GripperState::Holding;
    c.seed = t["seed"].get<std::uint64_t>();

    const json s = merge_section(json{{"scenario_set", "flat"}, {"seed", 1}},
                                 section(ini, "scene"), "[scene]");
    c.scene = build_scenario(
        scenario_for(s["scenario_set"].get<std::string>(), s["seed"].get<std::uint64_t>()));
  } catch (const json::exception& e) {
    throw SchemaError(std::string("teleop config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SchemaError(std::string("teleop config: ") + e.what());
  }
  c.validate();
  return c;
}

TeleopConfig load_teleop_config(const std::filesystem::path& path) {
  return teleop_config_from_ini(read_ini(path));
}

}  // namespace equicontact
