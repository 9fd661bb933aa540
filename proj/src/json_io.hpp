#pragma once
// JSON mappings shared by the result exporters and the demo recorder.

#include <string>
#include <vector>

#include <json.hpp>

#include "equicontact/errors.hpp"
#include "equicontact/liegroup.hpp"
#include "equicontact/policy.hpp"
#include "equicontact/sim.hpp"

namespace nlohmann {

template <int N>
struct adl_serializer<Eigen::Matrix<double, N, 1>> {
  static void to_json(json& j, const Eigen::Matrix<double, N, 1>& v) {
    j = json::array();
    for (int i = 0; i < N; ++i) j.push_back(v(i));
  }
  static void from_json(const json& j, Eigen::Matrix<double, N, 1>& v) {
    if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) {
      throw std::invalid_argument("expected an array of " + std::to_string(N) + " numbers");
    }
    for (int i = 0; i < N; ++i) v(i) = j.at(static_cast<std::size_t>(i)).get<double>();
  }
};

}  // namespace nlohmann

namespace equicontact {

NLOHMANN_JSON_SERIALIZE_ENUM(GainSchedule, {{GainSchedule::Adaptive, "adaptive"},
                                            {GainSchedule::FixedHigh, "fixed-high"}})
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    InsertionPolicyConfig, chunk_size, control_period, tip_offset, contact_force, release_force,
    hover_height, approach_radius, spiral_pitch, spiral_max_radius, spiral_speed, approach_speed,
    align_speed, rotation_speed, lead_time, descend_lead, search_press, seated_press,
    align_tolerance, realign_tolerance, angle_tolerance, reangle_tolerance, seated_depth,
    found_depth, schedule)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PickPolicyConfig, chunk_size, control_period,
                                                hover_height, approach_speed, descend_speed,
                                                rotation_speed, lead_time, lateral_tolerance,
                                                grasp_tolerance, angle_tolerance)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PegHoleGeom, peg_diameter, hole_diameter,
                                                hole_depth, chamfer, peg_length,
                                                platform_half_extent, platform_thickness,
                                                tip_offset, tcp_offset)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ContactParams, k_n, d_n, mu, k_t)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(FeatureConfig, fov_lateral, fov_height,
                                                bias_position_sigma, bias_axis_sigma,
                                                bias_position_min, corruption_offset, brittle)

inline nlohmann::json pose_to_json_rowmajor(const Pose& g) {
  std::vector<double> R(9);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) R[static_cast<std::size_t>(3 * r + c)] = g.R(r, c);
  }
  return {{"p", {g.p.x(), g.p.y(), g.p.z()}}, {"R", R}};
}

inline Pose pose_from_json_rowmajor(const nlohmann::json& j) {
  const auto p = j.at("p").get<std::vector<double>>();
  const auto R = j.at("R").get<std::vector<double>>();
  if (p.size() != 3 || R.size() != 9) throw SchemaError("pose needs p[3] and R[9]");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = R[static_cast<std::size_t>(3 * r + c)];
  }
  return {Vec3(p[0], p[1], p[2]), Rotation::from_matrix(m)};
}

}  // namespace equicontact
