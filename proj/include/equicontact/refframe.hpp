#pragma once
// Reference-frame estimation stand-in. Candidates are the ground-truth target
// perturbed in the target's own tip-centered frame, so the estimator is
// left-equivariant by construction. Refinement averages candidate tips.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "equicontact/liegroup.hpp"
#include "equicontact/sim.hpp"

namespace equicontact {

enum class CandidateKind { Pick, Place };
const char* to_string(CandidateKind k);
CandidateKind parse_candidate_kind(std::string_view s);

inline constexpr std::size_t kPickCandidates = 20;
inline constexpr std::size_t kPlaceCandidates = 10;
std::size_t candidate_count(CandidateKind k);

struct CandidatePoseSet {
  CandidateKind kind = CandidateKind::Place;
  std::vector<Pose> poses;       // end-effector target candidates
  std::vector<double> energies;  // lower claims better; unreliable by design

  /// Throws SchemaError on size mismatch or a wrong candidate count.
  void validate() const;
};

/// Per-axis translational and rotational noise of the candidate generator.
struct EstimatorNoise {
  enum class Family { Gaussian, Uniform };
  std::string name = "none";
  Family family = Family::Gaussian;
  Vec3 position = Vec3::Zero();  // m: std (Gaussian) or half-width (Uniform)
  Vec3 rotation = Vec3::Zero();  // rad, xyz Euler components, same meaning
  bool uniform_z_rotation = false;  // z rotation uniform on [-pi, pi] (symmetric objects)

  bool is_zero() const;
  void validate() const;

  static EstimatorNoise none();
  /// Uniform, +-5 mm and +-8 degrees per axis.
  static EstimatorNoise moderate();
  /// Gaussian with the published per-axis RMSE of the pick / place estimators.
  static EstimatorNoise pick_table();
  static EstimatorNoise place_table();
  /// "none", "moderate", "pick_table", "place_table"; throws InvalidArgument otherwise.
  static EstimatorNoise preset(std::string_view name);
};

struct ToolOffset {
  Vec3 p_et;  // end-effector -> tip, body frame
  static ToolOffset pick() { return {Vec3(0.0, 0.0, 0.07)}; }
  static ToolOffset place() { return {Vec3(0.0, 0.0, 0.10)}; }
};

/// Ground-truth target for the kind (grasp_target / place_target).
Pose ground_truth_target(const Scene& scene, const PegHoleGeom& geom, CandidateKind kind);

/// candidates_i = g_obj T(p_et) n_i T(-p_et) with n_i drawn from `noise`.
CandidatePoseSet mock_candidates(const Scene& scene, const PegHoleGeom& geom, CandidateKind kind,
                                 const EstimatorNoise& noise, std::uint64_t seed);

/// p = mean_i(p_i + R_i p_et) - R_peg p_et, R = R_peg.
Pose refine_pick(const CandidatePoseSet& cands, const Rotation& R_peg, const ToolOffset& tool);
/// R = chordal mean of R_i; p = mean_i(p_i + R_i p_et) - R p_et.
Pose refine_place(const CandidatePoseSet& cands, const ToolOffset& tool);
/// The candidate with the lowest energy (the naive selection rule).
Pose lowest_energy_candidate(const CandidatePoseSet& cands);

/// Tip of a pose under a tool offset.
inline Vec3 tip_of(const Pose& g, const ToolOffset& tool) { return g * tool.p_et; }

/// One JSON object per line: {"kind", "poses": [{"p": [3], "R": [9 row-major]}], "energies"}.
void write_candidates_jsonl(std::ostream& os, const CandidatePoseSet& set);
/// Reads every line; throws SchemaError on malformed records.
std::vector<CandidatePoseSet> read_candidates_jsonl(std::istream& is);

}  // namespace equicontact
