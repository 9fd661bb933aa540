#include "equicontact/refframe.hpp"

#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <string>

#include <json.hpp>

#include "equicontact/errors.hpp"
#include "equicontact/random.hpp"

namespace equicontact {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kMm = 1e-3;

Vec3 mean_tip(const CandidatePoseSet& cands, const ToolOffset& tool) {
  Vec3 sum = Vec3::Zero();
  for (const auto& g : cands.poses) sum += tip_of(g, tool);
  return sum / static_cast<double>(cands.poses.size());
}

void require_kind(const CandidatePoseSet& cands, CandidateKind kind, const char* who) {
  if (cands.poses.empty()) throw InvalidArgument(std::string(who) + ": empty candidate set");
  if (cands.kind != kind) {
    throw InvalidArgument(std::string(who) + ": expected a " + to_string(kind) + " candidate set");
  }
}

double draw(Rng& rng, EstimatorNoise::Family family, double scale) {
  if (scale == 0.0) return 0.0;
  return family == EstimatorNoise::Family::Gaussian ? rng.normal(0.0, scale)
                                                    : rng.uniform(-scale, scale);
}

}  // namespace

const char* to_string(CandidateKind k) { return k == CandidateKind::Pick ? "pick" : "place"; }

CandidateKind parse_candidate_kind(std::string_view s) {
  if (s == "pick") return CandidateKind::Pick;
  if (s == "place") return CandidateKind::Place;
  throw SchemaError("unknown candidate kind '" + std::string(s) + "'");
}

std::size_t candidate_count(CandidateKind k) {
  return k == CandidateKind::Pick ? kPickCandidates : kPlaceCandidates;
}

void CandidatePoseSet::validate() const {
  if (poses.size() != energies.size()) throw SchemaError("candidate set: poses/energies mismatch");
  if (poses.size() != candidate_count(kind)) {
    throw SchemaError(std::string("candidate set: ") + to_string(kind) + " sets hold " +
                      std::to_string(candidate_count(kind)) + " candidates, got " +
                      std::to_string(poses.size()));
  }
}

bool EstimatorNoise::is_zero() const {
  return position.isZero(0.0) && rotation.isZero(0.0) && !uniform_z_rotation;
}

void EstimatorNoise::validate() const {
  if (!(position.minCoeff() >= 0.0) || !(rotation.minCoeff() >= 0.0)) {
    throw InvalidArgument("estimator noise: scales must be nonnegative");
  }
}

EstimatorNoise EstimatorNoise::none() { return {}; }

EstimatorNoise EstimatorNoise::moderate() {
  EstimatorNoise n;
  n.name = "moderate";
  n.family = Family::Uniform;
  n.position = Vec3::Constant(5.0 * kMm);
  n.rotation = Vec3::Constant(8.0 * kDeg);
  return n;
}

EstimatorNoise EstimatorNoise::pick_table() {
  EstimatorNoise n;
  n.name = "pick_table";
  n.position = Vec3(16.76, 5.886, 10.79) * kMm;
  n.rotation = Vec3(19.88, 40.55, 106.7) * kDeg;
  n.uniform_z_rotation = true;
  return n;
}

EstimatorNoise EstimatorNoise::place_table() {
  EstimatorNoise n;
  n.name = "place_table";
  n.position = Vec3(4.981, 7.422, 5.236) * kMm;
  n.rotation = Vec3(13.74, 18.99, 91.41) * kDeg;
  n.uniform_z_rotation = true;
  return n;
}

EstimatorNoise EstimatorNoise::preset(std::string_view name) {
  if (name == "none") return none();
  if (name == "moderate") return moderate();
  if (name == "pick_table") return pick_table();
  if (name == "place_table") return place_table();
  throw InvalidArgument("unknown noise preset '" + std::string(name) + "'");
}

Pose ground_truth_target(const Scene& scene, const PegHoleGeom& geom, CandidateKind kind) {
  return kind == CandidateKind::Pick ? grasp_target(scene, geom) : place_target(scene, geom);
}

CandidatePoseSet mock_candidates(const Scene& scene, const PegHoleGeom& geom, CandidateKind kind,
                                 const EstimatorNoise& noise, std::uint64_t seed) {
  noise.validate();
  const ToolOffset tool = kind == CandidateKind::Pick ? ToolOffset::pick() : ToolOffset::place();
  const Pose g_obj = ground_truth_target(scene, geom, kind);
  const Pose to_tip = Pose::translation(tool.p_et);
  const Pose from_tip = Pose::translation(-tool.p_et);
  const double pos_scale = std::max(noise.position.norm(), kMm);
  const double rot_scale = std::max(noise.rotation.head<2>().norm(), kDeg);

  Rng rng(seed, kind == CandidateKind::Pick ? 0xC0DE1 : 0xC0DE2);
  CandidatePoseSet set;
  set.kind = kind;
  const std::size_t n = candidate_count(kind);
  set.poses.reserve(n);
  set.energies.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vec3 n_p;
    for (int a = 0; a < 3; ++a) n_p(a) = draw(rng, noise.family, noise.position(a));
    Vec3 n_r;
    for (int a = 0; a < 3; ++a) n_r(a) = draw(rng, noise.family, noise.rotation(a));
    if (noise.uniform_z_rotation) n_r.z() = rng.uniform(-std::numbers::pi, std::numbers::pi);
    const Pose local(n_p, from_euler_xyz(n_r));
    set.poses.push_back(g_obj * to_tip * local * from_tip);
    // Larger errors get larger energies on average; the jitter makes ranking unreliable.
    const double magnitude = n_p.norm() / pos_scale + n_r.head<2>().norm() / rot_scale;
    set.energies.push_back(magnitude + rng.uniform(0.0, 2.0));
  }
  return set;
}

Pose refine_pick(const CandidatePoseSet& cands, const Rotation& R_peg, const ToolOffset& tool) {
  require_kind(cands, CandidateKind::Pick, "refine_pick");
  return {mean_tip(cands, tool) - R_peg * tool.p_et, R_peg};
}

Pose refine_place(const CandidatePoseSet& cands, const ToolOffset& tool) {
  require_kind(cands, CandidateKind::Place, "refine_place");
  const std::vector<double> w(cands.poses.size(), 1.0);
  std::vector<Rotation> Rs;
  Rs.reserve(cands.poses.size());
  for (const auto& g : cands.poses) Rs.push_back(g.R);
  const Rotation R_bar = weighted_rotation_mean(Rs, w);
  return {mean_tip(cands, tool) - R_bar * tool.p_et, R_bar};
}

Pose lowest_energy_candidate(const CandidatePoseSet& cands) {
  if (cands.poses.empty()) throw InvalidArgument("lowest_energy_candidate: empty candidate set");
  if (cands.energies.size() != cands.poses.size()) {
    throw SchemaError("candidate set: poses/energies mismatch");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < cands.energies.size(); ++i) {
    if (cands.energies[i] < cands.energies[best]) best = i;
  }
  return cands.poses[best];
}

void write_candidates_jsonl(std::ostream& os, const CandidatePoseSet& set) {
  nlohmann::json j;
  j["kind"] = to_string(set.kind);
  j["poses"] = nlohmann::json::array();
  for (const auto& g : set.poses) {
    std::vector<double> R(9);
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) R[3 * r + c] = g.R(r, c);
    }
    j["poses"].push_back({{"p", {g.p.x(), g.p.y(), g.p.z()}}, {"R", R}});
  }
  j["energies"] = set.energies;
  os << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict) << '\n';
}

std::vector<CandidatePoseSet> read_candidates_jsonl(std::istream& is) {
  std::vector<CandidatePoseSet> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CandidatePoseSet set;
      set.kind = parse_candidate_kind(j.at("kind").get<std::string>());
      for (const auto& pj : j.at("poses")) {
        const auto p = pj.at("p").get<std::vector<double>>();
        const auto R = pj.at("R").get<std::vector<double>>();
        if (p.size() != 3 || R.size() != 9) throw SchemaError("pose needs p[3] and R[9]");
        Mat3 m;
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) m(r, c) = R[static_cast<std::size_t>(3 * r + c)];
        }
        set.poses.emplace_back(Vec3(p[0], p[1], p[2]), Rotation::from_matrix(m));
      }
      set.energies = j.at("energies").get<std::vector<double>>();
      set.validate();
      out.push_back(std::move(set));
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError("candidate record line " + std::to_string(lineno) + ": " + e.what());
    } catch (const InvalidArgument& e) {
      throw SchemaError("candidate record line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace equicontact
