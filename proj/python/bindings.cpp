// Python bindings. Poses cross the boundary as 4x4 homogeneous matrices,
// twists and wrenches as (linear, angular) 6-vectors; structured results
// come back as JSON strings that the Python package decodes.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <fstream>

#include "equicontact/admittance.hpp"
#include "equicontact/errors.hpp"
#include "equicontact/harness.hpp"
#include "equicontact/liegroup.hpp"
#include "equicontact/policy.hpp"
#include "equicontact/refframe.hpp"
#include "equicontact/teleop.hpp"

namespace py = pybind11;
using namespace equicontact;

namespace {

Pose pose(const Mat4& T) { return Pose::from_matrix(T); }

std::vector<Pose> poses(const std::vector<Mat4>& Ts) {
  std::vector<Pose> out;
  out.reserve(Ts.size());
  for (const auto& T : Ts) out.push_back(pose(T));
  return out;
}

std::vector<Mat4> matrices(const std::vector<Pose>& gs) {
  std::vector<Mat4> out;
  out.reserve(gs.size());
  for (const auto& g : gs) out.push_back(g.matrix());
  return out;
}

BenchmarkConfig config_from(const std::string& config_json) {
  return config_json.empty() ? BenchmarkConfig{}
                             : benchmark_config_from_json(nlohmann::json::parse(config_json));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "SE(3) geometric admittance control, peg-in-hole simulation and equivariance checks.";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<FrameMismatch>(m, "FrameMismatch", base.ptr());
  py::register_exception<SchemaError>(m, "SchemaError", base.ptr());
  py::register_exception<SingularityError>(m, "SingularityError", base.ptr());

  // Lie group ---------------------------------------------------------------------------
  m.def("hat3", [](const Vec3& w) { return hat(w); }, py::arg("w"));
  m.def("hat6", [](const Vec6& xi) { return hat(xi); }, py::arg("xi"));
  m.def("vee3", [](const Mat3& W) { return vee(W); }, py::arg("W"));
  m.def("vee6", [](const Mat4& X) { return vee(X); }, py::arg("X"));
  m.def("exp_se3", [](const Vec6& xi, double dt) { return exp_se3(Twist::body(xi), dt).matrix(); },
        py::arg("xi"), py::arg("dt") = 1.0, "exp(xi^ dt) as a 4x4 matrix.");
  m.def("log_se3", [](const Mat4& T) { return log_se3(pose(T)).vector(); }, py::arg("T"));
  m.def("adjoint", [](const Mat4& T) { return adjoint(pose(T)); }, py::arg("T"));
  m.def("ad_wrench", [](const Mat4& T, const Vec6& F) { return ad_wrench(pose(T), Wrench::body(F)).vector(); },
        py::arg("T"), py::arg("F_body"), "Body wrench to spatial wrench.");
  m.def("ad_wrench_inverse",
        [](const Mat4& T, const Vec6& F) { return ad_wrench_inverse(pose(T), Wrench::spatial(F)).vector(); },
        py::arg("T"), py::arg("F_spatial"));
  m.def("rotation_mean",
        [](const std::vector<Mat3>& Rs, const std::vector<double>& w) {
          std::vector<Rotation> rs;
          for (const auto& R : Rs) rs.push_back(Rotation::from_matrix(R));
          return weighted_rotation_mean(rs, w).matrix();
        },
        py::arg("rotations"), py::arg("weights"));
  m.def("to_rot6d", [](const Mat3& R) { return to_rot6d(Rotation::from_matrix(R)); }, py::arg("R"));
  m.def("from_rot6d", [](const Vec6& r) { return from_rot6d(r).matrix(); }, py::arg("r6"));
  m.def("to_euler_xyz", [](const Mat3& R) { return to_euler_xyz(Rotation::from_matrix(R)); }, py::arg("R"));
  m.def("from_euler_xyz", [](const Vec3& abc) { return from_euler_xyz(abc).matrix(); }, py::arg("abc"));

  // Control -------------------------------------------------------------------------------
  m.def("profile_stiffness", [](const std::string& key) { return profile_stiffness(parse_gain_profile(key)); },
        py::arg("profile"), "(kp, kr) diagonals of a gain profile.");
  m.def("elastic_wrench",
        [](const Mat4& T, const Mat4& Td, const Vec3& kp, const Vec3& kr) {
          return elastic_wrench(pose(T), pose(Td), kp, kr).vector();
        },
        py::arg("T"), py::arg("T_d"), py::arg("kp"), py::arg("kr"));
  m.def("gac_step",
        [](const Mat4& T, const Mat4& Td, const Vec6& V, const Vec6& Fe, const std::string& profile, double Ts) {
          const GacStep s = gac_step(pose(T), pose(Td), Twist::body(V), Wrench::body(Fe),
                                     profile_gains(parse_gain_profile(profile)), Ts);
          return std::make_pair(s.desired_velocity.vector(), Mat4(s.command.matrix()));
        },
        py::arg("T"), py::arg("T_d"), py::arg("V_body"), py::arg("Fe_body"), py::arg("profile") = "free",
        py::arg("Ts") = kControlPeriod, "One admittance step; returns (V_d, commanded pose).");
  m.def("ft_filter",
        [](const Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>& raw, double cutoff_hz,
           double sample_hz, const Vec6& bias) {
          FtFilterState s;
          s.cutoff_hz = cutoff_hz;
          s.sample_hz = sample_hz;
          s.bias = bias;
          s.validate();
          Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor> out(raw.rows(), 6);
          for (Eigen::Index i = 0; i < raw.rows(); ++i) {
            auto [ns, y] = ft_filter_step(s, Wrench::body(raw.row(i).transpose()));
            s = ns;
            out.row(i) = y.vector().transpose();
          }
          return out;
        },
        py::arg("raw"), py::arg("cutoff_hz") = kDefaultFtCutoffHz, py::arg("sample_hz") = kControlRateHz,
        py::arg("bias") = Vec6::Zero(), "Bias-corrected first-order low-pass over rows of raw wrenches.");
  m.def("ft_rebias",
        [](const Eigen::Matrix<double, Eigen::Dynamic, 6, Eigen::RowMajor>& raw) {
          std::vector<Wrench> w;
          for (Eigen::Index i = 0; i < raw.rows(); ++i) w.push_back(Wrench::body(raw.row(i).transpose()));
          return ft_rebias(w);
        },
        py::arg("raw"));

  // Policy runtime ------------------------------------------------------------------------
  m.def("compute_gcev", [](const Mat4& T, const Mat4& Tref) { return compute_gcev(pose(T), pose(Tref)).vector(); },
        py::arg("T"), py::arg("T_ref"), "(e_p, e_R) of T relative to T_ref.");
  m.def("expand_chunk",
        [](const Mat4& T_now, const std::vector<Mat4>& rel) {
          ActionChunk c;
          for (const auto& g : poses(rel)) c.steps.push_back({g});
          return matrices(expand_chunk(pose(T_now), c));
        },
        py::arg("T_now"), py::arg("relative_poses"));
  m.def("temporal_ensemble",
        [](const std::vector<Mat4>& Ts, const std::vector<double>& w) {
          std::vector<Prediction> preds;
          for (const auto& g : poses(Ts)) preds.push_back({g});
          return Mat4(temporal_ensemble(preds, w).g_d.matrix());
        },
        py::arg("poses"), py::arg("weights"));

  // Reference frames --------------------------------------------------------------------
  m.def("mock_candidates",
        [](const std::string& kind, const std::string& scenario_set, std::uint64_t scene_seed,
           const std::string& noise, std::uint64_t seed) {
          const Scene scene = build_scenario(scenario_for(scenario_set, scene_seed));
          const CandidatePoseSet s = mock_candidates(scene, PegHoleGeom{}, parse_candidate_kind(kind),
                                                     EstimatorNoise::preset(noise), seed);
          const Pose truth = ground_truth_target(scene, PegHoleGeom{}, s.kind);
          return py::make_tuple(matrices(s.poses), s.energies, truth.matrix());
        },
        py::arg("kind"), py::arg("scenario_set") = "flat", py::arg("scene_seed") = 1,
        py::arg("noise") = "moderate", py::arg("seed") = 1,
        "(candidate poses, energies, ground-truth target).");
  m.def("refine_place",
        [](const std::vector<Mat4>& cands, const Vec3& p_et) {
          CandidatePoseSet s{CandidateKind::Place, poses(cands), std::vector<double>(cands.size(), 0.0)};
          return Mat4(refine_place(s, ToolOffset{p_et}).matrix());
        },
        py::arg("candidates"), py::arg("p_et") = ToolOffset::place().p_et);
  m.def("refine_pick",
        [](const std::vector<Mat4>& cands, const Mat3& R_peg, const Vec3& p_et) {
          CandidatePoseSet s{CandidateKind::Pick, poses(cands), std::vector<double>(cands.size(), 0.0)};
          return Mat4(refine_pick(s, Rotation::from_matrix(R_peg), ToolOffset{p_et}).matrix());
        },
        py::arg("candidates"), py::arg("R_peg"), py::arg("p_et") = ToolOffset::pick().p_et);

  // Harness -------------------------------------------------------------------------------
  m.def("default_config_json", [] { return to_json(BenchmarkConfig{}).dump(); });
  m.def("run_suite_json",
        [](std::size_t samples, double tolerance, std::uint64_t seed, bool identity, std::size_t rollouts) {
          SuiteOptions o;
          o.samples = samples;
          o.tolerance = tolerance;
          o.seed = seed;
          o.identity_action = identity;
          o.rollouts = rollouts;
          py::gil_scoped_release release;
          return to_json(run_equivariance_suite(o)).dump();
        },
        py::arg("samples") = 1000, py::arg("tolerance") = 1e-9, py::arg("seed") = 7,
        py::arg("identity") = false, py::arg("rollouts") = 0);
  m.def("run_benchmark_json",
        [](const std::string& config_json) {
          const BenchmarkConfig cfg = config_from(config_json);
          BenchmarkResult r;
          {
            py::gil_scoped_release release;
            r = run_benchmark(cfg, false);
          }
          nlohmann::json reports = nlohmann::json::array();
          for (const auto& t : r.reports) reports.push_back(to_json(t));
          return nlohmann::json{{"config", to_json(r.config)}, {"reports", reports}}.dump();
        },
        py::arg("config_json") = "");
  m.def("replay_trial_json",
        [](const std::string& config_json, const std::string& report_json) {
          return to_json(replay_trial(config_from(config_json),
                                      trial_report_from_json(nlohmann::json::parse(report_json))))
              .dump();
        },
        py::arg("config_json"), py::arg("report_json"));
  m.def("rollout_equivariance",
        [](const Mat4& g_l, const std::string& scenario_set, std::uint64_t seed, std::size_t steps) {
          BenchmarkConfig cfg;
          cfg.scenario_set = scenario_set;
          const Scene scene = build_scenario(scenario_for(scenario_set, seed));
          py::gil_scoped_release release;
          const auto r = rollout_equivariance(cfg, scene, pose(g_l), seed, steps);
          return std::make_pair(r.max_translation, r.max_rotation);
        },
        py::arg("g_l"), py::arg("scenario_set") = "flat", py::arg("seed") = 1, py::arg("steps") = 2000,
        "(max translation, max rotation) discrepancy between transformed and re-simulated rollouts.");

  // Teleoperation -------------------------------------------------------------------------
  m.def("teleop_update",
        [](const Mat4& Td, const Vec6& v_sm, const std::string& speed, const std::string& frame) {
          TeleopCommand c;
          c.V_sm = v_sm;
          c.speed = parse_speed_level(speed);
          c.frame = parse_command_frame(frame);
          c.validate();
          return teleop_update(pose(Td), c).matrix();
        },
        py::arg("T_d"), py::arg("v_sm"), py::arg("speed") = "med", py::arg("frame") = "base");
  m.def("replay_demo_json",
        [](const std::filesystem::path& path, double tolerance) {
          std::ifstream in(path);
          if (!in) throw Error("cannot open " + path.string());
          const DemoRecord demo = read_demo_jsonl(in);
          const ReplayResult r = record_replay(demo, tolerance);
          nlohmann::json j{{"reproduced", r.reproduced},
                           {"samples_compared", r.samples_compared},
                           {"max_position_error", r.max_position_error},
                           {"max_rotation_error", r.max_rotation_error},
                           {"final_status", to_string(r.final_status)}};
          if (r.first_divergence_tick) j["first_divergence_tick"] = *r.first_divergence_tick;
          return j.dump();
        },
        py::arg("path"), py::arg("tolerance") = 1e-6);
}
