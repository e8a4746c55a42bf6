#pragma once

#include <proxtraj/validation.hpp>

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

namespace proxtraj {

using Json = nlohmann::json;

/// A parsed scenario file: the problem statement plus solver settings.
struct ScenarioDoc {
  std::string name;
  OcpSpec spec;
  SolverConfig solver;
};

namespace detail {

[[noreturn]] inline void scenario_error(const std::string& msg) {
  throw std::invalid_argument("scenario: " + msg);
}

inline void check_keys(const Json& j, const std::set<std::string>& allowed,
                       const std::string& where) {
  if (!j.is_object()) scenario_error(where + " must be an object");
  for (const auto& item : j.items())
    if (!allowed.count(item.key()))
      scenario_error("unknown key '" + item.key() + "' in " + where);
}

inline const Json& require(const Json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) scenario_error("missing key '" + key + "' in " + where);
  return j.at(key);
}

inline double number(const Json& j, const std::string& where) {
  if (!j.is_number()) scenario_error(where + " must be a number");
  return j.get<double>();
}

inline VecX vector_of(const Json& j, int expected, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != expected)
    scenario_error(where + " must be an array of " + std::to_string(expected) + " numbers");
  VecX v(expected);
  for (int i = 0; i < expected; ++i) v[i] = number(j[i], where);
  return v;
}

inline MatX matrix_of(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    scenario_error(where + " must be an array of rows");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j[0].size());
  MatX m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols) scenario_error(where + " rows differ in length");
    for (int c = 0; c < cols; ++c) m(r, c) = number(j[r][c], where);
  }
  return m;
}

inline Pose parse_pose(const Json& j, const std::string& where) {
  check_keys(j, {"translation", "quaternion"}, where);
  Pose pose;
  if (j.contains("translation")) pose.d = Vec3(vector_of(j["translation"], 3, where));
  if (j.contains("quaternion"))
    pose.q = Vec4(vector_of(j["quaternion"], 4, where + ".quaternion"));
  return pose;
}

inline ConvexShape parse_shape(const Json& j, const std::string& where) {
  const std::string kind = require(j, "kind", where).get<std::string>();
  ConvexShape shape;
  if (kind == "superellipsoid") {
    check_keys(j, {"kind", "semi_axes", "exponents", "level", "level_exponent"}, where);
    SuperEllipsoid s;
    s.semi_axes = vector_of(require(j, "semi_axes", where), 3, where + ".semi_axes");
    const VecX e = vector_of(require(j, "exponents", where), 3, where + ".exponents");
    s.exponents = e.cast<int>();
    if (j.contains("level")) s.level = number(j["level"], where + ".level");
    if (j.contains("level_exponent")) s.level_exponent = j["level_exponent"].get<int>();
    shape = s;
  } else if (kind == "polytope_smooth" || kind == "polytope_exact") {
    const MatX a = matrix_of(require(j, "A", where), where + ".A");
    const Json& jb = require(j, "b", where);
    const VecX b = vector_of(jb, static_cast<int>(a.rows()), where + ".b");
    if (kind == "polytope_exact") {
      check_keys(j, {"kind", "A", "b"}, where);
      shape = PolytopeExact{a, b};
    } else {
      check_keys(j, {"kind", "A", "b", "sharpness", "outer_exponent"}, where);
      PolytopeSmooth s{a, b, VecX::Constant(a.rows(), 8.0), 8.0};
      if (j.contains("sharpness")) {
        if (j["sharpness"].is_number())
          s.sharpness.setConstant(number(j["sharpness"], where));
        else
          s.sharpness = vector_of(j["sharpness"], static_cast<int>(a.rows()),
                                  where + ".sharpness");
      }
      if (j.contains("outer_exponent"))
        s.outer = number(j["outer_exponent"], where + ".outer_exponent");
      shape = s;
    }
  } else {
    scenario_error("unknown shape kind '" + kind + "' in " + where +
                   " (expected superellipsoid | polytope_exact | polytope_smooth)");
  }
  validate_shape(shape);
  return shape;
}

inline Mat3 parse_inertia(const Json& j, const std::string& where) {
  if (j.is_number()) return number(j, where) * Mat3::Identity();
  if (j.is_array() && j.size() == 3 && j[0].is_number())
    return Vec3(vector_of(j, 3, where)).asDiagonal();
  const MatX m = matrix_of(j, where);
  if (m.rows() != 3 || m.cols() != 3) scenario_error(where + " must be 3x3, diagonal or scalar");
  return m;
}

inline VecX parse_boundary_state(const Json& j, DynamicsMode mode, const std::string& where) {
  if (mode == DynamicsMode::full_dim) {
    check_keys(j, {"position", "velocity", "quaternion", "angular_velocity"}, where);
    VecX x = VecX::Zero(kFullDimStates);
    x.segment<4>(6) << 0, 0, 0, 1;
    x.head<3>() = vector_of(require(j, "position", where), 3, where + ".position");
    if (j.contains("velocity")) x.segment<3>(3) = vector_of(j["velocity"], 3, where);
    if (j.contains("quaternion")) x.segment<4>(6) = vector_of(j["quaternion"], 4, where);
    if (j.contains("angular_velocity"))
      x.segment<3>(10) = vector_of(j["angular_velocity"], 3, where);
    return x;
  }
  check_keys(j, {"position", "velocity"}, where);
  VecX x = VecX::Zero(kPointMassStates);
  x.head<3>() = vector_of(require(j, "position", where), 3, where + ".position");
  if (j.contains("velocity")) x.tail<3>() = vector_of(j["velocity"], 3, where);
  return x;
}

}  // namespace detail

inline ScenarioDoc parse_scenario_json(const Json& root) {
  using namespace detail;
  check_keys(root,
             {"name", "mode", "horizon", "d_safe", "bounds", "vehicle", "obstacles", "start",
              "goal", "transcription", "solver"},
             "scenario");
  ScenarioDoc doc;
  doc.name = root.contains("name") ? root["name"].get<std::string>() : "scenario";

  const std::string mode = require(root, "mode", "scenario").get<std::string>();
  if (mode == "full_dim")
    doc.spec.mode = DynamicsMode::full_dim;
  else if (mode == "point_mass")
    doc.spec.mode = DynamicsMode::point_mass;
  else
    scenario_error("mode must be 'full_dim' or 'point_mass'");

  const Json& horizon = require(root, "horizon", "scenario");
  check_keys(horizon, {"t0", "tf", "nodes"}, "horizon");
  doc.spec.t0 = horizon.contains("t0") ? number(horizon["t0"], "horizon.t0") : 0.0;
  doc.spec.tf = number(require(horizon, "tf", "horizon"), "horizon.tf");
  doc.spec.nodes = require(horizon, "nodes", "horizon").get<int>();

  doc.spec.d_safe = number(require(root, "d_safe", "scenario"), "d_safe");

  const Json& bounds = require(root, "bounds", "scenario");
  check_keys(bounds, {"f_max", "g_max"}, "bounds");
  doc.spec.f_max = number(require(bounds, "f_max", "bounds"), "bounds.f_max");
  if (doc.spec.mode == DynamicsMode::full_dim)
    doc.spec.g_max = number(require(bounds, "g_max", "bounds"), "bounds.g_max");
  else if (bounds.contains("g_max"))
    doc.spec.g_max = number(bounds["g_max"], "bounds.g_max");

  const Json& vehicle = require(root, "vehicle", "scenario");
  check_keys(vehicle, {"mass", "inertia", "first_moment", "shapes"}, "vehicle");
  doc.spec.body.mass = number(require(vehicle, "mass", "vehicle"), "vehicle.mass");
  if (vehicle.contains("inertia"))
    doc.spec.body.inertia = parse_inertia(vehicle["inertia"], "vehicle.inertia");
  if (vehicle.contains("first_moment"))
    doc.spec.body.first_moment =
        Vec3(vector_of(vehicle["first_moment"], 3, "vehicle.first_moment"));
  if (doc.spec.mode == DynamicsMode::full_dim) {
    const Json& shapes = require(vehicle, "shapes", "vehicle");
    if (!shapes.is_array() || shapes.empty())
      scenario_error("vehicle.shapes must be a nonempty array");
    for (size_t i = 0; i < shapes.size(); ++i) {
      const std::string where = "vehicle.shapes[" + std::to_string(i) + "]";
      const Json& js = shapes[i];
      MountedShape ms;
      if (js.contains("mount")) {
        Json inner = js;
        inner.erase("mount");
        ms.mount = parse_pose(js["mount"], where + ".mount");
        ms.shape = parse_shape(inner, where);
      } else {
        ms.shape = parse_shape(js, where);
      }
      doc.spec.vehicle_shapes.push_back(ms);
    }
  } else if (vehicle.contains("shapes")) {
    scenario_error("vehicle.shapes is not allowed in point_mass mode");
  }

  if (root.contains("obstacles")) {
    const Json& obstacles = root["obstacles"];
    if (!obstacles.is_array()) scenario_error("obstacles must be an array");
    for (size_t j = 0; j < obstacles.size(); ++j) {
      const std::string where = "obstacles[" + std::to_string(j) + "]";
      check_keys(obstacles[j], {"name", "shape", "pose"}, where);
      Obstacle ob;
      ob.name = obstacles[j].contains("name") ? obstacles[j]["name"].get<std::string>()
                                              : "O" + std::to_string(j);
      ob.shape = parse_shape(require(obstacles[j], "shape", where), where + ".shape");
      ob.pose = parse_pose(require(obstacles[j], "pose", where), where + ".pose");
      doc.spec.obstacles.push_back(ob);
    }
  }

  doc.spec.x0 = parse_boundary_state(require(root, "start", "scenario"), doc.spec.mode, "start");
  doc.spec.xf = parse_boundary_state(require(root, "goal", "scenario"), doc.spec.mode, "goal");

  if (root.contains("transcription")) {
    const Json& tr = root["transcription"];
    check_keys(tr, {"scheme"}, "transcription");
    const std::string scheme = require(tr, "scheme", "transcription").get<std::string>();
    if (scheme == "trapezoidal")
      doc.spec.scheme = CollocationScheme::trapezoidal;
    else if (scheme == "hermite_simpson")
      doc.spec.scheme = CollocationScheme::hermite_simpson;
    else
      scenario_error("transcription.scheme must be 'trapezoidal' or 'hermite_simpson'");
  }

  if (root.contains("solver")) {
    const Json& sj = root["solver"];
    check_keys(sj,
               {"max_outer", "max_inner", "eq_tol", "ineq_tol", "comp_eps_schedule",
                "penalty_init", "penalty_growth", "seed"},
               "solver");
    auto& cfg = doc.solver;
    if (sj.contains("max_outer")) cfg.max_outer = sj["max_outer"].get<int>();
    if (sj.contains("max_inner")) cfg.max_inner = sj["max_inner"].get<int>();
    if (sj.contains("eq_tol")) cfg.eq_tol = number(sj["eq_tol"], "solver.eq_tol");
    if (sj.contains("ineq_tol")) cfg.ineq_tol = number(sj["ineq_tol"], "solver.ineq_tol");
    if (sj.contains("comp_eps_schedule")) {
      cfg.comp_eps_schedule.clear();
      for (const auto& v : sj["comp_eps_schedule"])
        cfg.comp_eps_schedule.push_back(number(v, "solver.comp_eps_schedule"));
    }
    if (sj.contains("penalty_init"))
      cfg.penalty_init = number(sj["penalty_init"], "solver.penalty_init");
    if (sj.contains("penalty_growth"))
      cfg.penalty_growth = number(sj["penalty_growth"], "solver.penalty_growth");
    if (sj.contains("seed")) cfg.seed = sj["seed"].get<std::uint64_t>();
    cfg.validate();
  }

  validate_spec(doc.spec);
  return doc;
}

inline ScenarioDoc parse_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) detail::scenario_error("cannot open file '" + path + "'");
  Json root;
  try {
    in >> root;
  } catch (const std::exception& e) {
    detail::scenario_error("malformed JSON in '" + path + "': " + e.what());
  }
  return parse_scenario_json(root);
}

//==============================================================================
// Normalized scenario serialization (the diagnostics echo; round-trips)
//==============================================================================

inline Json shape_to_json(const ConvexShape& shape) {
  Json j;
  if (const auto* se = std::get_if<SuperEllipsoid>(&shape)) {
    j["kind"] = "superellipsoid";
    j["semi_axes"] = {se->semi_axes[0], se->semi_axes[1], se->semi_axes[2]};
    j["exponents"] = {se->exponents[0], se->exponents[1], se->exponents[2]};
    j["level"] = se->level;
    j["level_exponent"] = se->level_exponent;
  } else {
    const bool exact = std::holds_alternative<PolytopeExact>(shape);
    const MatX& a = exact ? std::get<PolytopeExact>(shape).A : std::get<PolytopeSmooth>(shape).A;
    const VecX& b = exact ? std::get<PolytopeExact>(shape).b : std::get<PolytopeSmooth>(shape).b;
    j["kind"] = exact ? "polytope_exact" : "polytope_smooth";
    Json rows = Json::array();
    for (int r = 0; r < a.rows(); ++r) {
      Json row = Json::array();
      for (int c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
      rows.push_back(row);
    }
    j["A"] = rows;
    j["b"] = std::vector<double>(b.data(), b.data() + b.size());
    if (!exact) {
      const auto& s = std::get<PolytopeSmooth>(shape);
      j["sharpness"] = std::vector<double>(s.sharpness.data(),
                                           s.sharpness.data() + s.sharpness.size());
      j["outer_exponent"] = s.outer;
    }
  }
  return j;
}

inline Json pose_to_json(const Pose& pose) {
  return Json{{"translation", {pose.d[0], pose.d[1], pose.d[2]}},
              {"quaternion", {pose.q[0], pose.q[1], pose.q[2], pose.q[3]}}};
}

inline Json boundary_state_to_json(const VecX& x, DynamicsMode mode) {
  Json j;
  j["position"] = {x[0], x[1], x[2]};
  j["velocity"] = {x[3], x[4], x[5]};
  if (mode == DynamicsMode::full_dim) {
    j["quaternion"] = {x[6], x[7], x[8], x[9]};
    j["angular_velocity"] = {x[10], x[11], x[12]};
  }
  return j;
}

inline Json scenario_to_json(const ScenarioDoc& doc) {
  const auto& spec = doc.spec;
  Json j;
  j["name"] = doc.name;
  j["mode"] = spec.mode == DynamicsMode::full_dim ? "full_dim" : "point_mass";
  j["horizon"] = {{"t0", spec.t0}, {"tf", spec.tf}, {"nodes", spec.nodes}};
  j["d_safe"] = spec.d_safe;
  j["bounds"] = {{"f_max", spec.f_max}, {"g_max", spec.g_max}};
  Json vehicle;
  vehicle["mass"] = spec.body.mass;
  Json inertia = Json::array();
  for (int r = 0; r < 3; ++r)
    inertia.push_back({spec.body.inertia(r, 0), spec.body.inertia(r, 1), spec.body.inertia(r, 2)});
  vehicle["inertia"] = inertia;
  vehicle["first_moment"] = {spec.body.first_moment[0], spec.body.first_moment[1],
                             spec.body.first_moment[2]};
  if (spec.mode == DynamicsMode::full_dim) {
    Json shapes = Json::array();
    for (const auto& ms : spec.vehicle_shapes) {
      Json js = shape_to_json(ms.shape);
      js["mount"] = pose_to_json(ms.mount);
      shapes.push_back(js);
    }
    vehicle["shapes"] = shapes;
  }
  j["vehicle"] = vehicle;
  Json obstacles = Json::array();
  for (const auto& ob : spec.obstacles)
    obstacles.push_back(
        {{"name", ob.name}, {"shape", shape_to_json(ob.shape)}, {"pose", pose_to_json(ob.pose)}});
  j["obstacles"] = obstacles;
  j["start"] = boundary_state_to_json(spec.x0, spec.mode);
  j["goal"] = boundary_state_to_json(spec.xf, spec.mode);
  j["transcription"] = {
      {"scheme",
       spec.scheme == CollocationScheme::trapezoidal ? "trapezoidal" : "hermite_simpson"}};
  j["solver"] = {{"max_outer", doc.solver.max_outer},
                 {"max_inner", doc.solver.max_inner},
                 {"eq_tol", doc.solver.eq_tol},
                 {"ineq_tol", doc.solver.ineq_tol},
                 {"comp_eps_schedule", doc.solver.comp_eps_schedule},
                 {"penalty_init", doc.solver.penalty_init},
                 {"penalty_growth", doc.solver.penalty_growth},
                 {"seed", doc.solver.seed}};
  return j;
}

//==============================================================================
// Artifact emission
//==============================================================================

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.15g", v);
  return buf;
}

}  // namespace detail

/// Trajectory table: one row per node with states, controls and the certified
/// witness distance per (vehicle shape, obstacle) pair. Byte-stable across
/// identical runs.
inline std::string trajectory_csv(const Solution& sol, const OcpSpec& spec) {
  std::string out = "t";
  const bool full = spec.mode == DynamicsMode::full_dim;
  for (const char* c : {"rx", "ry", "rz", "vx", "vy", "vz"}) out += std::string(",") + c;
  if (full)
    for (const char* c : {"qx", "qy", "qz", "qw", "wx", "wy", "wz"}) out += std::string(",") + c;
  out += ",fx,fy,fz";
  if (full) out += ",gx,gy,gz";
  const int n_s = full ? static_cast<int>(spec.vehicle_shapes.size()) : 1;
  for (int i = 0; i < n_s; ++i)
    for (const auto& ob : spec.obstacles)
      out += ",dist_s" + std::to_string(i) + "_" + ob.name;
  out += "\n";
  const int nodes = static_cast<int>(sol.states.size());
  for (int k = 0; k < nodes; ++k) {
    out += detail::fmt(sol.times[k]);
    for (int i = 0; i < sol.states[k].size(); ++i) out += "," + detail::fmt(sol.states[k][i]);
    for (int i = 0; i < sol.controls[k].size(); ++i)
      out += "," + detail::fmt(sol.controls[k][i]);
    for (const auto& pr : sol.pairs[k]) out += "," + detail::fmt(std::sqrt(pr.dist_sq));
    out += "\n";
  }
  return out;
}

inline Json report_to_json(const SolveReport& rep) {
  return Json{{"label", rep.label},
              {"status", to_string(rep.status)},
              {"outer_iterations", rep.outer_iterations},
              {"inner_iterations", rep.inner_iterations},
              {"eq_residual", rep.eq_residual},
              {"ineq_residual", rep.ineq_residual},
              {"comp_residual", rep.comp_residual},
              {"objective", rep.objective},
              {"monotone_fraction", rep.monotone_fraction}};
}

struct RunArtifacts {
  ContinuationResult continuation;
  Solution solution;
  ReplayReport replay;
  AuditReport audit;
  HamiltonianProfile hamiltonian;
  bool validated = false;
  int exit_code = 0;
};

/// Diagnostics document: config echo, stage reports, validation summaries.
/// Wall-clock time is deliberately excluded so identical runs emit identical
/// bytes; timing goes to the console instead.
inline Json diagnostics_json(const ScenarioDoc& doc, const RunArtifacts& run) {
  Json j;
  j["scenario"] = scenario_to_json(doc);
  j["status"] = run.continuation.converged ? "converged" : "failed";
  j["exit_code"] = run.exit_code;
  Json stages = Json::array();
  for (const auto& rep : run.continuation.stage_reports) stages.push_back(report_to_json(rep));
  j["stages"] = stages;
  j["objective"] = run.solution.objective;
  if (run.validated) {
    j["validation"] = {
        {"replay",
         {{"pass", run.replay.pass},
          {"max_position_deviation", run.replay.max_position_deviation},
          {"max_velocity_deviation", run.replay.max_velocity_deviation},
          {"worst_node", run.replay.worst_node}}},
        {"collision_audit",
         {{"pass", run.audit.pass},
          {"min_node_distance", run.audit.min_node_distance},
          {"min_dense_distance", run.audit.min_dense_distance},
          {"inter_node_dips", run.audit.dips.size()},
          {"flagged_samples", run.audit.flagged_samples}}},
        {"hamiltonian",
         {{"skipped", run.hamiltonian.skipped},
          {"score", run.hamiltonian.score},
          {"pass", run.hamiltonian.pass},
          {"note", run.hamiltonian.note}}}};
  }
  return j;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out.good()) throw std::runtime_error("write failed for '" + path.string() + "'");
}

/// Writes trajectory.csv (when a solution exists) and diagnostics.json.
/// The diagnostics file is written even for failed runs.
inline void emit(const ScenarioDoc& doc, const RunArtifacts& run,
                 const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (!run.solution.states.empty())
    write_file(out_dir / "trajectory.csv", trajectory_csv(run.solution, doc.spec));
  write_file(out_dir / "diagnostics.json", diagnostics_json(doc, run).dump(2) + "\n");
}

}  // namespace proxtraj
