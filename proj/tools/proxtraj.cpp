// proxtraj: fuel-optimal rigid-body motion planning around unions of smooth
// convex sets. Reads a scenario file, runs the continuation solve, verifies
// the result independently and writes trajectory/diagnostics artifacts.
//
// Exit codes: 0 success, 1 usage or scenario error, 2 solver failure,
// 3 validation failure.

#include <proxtraj/scenario.hpp>

#include <CLI11.hpp>

#include <iostream>

namespace {

using namespace proxtraj;

int run(const std::string& scenario_path, const std::string& out_dir, bool dry_run,
        long seed_override, int nodes_override, bool no_validate, bool verbose) {
  ScenarioDoc doc;
  try {
    doc = parse_scenario(scenario_path);
    if (seed_override >= 0) doc.solver.seed = static_cast<std::uint64_t>(seed_override);
    if (nodes_override > 0) doc.spec.nodes = nodes_override;
    validate_spec(doc.spec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  doc.solver.verbose = verbose;

  const Nlp nlp(doc.spec);
  std::cout << "scenario '" << doc.name << "': " << doc.spec.nodes << " nodes, "
            << nlp.layout().pairs.size() << " collision pairs, " << nlp.dim()
            << " decision variables, " << nlp.num_eq() << " equalities, " << nlp.num_ineq()
            << " inequalities\n";
  if (dry_run) return 0;

  RunArtifacts artifacts;
  try {
    const auto t0 = std::chrono::steady_clock::now();
    artifacts.continuation = continuation_solve(doc.spec, doc.solver);
    artifacts.solution = artifacts.continuation.solution;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& rep : artifacts.continuation.stage_reports)
      std::cout << "  stage '" << rep.label << "': " << to_string(rep.status) << ", "
                << rep.outer_iterations << " outer / " << rep.inner_iterations
                << " inner iterations, eq " << rep.eq_residual << ", ineq " << rep.ineq_residual
                << ", comp " << rep.comp_residual << "\n";
    std::cout << "solve wall time: " << wall << " s\n";
  } catch (const std::exception& e) {
    std::cerr << "error: solver exception: " << e.what() << "\n";
    return 2;
  }

  if (!artifacts.continuation.converged) {
    artifacts.exit_code = 2;
    std::cerr << "solver did not converge";
    if (artifacts.continuation.failed_stage >= 0)
      std::cerr << " (stage " << artifacts.continuation.failed_stage << " diverged)";
    std::cerr << "; partial artifacts written\n";
    try {
      emit(doc, artifacts, out_dir);
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    }
    return 2;
  }

  if (!no_validate) {
    artifacts.validated = true;
    artifacts.replay = replay_dynamics(artifacts.solution, doc.spec);
    artifacts.audit = audit_collisions(artifacts.solution, doc.spec);
    const HamiltonianDiagnostic ham =
        hamiltonian_diagnostic(artifacts.solution, doc.spec, doc.solver);
    artifacts.hamiltonian = ham.used_refined ? ham.refined : ham.coarse;
    std::cout << "validation: replay "
              << (artifacts.replay.pass ? "pass" : "FAIL") << " (max position deviation "
              << artifacts.replay.max_position_deviation << " m), collision audit "
              << (artifacts.audit.pass ? "pass" : "FAIL") << " (min node distance "
              << artifacts.audit.min_node_distance << " m, " << artifacts.audit.dips.size()
              << " inter-node dips), Hamiltonian "
              << (artifacts.hamiltonian.skipped
                      ? "skipped"
                      : (artifacts.hamiltonian.pass ? "pass" : "FAIL"))
              << " (score " << artifacts.hamiltonian.score << ")\n";
    if (!artifacts.replay.pass || !artifacts.audit.pass) artifacts.exit_code = 3;
  }

  try {
    emit(doc, artifacts, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  std::cout << "artifacts written to " << out_dir << "\n";
  if (artifacts.exit_code == 3) std::cerr << "validation failed; see diagnostics.json\n";
  return artifacts.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory optimization with convex-set collision avoidance"};
  std::string scenario_path;
  std::string out_dir = "out";
  bool dry_run = false;
  long seed = -1;
  int nodes = 0;
  bool no_validate = false;
  bool verbose = false;
  app.add_option("--scenario", scenario_path, "Scenario JSON file")->required();
  app.add_option("--out", out_dir, "Output directory for trajectory.csv / diagnostics.json");
  app.add_flag("--dry-run", dry_run, "Parse and print problem dimensions, then exit");
  app.add_option("--seed", seed, "Override the solver seed");
  app.add_option("--nodes", nodes, "Override the node count");
  app.add_flag("--no-validate", no_validate, "Skip the independent validation pass (debug)");
  app.add_flag("--verbose", verbose, "Per-iteration solver output");
  CLI11_PARSE(app, argc, argv);
  return run(scenario_path, out_dir, dry_run, seed, nodes, no_validate, verbose);
}
