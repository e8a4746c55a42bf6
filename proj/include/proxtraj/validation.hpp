#pragma once

#include <proxtraj/solver.hpp>

#include <algorithm>

namespace proxtraj {

//==============================================================================
// Dynamics replay
//==============================================================================

struct ReplayReport {
  bool pass = false;
  double max_position_deviation = 0.0;  // over nodes [m]
  double max_velocity_deviation = 0.0;  // over nodes [m/s]
  int worst_node = 0;
  VecX node_position_deviation;
  double position_tolerance = 0.05;
  double velocity_tolerance = 0.01;
};

/// Re-integrates the solution's controls (linear interpolation) with RK4 from
/// the initial state and measures the node-state deviation.
inline ReplayReport replay_dynamics(const Solution& sol, const OcpSpec& spec, int substeps = 25) {
  ReplayReport rep;
  const int n = static_cast<int>(sol.states.size());
  rep.node_position_deviation.setZero(n);
  const auto control = interpolate_controls(sol.times, sol.controls);
  const int steps = substeps * (n - 1);
  const Trajectory traj =
      spec.mode == DynamicsMode::full_dim
          ? integrate_rigid_body(sol.states.front(), control, spec.body, spec.t0, spec.tf, steps)
          : integrate_point_mass(sol.states.front(), control, spec.body.mass, spec.t0, spec.tf,
                                 steps);
  for (int k = 0; k < n; ++k) {
    const VecX& x_int = traj.states[k * substeps];
    const VecX& x_sol = sol.states[k];
    const double dp = (x_int.head<3>() - x_sol.head<3>()).norm();
    const double dv = (x_int.segment<3>(3) - x_sol.segment<3>(3)).norm();
    rep.node_position_deviation[k] = dp;
    if (dp > rep.max_position_deviation) {
      rep.max_position_deviation = dp;
      rep.worst_node = k;
    }
    rep.max_velocity_deviation = std::max(rep.max_velocity_deviation, dv);
  }
  rep.pass = rep.max_position_deviation < rep.position_tolerance &&
             rep.max_velocity_deviation < rep.velocity_tolerance;
  return rep;
}

//==============================================================================
// Dense collision audit
//==============================================================================

struct AuditSample {
  double time = 0.0;
  int shape_index = 0;
  int obstacle_index = 0;
  double distance = 0.0;
  bool at_node = false;
  bool oracle_converged = true;
};

struct AuditReport {
  bool pass = false;            // node-level distances clear d_safe - 1e-3
  double min_node_distance = 0.0;
  double min_dense_distance = 0.0;
  std::vector<AuditSample> dips;  // inter-node samples below d_safe - 1e-3 (warnings)
  MatX min_node_distance_per_pair;  // n_s x n_o
  int flagged_samples = 0;
  std::vector<AuditSample> samples;
};

/// Pose of the vehicle interpolated between nodes: linear position,
/// normalized-linear quaternion.
inline void interpolate_pose(const Solution& sol, double t, Vec3& r, Vec4& q, bool full_dim) {
  const int n = static_cast<int>(sol.states.size());
  int k = 0;
  while (k + 1 < n - 1 && sol.times[k + 1] < t) ++k;
  const double a =
      std::clamp((t - sol.times[k]) / (sol.times[k + 1] - sol.times[k]), 0.0, 1.0);
  r = (1.0 - a) * sol.states[k].head<3>() + a * sol.states[k + 1].head<3>();
  if (full_dim) {
    Vec4 qa = sol.states[k].segment<4>(6), qb = sol.states[k + 1].segment<4>(6);
    if (qa.dot(qb) < 0.0) qb = -qb;  // shorter arc
    q = quat_normalized(Vec4((1.0 - a) * qa + a * qb));
  } else {
    q = Vec4(0, 0, 0, 1);
  }
}

/// Oracle-based distance timeline at `resolution` samples per node interval.
/// Node-level clearance below d_safe - 1e-3 fails the audit; inter-node dips
/// are reported as warnings only, matching the node-wise constraint.
inline AuditReport audit_collisions(const Solution& sol, const OcpSpec& spec,
                                    int resolution = 10) {
  if (resolution < 1) throw std::invalid_argument("audit_collisions: resolution must be >= 1");
  AuditReport rep;
  rep.min_node_distance = std::numeric_limits<double>::infinity();
  rep.min_dense_distance = std::numeric_limits<double>::infinity();
  const int n = static_cast<int>(sol.states.size());
  const int n_s = spec.mode == DynamicsMode::full_dim
                      ? static_cast<int>(spec.vehicle_shapes.size())
                      : 1;
  const int n_o = static_cast<int>(spec.obstacles.size());
  rep.min_node_distance_per_pair =
      MatX::Constant(n_s, n_o, std::numeric_limits<double>::infinity());
  if (n_o == 0) {
    rep.pass = true;
    return rep;
  }

  for (int k = 0; k + 1 < n; ++k) {
    for (int s = (k == 0 ? 0 : 1); s <= resolution; ++s) {
      const double a = double(s) / resolution;
      const double t = sol.times[k] + a * (sol.times[k + 1] - sol.times[k]);
      const bool at_node = (s == 0 || s == resolution);
      Vec3 r;
      Vec4 q;
      interpolate_pose(sol, t, r, q, spec.mode == DynamicsMode::full_dim);
      for (int i = 0; i < n_s; ++i) {
        for (int j = 0; j < n_o; ++j) {
          const PosedShape obstacle{spec.obstacles[j].shape, spec.obstacles[j].pose};
          AuditSample smp;
          smp.time = t;
          smp.shape_index = i;
          smp.obstacle_index = j;
          smp.at_node = at_node;
          if (spec.mode == DynamicsMode::full_dim) {
            const auto& ms = spec.vehicle_shapes[i];
            PosedShape veh{ms.shape, Pose{}};
            veh.pose.q = quat_mul(q, ms.mount.q);
            veh.pose.d = r + rotation_matrix(q) * ms.mount.d;
            const OracleResult orc = oracle_distance(veh, obstacle, 1e-9, 10000);
            smp.distance = orc.dist;
            smp.oracle_converged = orc.converged;
            if (!orc.converged) ++rep.flagged_samples;
          } else {
            smp.distance = point_distance(obstacle, r);
          }
          rep.samples.push_back(smp);
          rep.min_dense_distance = std::min(rep.min_dense_distance, smp.distance);
          if (at_node) {
            rep.min_node_distance = std::min(rep.min_node_distance, smp.distance);
            rep.min_node_distance_per_pair(i, j) =
                std::min(rep.min_node_distance_per_pair(i, j), smp.distance);
          } else if (smp.distance < spec.d_safe - 1e-3) {
            rep.dips.push_back(smp);
          }
        }
      }
    }
  }
  rep.pass = rep.min_node_distance >= spec.d_safe - 1e-3;
  return rep;
}

//==============================================================================
// Hamiltonian constancy
//==============================================================================

struct HamiltonianProfile {
  VecX values;         // per node
  double score = 0.0;  // std / |mean|
  bool pass = false;
  bool skipped = false;
  std::string note;
};

/// H(t) = ||u||^2 + lambda_x . f(x, u) per node; constant along extremals of
/// the time-invariant problem. Skipped when the costates are unreliable.
inline HamiltonianProfile hamiltonian_profile(const Solution& sol, const CostateEstimate& costates,
                                              const OcpSpec& spec, double pass_threshold = 0.05) {
  HamiltonianProfile prof;
  if (!costates.reliable) {
    prof.skipped = true;
    prof.note = "costates unreliable (stationarity residual " +
                std::to_string(costates.stationarity_residual) + ")";
    return prof;
  }
  const int n = static_cast<int>(sol.states.size());
  prof.values.resize(n);
  for (int k = 0; k < n; ++k) {
    const VecX f = spec.mode == DynamicsMode::full_dim
                       ? state_derivative(sol.states[k], sol.controls[k], spec.body)
                       : point_mass_derivative(sol.states[k], sol.controls[k], spec.body.mass);
    prof.values[k] = sol.controls[k].squaredNorm() + costates.costates.row(k).dot(f);
  }
  const double mean = prof.values.mean();
  const double variance = (prof.values.array() - mean).square().sum() / n;
  prof.score = std::sqrt(variance) / (std::abs(mean) + 1e-12);
  prof.pass = prof.score < pass_threshold;
  return prof;
}

/// Hamiltonian diagnostic with the junction effect controlled: the node-wise
/// profile of a coarse solution steps where the separation constraint touches
/// (the discrete costate jump is O(h) there), so the extremal property is
/// measured on a mesh-refined re-solve warm-started from the solution under
/// test. Falls back to the coarse profile when the refined solve fails.
struct HamiltonianDiagnostic {
  HamiltonianProfile coarse;
  HamiltonianProfile refined;
  bool used_refined = false;
  int refined_nodes = 0;
};

inline HamiltonianDiagnostic hamiltonian_diagnostic(const Solution& sol, const OcpSpec& spec,
                                                    const SolverConfig& config,
                                                    int refine_factor = 4,
                                                    double pass_threshold = 0.05) {
  HamiltonianDiagnostic diag;
  {
    const Nlp coarse_nlp(spec);
    const CostateEstimate est = recover_duals(coarse_nlp, coarse_nlp.pack_solution(sol));
    diag.coarse = hamiltonian_profile(sol, est, spec, pass_threshold);
  }
  if (refine_factor <= 1) return diag;

  OcpSpec fine_spec = spec;
  fine_spec.nodes = (spec.nodes - 1) * refine_factor + 1;  // nested grid
  diag.refined_nodes = fine_spec.nodes;
  const Nlp fine(fine_spec);
  VecX z0 = initial_guess_interpolate(fine, sol);
  init_pair_blocks(fine, z0);
  const SolveResult res = solve(NlpAdapter(fine), z0, config, "hamiltonian-refine");
  if (res.report.status != SolveStatus::converged) {
    diag.refined = diag.coarse;
    diag.refined.note = "refined solve did not converge; coarse profile reported";
    return diag;
  }
  const Solution fine_sol = fine.extract(res.z);
  const CostateEstimate est = recover_duals(fine, res.z);
  diag.refined = hamiltonian_profile(fine_sol, est, fine_spec, pass_threshold);
  diag.used_refined = true;
  return diag;
}

//==============================================================================
// Infinity-norm approximation error study
//==============================================================================

struct PnormErrorRow {
  double half_width = 0.0;
  double exponent = 0.0;
  double max_offset_error = 0.0;  // inward boundary offset in half-width units
};

/// Smooth-maximum underestimation of a 2-D square: for boundary samples of
/// the exact square the ray from the center is bisected to the smooth zero
/// level set; the error is the inward offset, normalized by the half-width.
/// Faces are stored as (n . p)/s - 1 so rows are exactly size-invariant.
inline std::vector<PnormErrorRow> pnorm_error_study(const std::vector<double>& half_widths,
                                                    const std::vector<double>& exponents,
                                                    int samples = 400) {
  for (size_t i = 1; i < exponents.size(); ++i)
    if (!(exponents[i] > exponents[i - 1]))
      throw std::invalid_argument("pnorm_error_study: exponents must increase");
  std::vector<PnormErrorRow> rows;
  for (double s : half_widths) {
    MatX a(4, 2);
    a << 1.0 / s, 0.0, -1.0 / s, 0.0, 0.0, 1.0 / s, 0.0, -1.0 / s;
    const VecX b = VecX::Ones(4);
    for (double q : exponents) {
      const PolytopeSmooth smooth{a, b, VecX::Constant(4, q), q};
      double worst = 0.0;
      for (int i = 0; i < samples; ++i) {
        // Sweep the exact boundary: perimeter parameter in [0, 4).
        const double u = 4.0 * double(i) / samples;
        VecX p(2);
        const int side = static_cast<int>(u);
        const double w = 2.0 * (u - side) - 1.0;
        switch (side) {
          case 0: p << s, w * s; break;
          case 1: p << -w * s, s; break;
          case 2: p << -s, -w * s; break;
          default: p << w * s, -s; break;
        }
        // Bisect f(tau p) = 0 on the center ray; center is interior for q > ln 4.
        double lo = 0.0, hi = 1.0;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          (eval(smooth, VecX(mid * p)) < 0.0 ? lo : hi) = mid;
        }
        const double tau = 0.5 * (lo + hi);
        worst = std::max(worst, (1.0 - tau) * p.norm() / s);
      }
      rows.push_back({s, q, worst});
    }
  }
  return rows;
}

}  // namespace proxtraj
