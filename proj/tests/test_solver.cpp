#include <proxtraj/solver.hpp>

#include <gtest/gtest.h>

#include "test_scenarios.hpp"

using namespace proxtraj;
using namespace proxtraj::test;

namespace {

// min ||z||^2 subject to z_0 = 1.
class ToyQuadratic final : public LsqNlp {
 public:
  int dim() const override { return 4; }
  int num_obj_rows() const override { return 4; }
  int num_eq() const override { return 1; }
  int num_ineq() const override { return 0; }
  void eval(const VecX& z, VecX& obj, VecX& eq, VecX& ineq) const override {
    obj = z;
    eq.resize(1);
    eq[0] = z[0] - 1.0;
    ineq.resize(0);
  }
  void jacobians(const VecX& z, SpMat& jobj, SpMat& jeq, SpMat& jineq) const override {
    jobj.resize(4, 4);
    jobj.setIdentity();
    jeq.resize(1, 4);
    jeq.coeffRef(0, 0) = 1.0;
    jineq.resize(0, 4);
  }
};

SolverConfig default_config() {
  SolverConfig cfg;
  return cfg;
}

OcpSpec lq_point_mass_spec() {
  OcpSpec spec;
  spec.mode = DynamicsMode::point_mass;
  spec.body.mass = 1.0;
  spec.x0 = VecX::Zero(kPointMassStates);
  spec.xf = VecX::Zero(kPointMassStates);
  spec.xf[0] = 1.0;  // unit translation along x
  spec.t0 = 0.0;
  spec.tf = 1.0;
  spec.nodes = 41;
  spec.f_max = 20.0;
  spec.g_max = 1.0;
  spec.d_safe = 0.0;
  return spec;
}

}  // namespace

TEST(Solve, ToyQuadraticWithEquality) {
  const ToyQuadratic problem;
  const auto res = solve(problem, VecX::Constant(4, 3.0), default_config());
  EXPECT_EQ(res.report.status, SolveStatus::converged);
  EXPECT_NEAR(res.z[0], 1.0, 1e-6);
  EXPECT_LT(res.z.tail(3).norm(), 1e-6);
  EXPECT_NEAR(res.report.objective, 1.0, 1e-5);
}

TEST(Solve, RestToRestTranslationNoObstacles) {
  OcpSpec spec = scenario_a_spec();
  spec.obstacles.clear();
  spec.scheme = CollocationScheme::hermite_simpson;
  const Nlp nlp(spec);
  const auto res = solve(NlpAdapter(nlp), initial_guess_cold(nlp), default_config());
  ASSERT_EQ(res.report.status, SolveStatus::converged);
  EXPECT_LE(res.report.eq_residual, 1e-6);

  // Replay the computed controls through RK4 and check the terminal state.
  const Solution sol = nlp.extract(res.z);
  const auto traj = integrate_rigid_body(spec.x0, interpolate_controls(sol.times, sol.controls),
                                         spec.body, spec.t0, spec.tf, 3000);
  EXPECT_LT((traj.states.back().head<3>() - Vec3(10, 3, 0)).norm(), 1e-3);
  EXPECT_LT(traj.states.back().segment<3>(3).norm(), 1e-3);

  // Controls stay inside the box by construction (projection).
  for (const auto& u : sol.controls) {
    EXPECT_LE(u.head<3>().cwiseAbs().maxCoeff(), spec.f_max + 1e-12);
    EXPECT_LE(u.tail<3>().cwiseAbs().maxCoeff(), spec.g_max + 1e-12);
  }
}

TEST(Solve, DeterministicAcrossRepeatedRuns) {
  OcpSpec spec = point_mass_spec(1);
  spec.nodes = 8;
  const Nlp nlp(spec);
  const auto r1 = solve(NlpAdapter(nlp), initial_guess_cold(nlp), default_config());
  const auto r2 = solve(NlpAdapter(nlp), initial_guess_cold(nlp), default_config());
  EXPECT_EQ(r1.report.status, r2.report.status);
  EXPECT_EQ(r1.report.objective, r2.report.objective);  // bit-identical
  EXPECT_TRUE(r1.z == r2.z);
}

TEST(Solve, BadConfigRejected) {
  SolverConfig cfg;
  cfg.penalty_growth = 0.5;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = SolverConfig{};
  cfg.comp_eps_schedule = {1e-2, 1e-1};
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
}

TEST(RecoverDuals, LqCostatesMatchClosedForm) {
  // Min-energy rest-to-rest unit translation in unit time (unit mass):
  //   u(t) = 6(1-2t), costates lambda_v = -12(1-2t), lambda_r = -24.
  const OcpSpec spec = lq_point_mass_spec();
  const Nlp nlp(spec);
  const auto res = solve(NlpAdapter(nlp), initial_guess_cold(nlp), default_config());
  ASSERT_EQ(res.report.status, SolveStatus::converged);

  // Interior nodes: the discrete boundary controls carry an O(h) offset.
  const Solution sol = nlp.extract(res.z);
  for (int k = 1; k + 1 < spec.nodes; ++k) {
    const double t = sol.times[k];
    EXPECT_NEAR(sol.controls[k][0], 6.0 * (1.0 - 2.0 * t), 2e-2);
  }

  const CostateEstimate est = recover_duals(nlp, res.z);
  ASSERT_TRUE(est.reliable);
  for (int k = 1; k + 1 < spec.nodes; ++k) {
    const double t = sol.times[k];
    EXPECT_NEAR(est.costates(k, 0), -24.0, 0.3);                    // d r_x
    EXPECT_NEAR(est.costates(k, 3), -12.0 * (1.0 - 2.0 * t), 0.3);  // d v_x
    EXPECT_LT(std::abs(est.costates(k, 1)), 1e-3);                  // untouched axes
  }
}

TEST(RecoverDuals, StationaryZeroCostProblem) {
  OcpSpec spec = lq_point_mass_spec();
  spec.xf = spec.x0;  // stay put: zero-cost optimum
  const Nlp nlp(spec);
  const auto res = solve(NlpAdapter(nlp), initial_guess_cold(nlp), default_config());
  ASSERT_EQ(res.report.status, SolveStatus::converged);
  EXPECT_LT(res.report.objective, 1e-10);
  const CostateEstimate est = recover_duals(nlp, res.z);
  ASSERT_TRUE(est.reliable);
  EXPECT_LT(est.costates.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Continuation, StageCountsFollowObstacleCount) {
  // 1 (empty) + n_o (single obstacle) + 1 (full).
  OcpSpec spec = point_mass_spec(2);
  spec.nodes = 8;
  const auto res = continuation_solve(spec, default_config());
  EXPECT_EQ(res.stage_reports.size(), 4u);
  EXPECT_EQ(res.stage_reports.front().label, "empty");
  EXPECT_EQ(res.stage_reports.back().label, "full");
  EXPECT_TRUE(res.converged);

  OcpSpec no_obs = point_mass_spec(0);
  no_obs.nodes = 8;
  const auto res0 = continuation_solve(no_obs, default_config());
  EXPECT_EQ(res0.stage_reports.size(), 1u);
  EXPECT_TRUE(res0.converged);
}

TEST(Continuation, PointMassAvoidsSphere) {
  OcpSpec spec = point_mass_spec(1);
  spec.nodes = 16;
  const auto res = continuation_solve(spec, default_config());
  ASSERT_TRUE(res.converged);
  const PosedShape obstacle{spec.obstacles[0].shape, spec.obstacles[0].pose};
  for (int k = 0; k < spec.nodes; ++k) {
    const Vec3 r = res.solution.states[k].head<3>();
    EXPECT_GE(point_distance(obstacle, r), spec.d_safe - 1e-3);
  }
  // The witness pairs certify the same distances.
  for (int k = 0; k < spec.nodes; ++k)
    for (const auto& pr : res.solution.pairs[k]) EXPECT_GE(pr.lambda.minCoeff(), 0.0);
}
