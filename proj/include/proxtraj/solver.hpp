#pragma once

#include <proxtraj/transcription.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdint>
#include <memory>

namespace proxtraj {

//==============================================================================
// Solver-facing problem interface
//
// The objective is supplied in least-squares form, objective = ||robj(z)||^2;
// the transcription's quadrature of ||u||^2 is exactly of this shape and the
// inner minimizer exploits it.
//==============================================================================

class LsqNlp {
 public:
  virtual ~LsqNlp() = default;
  virtual int dim() const = 0;
  virtual int num_obj_rows() const = 0;
  virtual int num_eq() const = 0;
  virtual int num_ineq() const = 0;
  virtual VecX lower_bounds() const {
    return VecX::Constant(dim(), -std::numeric_limits<double>::infinity());
  }
  virtual VecX upper_bounds() const {
    return VecX::Constant(dim(), std::numeric_limits<double>::infinity());
  }
  /// Equality rows [first, second) are complementarity products, handled with
  /// the relaxation band |c| <= eps instead of c = 0.
  virtual std::pair<int, int> comp_range() const { return {num_eq(), num_eq()}; }
  /// Decision variables that are collision duals. While the complementarity
  /// band is loose these are kept strictly positive, which bars the
  /// zero-gradient saddle at coincident witness points; the floor is dropped
  /// on the final band so the exact problem is solved.
  virtual std::vector<int> dual_variable_indices() const { return {}; }
  virtual void eval(const VecX& z, VecX& obj, VecX& eq, VecX& ineq) const = 0;
  virtual void jacobians(const VecX& z, SpMat& jobj, SpMat& jeq, SpMat& jineq) const = 0;
};

/// Adapter exposing a transcribed Nlp through the solver interface.
class NlpAdapter final : public LsqNlp {
 public:
  explicit NlpAdapter(const Nlp& nlp) : nlp_(nlp) {}
  int dim() const override { return nlp_.dim(); }
  int num_obj_rows() const override { return nlp_.layout().nodes * nlp_.layout().nu; }
  int num_eq() const override { return nlp_.num_eq(); }
  int num_ineq() const override { return nlp_.num_ineq(); }
  VecX lower_bounds() const override { return nlp_.lower_bounds(); }
  VecX upper_bounds() const override { return nlp_.upper_bounds(); }
  std::pair<int, int> comp_range() const override {
    return {nlp_.comp_begin(), nlp_.comp_end()};
  }
  std::vector<int> dual_variable_indices() const override {
    std::vector<int> idx;
    for (const auto& blk : nlp_.layout().pairs) {
      for (int l = 0; l < blk.lambda_dim; ++l) idx.push_back(blk.lambda_offset + l);
      for (int l = 0; l < blk.mu_dim; ++l) idx.push_back(blk.mu_offset + l);
    }
    return idx;
  }
  void eval(const VecX& z, VecX& obj, VecX& eq, VecX& ineq) const override {
    const NlpEval ev = nlp_.eval(z);
    obj = nlp_.objective_residuals(z);
    eq = ev.eq;
    ineq = ev.ineq;
  }
  void jacobians(const VecX& z, SpMat& jobj, SpMat& jeq, SpMat& jineq) const override {
    const NlpJacobian jac = nlp_.jacobian(z);
    jobj = nlp_.objective_residual_jacobian(z);
    jeq = jac.eq;
    jineq = jac.ineq;
  }

 private:
  const Nlp& nlp_;
};

//==============================================================================
// Configuration and reporting
//==============================================================================

struct SolverConfig {
  int max_outer = 120;   // augmented-Lagrangian iterations per solve
  int max_inner = 200;   // Gauss-Newton iterations per subproblem
  double eq_tol = 1e-6;
  double ineq_tol = 1e-6;
  std::vector<double> comp_eps_schedule{1e-1, 1e-2, 1e-4, 1e-6};
  double penalty_init = 10.0;
  double penalty_growth = 5.0;
  double penalty_max = 1e8;
  std::uint64_t seed = 0;  // reserved for randomized callers; the solve itself is deterministic
  VecX variable_scaling;   // optional per-variable scale, empty = unscaled
  bool verbose = false;

  void validate() const {
    if (!(eq_tol > 0.0) || !(ineq_tol > 0.0))
      throw std::invalid_argument("SolverConfig: tolerances must be > 0");
    if (!(penalty_growth > 1.0))
      throw std::invalid_argument("SolverConfig: penalty_growth must exceed 1");
    for (size_t i = 1; i < comp_eps_schedule.size(); ++i)
      if (!(comp_eps_schedule[i] < comp_eps_schedule[i - 1]))
        throw std::invalid_argument("SolverConfig: comp_eps_schedule must strictly decrease");
  }
};

enum class SolveStatus { converged, max_iter, diverged };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::converged: return "converged";
    case SolveStatus::max_iter: return "max-iter";
    default: return "diverged";
  }
}

struct SolveReport {
  SolveStatus status = SolveStatus::max_iter;
  std::string label;
  int outer_iterations = 0;
  long inner_iterations = 0;
  double eq_residual = 0.0;    // max |c| over non-complementarity equalities
  double ineq_residual = 0.0;  // max (0, g)
  double comp_residual = 0.0;  // max |lambda f|
  double objective = 0.0;
  double wall_time_s = 0.0;
  double monotone_fraction = 1.0;  // share of outer iterations that improved feasibility
};

struct SolveResult {
  VecX z;
  SolveReport report;
  VecX eq_multipliers;    // augmented-Lagrangian estimates, non-comp equality rows
  VecX ineq_multipliers;  // nonnegative estimates for the inequality rows
};

//==============================================================================
// Augmented-Lagrangian solve
//==============================================================================

namespace detail {

inline VecX project_box(const VecX& z, const VecX& lo, const VecX& hi) {
  return z.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace detail

/// Minimizes ||robj||^2 subject to eq = 0 (complementarity rows relaxed to a
/// shrinking band), ineq <= 0 and variable bounds. Outer loop: first-order
/// multiplier updates with geometric penalty growth. Inner loop: projected
/// Gauss-Newton with Levenberg damping on the augmented-Lagrangian
/// least-squares form. Deterministic for a fixed config.
inline SolveResult solve(const LsqNlp& problem, const VecX& z0, const SolverConfig& config,
                         const std::string& label = "") {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int n = problem.dim();
  if (z0.size() != n) throw std::invalid_argument("solve: initial point dimension mismatch");

  VecX scale = config.variable_scaling;
  if (scale.size() == 0) scale = VecX::Ones(n);
  if (scale.size() != n || (scale.array() <= 0.0).any())
    throw std::invalid_argument("solve: variable_scaling must be positive and match dim");

  const VecX lo_base = problem.lower_bounds().cwiseQuotient(scale);
  const VecX hi = problem.upper_bounds().cwiseQuotient(scale);
  VecX lo = lo_base;
  const std::vector<int> dual_idx = problem.dual_variable_indices();

  const auto [comp0, comp1] = problem.comp_range();
  const int n_eq_all = problem.num_eq();
  const int n_comp = comp1 - comp0;
  const int n_eq = n_eq_all - n_comp;  // non-complementarity rows (prefix)
  const int n_in = problem.num_ineq();
  const int n_obj = problem.num_obj_rows();

  // Multipliers: all equality rows (complementarity rows included) and the
  // inequality rows. The complementarity products are treated as smooth
  // equalities; the eps schedule gates stage acceptance and the dual floor.
  VecX nu = VecX::Zero(n_eq_all);
  VecX sigma = VecX::Zero(n_in);

  double rho = config.penalty_init;
  size_t eps_idx = 0;
  double eps = config.comp_eps_schedule.empty() ? 0.0 : config.comp_eps_schedule[eps_idx];
  const bool has_schedule = !config.comp_eps_schedule.empty();
  const double final_eps = has_schedule ? config.comp_eps_schedule.back() : 0.0;

  double omega = 1e-2;  // inner stationarity tolerance
  double eta = 0.5;     // feasibility gate for multiplier updates

  VecX zs = z0.cwiseQuotient(scale);
  auto apply_dual_floor = [&]() {
    const bool last_band = !has_schedule || eps_idx + 1 >= config.comp_eps_schedule.size();
    const double floor = last_band ? 0.0 : std::min(0.05, 0.5 * eps);
    lo = lo_base;
    for (int i : dual_idx) lo[i] = std::max(lo[i], floor / scale[i]);
    zs = detail::project_box(zs, lo, hi);
  };
  apply_dual_floor();

  VecX r_obj, r_eq, r_in;
  SpMat j_obj, j_eq, j_in;
  auto eval_problem = [&](const VecX& zz) {
    problem.eval(zz.cwiseProduct(scale), r_obj, r_eq, r_in);
  };

  // Augmented-Lagrangian value at the current residuals.
  auto al_value = [&]() {
    double v = r_obj.squaredNorm();
    for (int i = 0; i < n_eq_all; ++i) {
      const double c = r_eq[i];
      v += nu[i] * c + 0.5 * rho * c * c;
    }
    for (int i = 0; i < n_in; ++i) {
      const double g = std::max(0.0, r_in[i] + sigma[i] / rho);
      v += 0.5 * rho * g * g;
    }
    return v;
  };

  // Stacked least-squares residual of the same value (up to constants) and
  // its Jacobian in scaled variables.
  const int m_total = n_obj + n_eq_all + n_in;
  VecX stack(m_total);
  auto fill_stack = [&]() {
    const double sr = std::sqrt(0.5 * rho);
    stack.head(n_obj) = r_obj;
    for (int i = 0; i < n_eq_all; ++i) stack[n_obj + i] = sr * (r_eq[i] + nu[i] / rho);
    for (int i = 0; i < n_in; ++i)
      stack[n_obj + n_eq_all + i] = sr * std::max(0.0, r_in[i] + sigma[i] / rho);
  };

  std::vector<Triplet> trips;
  auto build_jacobian = [&](SpMat& j) {
    problem.jacobians(zs.cwiseProduct(scale), j_obj, j_eq, j_in);
    trips.clear();
    const double sr = std::sqrt(0.5 * rho);
    for (int k = 0; k < j_obj.outerSize(); ++k)
      for (SpMat::InnerIterator it(j_obj, k); it; ++it)
        trips.emplace_back(it.row(), it.col(), it.value() * scale[it.col()]);
    for (int k = 0; k < j_eq.outerSize(); ++k)
      for (SpMat::InnerIterator it(j_eq, k); it; ++it)
        trips.emplace_back(n_obj + it.row(), it.col(), sr * it.value() * scale[it.col()]);
    for (int k = 0; k < j_in.outerSize(); ++k)
      for (SpMat::InnerIterator it(j_in, k); it; ++it)
        if (stack[n_obj + n_eq_all + it.row()] > 0.0)
          trips.emplace_back(n_obj + n_eq_all + it.row(), it.col(),
                             sr * it.value() * scale[it.col()]);
    j.resize(m_total, n);
    j.setFromTriplets(trips.begin(), trips.end());
  };

  SolveResult out;
  out.report.label = label;
  long inner_total = 0;
  int improved = 0, update_rounds = 0;
  double prev_theta = std::numeric_limits<double>::infinity();
  double theta_best = std::numeric_limits<double>::infinity();
  bool diverged = false;

  auto feasibility = [&](double& th_eq, double& th_comp, double& th_in) {
    th_eq = n_eq > 0 ? r_eq.head(n_eq).cwiseAbs().maxCoeff() : 0.0;
    th_comp = n_comp > 0 ? r_eq.segment(comp0, n_comp).cwiseAbs().maxCoeff() : 0.0;
    th_in = n_in > 0 ? r_in.cwiseMax(0.0).maxCoeff() : 0.0;
  };

  int outer = 0;
  for (; outer < config.max_outer; ++outer) {
    // ---- inner projected Gauss-Newton on the AL subproblem ----
    double lm = 1e-8;
    for (int inner = 0; inner < config.max_inner; ++inner) {
      ++inner_total;
      eval_problem(zs);
      if (!r_eq.allFinite() || !r_in.allFinite() || !r_obj.allFinite()) {
        diverged = true;
        break;
      }
      fill_stack();
      const double phi = al_value();
      SpMat j;
      build_jacobian(j);  // active-set masks read the stack at zs
      const VecX jtr = j.transpose() * stack;
      const VecX grad = 2.0 * jtr;
      const double pg = (zs - detail::project_box(zs - grad, lo, hi)).cwiseAbs().maxCoeff();
#ifdef PROXTRAJ_INNER_TRACE
      if (inner % 20 == 0)
        std::fprintf(stderr, "    inner %3d phi %.6e pg %.3e lm %.1e\n", inner, phi, pg, lm);
#endif
      if (pg <= omega) break;

      const SpMat jtj = SpMat(j.transpose()) * j;
      VecX marquardt = jtj.diagonal();
      const double diag_floor = std::max(1e-12, 1e-8 * marquardt.maxCoeff());
      marquardt = marquardt.cwiseMax(diag_floor);
      bool accepted = false;
      for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
        SpMat sys = jtj + SpMat(lm * marquardt.asDiagonal());
        Eigen::SimplicialLDLT<SpMat> ldlt(sys);
        if (ldlt.info() != Eigen::Success) {
          lm = std::max(lm * 10.0, 1e-6);
          continue;
        }
        const VecX dir = ldlt.solve(-jtr);
        double alpha = 1.0;
        for (int ls = 0; ls < 25; ++ls, alpha *= 0.5) {
          const VecX zc = detail::project_box(zs + alpha * dir, lo, hi);
          eval_problem(zc);
          if (!r_eq.allFinite() || !r_in.allFinite()) continue;
          fill_stack();
          if (al_value() < phi - 1e-12 * std::abs(phi)) {
            zs = zc;
            accepted = true;
            lm = std::max(lm * 0.3, 1e-10);
            break;
          }
        }
        if (!accepted) lm = std::max(lm * 10.0, 1e-6);
      }
      if (!accepted) {
        // Projected steepest descent as a last resort.
        double alpha = 1.0 / std::max(1.0, grad.cwiseAbs().maxCoeff());
        bool moved = false;
        for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
          const VecX zc = detail::project_box(zs - alpha * grad, lo, hi);
          eval_problem(zc);
          if (!r_eq.allFinite() || !r_in.allFinite()) continue;
          fill_stack();
          if (al_value() < phi - 1e-14) {
            zs = zc;
            moved = true;
            break;
          }
        }
        if (!moved) break;  // inner subproblem is as solved as it gets
      }
    }
    if (diverged) break;

    // ---- outer update ----
    eval_problem(zs);
    if (!r_eq.allFinite() || !r_in.allFinite() || !r_obj.allFinite()) {
      diverged = true;
      break;
    }
    double th_eq, th_comp, th_in;
    feasibility(th_eq, th_comp, th_in);
    if (config.verbose) {
      std::fprintf(stderr,
                   "[%s] outer %3d rho %.1e eps %.0e omega %.1e eta %.1e | eq %.2e comp %.2e "
                   "ineq %.2e obj %.4e inner %ld\n",
                   label.c_str(), outer, rho, eps, omega, eta, th_eq, th_comp, th_in,
                   r_obj.squaredNorm(), inner_total);
    }
    const double theta = std::max({th_eq, th_in, std::max(0.0, th_comp - eps)});
    if (theta <= prev_theta + 1e-15) ++improved;
    ++update_rounds;

    const bool comp_ok = !has_schedule || th_comp <= std::max(eps, config.eq_tol);
    if (th_eq <= config.eq_tol && th_in <= config.ineq_tol && comp_ok) {
      if (!has_schedule || eps_idx + 1 >= config.comp_eps_schedule.size()) {
        out.report.status = SolveStatus::converged;
        ++outer;
        break;
      }
      // Tighten the complementarity band and keep going.
      ++eps_idx;
      eps = config.comp_eps_schedule[eps_idx];
      apply_dual_floor();
      theta_best = std::numeric_limits<double>::infinity();
      prev_theta = std::numeric_limits<double>::infinity();
      continue;
    }

    // First-order multiplier updates whenever the iterate is not drifting
    // away; penalty growth only on insufficient feasibility progress.
    if (theta <= 2.0 * theta_best || theta <= eta) {
      for (int i = 0; i < n_eq_all; ++i) nu[i] += rho * r_eq[i];
      for (int i = 0; i < n_in; ++i) sigma[i] = std::max(0.0, sigma[i] + rho * r_in[i]);
    }
    if (!(theta <= 0.5 * prev_theta || theta <= eta)) {
      rho = std::min(config.penalty_max, rho * config.penalty_growth);
    }
    theta_best = std::min(theta_best, theta);
    prev_theta = theta;
    eta = std::max(0.25 * config.eq_tol, 0.5 * theta_best);
    omega = std::clamp(0.05 * theta_best, 1e-8, 1e-2);
  }

  eval_problem(zs);
  out.z = zs.cwiseProduct(scale);
  out.eq_multipliers = nu;
  out.ineq_multipliers = sigma;
  out.report.outer_iterations = outer;
  out.report.inner_iterations = inner_total;
  out.report.objective = r_obj.squaredNorm();
  double th_eq, th_comp, th_in;
  feasibility(th_eq, th_comp, th_in);
  out.report.eq_residual = th_eq;
  out.report.comp_residual = th_comp;
  out.report.ineq_residual = th_in;
  out.report.monotone_fraction = update_rounds > 0 ? double(improved) / update_rounds : 1.0;
  if (diverged || !out.z.allFinite()) {
    out.report.status = SolveStatus::diverged;
  } else if (out.report.status != SolveStatus::converged) {
    const bool comp_ok = th_comp <= std::max(final_eps, config.eq_tol);
    out.report.status = (th_eq <= config.eq_tol && th_in <= config.ineq_tol && comp_ok)
                            ? SolveStatus::converged
                            : SolveStatus::max_iter;
  }
  out.report.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return out;
}

//==============================================================================
// Continuation: obstacle-by-obstacle build-up
//==============================================================================

/// Posed vehicle component i at the node pose stored in z.
inline PosedShape vehicle_component_at(const Nlp& nlp, const VecX& z, int node, int shape_index) {
  const auto& spec = nlp.spec();
  const auto& lay = nlp.layout();
  const auto& ms = spec.vehicle_shapes[shape_index];
  const Vec4 q = quat_normalized(z.segment<4>(lay.state_offset(node) + 6));
  PosedShape posed{ms.shape, Pose{}};
  posed.pose.q = quat_mul(q, ms.mount.q);
  posed.pose.d = Vec3(z.segment<3>(lay.state_offset(node))) + rotation_matrix(q) * ms.mount.d;
  return posed;
}

/// Fills every witness block of z from the distance oracle at the trajectory
/// poses already stored in z, with duals recovered by least squares. Inside
/// overlaps, boundary points facing the other set keep the separation
/// gradient alive.
inline void init_pair_blocks(const Nlp& nlp, VecX& z) {
  const auto& spec = nlp.spec();
  auto boundary_toward = [](const ConvexShape& shape, Vec3 dir) {
    if (dir.norm() < 1e-9) dir = Vec3(1, 0, 0);
    dir.normalize();
    double lo = 0.0, hi = 1.0;
    while (eval(shape, VecX(Vec3(hi * dir))) < 0.0 && hi < 1e9) hi *= 2.0;
    for (int it = 0; it < 70; ++it) {
      const double mid = 0.5 * (lo + hi);
      (eval(shape, VecX(Vec3(mid * dir))) < 0.0 ? lo : hi) = mid;
    }
    return Vec3(0.5 * (lo + hi) * dir);
  };

  for (const auto& blk : nlp.layout().pairs) {
    const auto& ob = spec.obstacles[blk.obstacle_index];
    const PosedShape obstacle{ob.shape, ob.pose};
    if (spec.mode == DynamicsMode::full_dim) {
      const PosedShape vehicle = vehicle_component_at(nlp, z, blk.node, blk.shape_index);
      ClosestPointPair pr;
      const OracleResult orc = oracle_distance(vehicle, obstacle, 1e-10, 5000);
      if (orc.converged && !orc.overlapping && orc.dist > 1e-6) {
        pr.w_body = orc.w_body;
        pr.p_body = orc.p_body;
      } else {
        pr.w_body = boundary_toward(vehicle.shape,
                                    to_body(vehicle.pose, shape_center_inertial(obstacle)));
        pr.p_body = boundary_toward(obstacle.shape,
                                    to_body(obstacle.pose, shape_center_inertial(vehicle)));
      }
      recover_pair_duals(vehicle, obstacle, pr);
      z.segment<3>(blk.w_offset) = pr.w_body;
      z.segment<3>(blk.p_offset) = pr.p_body;
      z.segment(blk.lambda_offset, blk.lambda_dim) = pr.lambda.cwiseMax(1e-2);
      z.segment(blk.mu_offset, blk.mu_dim) = pr.mu.cwiseMax(1e-2);
    } else {
      const Vec3 r = z.segment<3>(nlp.layout().state_offset(blk.node));
      const Vec3 p_inertial = project_onto(obstacle, r);
      Vec3 p_body = to_body(obstacle.pose, p_inertial);
      if ((p_inertial - r).norm() < 1e-9)  // inside: face outward instead
        p_body = boundary_toward(obstacle.shape, Vec3(to_body(obstacle.pose, r)));
      z.segment<3>(blk.p_offset) = p_body;
      // Stationarity least squares for the scalar (or per-face) dual.
      const Mat3 rot = rotation_matrix(obstacle.pose.q);
      const Vec3 gap = r - (rot * p_body + obstacle.pose.d);
      VecX lam(blk.lambda_dim);
      if (const auto* pe = std::get_if<PolytopeExact>(&obstacle.shape)) {
        lam.setZero();
        const VecX faces = pe->A * p_body - pe->b;
        for (int l = 0; l < blk.lambda_dim; ++l)
          if (faces[l] > -1e-7) {
            const Vec3 dir = rot * pe->A.row(l).transpose();
            lam[l] = std::max(0.0, 2.0 * gap.dot(dir) / std::max(dir.squaredNorm(), 1e-14));
          }
      } else {
        const Vec3 dir = rot * Vec3(grad(obstacle.shape, VecX(p_body)));
        lam[0] = 2.0 * gap.dot(dir) / std::max(dir.squaredNorm(), 1e-14);
      }
      z.segment(blk.lambda_offset, blk.lambda_dim) = lam.cwiseMax(1e-2);
    }
  }
}

/// Pushes interior guess nodes radially away from any obstacle they touch
/// until every vehicle component clears it by d_safe plus a margin, then
/// refreshes the body-frame velocity states by differencing the repaired
/// positions. Collision-free warm starts keep the witness blocks away from
/// the zero-gradient coincident configuration.
inline void repair_guess_collisions(const Nlp& nlp, VecX& z, int passes = 3) {
  const auto& spec = nlp.spec();
  if (spec.obstacles.empty()) return;
  const auto& lay = nlp.layout();
  const double margin = std::max(0.05, 0.5 * spec.d_safe);
  const double target = spec.d_safe + margin;

  auto clearance = [&](int k, const Obstacle& ob) {
    const PosedShape obstacle{ob.shape, ob.pose};
    double worst = std::numeric_limits<double>::infinity();
    if (spec.mode == DynamicsMode::full_dim) {
      for (size_t i = 0; i < spec.vehicle_shapes.size(); ++i) {
        const auto orc = oracle_distance(vehicle_component_at(nlp, z, k, int(i)), obstacle,
                                         1e-8, 3000);
        worst = std::min(worst, orc.overlapping ? 0.0 : orc.dist);
      }
    } else {
      worst = point_distance(obstacle, Vec3(z.segment<3>(lay.state_offset(k))));
    }
    return worst;
  };

  for (int pass = 0; pass < passes; ++pass) {
    bool moved = false;
    for (int k = 1; k + 1 < lay.nodes; ++k) {
      for (const auto& ob : spec.obstacles) {
        if (clearance(k, ob) >= target) continue;
        const Vec3 center = to_inertial(ob.pose, Vec3::Zero());
        Vec3 dir = Vec3(z.segment<3>(lay.state_offset(k))) - center;
        if (dir.norm() < 1e-6) dir = Vec3(0, 1, 0);
        dir.normalize();
        const Vec3 r0 = z.segment<3>(lay.state_offset(k));
        double s_hi = 0.25;
        for (; s_hi < 64.0; s_hi *= 2.0) {
          z.segment<3>(lay.state_offset(k)) = r0 + s_hi * dir;
          if (clearance(k, ob) >= target) break;
        }
        double s_lo = 0.0;
        for (int it = 0; it < 30; ++it) {
          const double mid = 0.5 * (s_lo + s_hi);
          z.segment<3>(lay.state_offset(k)) = r0 + mid * dir;
          (clearance(k, ob) >= target ? s_hi : s_lo) = mid;
        }
        z.segment<3>(lay.state_offset(k)) = r0 + s_hi * dir;
        moved = true;
      }
    }
    if (!moved) break;
  }

  // Consistent velocity guesses from the repaired path (interior nodes).
  const double h = nlp.step();
  for (int k = 1; k + 1 < lay.nodes; ++k) {
    const Vec3 rdot = (Vec3(z.segment<3>(lay.state_offset(k + 1))) -
                       Vec3(z.segment<3>(lay.state_offset(k - 1)))) /
                      (2.0 * h);
    if (spec.mode == DynamicsMode::full_dim) {
      const Vec4 q = quat_normalized(z.segment<4>(lay.state_offset(k) + 6));
      z.segment<3>(lay.state_offset(k) + 3) = rotation_matrix(q).transpose() * rdot;
    } else {
      z.segment<3>(lay.state_offset(k) + 3) = rdot;
    }
  }
}

struct ContinuationResult {
  Solution solution;
  std::vector<SolveReport> stage_reports;
  bool converged = false;
  int failed_stage = -1;  // stage index when a solve diverged
};

/// Builds the full problem up from simpler ones: obstacle-free solve, one
/// solve per single obstacle warm-started from it, then the full problem
/// started from the superimposed single-obstacle solutions. The
/// complementarity band tightens inside each solve.
inline ContinuationResult continuation_solve(const OcpSpec& spec, const SolverConfig& config) {
  validate_spec(spec);
  ContinuationResult out;

  const Nlp full(spec);
  if (spec.obstacles.empty()) {
    const SolveResult res = solve(NlpAdapter(full), initial_guess_cold(full), config, "full");
    out.stage_reports.push_back(res.report);
    out.solution = full.extract(res.z);
    out.converged = res.report.status == SolveStatus::converged;
    if (res.report.status == SolveStatus::diverged) out.failed_stage = 0;
    return out;
  }

  // Stage 0: no obstacles.
  OcpSpec empty_spec = spec;
  empty_spec.obstacles.clear();
  const Nlp empty(empty_spec);
  const SolveResult base = solve(NlpAdapter(empty), initial_guess_cold(empty), config, "empty");
  out.stage_reports.push_back(base.report);
  out.solution = full.extract([&] {
    VecX z = VecX::Zero(full.dim());
    z.head(base.z.size()) = base.z;
    return z;
  }());
  if (base.report.status == SolveStatus::diverged) {
    out.failed_stage = 0;
    return out;
  }

  // One stage per obstacle, each warm-started from the obstacle-free solve.
  const int prefix = empty.dim();  // states+controls block, identical across stages
  std::vector<VecX> singles;
  for (size_t j = 0; j < spec.obstacles.size(); ++j) {
    OcpSpec sj = spec;
    sj.obstacles = {spec.obstacles[j]};
    const Nlp nj(sj);
    VecX z0 = VecX::Zero(nj.dim());
    z0.head(prefix) = base.z;
    repair_guess_collisions(nj, z0);
    init_pair_blocks(nj, z0);
    const SolveResult res =
        solve(NlpAdapter(nj), z0, config, "obstacle " + spec.obstacles[j].name);
    out.stage_reports.push_back(res.report);
    if (res.report.status == SolveStatus::diverged) {
      out.failed_stage = static_cast<int>(out.stage_reports.size()) - 1;
      return out;
    }
    singles.push_back(res.z.head(prefix));
  }

  // Full problem from the superimposed single-obstacle maneuvers.
  VecX zf = VecX::Zero(full.dim());
  VecX prefix_guess = base.z;
  for (const auto& zs : singles) prefix_guess += zs - base.z;
  zf.head(prefix) = prefix_guess;
  if (spec.mode == DynamicsMode::full_dim) {
    for (int k = 0; k < full.layout().nodes; ++k) {
      auto q = zf.segment<4>(full.layout().state_offset(k) + 6);
      const double nq = q.norm();
      if (nq > 1e-12) q /= nq;
    }
  }
  repair_guess_collisions(full, zf);
  init_pair_blocks(full, zf);
  const SolveResult res = solve(NlpAdapter(full), zf, config, "full");
  out.stage_reports.push_back(res.report);
  out.solution = full.extract(res.z);
  out.converged = res.report.status == SolveStatus::converged;
  if (res.report.status == SolveStatus::diverged)
    out.failed_stage = static_cast<int>(out.stage_reports.size()) - 1;
  return out;
}

//==============================================================================
// Costate recovery
//==============================================================================

struct CostateEstimate {
  MatX costates;  // nodes x nx, discrete adjoint at the nodes
  bool reliable = false;
  double stationarity_residual = 0.0;
  VecX defect_multipliers;  // raw least-squares multipliers of the defects
};

/// Least-squares KKT multipliers at z*: defect multipliers double as discrete
/// costates. Active inequalities and active variable bounds enter the
/// stationarity system alongside the equalities.
inline CostateEstimate recover_duals(const Nlp& nlp, const VecX& z, double active_tol = 1e-6) {
  const NlpJacobian jac = nlp.jacobian(z);
  const NlpEval ev = nlp.eval(z);
  const int n = nlp.dim();
  const int n_eq = nlp.num_eq();

  std::vector<int> active_in;
  for (int i = 0; i < nlp.num_ineq(); ++i)
    if (ev.ineq[i] > -active_tol) active_in.push_back(i);
  std::vector<std::pair<int, double>> active_bounds;  // (variable, sign)
  const VecX& lb = nlp.lower_bounds();
  const VecX& ub = nlp.upper_bounds();
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(lb[i]) && z[i] - lb[i] < active_tol) active_bounds.push_back({i, -1.0});
    if (std::isfinite(ub[i]) && ub[i] - z[i] < active_tol) active_bounds.push_back({i, 1.0});
  }

  const int m = n_eq + static_cast<int>(active_in.size() + active_bounds.size());
  std::vector<Triplet> trips;
  for (int k = 0; k < jac.eq.outerSize(); ++k)
    for (SpMat::InnerIterator it(jac.eq, k); it; ++it)
      trips.emplace_back(it.col(), it.row(), it.value());  // transpose
  for (size_t c = 0; c < active_in.size(); ++c)
    for (int k = 0; k < jac.ineq.outerSize(); ++k)
      for (SpMat::InnerIterator it(jac.ineq, k); it; ++it)
        if (it.row() == active_in[c])
          trips.emplace_back(it.col(), n_eq + static_cast<int>(c), it.value());
  for (size_t c = 0; c < active_bounds.size(); ++c)
    trips.emplace_back(active_bounds[c].first,
                       n_eq + static_cast<int>(active_in.size() + c), active_bounds[c].second);
  SpMat m_cols(n, m);
  m_cols.setFromTriplets(trips.begin(), trips.end());

  const VecX g0 = jac.objective_gradient;
  MatX normal = (MatX(SpMat(m_cols.transpose()) * m_cols));
  normal.diagonal().array() += 1e-10;
  const VecX y = normal.ldlt().solve(-(m_cols.transpose() * g0).eval());

  CostateEstimate out;
  out.stationarity_residual = (g0 + m_cols * y).cwiseAbs().maxCoeff();
  out.reliable = out.stationarity_residual <= 1e-4 * std::max(1.0, g0.cwiseAbs().maxCoeff());

  const int nodes = nlp.layout().nodes;
  const int nx = nlp.layout().nx;
  out.defect_multipliers = y.head((nodes - 1) * nx);
  out.costates.resize(nodes, nx);
  auto nu_at = [&](int k) { return out.defect_multipliers.segment(k * nx, nx); };
  // Defect multipliers live on the dual (interval-midpoint) grid: average for
  // interior nodes, extrapolate linearly at the ends.
  for (int k = 1; k + 1 < nodes; ++k)
    out.costates.row(k) = -0.5 * (nu_at(k - 1) + nu_at(k)).transpose();
  if (nodes >= 3) {
    out.costates.row(0) = -0.5 * (3.0 * nu_at(0) - nu_at(1)).transpose();
    out.costates.row(nodes - 1) = -0.5 * (3.0 * nu_at(nodes - 2) - nu_at(nodes - 3)).transpose();
  } else {
    out.costates.row(0) = -nu_at(0).transpose();
    out.costates.row(nodes - 1) = -nu_at(nodes - 2).transpose();
  }
  return out;
}

}  // namespace proxtraj
