#pragma once

#include <proxtraj/distance.hpp>
#include <proxtraj/dynamics.hpp>

#include <Eigen/Sparse>

#include <string>
#include <vector>

namespace proxtraj {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

enum class DynamicsMode { point_mass, full_dim };
enum class CollocationScheme { trapezoidal, hermite_simpson };

/// One convex component of the vehicle, mounted at a fixed pose in the
/// vehicle body frame.
struct MountedShape {
  ConvexShape shape;
  Pose mount;
};

struct Obstacle {
  std::string name;
  ConvexShape shape;
  Pose pose;  // fixed: obstacles are stationary
};

/// Complete problem statement for one motion-planning run.
struct OcpSpec {
  DynamicsMode mode = DynamicsMode::full_dim;
  CollocationScheme scheme = CollocationScheme::trapezoidal;
  RigidBodyParams body;
  std::vector<MountedShape> vehicle_shapes;  // unused in point-mass mode
  std::vector<Obstacle> obstacles;
  VecX x0, xf;
  double t0 = 0.0, tf = 1.0;
  int nodes = 2;
  double f_max = 1.0, g_max = 1.0;  // per-axis input bounds
  double d_safe = 0.0;              // minimum allowed separation [m]
};

inline int state_dim(DynamicsMode m) {
  return m == DynamicsMode::full_dim ? kFullDimStates : kPointMassStates;
}
inline int control_dim(DynamicsMode m) {
  return m == DynamicsMode::full_dim ? kFullDimControls : kPointMassControls;
}

inline void validate_spec(const OcpSpec& spec) {
  if (!(spec.tf > spec.t0)) throw std::invalid_argument("OcpSpec: tf must exceed t0");
  if (spec.nodes < 2) throw std::invalid_argument("OcpSpec: need at least 2 nodes");
  if (spec.d_safe < 0.0) throw std::invalid_argument("OcpSpec: d_safe must be >= 0");
  if (!(spec.f_max > 0.0) || !(spec.g_max > 0.0))
    throw std::invalid_argument("OcpSpec: input bounds must be > 0");
  const int nx = state_dim(spec.mode);
  if (spec.x0.size() != nx || spec.xf.size() != nx)
    throw std::invalid_argument("OcpSpec: boundary state dimension mismatch");
  if (spec.mode == DynamicsMode::full_dim) {
    validate_params(spec.body);
    if (spec.vehicle_shapes.empty())
      throw std::invalid_argument("OcpSpec: full-dimensional vehicle needs at least one shape");
    if (std::abs(spec.x0.segment<4>(6).norm() - 1.0) > 1e-6 ||
        std::abs(spec.xf.segment<4>(6).norm() - 1.0) > 1e-6)
      throw std::invalid_argument("OcpSpec: boundary quaternions must be unit norm");
    for (const auto& ms : spec.vehicle_shapes) {
      validate_shape(ms.shape);
      check_unit_quaternion(ms.mount.q);
    }
  } else if (!(spec.body.mass > 0.0)) {
    throw std::invalid_argument("OcpSpec: mass must be > 0");
  }
  for (const auto& ob : spec.obstacles) {
    validate_shape(ob.shape);
    check_unit_quaternion(ob.pose.q);
  }
}

//==============================================================================
// Decision-vector layout
//
// [states x_0..x_{N-1}] [controls u_0..u_{N-1}] [pair blocks, node-major].
// A full-dimensional pair block holds (w, p, lambda, mu); point-mass blocks
// hold (p, lambda) only.
//==============================================================================

struct PairBlock {
  int node = 0;
  int shape_index = 0;     // vehicle component (always 0 in point-mass mode)
  int obstacle_index = 0;
  int w_offset = -1;       // full-dim only
  int p_offset = 0;
  int lambda_offset = 0;
  int lambda_dim = 1;
  int mu_offset = -1;      // full-dim only
  int mu_dim = 0;
};

struct NlpLayout {
  int nx = 0, nu = 0, nodes = 0;
  int control_base = 0;
  int dim = 0;
  std::vector<PairBlock> pairs;  // ordered by (node, shape, obstacle)
  int pairs_per_node = 0;

  int state_offset(int k) const { return k * nx; }
  int control_offset(int k) const { return control_base + k * nu; }
  const PairBlock& pair(int node, int index_in_node) const {
    return pairs[node * pairs_per_node + index_in_node];
  }
};

inline NlpLayout make_layout(const OcpSpec& spec) {
  NlpLayout lay;
  lay.nx = state_dim(spec.mode);
  lay.nu = control_dim(spec.mode);
  lay.nodes = spec.nodes;
  lay.control_base = lay.nodes * lay.nx;
  int offset = lay.control_base + lay.nodes * lay.nu;
  const int n_s =
      spec.mode == DynamicsMode::full_dim ? static_cast<int>(spec.vehicle_shapes.size()) : 1;
  const int n_o = static_cast<int>(spec.obstacles.size());
  lay.pairs_per_node = n_s * n_o;
  for (int k = 0; k < lay.nodes; ++k) {
    for (int i = 0; i < n_s; ++i) {
      for (int j = 0; j < n_o; ++j) {
        PairBlock blk;
        blk.node = k;
        blk.shape_index = i;
        blk.obstacle_index = j;
        blk.mu_dim = 0;
        if (spec.mode == DynamicsMode::full_dim) {
          blk.w_offset = offset;
          offset += 3;
          blk.p_offset = offset;
          offset += 3;
          blk.lambda_dim = dual_dim(spec.vehicle_shapes[i].shape);
          blk.lambda_offset = offset;
          offset += blk.lambda_dim;
          blk.mu_dim = dual_dim(spec.obstacles[j].shape);
          blk.mu_offset = offset;
          offset += blk.mu_dim;
        } else {
          blk.p_offset = offset;
          offset += 3;
          blk.lambda_dim = dual_dim(spec.obstacles[j].shape);
          blk.lambda_offset = offset;
          offset += blk.lambda_dim;
        }
        lay.pairs.push_back(blk);
      }
    }
  }
  lay.dim = offset;
  return lay;
}

//==============================================================================
// Solution value object
//==============================================================================

struct Solution {
  VecX times;                    // N
  std::vector<VecX> states;      // N x nx
  std::vector<VecX> controls;    // N x nu
  // pairs[k][q]: closest-point witness for node k and pair q (layout order).
  std::vector<std::vector<ClosestPointPair>> pairs;
  double objective = 0.0;
};

//==============================================================================
// Transcribed NLP
//==============================================================================

struct NlpEval {
  double objective = 0.0;
  VecX eq;
  VecX ineq;
};

struct NlpJacobian {
  VecX objective_gradient;
  SpMat eq;    // num_eq x dim
  SpMat ineq;  // num_ineq x dim
};

/// Direct collocation of an OcpSpec: trapezoidal (or Hermite-Simpson) defect
/// equalities, boundary conditions, per-node quaternion normalization, and
/// the optimality-system collision constraints for every (node, vehicle
/// component, obstacle) triple.
///
/// Equality order: defects | x0 | xf | quaternion norms | per-pair
/// stationarity | per-pair complementarity. Inequality order: per pair

/// [f_S faces, f_O faces, d_safe^2 - gap^2].
class Nlp {
 public:
  explicit Nlp(OcpSpec spec) : spec_(std::move(spec)) {
    validate_spec(spec_);
    layout_ = make_layout(spec_);
    h_ = (spec_.tf - spec_.t0) / (layout_.nodes - 1);

    weights_ = VecX::Constant(layout_.nodes, h_);
    weights_[0] = weights_[layout_.nodes - 1] = 0.5 * h_;

    const int nx = layout_.nx;
    num_defect_rows_ = (layout_.nodes - 1) * nx;
    quat_rows_ = spec_.mode == DynamicsMode::full_dim ? layout_.nodes : 0;
    stationarity_rows_per_pair_ = spec_.mode == DynamicsMode::full_dim ? 6 : 3;
    int comp_rows = 0, ineq_rows = 0, stat_rows = 0;
    for (const auto& blk : layout_.pairs) {
      stat_rows += stationarity_rows_per_pair_;
      comp_rows += blk.lambda_dim + blk.mu_dim;
      ineq_rows += blk.lambda_dim + blk.mu_dim + 1;
    }
    stationarity_base_ = num_defect_rows_ + 2 * nx + quat_rows_;
    comp_base_ = stationarity_base_ + stat_rows;
    num_eq_ = comp_base_ + comp_rows;
    num_ineq_ = ineq_rows;

    lb_ = VecX::Constant(layout_.dim, -std::numeric_limits<double>::infinity());
    ub_ = VecX::Constant(layout_.dim, std::numeric_limits<double>::infinity());
    for (int k = 0; k < layout_.nodes; ++k) {
      const int uo = layout_.control_offset(k);
      for (int c = 0; c < layout_.nu; ++c) {
        const double cap = (spec_.mode == DynamicsMode::full_dim && c >= 3) ? spec_.g_max
                                                                            : spec_.f_max;
        lb_[uo + c] = -cap;
        ub_[uo + c] = cap;
      }
    }
    for (const auto& blk : layout_.pairs) {
      for (int l = 0; l < blk.lambda_dim; ++l) lb_[blk.lambda_offset + l] = 0.0;
      for (int l = 0; l < blk.mu_dim; ++l) lb_[blk.mu_offset + l] = 0.0;
    }
  }

  const OcpSpec& spec() const { return spec_; }
  const NlpLayout& layout() const { return layout_; }
  int dim() const { return layout_.dim; }
  int num_eq() const { return num_eq_; }
  int num_ineq() const { return num_ineq_; }
  const VecX& lower_bounds() const { return lb_; }
  const VecX& upper_bounds() const { return ub_; }
  double node_time(int k) const { return spec_.t0 + k * h_; }
  double step() const { return h_; }
  const VecX& quadrature_weights() const { return weights_; }

  /// Rows [comp_begin, comp_end) of the equality vector hold the
  /// complementarity products, relaxed by the solver's continuation band.
  int comp_begin() const { return comp_base_; }
  int comp_end() const { return num_eq_; }

  double objective(const VecX& z) const {
    double acc = 0.0;
    for (int k = 0; k < layout_.nodes; ++k)
      acc += weights_[k] * z.segment(layout_.control_offset(k), layout_.nu).squaredNorm();
    return acc;
  }

  /// Objective as least-squares rows sqrt(w_k) * u_k (the objective is an
  /// exact sum of squares, which the solver exploits).
  VecX objective_residuals(const VecX& z) const {
    VecX r(layout_.nodes * layout_.nu);
    for (int k = 0; k < layout_.nodes; ++k)
      r.segment(k * layout_.nu, layout_.nu) =
          std::sqrt(weights_[k]) * z.segment(layout_.control_offset(k), layout_.nu);
    return r;
  }

  SpMat objective_residual_jacobian(const VecX&) const {
    std::vector<Triplet> trips;
    for (int k = 0; k < layout_.nodes; ++k)
      for (int c = 0; c < layout_.nu; ++c)
        trips.emplace_back(k * layout_.nu + c, layout_.control_offset(k) + c,
                           std::sqrt(weights_[k]));
    SpMat j(layout_.nodes * layout_.nu, layout_.dim);
    j.setFromTriplets(trips.begin(), trips.end());
    return j;
  }

  NlpEval eval(const VecX& z) const {
    if (z.size() != layout_.dim) throw std::invalid_argument("Nlp::eval: dimension mismatch");
    NlpEval out;
    out.objective = objective(z);
    out.eq.setZero(num_eq_);
    out.ineq.setZero(num_ineq_);
    assemble(z, &out, nullptr);
    return out;
  }

  NlpJacobian jacobian(const VecX& z) const {
    if (z.size() != layout_.dim) throw std::invalid_argument("Nlp::jacobian: dimension mismatch");
    NlpJacobian out;
    out.objective_gradient.setZero(layout_.dim);
    for (int k = 0; k < layout_.nodes; ++k)
      out.objective_gradient.segment(layout_.control_offset(k), layout_.nu) =
          2.0 * weights_[k] * z.segment(layout_.control_offset(k), layout_.nu);
    JacobianWork work;
    NlpEval scratch;
    scratch.eq.setZero(num_eq_);
    scratch.ineq.setZero(num_ineq_);
    assemble(z, &scratch, &work);
    out.eq.resize(num_eq_, layout_.dim);
    out.eq.setFromTriplets(work.eq.begin(), work.eq.end());
    out.ineq.resize(num_ineq_, layout_.dim);
    out.ineq.setFromTriplets(work.ineq.begin(), work.ineq.end());
    return out;
  }

  /// Human-readable label of an equality row, for diagnostics.
  std::string eq_row_label(int row) const {
    const int nx = layout_.nx;
    if (row < num_defect_rows_)
      return "defect[node " + std::to_string(row / nx) + ", state " + std::to_string(row % nx) +
             "]";
    row -= num_defect_rows_;
    if (row < nx) return "initial_condition[" + std::to_string(row) + "]";
    row -= nx;
    if (row < nx) return "terminal_condition[" + std::to_string(row) + "]";
    row -= nx;
    if (row < quat_rows_) return "quaternion_norm[node " + std::to_string(row) + "]";
    row -= quat_rows_;
    const int stat_rows = stationarity_rows_per_pair_;
    if (row < static_cast<int>(layout_.pairs.size()) * stat_rows) {
      const auto& blk = layout_.pairs[row / stat_rows];
      return "stationarity[node " + std::to_string(blk.node) + ", pair " +
             std::to_string(blk.shape_index) + "/" + std::to_string(blk.obstacle_index) + "]";
    }
    row -= static_cast<int>(layout_.pairs.size()) * stat_rows;
    for (const auto& blk : layout_.pairs) {
      const int rows = blk.lambda_dim + blk.mu_dim;
      if (row < rows)
        return "complementarity[node " + std::to_string(blk.node) + ", pair " +
               std::to_string(blk.shape_index) + "/" + std::to_string(blk.obstacle_index) + "]";
      row -= rows;
    }
    return "unknown";
  }

  std::string ineq_row_label(int row) const {
    for (const auto& blk : layout_.pairs) {
      const int rows = blk.lambda_dim + blk.mu_dim + 1;
      if (row < rows) {
        const std::string where = "[node " + std::to_string(blk.node) + ", pair " +
                                  std::to_string(blk.shape_index) + "/" +
                                  std::to_string(blk.obstacle_index) + "]";
        if (row < blk.lambda_dim) return "vehicle_membership" + where;
        if (row < blk.lambda_dim + blk.mu_dim) return "obstacle_membership" + where;
        return "safety_distance" + where;
      }
      row -= rows;
    }
    return "unknown";
  }

  /// Reconstructs the trajectory-level view of a decision vector.
  Solution extract(const VecX& z) const {
    Solution sol;
    sol.times.resize(layout_.nodes);
    for (int k = 0; k < layout_.nodes; ++k) {
      sol.times[k] = node_time(k);
      sol.states.push_back(z.segment(layout_.state_offset(k), layout_.nx));
      sol.controls.push_back(z.segment(layout_.control_offset(k), layout_.nu));
    }
    sol.pairs.assign(layout_.nodes, {});
    for (const auto& blk : layout_.pairs) {
      ClosestPointPair pr;
      if (blk.w_offset >= 0) pr.w_body = z.segment<3>(blk.w_offset);
      pr.p_body = z.segment<3>(blk.p_offset);
      pr.lambda = z.segment(blk.lambda_offset, blk.lambda_dim);
      pr.mu = blk.mu_dim > 0 ? VecX(z.segment(blk.mu_offset, blk.mu_dim)) : VecX::Zero(0);
      const PairGeometry geo = pair_geometry(z, blk);
      pr.dist_sq = geo.gap.squaredNorm();
      sol.pairs[blk.node].push_back(pr);
    }
    sol.objective = objective(z);
    return sol;
  }

  /// Inverse of extract(); pair blocks are taken from sol.pairs.
  VecX pack_solution(const Solution& sol) const {
    VecX z = VecX::Zero(layout_.dim);
    for (int k = 0; k < layout_.nodes; ++k) {
      z.segment(layout_.state_offset(k), layout_.nx) = sol.states[k];
      z.segment(layout_.control_offset(k), layout_.nu) = sol.controls[k];
    }
    for (const auto& blk : layout_.pairs) {
      const auto& pr = sol.pairs[blk.node][blk.shape_index * spec_.obstacles.size() +
                                            blk.obstacle_index];
      if (blk.w_offset >= 0) z.segment<3>(blk.w_offset) = pr.w_body;
      z.segment<3>(blk.p_offset) = pr.p_body;
      z.segment(blk.lambda_offset, blk.lambda_dim) = pr.lambda;
      if (blk.mu_dim > 0) z.segment(blk.mu_offset, blk.mu_dim) = pr.mu;
    }
    return z;
  }

 private:
  struct JacobianWork {
    std::vector<Triplet> eq;
    std::vector<Triplet> ineq;
  };

  struct PairGeometry {
    Mat3 rot_vehicle;   // effective body-of-shape -> inertial rotation
    Mat3 rot_obstacle;
    Vec3 w_inertial;
    Vec3 p_inertial;
    Vec3 gap;
    Vec3 mount_arm;     // R_mount * w + t_mount (full-dim only)
  };

  PairGeometry pair_geometry(const VecX& z, const PairBlock& blk) const {
    PairGeometry geo;
    const auto& ob = spec_.obstacles[blk.obstacle_index];
    geo.rot_obstacle = rotation_matrix(ob.pose.q);
    geo.p_inertial = geo.rot_obstacle * z.segment<3>(blk.p_offset) + ob.pose.d;
    if (spec_.mode == DynamicsMode::full_dim) {
      const auto& ms = spec_.vehicle_shapes[blk.shape_index];
      const Vec4 q = z.segment<4>(layout_.state_offset(blk.node) + 6);
      const Mat3 rot_body = rotation_matrix(q);
      geo.mount_arm = rotation_matrix(ms.mount.q) * z.segment<3>(blk.w_offset) + ms.mount.d;
      geo.rot_vehicle = rot_body * rotation_matrix(ms.mount.q);
      geo.w_inertial = rot_body * geo.mount_arm + z.segment<3>(layout_.state_offset(blk.node));
    } else {
      geo.rot_vehicle.setIdentity();
      geo.w_inertial = z.segment<3>(layout_.state_offset(blk.node));
      geo.mount_arm.setZero();
    }
    geo.gap = geo.w_inertial - geo.p_inertial;
    return geo;
  }

  VecX dynamics(const VecX& x, const VecX& u) const {
    return spec_.mode == DynamicsMode::full_dim ? state_derivative(x, u, spec_.body)
                                                : point_mass_derivative(x, u, spec_.body.mass);
  }

  void dynamics_jacobians(const VecX& x, const VecX& u, MatX& a, MatX& b) const {
    if (spec_.mode == DynamicsMode::full_dim) {
      Eigen::Matrix<double, 13, 13> af;
      Eigen::Matrix<double, 13, 6> bf;
      state_jacobians(x, u, spec_.body, af, bf);
      a = af;
      b = bf;
    } else {
      a = MatX::Zero(6, 6);
      a.topRightCorner<3, 3>().setIdentity();
      b = MatX::Zero(6, 3);
      b.bottomRows<3>() = Mat3::Identity() / spec_.body.mass;
    }
  }

  static void add_block(std::vector<Triplet>& trips, int row0, int col0, const MatX& m) {
    for (int r = 0; r < m.rows(); ++r)
      for (int c = 0; c < m.cols(); ++c)
        if (m(r, c) != 0.0) trips.emplace_back(row0 + r, col0 + c, m(r, c));
  }

  void assemble(const VecX& z, NlpEval* out, JacobianWork* jac) const {
    const int nx = layout_.nx, nu = layout_.nu, n = layout_.nodes;

    // Node dynamics (values and, if requested, Jacobians).
    std::vector<VecX> f(n);
    std::vector<MatX> fa(jac ? n : 0), fb(jac ? n : 0);
    for (int k = 0; k < n; ++k) {
      const VecX xk = z.segment(layout_.state_offset(k), nx);
      const VecX uk = z.segment(layout_.control_offset(k), nu);
      f[k] = dynamics(xk, uk);
      if (jac) dynamics_jacobians(xk, uk, fa[k], fb[k]);
    }

    // Collocation defects.
    for (int k = 0; k + 1 < n; ++k) {
      const int row = k * nx;
      const VecX xk = z.segment(layout_.state_offset(k), nx);
      const VecX xk1 = z.segment(layout_.state_offset(k + 1), nx);
      const VecX uk = z.segment(layout_.control_offset(k), nu);
      const VecX uk1 = z.segment(layout_.control_offset(k + 1), nu);
      if (spec_.scheme == CollocationScheme::trapezoidal) {
        out->eq.segment(row, nx) = xk1 - xk - 0.5 * h_ * (f[k] + f[k + 1]);
        if (jac) {
          add_block(jac->eq, row, layout_.state_offset(k),
                    -MatX::Identity(nx, nx) - 0.5 * h_ * fa[k]);
          add_block(jac->eq, row, layout_.state_offset(k + 1),
                    MatX::Identity(nx, nx) - 0.5 * h_ * fa[k + 1]);
          add_block(jac->eq, row, layout_.control_offset(k), -0.5 * h_ * fb[k]);
          add_block(jac->eq, row, layout_.control_offset(k + 1), -0.5 * h_ * fb[k + 1]);
        }
      } else {
        // Hermite-Simpson with first-order-hold controls: the midpoint input
        // is the mean of the node inputs, so the decision blocks stay per
        // node and the replay's linear interpolation is consistent.
        const VecX um = 0.5 * (uk + uk1);
        const VecX xm = 0.5 * (xk + xk1) + (h_ / 8.0) * (f[k] - f[k + 1]);
        const VecX fm = dynamics(xm, um);
        out->eq.segment(row, nx) = xk1 - xk - (h_ / 6.0) * (f[k] + 4.0 * fm + f[k + 1]);
        if (jac) {
          MatX am, bm;
          dynamics_jacobians(xm, um, am, bm);
          const MatX dxm_dxk = 0.5 * MatX::Identity(nx, nx) + (h_ / 8.0) * fa[k];
          const MatX dxm_dxk1 = 0.5 * MatX::Identity(nx, nx) - (h_ / 8.0) * fa[k + 1];
          add_block(jac->eq, row, layout_.state_offset(k),
                    -MatX::Identity(nx, nx) - (h_ / 6.0) * (fa[k] + 4.0 * am * dxm_dxk));
          add_block(jac->eq, row, layout_.state_offset(k + 1),
                    MatX::Identity(nx, nx) - (h_ / 6.0) * (fa[k + 1] + 4.0 * am * dxm_dxk1));
          add_block(jac->eq, row, layout_.control_offset(k),
                    -(h_ / 6.0) *
                        (fb[k] + 4.0 * (am * (h_ / 8.0) * fb[k] + 0.5 * bm)));
          add_block(jac->eq, row, layout_.control_offset(k + 1),
                    -(h_ / 6.0) *
                        (fb[k + 1] + 4.0 * (am * (-h_ / 8.0) * fb[k + 1] + 0.5 * bm)));
        }
      }
    }

    // Boundary conditions.
    const int bc0 = num_defect_rows_;
    out->eq.segment(bc0, nx) = z.segment(layout_.state_offset(0), nx) - spec_.x0;
    out->eq.segment(bc0 + nx, nx) = z.segment(layout_.state_offset(n - 1), nx) - spec_.xf;
    if (jac) {
      add_block(jac->eq, bc0, layout_.state_offset(0), MatX::Identity(nx, nx));
      add_block(jac->eq, bc0 + nx, layout_.state_offset(n - 1), MatX::Identity(nx, nx));
    }

    // Per-node quaternion normalization.
    if (quat_rows_ > 0) {
      const int q0 = bc0 + 2 * nx;
      for (int k = 0; k < n; ++k) {
        const Vec4 q = z.segment<4>(layout_.state_offset(k) + 6);
        out->eq[q0 + k] = q.squaredNorm() - 1.0;
        if (jac)
          add_block(jac->eq, q0 + k, layout_.state_offset(k) + 6, 2.0 * q.transpose());
      }
    }

    // Collision blocks.
    int stat_row = stationarity_base_;
    int comp_row = comp_base_;
    int ineq_row = 0;
    for (const auto& blk : layout_.pairs) {
      const PairGeometry geo = pair_geometry(z, blk);
      const auto& ob = spec_.obstacles[blk.obstacle_index];
      const Vec3 p_body = z.segment<3>(blk.p_offset);
      const VecX mu = spec_.mode == DynamicsMode::full_dim
                          ? VecX(z.segment(blk.mu_offset, blk.mu_dim))
                          : VecX(z.segment(blk.lambda_offset, blk.lambda_dim));
      const VecX f_o = eval_faces(ob.shape, VecX(p_body));
      const VecX g_o = std::holds_alternative<PolytopeExact>(ob.shape)
                           ? VecX(std::get<PolytopeExact>(ob.shape).A.transpose() * mu)
                           : VecX(mu[0] * grad(ob.shape, VecX(p_body)));

      const int ro = layout_.state_offset(blk.node);

      if (spec_.mode == DynamicsMode::full_dim) {
        const auto& ms = spec_.vehicle_shapes[blk.shape_index];
        const Vec3 w_body = z.segment<3>(blk.w_offset);
        const VecX lam = z.segment(blk.lambda_offset, blk.lambda_dim);
        const VecX f_s = eval_faces(ms.shape, VecX(w_body));
        const VecX g_s = std::holds_alternative<PolytopeExact>(ms.shape)
                             ? VecX(std::get<PolytopeExact>(ms.shape).A.transpose() * lam)
                             : VecX(lam[0] * grad(ms.shape, VecX(w_body)));
        const Vec4 q = z.segment<4>(ro + 6);
        const Mat3 rot_mount = rotation_matrix(ms.mount.q);

        // Stationarity w.r.t. w and p (inertial frame).
        out->eq.segment<3>(stat_row) = 2.0 * geo.gap + geo.rot_vehicle * Vec3(g_s);
        out->eq.segment<3>(stat_row + 3) = -2.0 * geo.gap + geo.rot_obstacle * Vec3(g_o);

        // Complementarity.
        out->eq.segment(comp_row, blk.lambda_dim) =
            lam.cwiseProduct(f_s);
        out->eq.segment(comp_row + blk.lambda_dim, blk.mu_dim) = mu.cwiseProduct(f_o);

        // Inequalities: membership of both witnesses, then separation.
        out->ineq.segment(ineq_row, blk.lambda_dim) = f_s;
        out->ineq.segment(ineq_row + blk.lambda_dim, blk.mu_dim) = f_o;
        out->ineq[ineq_row + blk.lambda_dim + blk.mu_dim] =
            spec_.d_safe * spec_.d_safe - geo.gap.squaredNorm();

        if (jac) {
          const Vec3 grad_s = grad(ms.shape, VecX(w_body));
          const Vec3 grad_o = grad(ob.shape, VecX(p_body));
          const bool exact_s = std::holds_alternative<PolytopeExact>(ms.shape);
          const bool exact_o = std::holds_alternative<PolytopeExact>(ob.shape);

          // d s_w / d (w, p, lambda, r, q)
          MatX dsw_dw = 2.0 * geo.rot_vehicle;
          if (!exact_s)
            dsw_dw += lam[0] * geo.rot_vehicle * Mat3(hess(ms.shape, VecX(w_body)));
          add_block(jac->eq, stat_row, blk.w_offset, dsw_dw);
          add_block(jac->eq, stat_row, blk.p_offset, MatX(-2.0 * geo.rot_obstacle));
          if (exact_s)
            add_block(jac->eq, stat_row, blk.lambda_offset,
                      MatX(geo.rot_vehicle * std::get<PolytopeExact>(ms.shape).A.transpose()));
          else
            add_block(jac->eq, stat_row, blk.lambda_offset,
                      MatX(geo.rot_vehicle * grad_s));
          add_block(jac->eq, stat_row, ro, MatX(2.0 * Mat3::Identity()));
          const Eigen::Matrix<double, 3, 4> dq_arm = rotate_jacobian_q(q, geo.mount_arm);
          add_block(jac->eq, stat_row, ro + 6,
                    MatX(2.0 * dq_arm + rotate_jacobian_q(q, Vec3(rot_mount * Vec3(g_s)))));

          // d s_p / d (w, p, mu, r, q)
          add_block(jac->eq, stat_row + 3, blk.w_offset, MatX(-2.0 * geo.rot_vehicle));
          MatX dsp_dp = 2.0 * geo.rot_obstacle;
          if (!exact_o)
            dsp_dp += mu[0] * geo.rot_obstacle * Mat3(hess(ob.shape, VecX(p_body)));
          add_block(jac->eq, stat_row + 3, blk.p_offset, dsp_dp);
          if (exact_o)
            add_block(jac->eq, stat_row + 3, blk.mu_offset,
                      MatX(geo.rot_obstacle * std::get<PolytopeExact>(ob.shape).A.transpose()));
          else
            add_block(jac->eq, stat_row + 3, blk.mu_offset,
                      MatX(geo.rot_obstacle * grad_o));
          add_block(jac->eq, stat_row + 3, ro, MatX(-2.0 * Mat3::Identity()));
          add_block(jac->eq, stat_row + 3, ro + 6, MatX(-2.0 * dq_arm));

          // Complementarity rows.
          if (exact_s) {
            const auto& pa = std::get<PolytopeExact>(ms.shape);
            for (int l = 0; l < blk.lambda_dim; ++l) {
              add_block(jac->eq, comp_row + l, blk.w_offset, MatX(lam[l] * pa.A.row(l)));
              jac->eq.emplace_back(comp_row + l, blk.lambda_offset + l, f_s[l]);
            }
          } else {
            add_block(jac->eq, comp_row, blk.w_offset, MatX(lam[0] * grad_s.transpose()));
            jac->eq.emplace_back(comp_row, blk.lambda_offset, f_s[0]);
          }
          if (exact_o) {
            const auto& pa = std::get<PolytopeExact>(ob.shape);
            for (int l = 0; l < blk.mu_dim; ++l) {
              add_block(jac->eq, comp_row + blk.lambda_dim + l, blk.p_offset,
                        MatX(mu[l] * pa.A.row(l)));
              jac->eq.emplace_back(comp_row + blk.lambda_dim + l, blk.mu_offset + l, f_o[l]);
            }
          } else {
            add_block(jac->eq, comp_row + blk.lambda_dim, blk.p_offset,
                      MatX(mu[0] * grad_o.transpose()));
            jac->eq.emplace_back(comp_row + blk.lambda_dim, blk.mu_offset, f_o[0]);
          }

          // Membership rows.
          if (exact_s) {
            add_block(jac->ineq, ineq_row, blk.w_offset, std::get<PolytopeExact>(ms.shape).A);
          } else {
            add_block(jac->ineq, ineq_row, blk.w_offset, MatX(grad_s.transpose()));
          }
          if (exact_o) {
            add_block(jac->ineq, ineq_row + blk.lambda_dim, blk.p_offset,
                      std::get<PolytopeExact>(ob.shape).A);
          } else {
            add_block(jac->ineq, ineq_row + blk.lambda_dim, blk.p_offset,
                      MatX(grad_o.transpose()));
          }

          // Separation row.
          const int sep = ineq_row + blk.lambda_dim + blk.mu_dim;
          add_block(jac->ineq, sep, blk.w_offset,
                    MatX(-2.0 * geo.gap.transpose() * geo.rot_vehicle));
          add_block(jac->ineq, sep, blk.p_offset,
                    MatX(2.0 * geo.gap.transpose() * geo.rot_obstacle));
          add_block(jac->ineq, sep, ro, MatX(-2.0 * geo.gap.transpose()));
          add_block(jac->ineq, sep, ro + 6, MatX(-2.0 * geo.gap.transpose() * dq_arm));
        }
        stat_row += 6;
        comp_row += blk.lambda_dim + blk.mu_dim;
        ineq_row += blk.lambda_dim + blk.mu_dim + 1;
      } else {
        // Point-mass: witness point and dual on the obstacle only.
        const VecX lam = z.segment(blk.lambda_offset, blk.lambda_dim);
        out->eq.segment<3>(stat_row) = -2.0 * geo.gap + geo.rot_obstacle * Vec3(g_o);
        out->eq.segment(comp_row, blk.lambda_dim) = lam.cwiseProduct(f_o);
        out->ineq.segment(ineq_row, blk.lambda_dim) = f_o;
        out->ineq[ineq_row + blk.lambda_dim] =
            spec_.d_safe * spec_.d_safe - geo.gap.squaredNorm();
        if (jac) {
          const Vec3 grad_o = grad(ob.shape, VecX(p_body));
          const bool exact_o = std::holds_alternative<PolytopeExact>(ob.shape);
          MatX ds_dp = 2.0 * geo.rot_obstacle;
          if (!exact_o) ds_dp += lam[0] * geo.rot_obstacle * Mat3(hess(ob.shape, VecX(p_body)));
          add_block(jac->eq, stat_row, blk.p_offset, ds_dp);
          if (exact_o)
            add_block(jac->eq, stat_row, blk.lambda_offset,
                      MatX(geo.rot_obstacle * std::get<PolytopeExact>(ob.shape).A.transpose()));
          else
            add_block(jac->eq, stat_row, blk.lambda_offset, MatX(geo.rot_obstacle * grad_o));
          add_block(jac->eq, stat_row, ro, MatX(-2.0 * Mat3::Identity()));

          if (exact_o) {
            const auto& pa = std::get<PolytopeExact>(ob.shape);
            for (int l = 0; l < blk.lambda_dim; ++l) {
              add_block(jac->eq, comp_row + l, blk.p_offset, MatX(lam[l] * pa.A.row(l)));
              jac->eq.emplace_back(comp_row + l, blk.lambda_offset + l, f_o[l]);
            }
            add_block(jac->ineq, ineq_row, blk.p_offset, pa.A);
          } else {
            add_block(jac->eq, comp_row, blk.p_offset, MatX(lam[0] * grad_o.transpose()));
            jac->eq.emplace_back(comp_row, blk.lambda_offset, f_o[0]);
            add_block(jac->ineq, ineq_row, blk.p_offset, MatX(grad_o.transpose()));
          }
          const int sep = ineq_row + blk.lambda_dim;
          add_block(jac->ineq, sep, blk.p_offset,
                    MatX(2.0 * geo.gap.transpose() * geo.rot_obstacle));
          add_block(jac->ineq, sep, ro, MatX(-2.0 * geo.gap.transpose()));
        }
        stat_row += 3;
        comp_row += blk.lambda_dim;
        ineq_row += blk.lambda_dim + 1;
      }
    }
  }

  OcpSpec spec_;
  NlpLayout layout_;
  double h_ = 0.0;
  VecX weights_;
  VecX lb_, ub_;
  int num_defect_rows_ = 0;
  int quat_rows_ = 0;
  int stationarity_rows_per_pair_ = 0;
  int stationarity_base_ = 0;
  int comp_base_ = 0;
  int num_eq_ = 0;
  int num_ineq_ = 0;
};

//==============================================================================
// Initial guesses
//==============================================================================

enum class GuessStrategy { cold, interpolate };

/// Cold start: straight-line states (normalized quaternion interpolation),
/// zero controls, witness points at the shape centers and duals at 0.1.
inline VecX initial_guess_cold(const Nlp& nlp) {
  const auto& spec = nlp.spec();
  const auto& lay = nlp.layout();
  VecX z = VecX::Zero(lay.dim);
  for (int k = 0; k < lay.nodes; ++k) {
    const double a = lay.nodes == 1 ? 0.0 : double(k) / (lay.nodes - 1);
    VecX xk = (1.0 - a) * spec.x0 + a * spec.xf;
    if (spec.mode == DynamicsMode::full_dim) {
      Vec4 q = xk.segment<4>(6);
      const double nq = q.norm();
      if (nq > 1e-12) xk.segment<4>(6) = q / nq;
    }
    z.segment(lay.state_offset(k), lay.nx) = xk;
  }
  for (const auto& blk : lay.pairs) {
    z.segment(blk.lambda_offset, blk.lambda_dim).setConstant(0.1);
    if (blk.mu_dim > 0) z.segment(blk.mu_offset, blk.mu_dim).setConstant(0.1);
  }
  return z;
}

/// Resamples a coarse solution onto this problem's node grid (linear in time,
/// quaternions renormalized, duals clamped nonnegative).
inline VecX initial_guess_interpolate(const Nlp& nlp, const Solution& coarse) {
  const auto& lay = nlp.layout();
  const auto& spec = nlp.spec();
  const int nc = static_cast<int>(coarse.states.size());
  auto sample = [&](double t, auto&& values) -> VecX {
    if (t <= coarse.times[0]) return values[0];
    if (t >= coarse.times[nc - 1]) return values[nc - 1];
    int k = 0;
    while (k + 1 < nc - 1 && coarse.times[k + 1] < t) ++k;
    const double a = (t - coarse.times[k]) / (coarse.times[k + 1] - coarse.times[k]);
    return (1.0 - a) * values[k] + a * values[k + 1];
  };
  VecX z = initial_guess_cold(nlp);
  for (int k = 0; k < lay.nodes; ++k) {
    const double t = nlp.node_time(k);
    VecX xk = sample(t, coarse.states);
    if (spec.mode == DynamicsMode::full_dim) xk.segment<4>(6).normalize();
    z.segment(lay.state_offset(k), lay.nx) = xk;
    z.segment(lay.control_offset(k), lay.nu) = sample(t, coarse.controls);
  }
  // Exact endpoints.
  z.segment(lay.state_offset(0), lay.nx) = coarse.states.front();
  z.segment(lay.state_offset(lay.nodes - 1), lay.nx) = coarse.states.back();
  if (!coarse.pairs.empty() && !coarse.pairs[0].empty() &&
      static_cast<int>(coarse.pairs[0].size()) == lay.pairs_per_node) {
    for (const auto& blk : lay.pairs) {
      // Nearest coarse node for the witness blocks.
      const double t = nlp.node_time(blk.node);
      int nearest = 0;
      for (int k = 1; k < nc; ++k)
        if (std::abs(coarse.times[k] - t) < std::abs(coarse.times[nearest] - t)) nearest = k;
      const auto& pr =
          coarse.pairs[nearest][blk.shape_index * spec.obstacles.size() + blk.obstacle_index];
      if (blk.w_offset >= 0) z.segment<3>(blk.w_offset) = pr.w_body;
      z.segment<3>(blk.p_offset) = pr.p_body;
      z.segment(blk.lambda_offset, blk.lambda_dim) = pr.lambda.cwiseMax(0.0);
      if (blk.mu_dim > 0) z.segment(blk.mu_offset, blk.mu_dim) = pr.mu.cwiseMax(0.0);
    }
  }
  return z;
}

}  // namespace proxtraj
