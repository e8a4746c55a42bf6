#pragma once

#include <proxtraj/geometry.hpp>

#include <limits>
#include <optional>

namespace proxtraj {

/// A convex set placed in the inertial frame.
struct PosedShape {
  ConvexShape shape;
  Pose pose;
};

inline Vec3 shape_center_inertial(const PosedShape& s) { return to_inertial(s.pose, Vec3::Zero()); }

/// Primal/dual witness of the minimum distance between two posed sets: body
/// frame closest points, nonnegative multipliers and the squared inertial
/// gap. Duals are per-face vectors for PolytopeExact, scalars otherwise.
struct ClosestPointPair {
  Vec3 w_body = Vec3::Zero();  // on the vehicle-side set
  Vec3 p_body = Vec3::Zero();  // on the obstacle-side set
  VecX lambda = VecX::Zero(1);
  VecX mu = VecX::Zero(1);
  double dist_sq = 0.0;
};

//==============================================================================
// KKT residuals
//
// Stationarity is written in inertial coordinates; gradients of the body-frame
// set functions are rotated with the body-to-inertial matrix of each pose.
//==============================================================================

struct PointKktResidual {
  VecX residual;     // [stationarity (3); complementarity (dual_dim)]
  VecX feasibility;  // face values f_O(p_tilde), must be <= 0 at a solution
};

/// Residual of the point-versus-set optimality system: a point r attains
/// distance-to-set at p_tilde with multiplier lambda iff this vanishes while
/// feasibility stays nonpositive and lambda >= 0.
inline PointKktResidual kkt_residual_point(const Vec3& r_inertial, const PosedShape& obstacle,
                                           const Vec3& p_tilde, const VecX& lambda) {
  if (lambda.size() != dual_dim(obstacle.shape))
    throw std::invalid_argument("kkt_residual_point: dual dimension mismatch");
  const Mat3 rot = rotation_matrix(obstacle.pose.q);
  const Vec3 p_inertial = rot * p_tilde + obstacle.pose.d;
  const VecX faces = eval_faces(obstacle.shape, p_tilde);

  Vec3 stationarity = -2.0 * (r_inertial - p_inertial);
  if (const auto* pe = std::get_if<PolytopeExact>(&obstacle.shape))
    stationarity += rot * (pe->A.transpose() * lambda);
  else
    stationarity += lambda[0] * (rot * Vec3(grad(obstacle.shape, p_tilde)));

  PointKktResidual out;
  out.residual.resize(3 + faces.size());
  out.residual.head<3>() = stationarity;
  out.residual.tail(faces.size()) = lambda.cwiseProduct(faces);
  out.feasibility = faces;
  return out;
}

struct PairKktResidual {
  VecX residual;  // [stationarity w (3); stationarity p (3); comp S; comp O]
  VecX f_vehicle;
  VecX f_obstacle;
};

/// Residual of the set-versus-set optimality system of two posed convex sets.
inline PairKktResidual kkt_residual_pair(const PosedShape& vehicle, const PosedShape& obstacle,
                                         const ClosestPointPair& pair) {
  if (pair.lambda.size() != dual_dim(vehicle.shape) || pair.mu.size() != dual_dim(obstacle.shape))
    throw std::invalid_argument("kkt_residual_pair: dual dimension mismatch");
  const Mat3 rot_s = rotation_matrix(vehicle.pose.q);
  const Mat3 rot_o = rotation_matrix(obstacle.pose.q);
  const Vec3 w_inertial = rot_s * pair.w_body + vehicle.pose.d;
  const Vec3 p_inertial = rot_o * pair.p_body + obstacle.pose.d;
  const Vec3 gap = w_inertial - p_inertial;

  auto rotated_constraint_gradient = [](const ConvexShape& shape, const Mat3& rot, const Vec3& pt,
                                        const VecX& dual) -> Vec3 {
    if (const auto* pe = std::get_if<PolytopeExact>(&shape))
      return rot * (pe->A.transpose() * dual);
    return dual[0] * (rot * Vec3(grad(shape, pt)));
  };

  const VecX f_s = eval_faces(vehicle.shape, VecX(pair.w_body));
  const VecX f_o = eval_faces(obstacle.shape, VecX(pair.p_body));

  PairKktResidual out;
  out.residual.resize(6 + f_s.size() + f_o.size());
  out.residual.head<3>() =
      2.0 * gap + rotated_constraint_gradient(vehicle.shape, rot_s, pair.w_body, pair.lambda);
  out.residual.segment<3>(3) =
      -2.0 * gap + rotated_constraint_gradient(obstacle.shape, rot_o, pair.p_body, pair.mu);
  out.residual.segment(6, f_s.size()) = pair.lambda.cwiseProduct(f_s);
  out.residual.tail(f_o.size()) = pair.mu.cwiseProduct(f_o);
  out.f_vehicle = f_s;
  out.f_obstacle = f_o;
  return out;
}

//==============================================================================
// Euclidean projection onto a single posed set
//==============================================================================

namespace detail {

/// Newton solve of the projection system p = y - nu * grad f(p), f(p) = 0 for
/// a smooth convex shape, with y strictly outside. Body-frame coordinates.
inline Vec3 project_smooth_body(const ConvexShape& shape, const Vec3& y) {
  // Bracket the boundary on the center ray for the starting point; the shape
  // center is interior by the load-time checks.
  double t_lo = 0.0, t_hi = 1.0;
  for (int it = 0; it < 80; ++it) {
    const double t = 0.5 * (t_lo + t_hi);
    (eval(shape, VecX(t * y)) < 0.0 ? t_lo : t_hi) = t;
  }
  Vec3 p = 0.5 * (t_lo + t_hi) * y;
  double nu = (y - p).norm() / std::max(grad(shape, VecX(p)).norm(), 1e-12);

  Eigen::Vector4d g;
  auto residual = [&](const Vec3& pp, double nn, Eigen::Vector4d& r) {
    const VecX gf = grad(shape, VecX(pp));
    r.head<3>() = pp - y + nn * Vec3(gf);
    r[3] = eval(shape, VecX(pp));
  };
  residual(p, nu, g);
  for (int it = 0; it < 100 && g.norm() > 1e-13; ++it) {
    Eigen::Matrix4d jac;
    jac.topLeftCorner<3, 3>() = Mat3::Identity() + nu * Mat3(hess(shape, VecX(p)));
    jac.topRightCorner<3, 1>() = Vec3(grad(shape, VecX(p)));
    jac.bottomLeftCorner<1, 3>() = Vec3(grad(shape, VecX(p))).transpose();
    jac(3, 3) = 0.0;
    const Eigen::Vector4d step = jac.fullPivLu().solve(-g);
    double alpha = 1.0;
    const double g0 = g.squaredNorm();
    for (int ls = 0; ls < 40; ++ls, alpha *= 0.5) {
      const Vec3 pc = p + alpha * step.head<3>();
      const double nc = std::max(0.0, nu + alpha * step[3]);
      Eigen::Vector4d gc;
      residual(pc, nc, gc);
      if (gc.squaredNorm() < g0) {
        p = pc;
        nu = nc;
        g = gc;
        break;
      }
    }
  }
  return p;
}

/// Exact projection onto {A p <= b} by enumerating active face subsets (m is
/// small for the shapes in scope).
inline Vec3 project_polytope_body(const PolytopeExact& poly, const Vec3& y) {
  const int m = static_cast<int>(poly.b.size());
  double best = std::numeric_limits<double>::infinity();
  Vec3 best_p = y;
  std::vector<int> idx;
  auto try_active_set = [&](const std::vector<int>& act) {
    const int k = static_cast<int>(act.size());
    MatX aw(k, 3);
    VecX bw(k);
    for (int i = 0; i < k; ++i) {
      aw.row(i) = poly.A.row(act[i]);
      bw[i] = poly.b[act[i]];
    }
    // Equality-constrained least squares: p = y - Aw^T nu, Aw p = bw.
    const MatX gram = aw * aw.transpose();
    const Eigen::FullPivLU<MatX> lu(gram);
    if (!lu.isInvertible()) return;
    const VecX nu = lu.solve(aw * y - bw);
    if ((nu.array() < -1e-10).any()) return;  // wrong sign: not the projection
    const Vec3 p = y - aw.transpose() * nu;
    if (((poly.A * p - poly.b).array() > 1e-9).any()) return;  // infeasible
    const double d = (p - y).squaredNorm();
    if (d < best) {
      best = d;
      best_p = p;
    }
  };
  if (((poly.A * y - poly.b).array() <= 0.0).all()) return y;
  for (int i = 0; i < m; ++i) try_active_set({i});
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j) try_active_set({i, j});
  for (int i = 0; i < m; ++i)
    for (int j = i + 1; j < m; ++j)
      for (int k = j + 1; k < m; ++k) try_active_set({i, j, k});
  return best_p;
}

}  // namespace detail

/// Closest point of the posed set to an inertial query point. Returns the
/// query itself when it already lies inside.
inline Vec3 project_onto(const PosedShape& set, const Vec3& x_inertial) {
  const Vec3 y = to_body(set.pose, x_inertial);
  if (eval(set.shape, VecX(y)) <= 0.0) return x_inertial;
  const Vec3 p = std::holds_alternative<PolytopeExact>(set.shape)
                     ? detail::project_polytope_body(std::get<PolytopeExact>(set.shape), y)
                     : detail::project_smooth_body(set.shape, y);
  return to_inertial(set.pose, p);
}

/// Distance from an inertial point to a posed set (zero inside).
inline double point_distance(const PosedShape& set, const Vec3& x_inertial) {
  return (project_onto(set, x_inertial) - x_inertial).norm();
}

//==============================================================================
// Independent distance oracle: alternating projections
//==============================================================================

struct OracleResult {
  double dist = 0.0;
  Vec3 w_body = Vec3::Zero();  // closest point on A, body frame
  Vec3 p_body = Vec3::Zero();  // closest point on B, body frame
  bool converged = false;
  bool overlapping = false;
  int iterations = 0;
};

/// Minimum distance between two posed convex sets by alternating projections.
/// Deliberately independent of the KKT formulation so it can serve as the
/// verification oracle. Overlapping sets report dist = 0 with a point
/// contained in both.
inline OracleResult oracle_distance(const PosedShape& set_a, const PosedShape& set_b,
                                    double tol = 1e-10, int max_iter = 20000) {
  OracleResult out;
  Vec3 a = shape_center_inertial(set_a);
  Vec3 b = shape_center_inertial(set_b);
  // A shared point means distance zero immediately.
  auto contains = [](const PosedShape& s, const Vec3& x) {
    return eval(s.shape, VecX(to_body(s.pose, x))) <= 0.0;
  };
  double dist_prev = std::numeric_limits<double>::infinity();
  int value_stall = 0;
  for (int it = 0; it < max_iter; ++it) {
    const Vec3 a_next = project_onto(set_a, b);
    const Vec3 b_next = project_onto(set_b, a_next);
    const double movement = (a_next - a).norm() + (b_next - b).norm();
    a = a_next;
    b = b_next;
    out.iterations = it + 1;
    if (contains(set_b, a)) {
      out.overlapping = true;
      out.converged = true;
      out.dist = 0.0;
      out.w_body = to_body(set_a.pose, a);
      out.p_body = to_body(set_b.pose, a);
      return out;
    }
    if (it > 0 && movement < tol) {
      out.converged = true;
      break;
    }
    // Parallel-face configurations: the minimizer set is a face and the pair
    // slides along it indefinitely while the distance is already exact. The
    // distance sequence is non-increasing, so a machine-precision stall
    // certifies the value even though the points keep moving.
    const double dist = (a - b).norm();
    value_stall = std::abs(dist - dist_prev) <= 1e-14 * std::max(1.0, dist) ? value_stall + 1 : 0;
    dist_prev = dist;
    if (it > 0 && value_stall >= 5) {
      out.converged = true;
      break;
    }
  }
  out.dist = (a - b).norm();
  out.w_body = to_body(set_a.pose, a);
  out.p_body = to_body(set_b.pose, b);
  return out;
}

//==============================================================================
// Standalone KKT solve (Newton), used for warm starts and verification
//==============================================================================

/// Least-squares multiplier recovery at a candidate closest-point pair:
/// minimizes the stationarity residual over nonnegative duals.
inline void recover_pair_duals(const PosedShape& vehicle, const PosedShape& obstacle,
                               ClosestPointPair& pair) {
  const Mat3 rot_s = rotation_matrix(vehicle.pose.q);
  const Mat3 rot_o = rotation_matrix(obstacle.pose.q);
  const Vec3 gap = (rot_s * pair.w_body + vehicle.pose.d) - (rot_o * pair.p_body + obstacle.pose.d);
  auto solve_side = [](const ConvexShape& shape, const Mat3& rot, const Vec3& pt,
                       const Vec3& rhs) -> VecX {
    if (const auto* pe = std::get_if<PolytopeExact>(&shape)) {
      // Only faces that are active at pt can carry a multiplier.
      const VecX faces = pe->A * pt - pe->b;
      const int m = static_cast<int>(faces.size());
      VecX dual = VecX::Zero(m);
      std::vector<int> act;
      for (int j = 0; j < m; ++j)
        if (faces[j] > -1e-7) act.push_back(j);
      if (act.empty()) return dual;
      MatX cols(3, act.size());
      for (size_t i = 0; i < act.size(); ++i) cols.col(i) = rot * pe->A.row(act[i]).transpose();
      const VecX nu =
          (cols.transpose() * cols + 1e-14 * MatX::Identity(act.size(), act.size()))
              .ldlt()
              .solve(cols.transpose() * rhs);
      for (size_t i = 0; i < act.size(); ++i) dual[act[i]] = std::max(0.0, nu[i]);
      return dual;
    }
    const Vec3 dir = rot * Vec3(grad(shape, VecX(pt)));
    VecX dual(1);
    dual[0] = std::max(0.0, dir.dot(rhs) / std::max(dir.squaredNorm(), 1e-14));
    return dual;
  };
  pair.lambda = solve_side(vehicle.shape, rot_s, pair.w_body, -2.0 * gap);
  pair.mu = solve_side(obstacle.shape, rot_o, pair.p_body, 2.0 * gap);
  pair.dist_sq = gap.squaredNorm();
}

struct KktSolveResult {
  ClosestPointPair pair;
  bool converged = false;
  bool used_fallback = false;
  int iterations = 0;
  double residual_norm = 0.0;
};

/// Damped Newton on the square optimality system of the two-set distance
/// program. Falls back to the alternating-projection oracle (with duals from
/// least squares) when Newton stalls.
inline KktSolveResult min_distance_kkt(const PosedShape& set_a, const PosedShape& set_b,
                                       const ClosestPointPair& init, double tol = 1e-10,
                                       int max_iter = 100) {
  const int dl = dual_dim(set_a.shape);
  const int dm = dual_dim(set_b.shape);
  const int n = 6 + dl + dm;
  const Mat3 rot_s = rotation_matrix(set_a.pose.q);
  const Mat3 rot_o = rotation_matrix(set_b.pose.q);

  // The square system has a spurious root at coincident infeasible points
  // with zero duals; restore exterior init points to the set boundary along
  // the center ray first (the stated precondition asks for feasible-ish
  // inits, so this only rescales bad guesses).
  auto restore = [](const ConvexShape& shape, Vec3 pt) {
    if (eval(shape, VecX(pt)) <= 0.0) return pt;
    if (pt.norm() < 1e-12) pt = Vec3(1e-3, 0, 0);
    double lo = 0.0, hi = 1.0;
    while (eval(shape, VecX(Vec3(hi * pt))) < 0.0 && hi < 1e6) hi *= 2.0;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (eval(shape, VecX(Vec3(mid * pt))) < 0.0 ? lo : hi) = mid;
    }
    return Vec3(0.5 * (lo + hi) * pt);
  };

  auto unpack = [&](const VecX& zz) {
    ClosestPointPair pr;
    pr.w_body = zz.head<3>();
    pr.p_body = zz.segment<3>(3);
    pr.lambda = zz.segment(6, dl).cwiseMax(0.0);
    pr.mu = zz.tail(dm).cwiseMax(0.0);
    return pr;
  };
  auto residual = [&](const VecX& zz) {
    return kkt_residual_pair(set_a, set_b, unpack(zz)).residual;
  };

  KktSolveResult out;
  VecX z(n), r;
  auto run_newton = [&](const Vec3& w0, const Vec3& p0, bool seed_duals) {
    z.head<3>() = restore(set_a.shape, w0);
    z.segment<3>(3) = restore(set_b.shape, p0);
    if (seed_duals) {
      // Least-squares duals at the restored points keep Newton away from the
      // spurious coincident-points root with vanishing multipliers.
      ClosestPointPair seeded;
      seeded.w_body = z.head<3>();
      seeded.p_body = z.segment<3>(3);
      recover_pair_duals(set_a, set_b, seeded);
      z.segment(6, dl) = seeded.lambda.cwiseMax(0.1);
      z.tail(dm) = seeded.mu.cwiseMax(0.1);
    } else {
      z.segment(6, dl) =
          (init.lambda.size() == dl ? init.lambda : VecX::Constant(dl, 0.1)).cwiseMax(1e-3);
      z.tail(dm) = (init.mu.size() == dm ? init.mu : VecX::Constant(dm, 0.1)).cwiseMax(1e-3);
    }
    r = residual(z);
  // Gauss-Newton on the KKT system extended with max(0, f) feasibility
  // guards. The guards vanish at any KKT point, so the solve is a plain
  // damped Newton once the iterate is feasible; away from the feasible
  // region they remove the spurious root at coincident exterior points
  // with zero duals.
  const int next = n + dl + dm;
  auto ext_residual = [&](const VecX& zz) -> VecX {
    const ClosestPointPair pr = unpack(zz);
    VecX e(next);
    e.head(n) = kkt_residual_pair(set_a, set_b, pr).residual;
    e.segment(n, dl) = eval_faces(set_a.shape, VecX(pr.w_body)).cwiseMax(0.0);
    e.tail(dm) = eval_faces(set_b.shape, VecX(pr.p_body)).cwiseMax(0.0);
    return e;
  };
  VecX re = ext_residual(z);
  for (int it = 0; it < max_iter && re.norm() > tol; ++it) {
    out.iterations += 1;
    const ClosestPointPair pr = unpack(z);
    const Vec3 w = pr.w_body, p = pr.p_body;

    MatX jac = MatX::Zero(next, n);
    const VecX gs = grad(set_a.shape, VecX(w));
    const VecX go = grad(set_b.shape, VecX(p));
    const VecX fs = eval_faces(set_a.shape, VecX(w));
    const VecX fo = eval_faces(set_b.shape, VecX(p));

    // Stationarity rows.
    if (const auto* pe = std::get_if<PolytopeExact>(&set_a.shape)) {
      jac.block(0, 0, 3, 3) = 2.0 * rot_s;
      jac.block(0, 6, 3, dl) = rot_s * pe->A.transpose();
    } else {
      jac.block(0, 0, 3, 3) = 2.0 * rot_s + pr.lambda[0] * rot_s * Mat3(hess(set_a.shape, VecX(w)));
      jac.block(0, 6, 3, 1) = rot_s * Vec3(gs);
    }
    jac.block(0, 3, 3, 3) = -2.0 * rot_o;
    if (const auto* pe = std::get_if<PolytopeExact>(&set_b.shape)) {
      jac.block(3, 3, 3, 3) = 2.0 * rot_o;
      jac.block(3, 6 + dl, 3, dm) = rot_o * pe->A.transpose();
    } else {
      jac.block(3, 3, 3, 3) = 2.0 * rot_o + pr.mu[0] * rot_o * Mat3(hess(set_b.shape, VecX(p)));
      jac.block(3, 6 + dl, 3, 1) = rot_o * Vec3(go);
    }
    jac.block(3, 0, 3, 3) = -2.0 * rot_s;

    // Complementarity rows.
    if (const auto* pe = std::get_if<PolytopeExact>(&set_a.shape)) {
      for (int j = 0; j < dl; ++j) {
        jac.block(6 + j, 0, 1, 3) = pr.lambda[j] * pe->A.row(j);
        jac(6 + j, 6 + j) = fs[j];
      }
    } else {
      jac.block(6, 0, 1, 3) = pr.lambda[0] * Vec3(gs).transpose();
      jac(6, 6) = fs[0];
    }
    if (const auto* pe = std::get_if<PolytopeExact>(&set_b.shape)) {
      for (int j = 0; j < dm; ++j) {
        jac.block(6 + dl + j, 3, 1, 3) = pr.mu[j] * pe->A.row(j);
        jac(6 + dl + j, 6 + dl + j) = fo[j];
      }
    } else {
      jac.block(6 + dl, 3, 1, 3) = pr.mu[0] * Vec3(go).transpose();
      jac(6 + dl, 6 + dl) = fo[0];
    }

    // Feasibility-guard rows (active only when a point is outside its set).
    if (const auto* pe = std::get_if<PolytopeExact>(&set_a.shape)) {
      for (int j = 0; j < dl; ++j)
        if (fs[j] > 0.0) jac.block(n + j, 0, 1, 3) = pe->A.row(j);
    } else if (fs[0] > 0.0) {
      jac.block(n, 0, 1, 3) = Vec3(gs).transpose();
    }
    if (const auto* pe = std::get_if<PolytopeExact>(&set_b.shape)) {
      for (int j = 0; j < dm; ++j)
        if (fo[j] > 0.0) jac.block(n + dl + j, 3, 1, 3) = pe->A.row(j);
    } else if (fo[0] > 0.0) {
      jac.block(n + dl, 3, 1, 3) = Vec3(go).transpose();
    }

    const double r0 = re.squaredNorm();
    auto try_step = [&](const VecX& step) {
      if (!step.allFinite()) return false;
      double alpha = 1.0;
      for (int ls = 0; ls < 30; ++ls, alpha *= 0.5) {
        VecX zc = z + alpha * step;
        zc.segment(6, dl) = zc.segment(6, dl).cwiseMax(0.0);
        zc.tail(dm) = zc.tail(dm).cwiseMax(0.0);
        const VecX rc = ext_residual(zc);
        if (rc.allFinite() && rc.squaredNorm() < r0) {
          z = zc;
          re = rc;
          return true;
        }
      }
      return false;
    };

    // Gauss-Newton step equals the damped Newton step of the square system
    // whenever the guards are inactive; Levenberg damping keeps a descent
    // direction for ||F||^2 near singular Jacobians.
    bool accepted = false;
    for (double lm = 0.0; !accepted && lm < 1e8; lm = (lm == 0.0 ? 1e-8 : lm * 100.0)) {
      MatX jtj = jac.transpose() * jac;
      jtj.diagonal().array() += lm;
      accepted = try_step(jtj.ldlt().solve(-(jac.transpose() * re)));
    }
    if (!accepted) break;
  }
  r = residual(z);

  out.pair = unpack(z);
  {
    const Vec3 gap = (rot_s * out.pair.w_body + set_a.pose.d) -
                     (rot_o * out.pair.p_body + set_b.pose.d);
    out.pair.dist_sq = gap.squaredNorm();
  }
  out.residual_norm = r.norm();
  const VecX fs_end = eval_faces(set_a.shape, VecX(out.pair.w_body));
  const VecX fo_end = eval_faces(set_b.shape, VecX(out.pair.p_body));
  out.converged = out.residual_norm <= std::max(tol, 1e-8) && (fs_end.array() <= 1e-7).all() &&
                  (fo_end.array() <= 1e-7).all();
#ifdef PROXTRAJ_KKT_DEBUG
  std::cerr << "attempt: |r|=" << out.residual_norm << " conv=" << out.converged
            << " fs=" << fs_end.maxCoeff() << " fo=" << fo_end.maxCoeff()
            << " lam=" << out.pair.lambda.transpose() << " mu=" << out.pair.mu.transpose() << "\n";
#endif
  };

  // Boundary point of a posed set along the ray from its center toward an
  // inertial target, in body coordinates.
  auto boundary_toward = [&](const PosedShape& set, const Vec3& target_inertial) {
    Vec3 dir = to_body(set.pose, target_inertial);
    if (dir.norm() < 1e-9) dir = Vec3(1, 0, 0);
    return restore(set.shape, Vec3(dir.normalized() * 1e3));
  };

  run_newton(init.w_body, init.p_body, false);
  if (!out.converged) {
    // Restart 1: boundary points facing the other set's center, with
    // consistent least-squares duals.
    run_newton(boundary_toward(set_a, shape_center_inertial(set_b)),
               boundary_toward(set_b, shape_center_inertial(set_a)), true);
  }
  if (!out.converged) {
    // Restart 2: center-ray sweeps walk the boundary points into the facing
    // region before seeding Newton.
    Vec3 w = boundary_toward(set_a, shape_center_inertial(set_b));
    Vec3 p = boundary_toward(set_b, to_inertial(set_a.pose, w));
    for (int sweep = 0; sweep < 40; ++sweep) {
      const Vec3 w_next = boundary_toward(set_a, to_inertial(set_b.pose, p));
      const Vec3 p_next = boundary_toward(set_b, to_inertial(set_a.pose, w_next));
      const double move = (w_next - w).norm() + (p_next - p).norm();
      w = w_next;
      p = p_next;
      if (move < 1e-12) break;
    }
    run_newton(w, p, true);
  }

  if (!out.converged) {
    // Newton stalled: recover the pair from the oracle and duals by least
    // squares so callers always receive a usable witness.
    const OracleResult orc = oracle_distance(set_a, set_b, 1e-12);
    out.pair.w_body = orc.w_body;
    out.pair.p_body = orc.p_body;
    recover_pair_duals(set_a, set_b, out.pair);
    out.used_fallback = true;
    out.converged = orc.converged;
    out.residual_norm = kkt_residual_pair(set_a, set_b, out.pair).residual.norm();
  }
  return out;
}

}  // namespace proxtraj
