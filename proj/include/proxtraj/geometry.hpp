#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>

namespace proxtraj {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// x^n for integer n >= 0 by repeated squaring. Exact for the even shape
/// exponents; avoids the negative-base pitfalls of std::pow.
inline double pow_int(double x, int n) {
  double r = 1.0, b = x;
  for (; n > 0; n >>= 1) {
    if (n & 1) r *= b;
    b *= b;
  }
  return r;
}

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

//==============================================================================
// Convex set primitives
//
// Every shape is a sublevel set {p : f(p) <= 0} of a convex function given in
// the shape's own body frame, with f < 0 inside, f = 0 on the boundary and
// f > 0 outside.
//==============================================================================

/// Generalized ellipsoid {p : sum_i (p_i/a_i)^{P_i} <= level^{level_exponent}}.
/// Even exponents >= 2 keep the function smooth and convex; mixing exponents
/// produces spheres, cylinders and rounded boxes.
struct SuperEllipsoid {
  VecX semi_axes;             // a_i > 0 [m]
  Eigen::VectorXi exponents;  // even integers >= 2
  double level = 1.0;
  int level_exponent = 2;  // even integer >= 2
};

/// Polytope {p : A p <= b} kept as the raw face inequalities. Evaluation
/// scalarizes to the maximum face value; the face vector itself is available
/// through eval_faces().
struct PolytopeExact {
  MatX A;  // m x n, rows are face normals
  VecX b;  // m
};

/// Differentiable polytope: the maximum over faces is replaced by a scaled
/// log-sum-exp, f(p) = log(sum_j exp(sharpness_j * (A_j p - b_j))) / outer.
/// Larger sharpness gives crisper corners at the cost of steeper derivatives.
struct PolytopeSmooth {
  MatX A;
  VecX b;
  VecX sharpness;      // Q_j > 0 per face
  double outer = 8.0;  // outer exponent > 0
};

using ConvexShape = std::variant<SuperEllipsoid, PolytopeExact, PolytopeSmooth>;

inline int dim(const SuperEllipsoid& s) { return static_cast<int>(s.semi_axes.size()); }
inline int dim(const PolytopeExact& s) { return static_cast<int>(s.A.cols()); }
inline int dim(const PolytopeSmooth& s) { return static_cast<int>(s.A.cols()); }
inline int dim(const ConvexShape& s) {
  return std::visit([](const auto& sh) { return dim(sh); }, s);
}

/// Number of dual variables a distance program against this set introduces:
/// one per face for the exact polytope, one otherwise.
inline int dual_dim(const ConvexShape& s) {
  if (const auto* p = std::get_if<PolytopeExact>(&s)) return static_cast<int>(p->b.size());
  return 1;
}

inline void check_dim(const ConvexShape& s, const VecX& p, const char* who) {
  if (p.size() != dim(s))
    throw std::invalid_argument(std::string(who) + ": point dimension " +
                                std::to_string(p.size()) + " does not match shape dimension " +
                                std::to_string(dim(s)));
}

//------------------------------------------------------------------------------
// Value
//------------------------------------------------------------------------------

inline double eval(const SuperEllipsoid& s, const VecX& p) {
  double acc = 0.0;
  for (int i = 0; i < p.size(); ++i) acc += pow_int(p[i] / s.semi_axes[i], s.exponents[i]);
  return acc - pow_int(s.level, s.level_exponent);
}

inline double eval(const PolytopeExact& s, const VecX& p) {
  return (s.A * p - s.b).maxCoeff();
}

inline double eval(const PolytopeSmooth& s, const VecX& p) {
  // Max-shifted log-sum-exp: naive exponentials overflow once the sharpened
  // face values leave [-700, 700].
  const VecX g = s.A * p - s.b;
  const VecX sc = g.cwiseProduct(s.sharpness);
  const double m = sc.maxCoeff();
  double acc = 0.0;
  for (int j = 0; j < sc.size(); ++j) acc += std::exp(sc[j] - m);
  return (m + std::log(acc)) / s.outer;
}

inline double eval(const ConvexShape& s, const VecX& p) {
  return std::visit(
      [&](const auto& sh) {
        check_dim(s, p, "eval");
        return eval(sh, p);
      },
      s);
}

/// Face-value vector: the m face inequalities for PolytopeExact, a 1-vector
/// holding eval() otherwise.
inline VecX eval_faces(const ConvexShape& s, const VecX& p) {
  check_dim(s, p, "eval_faces");
  if (const auto* pe = std::get_if<PolytopeExact>(&s)) return pe->A * p - pe->b;
  VecX v(1);
  v[0] = eval(s, p);
  return v;
}

enum class PointClass { interior, boundary, exterior };

/// Sign classification with |f| <= tol counted as boundary.
inline PointClass classify(const ConvexShape& s, const VecX& p, double tol = 1e-9) {
  const double f = eval(s, p);
  if (f < -tol) return PointClass::interior;
  if (f > tol) return PointClass::exterior;
  return PointClass::boundary;
}

//------------------------------------------------------------------------------
// First and second derivatives
//------------------------------------------------------------------------------

inline VecX grad(const SuperEllipsoid& s, const VecX& p) {
  VecX g(p.size());
  for (int i = 0; i < p.size(); ++i)
    g[i] = (s.exponents[i] / s.semi_axes[i]) * pow_int(p[i] / s.semi_axes[i], s.exponents[i] - 1);
  return g;
}

inline VecX grad(const PolytopeExact& s, const VecX& p) {
  // Subgradient of the max scalarization: the most violated face's normal.
  int j = 0;
  (s.A * p - s.b).maxCoeff(&j);
  return s.A.row(j).transpose();
}

/// Softmax face weights of the smooth polytope at p (sums to one).
inline VecX face_weights(const PolytopeSmooth& s, const VecX& p) {
  const VecX sc = (s.A * p - s.b).cwiseProduct(s.sharpness);
  const double m = sc.maxCoeff();
  VecX w = (sc.array() - m).exp();
  w /= w.sum();
  return w;
}

inline VecX grad(const PolytopeSmooth& s, const VecX& p) {
  const VecX w = face_weights(s, p);
  return s.A.transpose() * w.cwiseProduct(s.sharpness) / s.outer;
}

inline VecX grad(const ConvexShape& s, const VecX& p) {
  return std::visit(
      [&](const auto& sh) {
        check_dim(s, p, "grad");
        return grad(sh, p);
      },
      s);
}

inline MatX hess(const SuperEllipsoid& s, const VecX& p) {
  MatX h = MatX::Zero(p.size(), p.size());
  for (int i = 0; i < p.size(); ++i) {
    const double ai = s.semi_axes[i];
    const int pi = s.exponents[i];
    h(i, i) = (double(pi) * (pi - 1) / (ai * ai)) * pow_int(p[i] / ai, pi - 2);
  }
  return h;
}

inline MatX hess(const PolytopeExact& s, const VecX& p) {
  return MatX::Zero(p.size(), p.size());
}

inline MatX hess(const PolytopeSmooth& s, const VecX& p) {
  const VecX w = face_weights(s, p);
  const VecX wq = w.cwiseProduct(s.sharpness);
  const VecX mean = s.A.transpose() * wq;  // sum_j w_j Q_j A_j^T
  MatX h = -mean * mean.transpose();
  for (int j = 0; j < s.b.size(); ++j) {
    const VecX aj = s.A.row(j).transpose();
    h.noalias() += wq[j] * s.sharpness[j] * aj * aj.transpose();
  }
  return h / s.outer;
}

inline MatX hess(const ConvexShape& s, const VecX& p) {
  return std::visit(
      [&](const auto& sh) {
        check_dim(s, p, "hess");
        return hess(sh, p);
      },
      s);
}

//------------------------------------------------------------------------------
// Validation
//------------------------------------------------------------------------------

/// Minimizes the log-sum-exp smoothing of max_j(A_j p - b_j) by damped Newton.
/// Returns the minimizer; used to certify a nonempty interior at load time.
inline VecX lse_center(const MatX& A, const VecX& b, double q) {
  PolytopeSmooth soft{A, b, VecX::Constant(b.size(), q), q};
  VecX p = VecX::Zero(A.cols());
  double f = eval(soft, p);
  double damping = 1e-8;
  for (int it = 0; it < 200; ++it) {
    const VecX g = grad(soft, p) * soft.outer;  // un-scaled gradient, better conditioned
    if (g.norm() < 1e-12) break;
    MatX h = hess(soft, p) * soft.outer;
    h.diagonal().array() += damping;
    const VecX step = h.ldlt().solve(-g);
    const VecX cand = p + step;
    const double fc = eval(soft, cand);
    if (fc < f) {
      p = cand;
      f = fc;
      damping = std::max(1e-10, damping * 0.3);
    } else {
      damping *= 10.0;
      if (damping > 1e12) break;
    }
  }
  return p;
}

/// Checks that {A p <= b} has an interior point with strict slack and is
/// bounded along every coordinate axis (1-D support rays from the interior
/// point). Throws std::invalid_argument otherwise.
inline void validate_polytope_faces(const MatX& A, const VecX& b, const char* who) {
  if (A.rows() != b.size()) throw std::invalid_argument(std::string(who) + ": A rows != b size");
  if (A.rows() < 1) throw std::invalid_argument(std::string(who) + ": no faces");
  VecX center;
  double slack = 1.0;
  for (double q : {64.0, 512.0, 4096.0}) {
    center = lse_center(A, b, q);
    slack = (A * center - b).maxCoeff();
    if (slack < -1e-9) break;
  }
  if (slack >= -1e-9)
    throw std::invalid_argument(std::string(who) + ": no interior point found (max slack " +
                                std::to_string(slack) + ")");
  const int n = static_cast<int>(A.cols());
  for (int axis = 0; axis < n; ++axis) {
    for (double sign : {1.0, -1.0}) {
      // Support along the ray center + t * sign * e_axis: finite iff some face
      // normal has a positive component along the ray.
      const VecX ad = sign * A.col(axis);
      if ((ad.array() <= 0.0).all())
        throw std::invalid_argument(std::string(who) + ": unbounded along axis " +
                                    std::to_string(axis));
    }
  }
}

inline void validate_shape(const SuperEllipsoid& s) {
  if (s.semi_axes.size() < 1 || s.semi_axes.size() != s.exponents.size())
    throw std::invalid_argument("SuperEllipsoid: semi_axes/exponents size mismatch");
  for (int i = 0; i < s.semi_axes.size(); ++i) {
    if (!(s.semi_axes[i] > 0.0)) throw std::invalid_argument("SuperEllipsoid: semi_axes must be > 0");
    if (s.exponents[i] < 2 || s.exponents[i] % 2 != 0)
      throw std::invalid_argument("SuperEllipsoid: exponents must be even and >= 2");
  }
  if (!(s.level > 0.0)) throw std::invalid_argument("SuperEllipsoid: level must be > 0");
  if (s.level_exponent < 2 || s.level_exponent % 2 != 0)
    throw std::invalid_argument("SuperEllipsoid: level_exponent must be even and >= 2");
}

inline void validate_shape(const PolytopeExact& s) {
  validate_polytope_faces(s.A, s.b, "PolytopeExact");
}

inline void validate_shape(const PolytopeSmooth& s) {
  if (s.sharpness.size() != s.b.size())
    throw std::invalid_argument("PolytopeSmooth: sharpness size != face count");
  if ((s.sharpness.array() <= 0.0).any() || !(s.outer > 0.0))
    throw std::invalid_argument("PolytopeSmooth: sharpness and outer exponent must be > 0");
  validate_polytope_faces(s.A, s.b, "PolytopeSmooth");
}

inline void validate_shape(const ConvexShape& s) {
  std::visit([](const auto& sh) { validate_shape(sh); }, s);
}

//==============================================================================
// Pose: unit quaternion (vector part, scalar part) plus translation, mapping
// body coordinates to inertial ones.
//==============================================================================

struct Pose {
  Vec4 q{0.0, 0.0, 0.0, 1.0};  // (eps_x, eps_y, eps_z, eta)
  Vec3 d{0.0, 0.0, 0.0};       // [m]
};

/// Body-to-inertial rotation matrix of the quaternion (no normalization).
inline Mat3 rotation_matrix(const Vec4& q) {
  const Vec3 e = q.head<3>();
  const double eta = q[3];
  Mat3 r = (eta * eta - e.squaredNorm()) * Mat3::Identity();
  r.noalias() += 2.0 * e * e.transpose();
  r += 2.0 * eta * skew(e);
  return r;
}

/// d(R(q) a)/dq as a 3x4 matrix, columns ordered (eps, eta).
inline Eigen::Matrix<double, 3, 4> rotate_jacobian_q(const Vec4& q, const Vec3& a) {
  const Vec3 e = q.head<3>();
  const double eta = q[3];
  Eigen::Matrix<double, 3, 4> j;
  j.leftCols<3>() = -2.0 * a * e.transpose() + 2.0 * e.dot(a) * Mat3::Identity() +
                    2.0 * e * a.transpose() - 2.0 * eta * skew(a);
  j.col(3) = 2.0 * eta * a + 2.0 * e.cross(a);
  return j;
}

inline Vec4 quat_normalized(const Vec4& q) { return q / q.norm(); }

/// Composition with R(quat_mul(a, b)) = R(a) R(b).
inline Vec4 quat_mul(const Vec4& a, const Vec4& b) {
  const Vec3 ea = a.head<3>(), eb = b.head<3>();
  Vec4 q;
  q.head<3>() = a[3] * eb + b[3] * ea + ea.cross(eb);
  q[3] = a[3] * b[3] - ea.dot(eb);
  return q;
}

inline Vec4 quat_from_axis_angle(const Vec3& axis, double angle) {
  Vec4 q;
  q.head<3>() = axis.normalized() * std::sin(0.5 * angle);
  q[3] = std::cos(0.5 * angle);
  return q;
}

inline void check_unit_quaternion(const Vec4& q, double tol = 1e-6) {
  if (std::abs(q.norm() - 1.0) > tol)
    throw std::invalid_argument("Pose: quaternion norm deviates from 1 by more than " +
                                std::to_string(tol));
}

inline Vec3 to_inertial(const Pose& pose, const Vec3& p_body) {
  check_unit_quaternion(pose.q);
  return rotation_matrix(pose.q) * p_body + pose.d;
}

inline Vec3 to_body(const Pose& pose, const Vec3& p_inertial) {
  check_unit_quaternion(pose.q);
  return rotation_matrix(pose.q).transpose() * (p_inertial - pose.d);
}

//==============================================================================
// Convexity certificate
//==============================================================================

struct ConvexityReport {
  int pairs = 0;
  int violations = 0;
  double worst_violation = 0.0;  // max of f(mid) - (f(x)+f(y))/2 over all pairs
};

/// Samples random point pairs in [lo, hi]^n and checks midpoint convexity,
/// f((x+y)/2) <= (f(x)+f(y))/2 + 1e-9. Report-only; never throws.
inline ConvexityReport convexity_certificate(const ConvexShape& s, int samples, const VecX& lo,
                                             const VecX& hi, std::uint64_t seed = 0) {
  ConvexityReport rep;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = dim(s);
  VecX x(n), y(n);
  for (int k = 0; k < samples; ++k) {
    for (int i = 0; i < n; ++i) {
      x[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
      y[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
    }
    const double gap = eval(s, VecX(0.5 * (x + y))) - 0.5 * (eval(s, x) + eval(s, y));
    ++rep.pairs;
    if (gap > 1e-9) {
      ++rep.violations;
      rep.worst_violation = std::max(rep.worst_violation, gap);
    }
  }
  return rep;
}

}  // namespace proxtraj
