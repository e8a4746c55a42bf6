#pragma once

#include <proxtraj/geometry.hpp>

#include <functional>
#include <vector>

namespace proxtraj {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

//==============================================================================
// Rigid-body spacecraft model
//
// State x = [r_I (3), v_s (3), eps (3), eta (1), omega_s (3)], 13 entries.
// Velocities are resolved in the body frame; the quaternion (eps, eta) maps
// body to inertial. Controls u = [thruster force (3), wheel torque (3)] in
// the body frame.
//==============================================================================

constexpr int kFullDimStates = 13;
constexpr int kFullDimControls = 6;
constexpr int kPointMassStates = 6;
constexpr int kPointMassControls = 3;

struct RigidBodyParams {
  double mass = 1.0;                     // [kg]
  Mat3 inertia = Mat3::Identity();       // about the reference point, body frame [kg m^2]
  Vec3 first_moment = Vec3::Zero();      // mass first moment about the reference point [kg m]
};

/// 6x6 generalized mass matrix [[m I, -c^x], [c^x, J]].
inline Mat6 mass_matrix(const RigidBodyParams& p) {
  Mat6 m;
  m.topLeftCorner<3, 3>() = p.mass * Mat3::Identity();
  m.topRightCorner<3, 3>() = -skew(p.first_moment);
  m.bottomLeftCorner<3, 3>() = skew(p.first_moment);
  m.bottomRightCorner<3, 3>() = p.inertia;
  return m;
}

inline void validate_params(const RigidBodyParams& p) {
  if (!(p.mass > 0.0)) throw std::invalid_argument("RigidBodyParams: mass must be > 0");
  if ((p.inertia - p.inertia.transpose()).norm() > 1e-9)
    throw std::invalid_argument("RigidBodyParams: inertia must be symmetric");
  const Eigen::SelfAdjointEigenSolver<Mat3> es(p.inertia);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw std::invalid_argument("RigidBodyParams: inertia must be positive definite");
  if (std::abs(mass_matrix(p).determinant()) < 1e-12)
    throw std::invalid_argument("RigidBodyParams: singular mass matrix");
}

struct State {
  Vec3 r = Vec3::Zero();       // inertial position [m]
  Vec3 v = Vec3::Zero();       // body-frame translational velocity [m/s]
  Vec4 q{0.0, 0.0, 0.0, 1.0};  // unit quaternion (eps, eta)
  Vec3 w = Vec3::Zero();       // body-frame angular velocity [rad/s]
};

struct Control {
  Vec3 force = Vec3::Zero();   // [N]
  Vec3 torque = Vec3::Zero();  // [N m]
};

inline VecX pack(const State& s) {
  VecX x(kFullDimStates);
  x << s.r, s.v, s.q, s.w;
  return x;
}

inline State unpack_state(const VecX& x) {
  State s;
  s.r = x.segment<3>(0);
  s.v = x.segment<3>(3);
  s.q = x.segment<4>(6);
  s.w = x.segment<3>(10);
  return s;
}

inline VecX pack(const Control& c) {
  VecX u(kFullDimControls);
  u << c.force, c.torque;
  return u;
}

/// Velocity-product term l(nu) of the equations of motion.
inline Vec6 velocity_product(const RigidBodyParams& p, const Vec3& v, const Vec3& w) {
  Vec6 l;
  l.head<3>() = p.mass * w.cross(v);
  l.tail<3>() = (skew(v) * skew(w) - skew(w) * skew(v)) * p.first_moment +
                w.cross(p.inertia * w);
  return l;
}

/// Full rigid-body state derivative:
///   M nu_dot + l(nu) = [f; g] + external wrench,
///   r_dot = R(q) v,  eps_dot = (eta I - eps^x) w / 2,  eta_dot = -eps . w / 2.
/// The optional wrench models manipulator contact forces; it defaults to zero
/// and is unused by the shipped scenarios.
inline VecX state_derivative(const VecX& x, const VecX& u, const RigidBodyParams& p,
                             const Vec6& external_wrench = Vec6::Zero()) {
  const State s = unpack_state(x);
  const Vec6 q_s = u.head<6>() + external_wrench;
  const Vec6 nu_dot = mass_matrix(p).ldlt().solve(q_s - velocity_product(p, s.v, s.w));
  const Vec3 eps = s.q.head<3>();
  const double eta = s.q[3];

  VecX dx(kFullDimStates);
  dx.segment<3>(0) = rotation_matrix(s.q) * s.v;
  dx.segment<3>(3) = nu_dot.head<3>();
  dx.segment<3>(6) = 0.5 * (eta * Mat3::Identity() - skew(eps)) * s.w;
  dx[9] = -0.5 * eps.dot(s.w);
  dx.segment<3>(10) = nu_dot.tail<3>();
  return dx;
}

/// Analytic Jacobians of state_derivative with respect to state and control.
inline void state_jacobians(const VecX& x, const VecX& u, const RigidBodyParams& p,
                            Eigen::Matrix<double, 13, 13>& a, Eigen::Matrix<double, 13, 6>& b) {
  const State s = unpack_state(x);
  const Vec3 eps = s.q.head<3>();
  const double eta = s.q[3];
  const Mat6 minv = mass_matrix(p).inverse();

  a.setZero();
  b.setZero();

  // r_dot = R(q) v.
  a.block<3, 3>(0, 3) = rotation_matrix(s.q);
  a.block<3, 4>(0, 6) = rotate_jacobian_q(s.q, s.v);

  // nu_dot = Minv (u - l(v, w)).
  Mat6 dl;  // d l / d (v, w)
  dl.topLeftCorner<3, 3>() = p.mass * skew(s.w);
  dl.topRightCorner<3, 3>() = -p.mass * skew(s.v);
  const Vec3 c = p.first_moment;
  dl.bottomLeftCorner<3, 3>() = -skew(Vec3(s.w.cross(c))) + skew(s.w) * skew(c);
  dl.bottomRightCorner<3, 3>() =
      -skew(s.v) * skew(c) + skew(Vec3(s.v.cross(c))) + skew(s.w) * p.inertia -
      skew(Vec3(p.inertia * s.w));
  const Mat6 dnu = -minv * dl;
  a.block<3, 3>(3, 3) = dnu.topLeftCorner<3, 3>();
  a.block<3, 3>(3, 10) = dnu.topRightCorner<3, 3>();
  a.block<3, 3>(10, 3) = dnu.bottomLeftCorner<3, 3>();
  a.block<3, 3>(10, 10) = dnu.bottomRightCorner<3, 3>();

  // eps_dot = (eta I - eps^x) w / 2.
  a.block<3, 3>(6, 6) = 0.5 * skew(s.w);
  a.block<3, 1>(6, 9) = 0.5 * s.w;
  a.block<3, 3>(6, 10) = 0.5 * (eta * Mat3::Identity() - skew(eps));
  // eta_dot = -eps . w / 2.
  a.block<1, 3>(9, 6) = -0.5 * s.w.transpose();
  a.block<1, 3>(9, 10) = -0.5 * eps.transpose();

  b.block<3, 3>(3, 0) = minv.topLeftCorner<3, 3>();
  b.block<3, 3>(3, 3) = minv.topRightCorner<3, 3>();
  b.block<3, 3>(10, 0) = minv.bottomLeftCorner<3, 3>();
  b.block<3, 3>(10, 3) = minv.bottomRightCorner<3, 3>();
}

/// T = m v.v/2 + w.Jw/2 - v.(c^x w), Eq.-level kinetic energy of the body.
inline double kinetic_energy(const VecX& x, const RigidBodyParams& p) {
  const State s = unpack_state(x);
  return 0.5 * p.mass * s.v.squaredNorm() + 0.5 * s.w.dot(p.inertia * s.w) -
         s.v.dot(skew(p.first_moment) * s.w);
}

//==============================================================================
// Point-mass reduction: double integrator in the inertial frame.
//==============================================================================

inline VecX point_mass_derivative(const Vec3& r, const Vec3& v, const Vec3& f, double mass) {
  if (!(mass > 0.0)) throw std::invalid_argument("point_mass_derivative: mass must be > 0");
  VecX dx(kPointMassStates);
  dx.head<3>() = v;
  dx.tail<3>() = f / mass;
  (void)r;
  return dx;
}

inline VecX point_mass_derivative(const VecX& x, const VecX& u, double mass) {
  return point_mass_derivative(Vec3(x.head<3>()), Vec3(x.tail<3>()), Vec3(u.head<3>()), mass);
}

//==============================================================================
// Fixed-step RK4 integration
//==============================================================================

struct Trajectory {
  VecX times;
  std::vector<VecX> states;
};

/// Classic fixed-step RK4 over [t0, tf]; the quaternion block (full-dim state
/// layout only) is renormalized after every step. Throws on NaN/Inf with the
/// offending step index.
inline Trajectory integrate_rk4(const VecX& x0,
                                const std::function<VecX(double)>& control_signal,
                                const std::function<VecX(const VecX&, const VecX&)>& derivative,
                                double t0, double tf, int steps, bool renormalize_quaternion) {
  if (steps < 1) throw std::invalid_argument("integrate_rk4: steps must be >= 1");
  Trajectory out;
  out.times.resize(steps + 1);
  out.states.reserve(steps + 1);
  const double h = (tf - t0) / steps;
  VecX x = x0;
  out.times[0] = t0;
  out.states.push_back(x);
  for (int k = 0; k < steps; ++k) {
    const double t = t0 + k * h;
    const VecX k1 = derivative(x, control_signal(t));
    const VecX k2 = derivative(x + 0.5 * h * k1, control_signal(t + 0.5 * h));
    const VecX k3 = derivative(x + 0.5 * h * k2, control_signal(t + 0.5 * h));
    const VecX k4 = derivative(x + h * k3, control_signal(t + h));
    x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (renormalize_quaternion) x.segment<4>(6).normalize();
    if (!x.allFinite())
      throw std::runtime_error("integrate_rk4: non-finite state at step " + std::to_string(k));
    out.times[k + 1] = t + h;
    out.states.push_back(x);
  }
  return out;
}

/// Linear interpolation of node controls, constant beyond the grid ends.
inline std::function<VecX(double)> interpolate_controls(const VecX& times,
                                                        const std::vector<VecX>& controls) {
  return [times, controls](double t) -> VecX {
    const int n = static_cast<int>(controls.size());
    if (t <= times[0]) return controls.front();
    if (t >= times[n - 1]) return controls.back();
    int k = 0;
    while (k + 1 < n - 1 && times[k + 1] < t) ++k;
    const double a = (t - times[k]) / (times[k + 1] - times[k]);
    return (1.0 - a) * controls[k] + a * controls[k + 1];
  };
}

inline Trajectory integrate_rigid_body(const VecX& x0, const std::function<VecX(double)>& u,
                                       const RigidBodyParams& p, double t0, double tf, int steps) {
  return integrate_rk4(
      x0, u, [&p](const VecX& x, const VecX& uu) { return state_derivative(x, uu, p); }, t0, tf,
      steps, true);
}

inline Trajectory integrate_point_mass(const VecX& x0, const std::function<VecX(double)>& u,
                                       double mass, double t0, double tf, int steps) {
  return integrate_rk4(
      x0, u, [mass](const VecX& x, const VecX& uu) { return point_mass_derivative(x, uu, mass); },
      t0, tf, steps, false);
}

}  // namespace proxtraj
