#pragma once

#include <proxtraj/geometry.hpp>

#include <functional>
#include <random>

namespace proxtraj::test {

// Central finite difference of a scalar function, h scaled by the point size.
inline VecX fd_gradient(const std::function<double(const VecX&)>& f, const VecX& p,
                        double h0 = 1e-6) {
  const double h = h0 * std::max(1.0, p.norm());
  VecX g(p.size());
  for (int i = 0; i < p.size(); ++i) {
    VecX hi = p, lo = p;
    hi[i] += h;
    lo[i] -= h;
    g[i] = (f(hi) - f(lo)) / (2.0 * h);
  }
  return g;
}

inline MatX fd_jacobian(const std::function<VecX(const VecX&)>& f, const VecX& p,
                        double h0 = 1e-6) {
  const double h = h0 * std::max(1.0, p.norm());
  const VecX f0 = f(p);
  MatX j(f0.size(), p.size());
  for (int i = 0; i < p.size(); ++i) {
    VecX hi = p, lo = p;
    hi[i] += h;
    lo[i] -= h;
    j.col(i) = (f(hi) - f(lo)) / (2.0 * h);
  }
  return j;
}

// Axis-aligned smooth box from per-axis face offsets: faces x <= +offsets(0),
// -x <= +offsets(1), y <= offsets(2), ... with unit normals.
inline PolytopeSmooth smooth_box(const VecX& plus_offsets, const VecX& minus_offsets, double q) {
  const int n = static_cast<int>(plus_offsets.size());
  MatX a = MatX::Zero(2 * n, n);
  VecX b(2 * n);
  for (int i = 0; i < n; ++i) {
    a(2 * i, i) = 1.0;
    b[2 * i] = plus_offsets[i];
    a(2 * i + 1, i) = -1.0;
    b[2 * i + 1] = minus_offsets[i];
  }
  return PolytopeSmooth{a, b, VecX::Constant(2 * n, q), q};
}

inline PolytopeExact exact_box(const VecX& plus_offsets, const VecX& minus_offsets) {
  const PolytopeSmooth s = smooth_box(plus_offsets, minus_offsets, 8.0);
  return PolytopeExact{s.A, s.b};
}

inline VecX vec3(double x, double y, double z) {
  VecX v(3);
  v << x, y, z;
  return v;
}

// Scenario A models (body frames): 4x2x2 vehicle cuboid, asymmetric target
// cuboid with x faces at +1/-2, and the x-axis cylinder.
inline PolytopeSmooth scenario_a_vehicle() {
  return smooth_box(vec3(2, 1, 1), vec3(2, 1, 1), 8.0);
}
inline PolytopeSmooth scenario_a_t1() { return smooth_box(vec3(1, 3, 3), vec3(2, 3, 3), 8.0); }
inline SuperEllipsoid scenario_a_t2() {
  SuperEllipsoid s;
  s.semi_axes = vec3(2, 1, 1);
  s.exponents = Eigen::Vector3i(8, 2, 2);
  return s;
}

inline SuperEllipsoid unit_sphere() {
  SuperEllipsoid s;
  s.semi_axes = vec3(1, 1, 1);
  s.exponents = Eigen::Vector3i(2, 2, 2);
  return s;
}

inline VecX random_point(std::mt19937_64& rng, const VecX& lo, const VecX& hi) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VecX p(lo.size());
  for (int i = 0; i < p.size(); ++i) p[i] = lo[i] + (hi[i] - lo[i]) * u(rng);
  return p;
}

}  // namespace proxtraj::test
