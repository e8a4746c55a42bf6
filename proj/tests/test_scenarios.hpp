#pragma once

#include <proxtraj/transcription.hpp>

#include "test_util.hpp"

namespace proxtraj::test {

// Scenario A built programmatically (the shipped JSON encodes the same data).
inline OcpSpec scenario_a_spec() {
  OcpSpec spec;
  spec.mode = DynamicsMode::full_dim;
  spec.body.mass = 3.0;
  spec.body.inertia = 5.0 * Mat3::Identity();
  spec.vehicle_shapes.push_back({scenario_a_vehicle(), Pose{}});

  Obstacle t1{"T1", scenario_a_t1(), Pose{}};
  t1.pose.d = Vec3(5, 0, 0);
  Obstacle t2{"T2", scenario_a_t2(), Pose{}};
  t2.pose.d = Vec3(8, 0, 0);
  spec.obstacles = {t1, t2};

  spec.x0 = VecX::Zero(kFullDimStates);
  spec.x0[9] = 1.0;  // identity quaternion
  spec.xf = VecX::Zero(kFullDimStates);
  spec.xf.head<3>() = Vec3(10, 3, 0);
  spec.xf[9] = 1.0;
  spec.t0 = 0.0;
  spec.tf = 150.0;
  spec.nodes = 20;
  spec.f_max = 0.02;
  spec.g_max = 0.01;
  spec.d_safe = 0.1;
  return spec;
}

inline OcpSpec scenario_b_spec() {
  OcpSpec spec = scenario_a_spec();
  spec.obstacles.clear();
  Obstacle t1{"T1", smooth_box(vec3(2, 1, 1), vec3(2, 1, 1), 8.0), Pose{}};
  t1.pose.d = Vec3(10, 3, 0);
  Obstacle t2{"T2", smooth_box(vec3(1, 4, 1), vec3(1, 4, 1), 8.0), Pose{}};
  t2.pose.d = Vec3(13, 0, 0);
  Obstacle t3{"T3", scenario_a_t2(), Pose{}};
  t3.pose.d = Vec3(10, -3, 0);
  spec.obstacles = {t1, t2, t3};
  spec.xf.head<3>() = Vec3(9.5, 0, 0);
  return spec;
}

inline OcpSpec point_mass_spec(int obstacles = 1) {
  OcpSpec spec;
  spec.mode = DynamicsMode::point_mass;
  spec.body.mass = 3.0;
  spec.x0 = VecX::Zero(kPointMassStates);
  spec.xf = VecX::Zero(kPointMassStates);
  spec.xf.head<3>() = Vec3(10, 3, 0);
  spec.t0 = 0.0;
  spec.tf = 150.0;
  spec.nodes = 12;
  spec.f_max = 0.02;
  spec.g_max = 0.01;
  spec.d_safe = 0.1;
  for (int j = 0; j < obstacles; ++j) {
    Obstacle ob{"O" + std::to_string(j), unit_sphere(), Pose{}};
    ob.pose.d = Vec3(4.0 + 2.0 * j, 1.0, 0);
    spec.obstacles.push_back(ob);
  }
  return spec;
}

}  // namespace proxtraj::test
