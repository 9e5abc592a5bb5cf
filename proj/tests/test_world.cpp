#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "aqlmap/world.hpp"

using namespace aqlmap;

namespace {

TrafficVehicle vehicle(int id, int lane, double s, double v, double v0) {
  TrafficVehicle t;
  t.state.id = id;
  t.state.lane = lane;
  t.state.s = s;
  t.state.v = v;
  t.params.v0 = v0;
  t.params.lane_change_prob_per_s = 0.0;
  return t;
}

EgoSetpoint cruise(const WorldState& st, double dt) {
  EgoSetpoint sp;
  sp.s = st.ego.s + st.ego.v * dt;
  sp.v = st.ego.v;
  sp.y = st.ego.lane * 3.5;
  return sp;
}

}  // namespace

TEST(Idm, FreeRoadAtDesiredSpeedIsZero) {
  VehicleState v;
  v.v = 25.0;
  DriverParams p;
  p.v0 = 25.0;
  EXPECT_DOUBLE_EQ(idm_acceleration(v, std::nullopt, p), 0.0);
}

TEST(Idm, FromRestGivesFullAcceleration) {
  VehicleState v;
  DriverParams p;
  p.a_max = 1.5;
  EXPECT_DOUBLE_EQ(idm_acceleration(v, std::nullopt, p), 1.5);
}

TEST(Idm, InteractionMatchesScalarFormula) {
  VehicleState f;
  f.v = 20.0;
  VehicleState l;
  l.v = 20.0;
  l.s = 32.0 + l.length;
  DriverParams p;
  p.v0 = 25.0;
  p.T = 1.5;
  p.s0 = 2.0;
  p.a_max = 1.5;
  p.b_comf = 2.0;
  p.delta = 4.0;
  // 1.5 (1 - 0.8^4) - 1.5 (32 / 32)^2
  EXPECT_NEAR(idm_acceleration(f, l, p), -0.6144, 1e-12);
}

TEST(Idm, NonPositiveGapIsEmergency) {
  VehicleState f;
  f.v = 10.0;
  f.s = 10.0;
  VehicleState l;
  l.s = 12.0;
  DriverParams p;
  EXPECT_DOUBLE_EQ(idm_acceleration(f, l, p), -p.b_emergency);
}

TEST(World, EgoAdvancesAtConstantSpeed) {
  Scenario sc;
  sc.ego_start.s = 100.0;
  sc.ego_start.v = 20.0;
  World w(sc);
  for (int i = 0; i < 10; ++i) w.step(cruise(w.state(), 0.1));
  EXPECT_NEAR(w.state().ego.s, 120.0, 1e-9);
  EXPECT_NEAR(w.state().time, 1.0, 1e-12);
}

TEST(World, FreeVehicleAtDesiredSpeedKeepsSpeed) {
  Scenario sc;
  sc.ego_start.s = 100.0;
  sc.vehicles.push_back(vehicle(1, 2, 500.0, 22.0, 22.0));
  World w(sc);
  w.step(cruise(w.state(), 0.1));
  EXPECT_DOUBLE_EQ(w.state().vehicles[0].v, 22.0);
}

TEST(World, ClosingFollowerMatchesFineStepIntegration) {
  Scenario sc;
  sc.ego_start.s = 50.0;
  sc.ego_start.lane = 2;
  auto leader = vehicle(1, 0, 300.0, 15.0, 15.0);
  auto follower = vehicle(2, 0, 240.0, 25.0, 30.0);
  sc.vehicles = {leader, follower};
  World w(sc);
  for (int i = 0; i < 100; ++i) w.step(cruise(w.state(), 0.1));
  double vf = 0.0;
  for (const auto& v : w.state().vehicles)
    if (v.id == 2) vf = v.v;

  // independent integration of the same model at dt = 0.001
  const DriverParams& p = follower.params;
  double sl = 300.0, sf = 240.0, v = 25.0;
  for (int i = 0; i < 10000; ++i) {
    const double gap = sl - 5.0 - sf;
    const double s_star = p.s0 + std::max(0.0, v * p.T + v * (v - 15.0) / (2.0 * std::sqrt(p.a_max * p.b_comf)));
    const double a = p.a_max * (1.0 - std::pow(v / p.v0, p.delta) - (s_star / gap) * (s_star / gap));
    sf += v * 0.001;
    v += a * 0.001;
    sl += 15.0 * 0.001;
  }
  EXPECT_NEAR(vf, v, 0.05);
  EXPECT_LT(std::abs(vf - 15.0), 25.0 - 15.0);
}

TEST(Scenario, EmptyTraffic) {
  const Scenario sc = generate_random_scenario(0, 3);
  EXPECT_TRUE(sc.vehicles.empty());
}

TEST(Scenario, DeterministicForSeed) {
  const Scenario a = generate_random_scenario(70, 1);
  const Scenario b = generate_random_scenario(70, 1);
  ASSERT_EQ(a.vehicles.size(), b.vehicles.size());
  for (std::size_t i = 0; i < a.vehicles.size(); ++i) {
    EXPECT_EQ(a.vehicles[i].state.s, b.vehicles[i].state.s);
    EXPECT_EQ(a.vehicles[i].state.v, b.vehicles[i].state.v);
    EXPECT_EQ(a.vehicles[i].params.T, b.vehicles[i].params.T);
  }
  EXPECT_EQ(a.ego_start.v, b.ego_start.v);
}

TEST(Scenario, NoOverlapByExhaustiveScan) {
  const Scenario sc = generate_random_scenario(10, 7);
  std::vector<VehicleState> all{sc.ego_start};
  for (const auto& v : sc.vehicles) all.push_back(v.state);
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = 0; j < all.size(); ++j) {
      if (i == j || all[i].lane != all[j].lane || all[i].s > all[j].s) continue;
      EXPECT_GT(bumper_gap(all[i], all[j]), 0.0);
    }
}

TEST(Scenario, TooManyVehiclesThrows) {
  ScenarioConfig cfg;
  cfg.place_to = 100.0;
  EXPECT_THROW(generate_random_scenario(60, 1, cfg), PlacementError);
}

TEST(Sensor, EmptyWhenNothingInRange) {
  Scenario sc;
  sc.ego_start.s = 100.0;
  sc.vehicles.push_back(vehicle(1, 0, 300.0, 20.0, 20.0));
  World w(sc);
  EXPECT_TRUE(sensor_view(w.state(), 80.0).empty());
}

TEST(Sensor, BoundaryIsClosed) {
  Scenario sc;
  sc.ego_start.s = 100.0;
  sc.vehicles.push_back(vehicle(1, 1, 180.0, 20.0, 20.0));
  World w(sc);
  EXPECT_EQ(sensor_view(w.state(), 80.0).size(), 1u);
}

TEST(Sensor, MatchesBruteForceFilter) {
  World w(generate_random_scenario(30, 11));
  const auto& st = w.state();
  const auto view = sensor_view(st, 80.0);
  std::size_t expected = 0;
  for (const auto& v : st.vehicles) {
    if (std::abs(v.s - st.ego.s) > 80.0) continue;
    ++expected;
    const bool found = std::any_of(view.begin(), view.end(), [&](const VehicleState& x) { return x.id == v.id; });
    EXPECT_TRUE(found) << v.id;
  }
  EXPECT_EQ(view.size(), expected);
}

TEST(World, TraceIsBitIdentical) {
  auto run = [] {
    World w(generate_random_scenario(40, 5));
    std::ostringstream out;
    for (int i = 0; i < 200; ++i) {
      w.step(cruise(w.state(), 0.1));
      w.write_trace_rows(out);
    }
    return out.str();
  };
  EXPECT_EQ(run(), run());
}

TEST(World, OverlapDetection) {
  VehicleState a, b;
  a.s = 10.0;
  b.s = 12.0;
  EXPECT_TRUE(footprints_overlap(a, b, 3.5));
  b.lane = 1;
  EXPECT_FALSE(footprints_overlap(a, b, 3.5));
  b.d = -1.6;  // 1.9 m from a's center, narrower than one vehicle width
  EXPECT_TRUE(footprints_overlap(a, b, 3.5));
}
