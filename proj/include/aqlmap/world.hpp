#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "aqlmap/common.hpp"

namespace aqlmap {

inline constexpr int kEgoId = 0;
inline constexpr double kVehicleWidth = 2.0;
inline constexpr double kDefaultVehicleLength = 5.0;

/// Kinematic state of one vehicle. `s` is the front-bumper position along the
/// road, `d` the lateral offset from the center of `lane` (positive = left).
struct VehicleState {
  int id = 0;
  int lane = 0;
  double s = 0.0;
  double d = 0.0;
  double v = 0.0;
  double a = 0.0;
  double length = kDefaultVehicleLength;

  double rear() const { return s - length; }
};

/// Intelligent Driver Model constants plus the lane-change propensity of a
/// surrounding vehicle.
struct DriverParams {
  double v0 = 25.0;
  double T = 1.5;
  double a_max = 1.5;
  double b_comf = 2.0;
  double s0 = 2.0;
  double delta = 4.0;
  double lane_change_prob_per_s = 0.1;
  double b_emergency = 8.0;

  void validate() const;
};

struct TrafficVehicle {
  VehicleState state;
  DriverParams params;
};

struct Scenario {
  std::string name = "random";
  int lane_count = 3;
  double lane_width = 3.5;
  double road_length = 4000.0;
  std::vector<TrafficVehicle> vehicles;
  VehicleState ego_start;
  double ego_desired_speed = 30.0;
  std::uint64_t seed = 0;
  double max_duration = 60.0;

  // Throws std::invalid_argument on overlapping vehicles or bad ranges.
  void validate() const;
};

/// Placement ranges for generate_random_scenario.
struct ScenarioConfig {
  int lane_count = 3;
  double lane_width = 3.5;
  double road_length = 4000.0;
  double place_from = 0.0;
  double place_to = 1000.0;
  double ego_s = 300.0;
  double ego_speed_min = 15.0;
  double ego_speed_max = 25.0;
  double ego_desired_speed = 30.0;
  double v0_min = 15.0;
  double v0_max = 30.0;
  double jitter = 0.10;
  double lane_change_prob_per_s = 0.1;
  double min_bumper_gap = 10.0;
  double max_duration = 60.0;
  int max_vehicles = 80;
};

class PlacementError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Deterministic scenario: identical (n, seed, config) give identical output.
Scenario generate_random_scenario(int n_vehicles, std::uint64_t seed,
                                  const ScenarioConfig& config = {});

enum class TrafficModel { kIdm, kConstantVelocity };

struct WorldConfig {
  double dt = 0.1;
  int steps_per_decision = 10;
  TrafficModel traffic = TrafficModel::kIdm;
  bool lane_changes = true;
};

struct WorldState {
  std::int64_t step = 0;
  double time = 0.0;
  std::vector<VehicleState> vehicles;
  VehicleState ego;
  // Lateral rates of the ego, kept so that replanning starts from a smooth state.
  double ego_d_rate = 0.0;
  double ego_d_accel = 0.0;
  bool collision = false;      // any two footprints ever overlapped
  bool ego_collision = false;  // the ego was involved
};

/// Commanded ego state at the end of a world step. `y` is the absolute lateral
/// position (lane i center at i * lane_width).
struct EgoSetpoint {
  double s = 0.0;
  double v = 0.0;
  double a = 0.0;
  double y = 0.0;
  double y_rate = 0.0;
  double y_accel = 0.0;
};

double idm_acceleration(const VehicleState& follower,
                        const std::optional<VehicleState>& leader,
                        const DriverParams& params);

// Bumper-to-bumper distance from follower front to leader rear.
inline double bumper_gap(const VehicleState& follower, const VehicleState& leader) {
  return leader.s - leader.length - follower.s;
}

// True if the two axis-aligned footprints intersect.
bool footprints_overlap(const VehicleState& a, const VehicleState& b, double lane_width);

// Lanes whose area the vehicle body intersects (one or two lanes).
bool occupies_lane(const VehicleState& v, int lane, double lane_width);

inline double absolute_y(const VehicleState& v, double lane_width) {
  return v.lane * lane_width + v.d;
}

class World {
 public:
  explicit World(Scenario scenario, WorldConfig config = {});

  const WorldState& state() const { return state_; }
  const Scenario& scenario() const { return scenario_; }
  const WorldConfig& config() const { return config_; }
  const DriverParams& params_of(int vehicle_id) const;

  /// Advances one step of config().dt; the ego is placed exactly at `ego`.
  void step(const EgoSetpoint& ego);

  /// Advances one step per setpoint.
  void advance(std::span<const EgoSetpoint> ego_controls);

  bool ego_on_road() const;

  // Appends rows "time,id,lane,s,d,v,a" for ego and all vehicles.
  void write_trace_rows(std::ostream& out) const;

 private:
  void apply_lane_changes();
  void detect_collisions();
  std::optional<VehicleState> leader_of(const VehicleState& v) const;

  Scenario scenario_;
  WorldConfig config_;
  WorldState state_;
  std::vector<DriverParams> params_;  // indexed parallel to scenario vehicles by id
  std::vector<int> param_index_;      // id -> index in params_
  Rng rng_;
};

/// Vehicles with |s_j - s_ego| <= range_m, any lane.
std::vector<VehicleState> sensor_view(const WorldState& state, double range_m);

inline constexpr const char* kTraceHeader = "time,id,lane,s,d,v,a";

}  // namespace aqlmap
