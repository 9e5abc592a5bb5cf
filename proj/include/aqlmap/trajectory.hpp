#pragma once

#include <array>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "aqlmap/world.hpp"

namespace aqlmap {

struct BoundaryState {
  double p = 0.0;
  double v = 0.0;
  double a = 0.0;
};

struct PolyEval {
  double p = 0.0;
  double v = 0.0;
  double a = 0.0;
  double jerk = 0.0;
};

/// p(t) = c0 + c1 t + ... + c5 t^5 on [0, duration].
class QuinticPoly {
 public:
  QuinticPoly() = default;
  QuinticPoly(const std::array<double, 6>& coefficients, double duration);

  const std::array<double, 6>& coefficients() const { return c_; }
  double duration() const { return duration_; }

  // Throws std::out_of_range for t outside [0, duration].
  PolyEval eval(double t) const;

 private:
  std::array<double, 6> c_{};
  double duration_ = 0.0;
};

/// Quintic matching position, velocity and acceleration at both ends.
QuinticPoly fit_quintic(const BoundaryState& start, const BoundaryState& end, double duration);

PolyEval eval_poly(const QuinticPoly& poly, double t);

/// Closed-form integral of the squared third derivative over [0, duration].
double integral_squared_jerk(const QuinticPoly& poly);

double predict_constant_velocity(const VehicleState& vehicle, double t);

struct LongitudinalState {
  double s = 0.0;
  double v = 0.0;
};

// Distance over closing speed; follower/leader resolved by position.
// +inf when the follower is not faster than the leader.
double ttc(const LongitudinalState& host, const LongitudinalState& reference);

// Distance over follower speed; +inf when the follower is stationary.
double thw(const LongitudinalState& host, const LongitudinalState& reference);

struct SafetyParams {
  double ttc_min = 2.0;
  double thw_min = 1.0;
  double a_min = -4.0;
  double a_max = 3.0;
  double v_max = 36.0;
  double horizon = 6.0;
  double check_dt = 0.1;

  void validate() const;
};

struct CostWeights {
  double w_j = 1.0;
  double w_d = 1.0;
  double w_v = 10.0;
  double w_g = 1.0;
};

struct TrajectoryCost {
  double jerk_long = 0.0;
  double jerk_lat = 0.0;
  double lane_center_dev = 0.0;
  double speed_dev = 0.0;
  double gap_fit = 0.0;
  double total = 0.0;
};

enum class Feasibility { kFeasible, kSpeed, kAcceleration, kTtc, kThw, kOverlap };

std::string_view to_string(Feasibility f);

struct FeasibilityVerdict {
  Feasibility reason = Feasibility::kFeasible;
  double time = 0.0;  // first violating sample
  bool ok() const { return reason == Feasibility::kFeasible; }
};

/// A longitudinal and a lateral quintic sharing one duration. The lateral
/// polynomial is the offset from the center of `start_lane`.
struct Trajectory {
  QuinticPoly longitudinal;
  QuinticPoly lateral;
  int start_lane = 0;
  int target_lane = 0;
  double lane_width = 3.5;
  double duration = 0.0;
  double terminal_speed_target = 0.0;
  TrajectoryCost cost;
  FeasibilityVerdict verdict;

  bool feasible() const { return verdict.ok(); }
  // (s(T) - s(0)) / T
  double mean_speed() const;
  double terminal_s() const { return longitudinal.eval(duration).p; }
  EgoSetpoint setpoint(double t) const;
  // Ego footprint at time t.
  VehicleState ego_at(double t, double ego_length) const;
};

/// Where a gap lies and how it moves. Missing bounding vehicles are replaced by
/// virtual boundaries travelling at `virtual_speed`.
struct GapInterval {
  int lane = 0;
  std::optional<VehicleState> follower;
  std::optional<VehicleState> leader;
  double virtual_rear_s = 0.0;
  double virtual_front_s = 0.0;
  double virtual_speed = 0.0;

  double rear_bound(double t) const;   // follower front bumper at t
  double front_bound(double t) const;  // leader rear bumper at t
  // Allowed range for the ego front bumper at t so that the ego fits inside.
  double lower_front(double t, double ego_length) const { return rear_bound(t) + ego_length; }
  double upper_front(double t) const { return front_bound(t); }
  bool contains(double ego_front, double ego_length, double t) const;
  bool bounded_ahead() const { return leader.has_value(); }
};

/// Planner start state; lateral values relative to the center of `lane`.
struct PlanStart {
  double s = 0.0;
  double v = 0.0;
  double a = 0.0;
  int lane = 0;
  double d = 0.0;
  double d_rate = 0.0;
  double d_accel = 0.0;
  double length = kDefaultVehicleLength;

  static PlanStart from(const WorldState& state);
  static PlanStart from(const VehicleState& ego);
};

struct LatticeConfig {
  std::vector<double> durations{2.0, 3.0, 4.0, 5.0, 6.0};
  std::vector<double> speed_fractions{0.6, 0.8, 1.0, 1.1};
  std::vector<double> open_offsets{-20.0, -10.0, 0.0, 10.0, 20.0};
  int gap_points = 5;
};

struct PlannerConfig {
  SafetyParams safety;
  CostWeights weights;
  LatticeConfig lattice;
  int lane_count = 3;
  double lane_width = 3.5;
};

/// Checks a trajectory against speed/acceleration limits and against the
/// constant-velocity predictions of `relevant` vehicles, sampled every
/// safety.check_dt. Vehicles behind the ego in its start lane are checked for
/// overlap only (they are the ones responsible for keeping distance).
FeasibilityVerdict check_feasible(const Trajectory& traj, double ego_length,
                                  std::span<const VehicleState> relevant,
                                  const SafetyParams& safety);

/// Vehicles in the start or target lane.
std::vector<VehicleState> relevant_vehicles(std::span<const VehicleState> view, int start_lane,
                                            int target_lane);

/// Enumerates durations x terminal speeds x terminal offsets towards
/// `target_lane`, evaluating cost and feasibility of each candidate. When a gap
/// is given and bounded ahead, the offsets are evenly spaced inside its
/// predicted interval; otherwise they are placed around the natural travel
/// distance. Throws std::invalid_argument if |target_lane - start.lane| > 1.
std::vector<Trajectory> sample_trajectories(const PlanStart& start, int target_lane,
                                            double desired_speed, const PlannerConfig& config,
                                            std::span<const VehicleState> relevant,
                                            const GapInterval* gap = nullptr);

/// Minimum-cost candidate that is feasible and ends inside the gap.
std::optional<Trajectory> best_trajectory_to_gap(std::span<const Trajectory> candidates,
                                                 const GapInterval& gap, double ego_length);

// Total cost from the components.
double weighted_total(const TrajectoryCost& c, const CostWeights& w);

}  // namespace aqlmap
