#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "aqlmap/gaps.hpp"
#include "aqlmap/learn.hpp"
#include "aqlmap/neural.hpp"

namespace aqlmap {

enum class OptionStatus { kRunning, kReached, kInterrupted };

std::string_view to_string(OptionStatus s);

struct OptionExecution {
  GapIdentity identity;
  Trajectory trajectory;
  double start_time = 0.0;
  OptionStatus status = OptionStatus::kRunning;
};

// Ego inside the gap interval now, on the gap lane, within 0.2 m of its center.
bool gap_reached(const Gap& gap, const VehicleState& ego);

inline constexpr double kReachedLateralTolerance = 0.2;

/// Result of one option bookkeeping step: the execution to follow next and
/// what happened to the previous one.
struct OptionStep {
  OptionExecution exec;
  OptionStatus previous = OptionStatus::kRunning;
  bool reselected = false;
};

using GapPolicy = std::function<std::size_t(const GapSet&)>;

/// Option semantics at a decision tick: a reached or vanished gap hands control
/// back to `reselect`; otherwise the option continues on a freshly planned
/// trajectory. `gapset` must be non-empty.
OptionStep step_option(const OptionExecution& exec, const GapSet& gapset, const VehicleState& ego,
                       const GapPolicy& reselect, double now);

// Candidate gap features as network inputs, one vector per gap.
std::vector<std::vector<double>> gap_action_inputs(const GapSet& gapset, double sensor_range);

/// Argmax of Q over the gap set, encoding the state once. Ties go to the
/// af = 0 gap, then to the smallest |d_rel|.
std::size_t select_option_aqlmap(const DeepSetQNet& net, const RlState& state,
                                 const GapSet& gapset, double sensor_range,
                                 std::vector<double>* q_out = nullptr);

std::size_t select_random(const GapSet& gapset, Rng& rng);

/// Gap whose best trajectory has the highest mean speed; ties keep the
/// previously selected gap.
std::size_t select_greedy(const GapSet& gapset);

enum HighLevelAction : int { kKeepLane = 0, kLaneLeft = 1, kLaneRight = 2 };

/// Argmax over the actions allowed by `mask`; ties prefer keep, then left.
int select_high_level(const DeepSetQNet& net, const RlState& state, const std::array<bool, 3>& mask,
                      std::vector<double>* q_out = nullptr);

/// Relaxed IDM constants and the advantage rule for the rule-based baseline.
struct IdmAgentParams {
  DriverParams idm{30.0, 1.0, 2.0, 3.0, 2.0, 4.0, 0.0, 8.0};
  double advantage_threshold = 0.1;  // m/s^2 gain needed to change lanes
  double safe_decel = 4.0;           // new follower may not need to brake harder
  double lane_change_duration = 3.0;
};

struct IdmDecision {
  double accel = 0.0;
  int target_lane = 0;
};

// Nearest vehicle ahead of `ego` among those occupying `lane`.
std::optional<VehicleState> lane_leader(std::span<const VehicleState> view, const VehicleState& ego,
                                        int lane);
std::optional<VehicleState> lane_follower(std::span<const VehicleState> view,
                                          const VehicleState& ego, int lane);

/// IDM acceleration in the current lane plus an eager lane change whenever an
/// adjacent lane offers a higher IDM acceleration and insertion is safe.
IdmDecision select_idm(std::span<const VehicleState> view, const VehicleState& ego, int lane_count,
                       const IdmAgentParams& params);

/// Dynamic triples (d_rel, v_rel, lane_rel) of sensed vehicles and the static
/// features (v / v_des, left lane valid, right lane valid).
RlState build_rl_state(std::span<const VehicleState> view, const VehicleState& ego,
                       int lane_count, double sensor_range, double desired_speed);

ActionChoice gap_choice(const Gap& gap);

}  // namespace aqlmap
