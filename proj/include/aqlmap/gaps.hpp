#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aqlmap/trajectory.hpp"
#include "aqlmap/world.hpp"

namespace aqlmap {

/// A gap is identified by the ids of its bounding vehicles, not by position,
/// so the identity survives relative drift between decisions.
struct GapIdentity {
  std::optional<int> follower_id;
  std::optional<int> leader_id;
  int lane = 0;

  bool operator==(const GapIdentity&) const = default;
  std::string to_string() const;
};

struct GapFeatures {
  double d_rel = 0.0;  // (reference position - ego s) / sensor range
  double v_rel = 0.0;  // (reference speed - ego v) / desired speed
  int lane_rel = 0;
  double len = 0.0;    // leader position - follower position, meters
  int af = 1;          // 0 iff this gap was the previously selected one
};

struct Gap {
  GapIdentity identity;
  GapInterval interval;
  GapFeatures features;

  // Midpoint of the bounding positions (virtual where a vehicle is missing).
  double reference_position() const;
  double reference_speed() const;
  double length() const;
};

struct ReachableGap {
  Gap gap;
  Trajectory best;
};

struct GapSet {
  double decision_time = 0.0;
  std::vector<ReachableGap> gaps;

  bool empty() const { return gaps.empty(); }
  std::optional<std::size_t> find(const GapIdentity& id) const;
};

/// Gaps on the ego lane and the adjacent lanes: one between each pair of
/// consecutive vehicles, plus an open gap ahead of the front-most and behind
/// the rear-most vehicle, virtually bounded at +-sensor_range. An empty lane
/// yields a single gap moving at the desired speed.
std::vector<Gap> enumerate_gaps(std::span<const VehicleState> view, const VehicleState& ego,
                                int lane_count, double sensor_range, double desired_speed);

GapFeatures gap_features(const Gap& gap, const VehicleState& ego, double desired_speed,
                         double sensor_range, const std::optional<GapIdentity>& previously_selected);

/// Fills `features` of every gap in place.
void assign_features(std::vector<Gap>& gaps, const VehicleState& ego, double desired_speed,
                     double sensor_range, const std::optional<GapIdentity>& previously_selected);

/// Keeps the gaps with at least one feasible in-gap candidate and attaches the
/// best one.
GapSet reachable_gaps(std::span<const Gap> gaps, const PlanStart& ego,
                      std::span<const VehicleState> view, double desired_speed,
                      const PlannerConfig& config, double decision_time = 0.0);

}  // namespace aqlmap
