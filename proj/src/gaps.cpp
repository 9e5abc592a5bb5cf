#include "aqlmap/gaps.hpp"

#include <algorithm>
#include <sstream>

namespace aqlmap {

std::string GapIdentity::to_string() const {
  std::ostringstream os;
  os << '(' << (follower_id ? std::to_string(*follower_id) : "-") << ','
     << (leader_id ? std::to_string(*leader_id) : "-") << ",lane " << lane << ')';
  return os.str();
}

double Gap::reference_position() const {
  const double rear = interval.follower ? interval.follower->s : interval.virtual_rear_s;
  const double front = interval.leader ? interval.leader->s : interval.virtual_front_s;
  return 0.5 * (rear + front);
}

double Gap::reference_speed() const {
  const auto& f = interval.follower;
  const auto& l = interval.leader;
  if (f && l) return 0.5 * (f->v + l->v);
  if (f) return f->v;
  if (l) return l->v;
  return interval.virtual_speed;
}

double Gap::length() const {
  const double rear = interval.follower ? interval.follower->s : interval.virtual_rear_s;
  const double front = interval.leader ? interval.leader->s : interval.virtual_front_s;
  return front - rear;
}

std::optional<std::size_t> GapSet::find(const GapIdentity& id) const {
  for (std::size_t i = 0; i < gaps.size(); ++i)
    if (gaps[i].gap.identity == id) return i;
  return std::nullopt;
}

std::vector<Gap> enumerate_gaps(std::span<const VehicleState> view, const VehicleState& ego,
                                int lane_count, double sensor_range, double desired_speed) {
  std::vector<Gap> out;
  const double rear_virtual = ego.s - sensor_range;
  const double front_virtual = ego.s + sensor_range;
  for (int lane = std::max(0, ego.lane - 1); lane <= std::min(lane_count - 1, ego.lane + 1); ++lane) {
    std::vector<VehicleState> in_lane;
    for (const auto& v : view)
      if (v.lane == lane) in_lane.push_back(v);
    std::sort(in_lane.begin(), in_lane.end(), [](const VehicleState& a, const VehicleState& b) {
      return a.s < b.s || (a.s == b.s && a.id < b.id);
    });

    auto make = [&](const VehicleState* follower, const VehicleState* leader) {
      Gap g;
      g.identity.lane = lane;
      g.interval.lane = lane;
      g.interval.virtual_rear_s = rear_virtual;
      g.interval.virtual_front_s = front_virtual;
      g.interval.virtual_speed = desired_speed;
      if (follower) {
        g.identity.follower_id = follower->id;
        g.interval.follower = *follower;
        g.interval.virtual_speed = follower->v;
      }
      if (leader) {
        g.identity.leader_id = leader->id;
        g.interval.leader = *leader;
        g.interval.virtual_speed = leader->v;
      }
      out.push_back(std::move(g));
    };

    if (in_lane.empty()) {
      make(nullptr, nullptr);
      continue;
    }
    make(nullptr, &in_lane.front());
    for (std::size_t i = 0; i + 1 < in_lane.size(); ++i) make(&in_lane[i], &in_lane[i + 1]);
    make(&in_lane.back(), nullptr);
  }
  return out;
}

GapFeatures gap_features(const Gap& gap, const VehicleState& ego, double desired_speed,
                         double sensor_range, const std::optional<GapIdentity>& previously_selected) {
  GapFeatures f;
  f.d_rel = (gap.reference_position() - ego.s) / sensor_range;
  f.v_rel = (gap.reference_speed() - ego.v) / desired_speed;
  f.lane_rel = gap.identity.lane - ego.lane;
  f.len = gap.length();
  f.af = (previously_selected && *previously_selected == gap.identity) ? 0 : 1;
  return f;
}

void assign_features(std::vector<Gap>& gaps, const VehicleState& ego, double desired_speed,
                     double sensor_range, const std::optional<GapIdentity>& previously_selected) {
  for (auto& g : gaps)
    g.features = gap_features(g, ego, desired_speed, sensor_range, previously_selected);
}

GapSet reachable_gaps(std::span<const Gap> gaps, const PlanStart& ego,
                      std::span<const VehicleState> view, double desired_speed,
                      const PlannerConfig& config, double decision_time) {
  GapSet set;
  set.decision_time = decision_time;
  for (const auto& gap : gaps) {
    if (std::abs(gap.identity.lane - ego.lane) > 1) continue;
    const auto relevant = relevant_vehicles(view, ego.lane, gap.identity.lane);
    const auto candidates =
        sample_trajectories(ego, gap.identity.lane, desired_speed, config, relevant, &gap.interval);
    if (auto best = best_trajectory_to_gap(candidates, gap.interval, ego.length))
      set.gaps.push_back({gap, std::move(*best)});
  }
  return set;
}

}  // namespace aqlmap
