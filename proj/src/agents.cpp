#include "aqlmap/agents.hpp"

#include <algorithm>
#include <cmath>

namespace aqlmap {

std::string_view to_string(OptionStatus s) {
  switch (s) {
    case OptionStatus::kRunning: return "running";
    case OptionStatus::kReached: return "reached";
    case OptionStatus::kInterrupted: return "interrupted";
  }
  return "unknown";
}

bool gap_reached(const Gap& gap, const VehicleState& ego) {
  return ego.lane == gap.identity.lane && std::abs(ego.d) < kReachedLateralTolerance &&
         gap.interval.contains(ego.s, ego.length, 0.0);
}

OptionStep step_option(const OptionExecution& exec, const GapSet& gapset, const VehicleState& ego,
                       const GapPolicy& reselect, double now) {
  if (gapset.empty()) throw std::invalid_argument("step_option: empty gap set");
  OptionStep out;
  const auto found = gapset.find(exec.identity);
  if (found && !gap_reached(gapset.gaps[*found].gap, ego)) {
    out.exec = exec;
    out.exec.trajectory = gapset.gaps[*found].best;
    out.exec.status = OptionStatus::kRunning;
    out.previous = OptionStatus::kRunning;
    return out;
  }
  out.previous = found ? OptionStatus::kReached : OptionStatus::kInterrupted;
  const std::size_t k = reselect(gapset);
  out.exec.identity = gapset.gaps[k].gap.identity;
  out.exec.trajectory = gapset.gaps[k].best;
  out.exec.start_time = now;
  out.exec.status = OptionStatus::kRunning;
  out.reselected = true;
  return out;
}

std::vector<std::vector<double>> gap_action_inputs(const GapSet& gapset, double sensor_range) {
  std::vector<std::vector<double>> out;
  out.reserve(gapset.gaps.size());
  for (const auto& g : gapset.gaps) out.push_back(gap_action_vector(g.gap.features, sensor_range));
  return out;
}

std::size_t select_option_aqlmap(const DeepSetQNet& net, const RlState& state,
                                 const GapSet& gapset, double sensor_range,
                                 std::vector<double>* q_out) {
  if (gapset.empty()) throw std::invalid_argument("select_option_aqlmap: empty gap set");
  const auto actions = gap_action_inputs(gapset, sensor_range);
  const auto q = net.q_values(state, actions);
  std::size_t best = 0;
  for (std::size_t k = 1; k < q.size(); ++k) {
    const auto& fk = gapset.gaps[k].gap.features;
    const auto& fb = gapset.gaps[best].gap.features;
    if (q[k] > q[best]) {
      best = k;
    } else if (q[k] == q[best]) {
      if (fk.af < fb.af || (fk.af == fb.af && std::abs(fk.d_rel) < std::abs(fb.d_rel))) best = k;
    }
  }
  if (q_out) *q_out = q;
  return best;
}

std::size_t select_random(const GapSet& gapset, Rng& rng) {
  if (gapset.empty()) throw std::invalid_argument("select_random: empty gap set");
  return rng.index(gapset.gaps.size());
}

std::size_t select_greedy(const GapSet& gapset) {
  if (gapset.empty()) throw std::invalid_argument("select_greedy: empty gap set");
  constexpr double kTie = 1e-9;
  std::size_t best = 0;
  double best_speed = gapset.gaps[0].best.mean_speed();
  for (std::size_t k = 1; k < gapset.gaps.size(); ++k) {
    const double v = gapset.gaps[k].best.mean_speed();
    if (v > best_speed + kTie) {
      best = k;
      best_speed = v;
    } else if (v >= best_speed - kTie && gapset.gaps[k].gap.features.af == 0 &&
               gapset.gaps[best].gap.features.af != 0) {
      best = k;
      best_speed = std::max(best_speed, v);
    }
  }
  return best;
}

int select_high_level(const DeepSetQNet& net, const RlState& state, const std::array<bool, 3>& mask,
                      std::vector<double>* q_out) {
  const auto q = net.outputs(state);
  if (q.size() != 3) throw std::invalid_argument("select_high_level: network must have 3 outputs");
  int best = -1;
  for (int a = 0; a < 3; ++a) {
    if (!mask[static_cast<std::size_t>(a)]) continue;
    if (best < 0 || q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
  }
  if (q_out) *q_out = q;
  return best < 0 ? kKeepLane : best;
}

std::optional<VehicleState> lane_leader(std::span<const VehicleState> view, const VehicleState& ego,
                                        int lane) {
  std::optional<VehicleState> out;
  for (const auto& v : view) {
    if (v.id == ego.id || v.lane != lane || v.s <= ego.s) continue;
    if (!out || v.s < out->s) out = v;
  }
  return out;
}

std::optional<VehicleState> lane_follower(std::span<const VehicleState> view,
                                          const VehicleState& ego, int lane) {
  std::optional<VehicleState> out;
  for (const auto& v : view) {
    if (v.id == ego.id || v.lane != lane || v.s > ego.s) continue;
    if (!out || v.s > out->s) out = v;
  }
  return out;
}

IdmDecision select_idm(std::span<const VehicleState> view, const VehicleState& ego, int lane_count,
                       const IdmAgentParams& params) {
  IdmDecision out;
  out.target_lane = ego.lane;
  out.accel = idm_acceleration(ego, lane_leader(view, ego, ego.lane), params.idm);
  double best = out.accel + params.advantage_threshold;
  for (int lane : {ego.lane + 1, ego.lane - 1}) {
    if (lane < 0 || lane >= lane_count) continue;
    VehicleState moved = ego;
    moved.lane = lane;
    const auto leader = lane_leader(view, moved, lane);
    const auto follower = lane_follower(view, moved, lane);
    if (leader && bumper_gap(moved, *leader) <= params.idm.s0) continue;
    if (follower) {
      if (bumper_gap(*follower, moved) <= params.idm.s0) continue;
      // the new follower is judged with the same relaxed constants
      if (idm_acceleration(*follower, moved, params.idm) < -params.safe_decel) continue;
    }
    const double a = idm_acceleration(moved, leader, params.idm);
    if (a > best) {
      best = a;
      out.target_lane = lane;
    }
  }
  return out;
}

RlState build_rl_state(std::span<const VehicleState> view, const VehicleState& ego,
                       int lane_count, double sensor_range, double desired_speed) {
  RlState s;
  s.dynamic.reserve(view.size());
  for (const auto& v : view) {
    if (v.id == ego.id) continue;
    s.dynamic.push_back({(v.s - ego.s) / sensor_range, (v.v - ego.v) / desired_speed,
                         static_cast<double>(v.lane - ego.lane)});
  }
  s.static_features = {ego.v / desired_speed, ego.lane < lane_count - 1 ? 1.0 : 0.0,
                       ego.lane > 0 ? 1.0 : 0.0};
  return s;
}

ActionChoice gap_choice(const Gap& gap) {
  ActionChoice a;
  a.gap = gap.features;
  a.identity = gap.identity;
  return a;
}

}  // namespace aqlmap
