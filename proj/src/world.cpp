#include "aqlmap/world.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace aqlmap {

void DriverParams::validate() const {
  if (!(v0 > 0 && T > 0 && a_max > 0 && b_comf > 0 && s0 > 0 && b_emergency > 0))
    throw std::invalid_argument("DriverParams: all constants must be positive");
  if (delta < 1.0) throw std::invalid_argument("DriverParams: delta must be >= 1");
  if (lane_change_prob_per_s < 0.0 || lane_change_prob_per_s > 1.0)
    throw std::invalid_argument("DriverParams: lane_change_prob_per_s outside [0,1]");
}

void Scenario::validate() const {
  if (lane_count < 1) throw std::invalid_argument("Scenario: lane_count < 1");
  if (!(ego_desired_speed > 0)) throw std::invalid_argument("Scenario: ego_desired_speed <= 0");
  if (!(lane_width > 0) || !(road_length > 0))
    throw std::invalid_argument("Scenario: road geometry must be positive");
  std::vector<VehicleState> all;
  all.reserve(vehicles.size() + 1);
  all.push_back(ego_start);
  for (const auto& tv : vehicles) {
    tv.params.validate();
    all.push_back(tv.state);
  }
  for (const auto& v : all) {
    if (v.lane < 0 || v.lane >= lane_count)
      throw std::invalid_argument("Scenario: vehicle " + std::to_string(v.id) + " lane out of range");
    if (v.v < 0) throw std::invalid_argument("Scenario: negative speed");
    if (!(v.length > 0)) throw std::invalid_argument("Scenario: non-positive length");
  }
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      if (all[i].id == all[j].id) throw std::invalid_argument("Scenario: duplicate vehicle id");
      if (all[i].lane != all[j].lane) continue;
      const auto& back = all[i].s < all[j].s ? all[i] : all[j];
      const auto& front = all[i].s < all[j].s ? all[j] : all[i];
      if (bumper_gap(back, front) <= 0.0)
        throw std::invalid_argument("Scenario: vehicles " + std::to_string(back.id) + " and " +
                                    std::to_string(front.id) + " overlap");
    }
  }
}

double idm_acceleration(const VehicleState& follower, const std::optional<VehicleState>& leader,
                        const DriverParams& p) {
  const double v = std::max(follower.v, 0.0);
  double acc = p.a_max * (1.0 - std::pow(v / p.v0, p.delta));
  if (leader) {
    const double gap = bumper_gap(follower, *leader);
    if (gap <= 0.0) return -p.b_emergency;
    const double dv = v - leader->v;
    const double s_star =
        p.s0 + std::max(0.0, v * p.T + v * dv / (2.0 * std::sqrt(p.a_max * p.b_comf)));
    acc -= p.a_max * (s_star / gap) * (s_star / gap);
  }
  return std::clamp(acc, -p.b_emergency, p.a_max);
}

bool occupies_lane(const VehicleState& v, int lane, double lane_width) {
  const double y = absolute_y(v, lane_width);
  return std::abs(y - lane * lane_width) < 0.5 * lane_width + 0.5 * kVehicleWidth;
}

bool footprints_overlap(const VehicleState& a, const VehicleState& b, double lane_width) {
  const bool lon = a.rear() < b.s && b.rear() < a.s;
  const bool lat = std::abs(absolute_y(a, lane_width) - absolute_y(b, lane_width)) < kVehicleWidth;
  return lon && lat;
}

namespace {

double pick(Rng& rng, double lo, double hi) { return rng.uniform(lo, hi); }

DriverParams jittered(Rng& rng, const ScenarioConfig& c, double v0) {
  DriverParams p;
  auto j = [&](double x) { return x * pick(rng, 1.0 - c.jitter, 1.0 + c.jitter); };
  p.v0 = v0;
  p.T = j(1.5);
  p.a_max = j(1.5);
  p.b_comf = j(2.0);
  p.s0 = j(2.0);
  p.delta = j(4.0);
  p.lane_change_prob_per_s = std::clamp(j(c.lane_change_prob_per_s), 0.0, 1.0);
  p.b_emergency = 8.0;
  return p;
}

bool fits(const std::vector<VehicleState>& placed, const VehicleState& cand, double min_gap) {
  for (const auto& o : placed) {
    if (o.lane != cand.lane) continue;
    const auto& back = o.s < cand.s ? o : cand;
    const auto& front = o.s < cand.s ? cand : o;
    if (bumper_gap(back, front) < min_gap) return false;
  }
  return true;
}

}  // namespace

Scenario generate_random_scenario(int n_vehicles, std::uint64_t seed, const ScenarioConfig& c) {
  if (n_vehicles < 0 || n_vehicles > c.max_vehicles)
    throw std::invalid_argument("generate_random_scenario: n_vehicles outside [0, " +
                                std::to_string(c.max_vehicles) + "]");
  Rng rng(seed);
  Scenario sc;
  sc.name = "random-n" + std::to_string(n_vehicles) + "-s" + std::to_string(seed);
  sc.lane_count = c.lane_count;
  sc.lane_width = c.lane_width;
  sc.road_length = c.road_length;
  sc.seed = seed;
  sc.max_duration = c.max_duration;
  sc.ego_desired_speed = c.ego_desired_speed;

  sc.ego_start.id = kEgoId;
  sc.ego_start.lane = static_cast<int>(rng.index(static_cast<std::size_t>(c.lane_count)));
  sc.ego_start.s = c.ego_s;
  sc.ego_start.v = pick(rng, c.ego_speed_min, c.ego_speed_max);

  std::vector<VehicleState> placed{sc.ego_start};
  constexpr int kMaxAttempts = 2000;
  for (int i = 0; i < n_vehicles; ++i) {
    const double v0 = pick(rng, c.v0_min, c.v0_max);
    DriverParams params = jittered(rng, c, v0);
    VehicleState vs;
    vs.id = i + 1;
    vs.v = v0 * pick(rng, 0.8, 1.0);
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      vs.lane = static_cast<int>(rng.index(static_cast<std::size_t>(c.lane_count)));
      vs.s = pick(rng, c.place_from, c.place_to);
      ok = fits(placed, vs, c.min_bumper_gap);
    }
    if (!ok)
      throw PlacementError("generate_random_scenario: cannot place vehicle " +
                           std::to_string(vs.id) + " without overlap");
    placed.push_back(vs);
    sc.vehicles.push_back({vs, params});
  }
  return sc;
}

World::World(Scenario scenario, WorldConfig config)
    : scenario_(std::move(scenario)), config_(config), rng_(derive_seed(scenario_.seed, 0xA11)) {
  if (!(config_.dt > 0)) throw std::invalid_argument("World: dt must be positive");
  scenario_.validate();
  state_.ego = scenario_.ego_start;
  int max_id = 0;
  for (const auto& tv : scenario_.vehicles) max_id = std::max(max_id, tv.state.id);
  param_index_.assign(static_cast<std::size_t>(max_id) + 1, -1);
  for (const auto& tv : scenario_.vehicles) {
    param_index_[static_cast<std::size_t>(tv.state.id)] = static_cast<int>(params_.size());
    params_.push_back(tv.params);
    state_.vehicles.push_back(tv.state);
  }
  detect_collisions();
}

const DriverParams& World::params_of(int vehicle_id) const {
  if (vehicle_id < 0 || static_cast<std::size_t>(vehicle_id) >= param_index_.size() ||
      param_index_[static_cast<std::size_t>(vehicle_id)] < 0)
    throw std::out_of_range("World: unknown vehicle id " + std::to_string(vehicle_id));
  return params_[static_cast<std::size_t>(param_index_[static_cast<std::size_t>(vehicle_id)])];
}

std::optional<VehicleState> World::leader_of(const VehicleState& v) const {
  std::optional<VehicleState> best;
  auto consider = [&](const VehicleState& o) {
    if (o.id == v.id || o.s <= v.s) return;
    if (!best || o.s < best->s) best = o;
  };
  for (const auto& o : state_.vehicles)
    if (o.lane == v.lane) consider(o);
  if (v.id != kEgoId && occupies_lane(state_.ego, v.lane, scenario_.lane_width)) consider(state_.ego);
  return best;
}

void World::step(const EgoSetpoint& ego) {
  const double dt = config_.dt;
  if (config_.traffic == TrafficModel::kIdm) {
    std::vector<double> acc(state_.vehicles.size());
    for (std::size_t i = 0; i < state_.vehicles.size(); ++i) {
      const auto& v = state_.vehicles[i];
      acc[i] = idm_acceleration(v, leader_of(v), params_of(v.id));
    }
    for (std::size_t i = 0; i < state_.vehicles.size(); ++i) {
      auto& v = state_.vehicles[i];
      const double v_next = v.v + acc[i] * dt;
      if (v_next < 0.0) {
        v.s += -v.v * v.v / (2.0 * acc[i]);
        v.v = 0.0;
      } else {
        v.s += 0.5 * (v.v + v_next) * dt;
        v.v = v_next;
      }
      v.a = acc[i];
    }
  } else {
    for (auto& v : state_.vehicles) {
      v.s += v.v * dt;
      v.a = 0.0;
    }
  }

  const double w = scenario_.lane_width;
  auto& e = state_.ego;
  const int lane = std::clamp(static_cast<int>(std::lround(ego.y / w)), 0, scenario_.lane_count - 1);
  e.lane = lane;
  e.d = ego.y - lane * w;
  e.s = ego.s;
  e.v = std::max(ego.v, 0.0);
  e.a = ego.a;
  state_.ego_d_rate = ego.y_rate;
  state_.ego_d_accel = ego.y_accel;

  std::erase_if(state_.vehicles,
                [&](const VehicleState& v) { return v.rear() > scenario_.road_length; });

  ++state_.step;
  state_.time = static_cast<double>(state_.step) * dt;

  if (config_.traffic == TrafficModel::kIdm && config_.lane_changes &&
      state_.step % config_.steps_per_decision == 0)
    apply_lane_changes();
  detect_collisions();
}

void World::advance(std::span<const EgoSetpoint> ego_controls) {
  for (const auto& sp : ego_controls) step(sp);
}

bool World::ego_on_road() const { return state_.ego.rear() <= scenario_.road_length; }

void World::apply_lane_changes() {
  const double w = scenario_.lane_width;
  for (std::size_t i = 0; i < state_.vehicles.size(); ++i) {
    const DriverParams& p = params_of(state_.vehicles[i].id);
    if (!rng_.bernoulli(p.lane_change_prob_per_s)) continue;
    const VehicleState self = state_.vehicles[i];
    const auto cur_lead = leader_of(self);
    const double cur_gap = cur_lead ? bumper_gap(self, *cur_lead) : kInf;

    int best_lane = -1;
    double best_gap = cur_gap;
    for (int target : {self.lane + 1, self.lane - 1}) {
      if (target < 0 || target >= scenario_.lane_count) continue;
      VehicleState moved = self;
      moved.lane = target;
      moved.d = 0.0;
      std::optional<VehicleState> lead, follow;
      bool blocked = false;
      auto consider = [&](const VehicleState& o) {
        if (footprints_overlap(o, moved, w)) blocked = true;
        if (o.s > moved.s) {
          if (!lead || o.s < lead->s) lead = o;
        } else if (!follow || o.s > follow->s) {
          follow = o;
        }
      };
      for (const auto& o : state_.vehicles)
        if (o.id != self.id && o.lane == target) consider(o);
      if (occupies_lane(state_.ego, target, w)) consider(state_.ego);
      if (blocked) continue;

      const double lead_gap = lead ? bumper_gap(moved, *lead) : kInf;
      if (lead && (lead_gap <= p.s0 || idm_acceleration(moved, lead, p) < -p.b_comf)) continue;
      if (follow) {
        const DriverParams& fp = follow->id == kEgoId ? p : params_of(follow->id);
        if (bumper_gap(*follow, moved) <= fp.s0) continue;
        if (idm_acceleration(*follow, moved, fp) < -fp.b_comf) continue;
      }
      if (lead_gap > best_gap) {
        best_gap = lead_gap;
        best_lane = target;
      }
    }
    if (best_lane >= 0) {
      state_.vehicles[i].lane = best_lane;
      state_.vehicles[i].d = 0.0;
    }
  }
}

void World::detect_collisions() {
  const double w = scenario_.lane_width;
  const auto& vs = state_.vehicles;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (footprints_overlap(vs[i], state_.ego, w)) state_.collision = state_.ego_collision = true;
    for (std::size_t j = i + 1; j < vs.size(); ++j)
      if (footprints_overlap(vs[i], vs[j], w)) state_.collision = true;
  }
}

void World::write_trace_rows(std::ostream& out) const {
  out.precision(17);
  auto row = [&](const VehicleState& v) {
    out << state_.time << ',' << v.id << ',' << v.lane << ',' << v.s << ',' << v.d << ','
        << v.v << ',' << v.a << '\n';
  };
  row(state_.ego);
  for (const auto& v : state_.vehicles) row(v);
}

std::vector<VehicleState> sensor_view(const WorldState& state, double range_m) {
  if (!(range_m > 0)) throw std::invalid_argument("sensor_view: range must be positive");
  std::vector<VehicleState> out;
  for (const auto& v : state.vehicles)
    if (std::abs(v.s - state.ego.s) <= range_m) out.push_back(v);
  return out;
}

}  // namespace aqlmap
