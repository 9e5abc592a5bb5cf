#include "aqlmap/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

namespace aqlmap {

using nlohmann::json;

void RewardParams::validate() const {
  if (!(v_des > 0)) throw std::invalid_argument("RewardParams: v_des must be positive");
  if (p_ac > 0) throw std::invalid_argument("RewardParams: p_ac must be <= 0");
}

double reward(double speed, const RewardParams& p, bool action_changed) {
  const double penalty = action_changed ? p.p_ac : 0.0;
  if (speed < p.v_des) return 1.0 - std::abs(speed - p.v_des) / p.v_des + penalty;
  return 1.0 + penalty;
}

std::string_view to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::kOptions: return "options";
    case AgentKind::kRandom: return "random";
    case AgentKind::kGreedy: return "greedy";
    case AgentKind::kIdm: return "idm";
    case AgentKind::kHighLevel: return "high-level";
    case AgentKind::kHighLevelRandom: return "high-level-random";
  }
  return "unknown";
}

AgentKind parse_agent_kind(std::string_view text) {
  for (AgentKind k : {AgentKind::kOptions, AgentKind::kRandom, AgentKind::kGreedy, AgentKind::kIdm,
                      AgentKind::kHighLevel, AgentKind::kHighLevelRandom})
    if (to_string(k) == text) return k;
  throw std::invalid_argument("unknown agent '" + std::string(text) + "'");
}

bool is_learned(AgentKind kind) {
  return kind == AgentKind::kOptions || kind == AgentKind::kHighLevel;
}

namespace {

json identity_json(const GapIdentity& id) {
  return {{"follower", id.follower_id ? json(*id.follower_id) : json(nullptr)},
          {"leader", id.leader_id ? json(*id.leader_id) : json(nullptr)},
          {"lane", id.lane}};
}

json choice_json(const ActionChoice& a) {
  json j;
  if (a.identity) j["identity"] = identity_json(*a.identity);
  if (a.gap) {
    j["features"] = {{"d_rel", a.gap->d_rel}, {"v_rel", a.gap->v_rel}, {"lane_rel", a.gap->lane_rel},
                     {"len", a.gap->len},     {"af", a.gap->af}};
  } else {
    j["index"] = a.index;
  }
  return j;
}

}  // namespace

std::string decision_to_json(const DecisionRecord& d) {
  json cands = json::array();
  for (const auto& c : d.candidates) cands.push_back(choice_json(c));
  json j = {{"time", d.time},
            {"ego_s", d.ego_s},
            {"ego_v", d.ego_v},
            {"ego_lane", d.ego_lane},
            {"candidates", cands},
            {"q_values", d.q_values},
            {"chosen", d.chosen},
            {"maneuver", d.maneuver},
            {"option_outcome", d.option_outcome},
            {"planned_mean_accel", d.planned_mean_accel},
            {"end_speed", d.end_speed},
            {"action_changed", d.action_changed},
            {"reward", d.reward}};
  return j.dump();
}

namespace {

ActionChoice fallback_choice(double sensor_range) {
  ActionChoice a;
  GapFeatures f;
  f.d_rel = 0.0;
  f.v_rel = 0.0;
  f.lane_rel = 0;
  f.len = 2.0 * sensor_range;
  f.af = 0;
  a.gap = f;
  return a;
}

// What the ego does during one decision interval.
struct Maneuver {
  enum Kind { kTrajectory, kFallback, kIdm } kind = kFallback;
  Trajectory trajectory;
  double offset = 0.0;  // trajectory time at the start of the interval
  // fallback: constant deceleration in the lane, lateral return to the center
  double s0 = 0.0, v0 = 0.0, decel = 2.0;
  int lane = 0;
  QuinticPoly lateral;
};

EgoSetpoint fallback_setpoint(const Maneuver& m, double t, double lane_width) {
  EgoSetpoint sp;
  const double t_stop = m.v0 / m.decel;
  const double te = std::min(t, t_stop);
  sp.s = m.s0 + m.v0 * te - 0.5 * m.decel * te * te;
  sp.v = std::max(0.0, m.v0 - m.decel * te);
  sp.a = t < t_stop ? -m.decel : 0.0;
  const PolyEval lat = m.lateral.eval(std::min(t, m.lateral.duration()));
  sp.y = m.lane * lane_width + lat.p;
  sp.y_rate = lat.v;
  sp.y_accel = lat.a;
  return sp;
}

class EpisodeRunner {
 public:
  EpisodeRunner(const Scenario& scenario, const EpisodeConfig& cfg)
      : sc_(scenario),
        cfg_(cfg),
        world_(scenario, cfg.world),
        rng_(derive_seed(cfg.agent_seed, 0xE9)),
        rp_{scenario.ego_desired_speed, cfg.p_ac} {
    planner_ = cfg.planner;
    planner_.lane_count = sc_.lane_count;
    planner_.lane_width = sc_.lane_width;
    lc_planner_ = planner_;
    lc_planner_.lattice.durations = {cfg.lane_change_duration};
    idm_ = cfg.idm;
    idm_.idm.v0 = sc_.ego_desired_speed;
    rp_.validate();
    if (is_learned(cfg.agent)) {
      if (!cfg.model) throw std::invalid_argument("run_episode: learned agent without a model");
      const auto& d = cfg.model->dims();
      const bool gap_net = d.action_dim == 5 && d.outputs == 1;
      const bool discrete_net = d.action_dim == 0 && d.outputs == 3;
      if (cfg.agent == AgentKind::kOptions && !gap_net)
        throw std::invalid_argument("run_episode: options agent needs a gap-conditioned network");
      if (cfg.agent == AgentKind::kHighLevel && !discrete_net)
        throw std::invalid_argument("run_episode: high-level agent needs a 3-output network");
    }
  }

  EpisodeResult run();

 private:
  bool gap_agent() const {
    return cfg_.agent == AgentKind::kOptions || cfg_.agent == AgentKind::kRandom ||
           cfg_.agent == AgentKind::kGreedy;
  }
  bool high_level_agent() const {
    return cfg_.agent == AgentKind::kHighLevel || cfg_.agent == AgentKind::kHighLevelRandom;
  }
  bool finished() const;
  Maneuver fallback(const WorldState& st) const;
  void execute(Maneuver& m);
  EgoSetpoint idm_setpoint();

  const Scenario& sc_;
  const EpisodeConfig& cfg_;
  World world_;
  Rng rng_;
  RewardParams rp_;
  PlannerConfig planner_;
  PlannerConfig lc_planner_;
  IdmAgentParams idm_;
  EpisodeResult res_;
  std::ostringstream trace_;
  bool stop_ = false;
  int prev_lane_ = 0;

  std::optional<GapIdentity> prev_selected_;
  std::optional<OptionExecution> option_;

  int prev_action_ = kKeepLane;
  int commit_left_ = 0;
  Maneuver committed_;

  bool idm_changing_ = false;
  QuinticPoly idm_lateral_;
  double idm_elapsed_ = 0.0;
};

bool EpisodeRunner::finished() const {
  const auto& st = world_.state();
  const double max_t = cfg_.max_duration.value_or(sc_.max_duration);
  if (stop_ || st.ego_collision) return true;
  if (st.time >= max_t - 1e-9) return true;
  if (st.ego.s > sc_.road_length - cfg_.road_end_margin) return true;
  return false;
}

Maneuver EpisodeRunner::fallback(const WorldState& st) const {
  Maneuver m;
  m.kind = Maneuver::kFallback;
  m.s0 = st.ego.s;
  m.v0 = st.ego.v;
  m.decel = cfg_.fallback_decel;
  // brake harder if the lane leader would otherwise be hit
  constexpr double kStandstill = 2.0, kMaxDecel = 8.0;
  if (const auto lead = lane_leader(st.vehicles, st.ego, st.ego.lane)) {
    const double closing = st.ego.v - lead->v;
    const double room = bumper_gap(st.ego, *lead) - kStandstill;
    if (closing > 0.0)
      m.decel = std::clamp(room > 0.0 ? closing * closing / (2.0 * room) : kMaxDecel, m.decel, kMaxDecel);
  }
  m.lane = st.ego.lane;
  m.lateral = fit_quintic({st.ego.d, st.ego_d_rate, st.ego_d_accel}, {0.0, 0.0, 0.0}, 2.0);
  return m;
}

EgoSetpoint EpisodeRunner::idm_setpoint() {
  const auto& st = world_.state();
  const VehicleState& ego = st.ego;
  const double w = sc_.lane_width;
  const double dt = cfg_.world.dt;
  double a = idm_.idm.a_max;
  for (int lane = ego.lane - 1; lane <= ego.lane + 1; ++lane) {
    if (lane < 0 || lane >= sc_.lane_count || !occupies_lane(ego, lane, w)) continue;
    a = std::min(a, idm_acceleration(ego, lane_leader(st.vehicles, ego, lane), idm_.idm));
  }
  EgoSetpoint sp;
  const double v_next = ego.v + a * dt;
  if (v_next < 0.0) {
    sp.s = ego.s + (a < 0 ? -ego.v * ego.v / (2.0 * a) : 0.0);
    sp.v = 0.0;
  } else {
    sp.s = ego.s + 0.5 * (ego.v + v_next) * dt;
    sp.v = v_next;
  }
  sp.a = a;
  if (idm_changing_) {
    idm_elapsed_ += dt;
    const double T = idm_lateral_.duration();
    const PolyEval lat = idm_lateral_.eval(std::min(idm_elapsed_, T));
    sp.y = lat.p;
    sp.y_rate = lat.v;
    sp.y_accel = lat.a;
    if (idm_elapsed_ >= T - 1e-9) idm_changing_ = false;
  } else {
    sp.y = absolute_y(ego, w);
  }
  return sp;
}

void EpisodeRunner::execute(Maneuver& m) {
  const int n = cfg_.world.steps_per_decision;
  const double dt = cfg_.world.dt;
  const double s_start = sc_.ego_start.s;
  for (int k = 1; k <= n; ++k) {
    EgoSetpoint sp;
    const double t = k * dt;
    switch (m.kind) {
      case Maneuver::kTrajectory:
        sp = m.trajectory.setpoint(std::min(m.offset + t, m.trajectory.duration));
        break;
      case Maneuver::kFallback:
        sp = fallback_setpoint(m, t, sc_.lane_width);
        break;
      case Maneuver::kIdm:
        sp = idm_setpoint();
        break;
    }
    world_.step(sp);
    const auto& st = world_.state();
    res_.ego_speeds.push_back(st.ego.v);
    if (st.ego.lane != prev_lane_) {
      ++res_.lane_changes;
      prev_lane_ = st.ego.lane;
    }
    if (st.ego.lane != sc_.ego_start.lane) res_.left_start_lane = true;
    if (cfg_.record_trace) world_.write_trace_rows(trace_);
    if (st.ego_collision) {
      stop_ = true;
      break;
    }
    if (cfg_.goal_distance && st.ego.s - s_start >= *cfg_.goal_distance) {
      res_.goal_reached = true;
      stop_ = true;
      break;
    }
  }
  m.offset += n * dt;
}

EpisodeResult EpisodeRunner::run() {
  res_.scenario = sc_.name;
  res_.agent = cfg_.agent;
  prev_lane_ = sc_.ego_start.lane;
  if (cfg_.record_trace) {
    trace_ << kTraceHeader << '\n';
    world_.write_trace_rows(trace_);
  }
  const int lanes = sc_.lane_count;
  const double sr = cfg_.sensor_range;
  const double vdes = sc_.ego_desired_speed;
  std::optional<Transition> pending;

  while (true) {
    const WorldState st = world_.state();
    const bool done = finished();
    const bool need_next = pending.has_value();
    if (done && !need_next) break;

    DecisionRecord rec;
    rec.time = st.time;
    rec.ego_s = st.ego.s;
    rec.ego_v = st.ego.v;
    rec.ego_lane = st.ego.lane;
    Maneuver m;
    bool changed = false;
    const auto view = sensor_view(st, sr);
    const RlState rl = build_rl_state(view, st.ego, lanes, sr, vdes);

    if (gap_agent()) {
      auto gaps = enumerate_gaps(view, st.ego, lanes, sr, vdes);
      assign_features(gaps, st.ego, vdes, sr, prev_selected_);
      const GapSet gapset = reachable_gaps(gaps, PlanStart::from(st), view, vdes, planner_, st.time);
      for (const auto& g : gapset.gaps) rec.candidates.push_back(gap_choice(g.gap));
      if (rec.candidates.empty()) rec.candidates.push_back(fallback_choice(sr));
      if (pending) {
        pending->next_state = rl;
        pending->next_candidates = rec.candidates;
        res_.transitions.push_back(std::move(*pending));
        pending.reset();
      }
      if (done) break;

      if (gapset.empty()) {
        m = fallback(st);
        rec.maneuver = "fallback";
        rec.chosen = 0;
        rec.planned_mean_accel = -m.decel;
        option_.reset();
      } else {
        std::size_t k = 0;
        if (cfg_.agent == AgentKind::kOptions) {
          k = select_option_aqlmap(*cfg_.model, rl, gapset, sr, &rec.q_values);
        } else if (cfg_.agent == AgentKind::kGreedy) {
          k = select_greedy(gapset);
        } else if (option_) {
          const auto step = step_option(
              *option_, gapset, st.ego, [&](const GapSet& g) { return select_random(g, rng_); },
              st.time);
          option_ = step.exec;
          rec.option_outcome = std::string(to_string(step.previous));
          k = *gapset.find(option_->identity);
        } else {
          k = select_random(gapset, rng_);
          option_ = OptionExecution{gapset.gaps[k].gap.identity, gapset.gaps[k].best, st.time,
                                    OptionStatus::kRunning};
        }
        const auto& chosen = gapset.gaps[k];
        m.kind = Maneuver::kTrajectory;
        m.trajectory = chosen.best;
        rec.maneuver = "trajectory";
        rec.chosen = static_cast<int>(k);
        rec.planned_mean_accel =
            (chosen.best.longitudinal.eval(chosen.best.duration).v - st.ego.v) / chosen.best.duration;
        changed = chosen.gap.features.af == 1;
        prev_selected_ = chosen.gap.identity;
      }
    } else if (high_level_agent()) {
      std::array<bool, 3> mask{true, false, false};
      std::array<std::optional<Trajectory>, 3> plans;
      if (commit_left_ > 0) {
        ActionChoice a;
        a.index = prev_action_;
        rec.candidates.push_back(a);
      } else {
        const auto gaps = enumerate_gaps(view, st.ego, lanes, sr, vdes);
        const PlanStart start = PlanStart::from(st);
        std::vector<Gap> own;
        for (const auto& g : gaps) {
          if (g.identity.lane != st.ego.lane) continue;
          const bool behind = !g.interval.follower || g.interval.follower->s < st.ego.s;
          const bool ahead = !g.interval.leader || g.interval.leader->s > st.ego.s;
          if (behind && ahead) own.push_back(g);
        }
        const GapSet keep = reachable_gaps(own, start, view, vdes, planner_, st.time);
        if (!keep.empty()) plans[kKeepLane] = keep.gaps.front().best;
        for (int action : {kLaneLeft, kLaneRight}) {
          const int lane = st.ego.lane + (action == kLaneLeft ? 1 : -1);
          if (lane < 0 || lane >= lanes) continue;
          std::vector<Gap> target;
          for (const auto& g : gaps)
            if (g.identity.lane == lane) target.push_back(g);
          const GapSet set = reachable_gaps(target, start, view, vdes, lc_planner_, st.time);
          for (const auto& g : set.gaps)
            if (!plans[static_cast<std::size_t>(action)] ||
                g.best.cost.total < plans[static_cast<std::size_t>(action)]->cost.total)
              plans[static_cast<std::size_t>(action)] = g.best;
          mask[static_cast<std::size_t>(action)] = plans[static_cast<std::size_t>(action)].has_value();
        }
        for (int a = 0; a < 3; ++a) {
          if (!mask[static_cast<std::size_t>(a)]) continue;
          ActionChoice c;
          c.index = a;
          rec.candidates.push_back(c);
        }
      }
      if (pending) {
        pending->next_state = rl;
        pending->next_candidates = rec.candidates;
        res_.transitions.push_back(std::move(*pending));
        pending.reset();
      }
      if (done) break;

      int action = prev_action_;
      if (commit_left_ > 0) {
        --commit_left_;
        m = committed_;
        rec.maneuver = "lane-change";
        rec.chosen = 0;
      } else {
        if (cfg_.agent == AgentKind::kHighLevel) {
          action = select_high_level(*cfg_.model, rl, mask, &rec.q_values);
        } else if (mask[static_cast<std::size_t>(prev_action_)] && rng_.bernoulli(cfg_.p_repeat)) {
          action = prev_action_;
        } else {
          std::vector<int> allowed;
          for (int a = 0; a < 3; ++a)
            if (mask[static_cast<std::size_t>(a)]) allowed.push_back(a);
          action = allowed[rng_.index(allowed.size())];
        }
        for (std::size_t i = 0; i < rec.candidates.size(); ++i)
          if (rec.candidates[i].index == action) rec.chosen = static_cast<int>(i);
        const auto& plan = plans[static_cast<std::size_t>(action)];
        if (plan) {
          m.kind = Maneuver::kTrajectory;
          m.trajectory = *plan;
          rec.maneuver = action == kKeepLane ? "trajectory" : "lane-change";
          rec.planned_mean_accel =
              (plan->longitudinal.eval(plan->duration).v - st.ego.v) / plan->duration;
          if (action != kKeepLane) {
            const int decisions =
                static_cast<int>(std::lround(cfg_.lane_change_duration *
                                             (1.0 / (cfg_.world.dt * cfg_.world.steps_per_decision))));
            commit_left_ = std::max(0, decisions - 1);
          }
        } else {
          m = fallback(st);
          rec.maneuver = "fallback";
          rec.planned_mean_accel = -m.decel;
        }
      }
      changed = action != prev_action_;
      prev_action_ = action;
    } else {
      if (done) break;
      if (!idm_changing_) {
        const IdmDecision dec = select_idm(view, st.ego, lanes, idm_);
        if (dec.target_lane != st.ego.lane) {
          idm_lateral_ = fit_quintic({absolute_y(st.ego, sc_.lane_width), st.ego_d_rate, st.ego_d_accel},
                                     {dec.target_lane * sc_.lane_width, 0.0, 0.0},
                                     cfg_.lane_change_duration);
          idm_elapsed_ = 0.0;
          idm_changing_ = true;
          changed = true;
        }
      }
      m.kind = Maneuver::kIdm;
      rec.maneuver = "idm";
    }

    if (cfg_.record_transitions && rec.chosen >= 0) {
      Transition t;
      t.state = rl;
      t.action = rec.candidates[static_cast<std::size_t>(rec.chosen)];
      t.duration = cfg_.world.dt * cfg_.world.steps_per_decision;
      pending = std::move(t);
    }
    execute(m);
    if (m.kind == Maneuver::kTrajectory && commit_left_ > 0) committed_ = m;

    const auto& after = world_.state();
    rec.end_speed = after.ego.v;
    rec.action_changed = changed;
    rec.reward = reward(after.ego.v, rp_, changed);
    res_.total_return += rec.reward;
    if (pending) {
      pending->reward = rec.reward;
      if (after.ego_collision) {
        pending->terminal = true;
        res_.transitions.push_back(std::move(*pending));
        pending.reset();
      }
    }
    res_.decisions.push_back(std::move(rec));
  }

  const auto& st = world_.state();
  res_.duration = st.time;
  res_.distance = st.ego.s - sc_.ego_start.s;
  res_.collision = st.ego_collision;
  double sum = 0.0;
  for (double v : res_.ego_speeds) sum += v;
  res_.mean_speed = res_.ego_speeds.empty() ? sc_.ego_start.v : sum / res_.ego_speeds.size();
  if (cfg_.record_trace) res_.trace = trace_.str();
  return std::move(res_);
}

}  // namespace

EpisodeResult run_episode(const Scenario& scenario, const EpisodeConfig& config) {
  EpisodeRunner runner(scenario, config);
  return runner.run();
}

Dataset collect_dataset(const CollectConfig& config, const std::function<void(int)>& progress) {
  if (config.n_transitions < 1) throw std::invalid_argument("collect_dataset: n_transitions < 1");
  if (config.min_vehicles < 0 || config.max_vehicles < config.min_vehicles)
    throw std::invalid_argument("collect_dataset: bad vehicle range");
  Dataset data;
  data.kind = config.kind;
  Rng rng(derive_seed(config.seed, 0xC0));
  const auto n = static_cast<std::size_t>(config.n_transitions);
  data.transitions.reserve(n);
  for (std::uint64_t episode = 0; data.transitions.size() < n; ++episode) {
    const int vehicles =
        config.min_vehicles +
        static_cast<int>(rng.index(static_cast<std::size_t>(config.max_vehicles - config.min_vehicles + 1)));
    Scenario sc;
    try {
      sc = generate_random_scenario(vehicles, derive_seed(config.seed, 1000 + episode), config.scenario);
    } catch (const PlacementError&) {
      continue;
    }
    EpisodeConfig ec = config.episode;
    ec.agent = config.kind == DatasetKind::kGap ? AgentKind::kRandom : AgentKind::kHighLevelRandom;
    ec.agent_seed = derive_seed(config.seed, 500000 + episode);
    ec.record_transitions = true;
    ec.record_trace = false;
    EpisodeResult res = run_episode(sc, ec);
    for (auto& t : res.transitions) {
      if (data.transitions.size() >= n) break;
      data.transitions.push_back(std::move(t));
    }
    if (progress) progress(static_cast<int>(data.transitions.size()));
  }
  return data;
}

namespace {

TrafficVehicle steady(int id, int lane, double s, double v) {
  TrafficVehicle tv;
  tv.state.id = id;
  tv.state.lane = lane;
  tv.state.s = s;
  tv.state.v = v;
  tv.params.v0 = v;
  tv.params.T = 1.0;
  tv.params.lane_change_prob_per_s = 0.0;
  return tv;
}

constexpr double kCriticalSpeed = 20.0;
constexpr double kCriticalEgoS = 200.0;

}  // namespace

Scenario critical_scenario_a() {
  Scenario sc;
  sc.name = "critical-a";
  sc.seed = 4;
  sc.max_duration = 90.0;
  sc.ego_desired_speed = 30.0;
  const double e = kCriticalEgoS;
  const double v = kCriticalSpeed;
  sc.ego_start.id = kEgoId;
  sc.ego_start.lane = 0;
  sc.ego_start.s = e;
  sc.ego_start.v = v;
  // right lane: g0 = (2, 1) around the ego
  sc.vehicles.push_back(steady(1, 0, e + 30.0, v));
  sc.vehicles.push_back(steady(2, 0, e - 30.0, v));
  // middle lane: g1 = (4, 3) behind vehicle 3, which is too close for a 3 s lane change
  sc.vehicles.push_back(steady(3, 1, e + 18.0, v));
  sc.vehicles.push_back(steady(4, 1, e - 60.0, v));
  sc.vehicles.push_back(steady(5, 1, e + 78.0, v));
  // left lane: open ahead (g2), one vehicle far behind
  sc.vehicles.push_back(steady(6, 2, e - 60.0, v));
  sc.validate();
  return sc;
}

Scenario critical_scenario_b() {
  Scenario sc;
  sc.name = "critical-b";
  sc.seed = 5;
  sc.max_duration = 90.0;
  sc.ego_desired_speed = 30.0;
  const double e = kCriticalEgoS;
  const double v = kCriticalSpeed;
  sc.ego_start.id = kEgoId;
  sc.ego_start.lane = 0;
  sc.ego_start.s = e;
  sc.ego_start.v = v;
  sc.vehicles.push_back(steady(1, 0, e + 30.0, v));  // R1 ahead of the ego
  sc.vehicles.push_back(steady(2, 1, e + 17.0, v));  // M1 beside R1
  sc.vehicles.push_back(steady(3, 1, e - 65.0, v));  // M2 far behind
  sc.validate();
  return sc;
}

GapIdentity critical_a_g0() { return {2, 1, 0}; }
GapIdentity critical_a_g1() { return {4, 3, 1}; }
GapIdentity critical_b_g0() { return {std::nullopt, 1, 0}; }
GapIdentity critical_b_g1() { return {3, 2, 1}; }

std::string scenario_to_json(const Scenario& sc) {
  auto vehicle = [](const VehicleState& v) {
    return json{{"id", v.id}, {"lane", v.lane}, {"s", v.s},          {"d", v.d},
                {"v", v.v},   {"a", v.a},       {"length", v.length}};
  };
  json vehicles = json::array();
  for (const auto& tv : sc.vehicles) {
    const auto& p = tv.params;
    vehicles.push_back({{"state", vehicle(tv.state)},
                        {"params",
                         {{"v0", p.v0},
                          {"T", p.T},
                          {"a_max", p.a_max},
                          {"b_comf", p.b_comf},
                          {"s0", p.s0},
                          {"delta", p.delta},
                          {"lane_change_prob_per_s", p.lane_change_prob_per_s},
                          {"b_emergency", p.b_emergency}}}});
  }
  json j = {{"format_version", 1},
            {"name", sc.name},
            {"lane_count", sc.lane_count},
            {"lane_width", sc.lane_width},
            {"road_length", sc.road_length},
            {"ego_start", vehicle(sc.ego_start)},
            {"ego_desired_speed", sc.ego_desired_speed},
            {"seed", sc.seed},
            {"max_duration", sc.max_duration},
            {"vehicles", vehicles}};
  return j.dump(2);
}

Scenario scenario_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1) throw FormatError("unsupported format_version");
    auto vehicle = [](const json& o) {
      VehicleState v;
      v.id = o.at("id").get<int>();
      v.lane = o.at("lane").get<int>();
      v.s = o.at("s").get<double>();
      v.d = o.value("d", 0.0);
      v.v = o.at("v").get<double>();
      v.a = o.value("a", 0.0);
      v.length = o.value("length", kDefaultVehicleLength);
      return v;
    };
    Scenario sc;
    sc.name = j.value("name", std::string("scenario"));
    sc.lane_count = j.value("lane_count", 3);
    sc.lane_width = j.value("lane_width", 3.5);
    sc.road_length = j.value("road_length", 4000.0);
    sc.ego_start = vehicle(j.at("ego_start"));
    sc.ego_desired_speed = j.at("ego_desired_speed").get<double>();
    sc.seed = j.value("seed", std::uint64_t{0});
    sc.max_duration = j.value("max_duration", 60.0);
    for (const auto& o : j.at("vehicles")) {
      TrafficVehicle tv;
      tv.state = vehicle(o.at("state"));
      const json& p = o.at("params");
      tv.params.v0 = p.at("v0").get<double>();
      tv.params.T = p.value("T", tv.params.T);
      tv.params.a_max = p.value("a_max", tv.params.a_max);
      tv.params.b_comf = p.value("b_comf", tv.params.b_comf);
      tv.params.s0 = p.value("s0", tv.params.s0);
      tv.params.delta = p.value("delta", tv.params.delta);
      tv.params.lane_change_prob_per_s = p.value("lane_change_prob_per_s", tv.params.lane_change_prob_per_s);
      tv.params.b_emergency = p.value("b_emergency", tv.params.b_emergency);
      sc.vehicles.push_back(tv);
    }
    sc.validate();
    return sc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("scenario: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
}

void save_scenario(const Scenario& scenario, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << scenario_to_json(scenario) << '\n';
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return scenario_from_json(ss.str());
}

namespace {

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Sample standard deviation; 0 for fewer than two values.
double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

double EvalReport::suite_mean(const std::string& agent, std::optional<int> run) const {
  std::vector<double> xs;
  for (const auto& e : episodes)
    if (e.agent == agent && e.suite == "density" && (!run || e.run == *run)) xs.push_back(e.mean_speed);
  return mean_of(xs);
}

EvalReport evaluate(const EvalConfig& config,
                    const std::function<void(const EpisodeSummary&)>& progress) {
  EvalReport report;
  struct Variant {
    AgentKind kind;
    int run;
    const DeepSetQNet* model;
    std::uint64_t seed;
  };
  std::vector<Variant> variants;
  for (AgentKind kind : config.agents) {
    if (kind == AgentKind::kOptions || kind == AgentKind::kHighLevel) {
      const auto& models = kind == AgentKind::kOptions ? config.gap_models : config.discrete_models;
      if (models.empty())
        throw std::invalid_argument("evaluate: no models given for agent " + std::string(to_string(kind)));
      for (std::size_t m = 0; m < models.size(); ++m)
        variants.push_back({kind, static_cast<int>(m), &models[m].online, 0});
    } else if (kind == AgentKind::kRandom || kind == AgentKind::kHighLevelRandom) {
      for (int r = 0; r < config.runs; ++r)
        variants.push_back({kind, r, nullptr, derive_seed(config.seed, 7000 + static_cast<std::uint64_t>(r))});
    } else {
      variants.push_back({kind, 0, nullptr, 0});
    }
  }

  std::vector<std::pair<std::string, Scenario>> suite;
  for (int n : config.densities) {
    for (int k = 0; k < config.scenarios_per_density; ++k) {
      const std::uint64_t seed = derive_seed(config.seed, static_cast<std::uint64_t>(n) * 1000 + k);
      suite.emplace_back("density", generate_random_scenario(n, seed, config.scenario));
    }
  }
  if (config.critical) {
    suite.emplace_back("critical-a", critical_scenario_a());
    suite.emplace_back("critical-b", critical_scenario_b());
  }

  for (const auto& var : variants) {
    std::size_t idx = 0;
    for (const auto& [name, sc] : suite) {
      EpisodeConfig ec = config.episode;
      ec.agent = var.kind;
      ec.model = var.model;
      ec.agent_seed = derive_seed(var.seed, idx);
      ec.record_transitions = false;
      ec.record_trace = false;
      if (name != "density") {
        ec.goal_distance = config.critical_goal;
        ec.max_duration = config.critical_max_duration;
      }
      const EpisodeResult res = run_episode(sc, ec);
      EpisodeSummary s;
      s.agent = std::string(to_string(var.kind));
      s.suite = name;
      s.density = name == "density" ? static_cast<int>(sc.vehicles.size()) : 0;
      s.scenario_index = name == "density" ? static_cast<int>(idx % config.scenarios_per_density) : 0;
      s.run = var.run;
      s.mean_speed = res.mean_speed;
      s.duration = res.duration;
      s.distance = res.distance;
      s.collision = res.collision;
      s.total_return = res.total_return;
      s.left_start_lane = res.left_start_lane;
      report.episodes.push_back(s);
      if (progress) progress(s);
      ++idx;
    }
  }

  // per density: mean over each run's episodes, then mean/std across runs
  std::vector<std::string> agent_names;
  for (AgentKind k : config.agents) agent_names.emplace_back(to_string(k));
  for (const auto& agent : agent_names) {
    for (int n : config.densities) {
      std::map<int, std::vector<double>> per_run;
      DensityRow row;
      row.agent = agent;
      row.density = n;
      for (const auto& e : report.episodes) {
        if (e.agent != agent || e.suite != "density" || e.density != n) continue;
        per_run[e.run].push_back(e.mean_speed);
        row.collisions += e.collision ? 1 : 0;
        ++row.episodes;
      }
      std::vector<double> run_means;
      for (const auto& [r, xs] : per_run) run_means.push_back(mean_of(xs));
      row.mean_speed = mean_of(run_means);
      row.std_speed = std_of(run_means);
      report.density_rows.push_back(row);
    }
    if (!config.critical) continue;
    for (const char* scen : {"critical-a", "critical-b"}) {
      CriticalRow row;
      row.agent = agent;
      row.scenario = scen;
      std::vector<double> speeds, durations;
      for (const auto& e : report.episodes) {
        if (e.agent != agent || e.suite != scen) continue;
        speeds.push_back(e.mean_speed);
        durations.push_back(e.duration);
        row.collisions += e.collision ? 1 : 0;
        row.left_start_lane += e.left_start_lane ? 1 : 0;
        ++row.episodes;
      }
      row.mean_speed = mean_of(speeds);
      row.std_speed = std_of(speeds);
      row.mean_duration = mean_of(durations);
      row.std_duration = std_of(durations);
      report.critical_rows.push_back(row);
    }
  }
  return report;
}

std::string EvalReport::to_json() const {
  json eps = json::array();
  for (const auto& e : episodes)
    eps.push_back({{"agent", e.agent},
                   {"suite", e.suite},
                   {"density", e.density},
                   {"scenario_index", e.scenario_index},
                   {"run", e.run},
                   {"mean_speed", e.mean_speed},
                   {"duration", e.duration},
                   {"distance", e.distance},
                   {"collision", e.collision},
                   {"total_return", e.total_return},
                   {"left_start_lane", e.left_start_lane}});
  json dens = json::array();
  for (const auto& r : density_rows)
    dens.push_back({{"agent", r.agent},
                    {"density", r.density},
                    {"mean_speed", r.mean_speed},
                    {"std_speed", r.std_speed},
                    {"collisions", r.collisions},
                    {"episodes", r.episodes}});
  json crit = json::array();
  for (const auto& r : critical_rows)
    crit.push_back({{"agent", r.agent},
                    {"scenario", r.scenario},
                    {"mean_speed", r.mean_speed},
                    {"std_speed", r.std_speed},
                    {"mean_duration", r.mean_duration},
                    {"std_duration", r.std_duration},
                    {"collisions", r.collisions},
                    {"left_start_lane", r.left_start_lane},
                    {"episodes", r.episodes}});
  return json{{"format_version", 1}, {"density", dens}, {"critical", crit}, {"episodes", eps}}.dump(2);
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    out << std::setprecision(10);
    return out;
  };
  {
    auto out = open("report.json");
    out << to_json() << '\n';
  }
  {
    auto out = open("report.csv");
    out << "agent,density,mean_speed,std_speed,collisions,episodes\n";
    for (const auto& r : density_rows)
      out << r.agent << ',' << r.density << ',' << r.mean_speed << ',' << r.std_speed << ','
          << r.collisions << ',' << r.episodes << '\n';
  }
  {
    auto out = open("episodes.csv");
    out << "agent,suite,density,scenario_index,run,mean_speed,duration,distance,collision,total_return,"
           "left_start_lane\n";
    for (const auto& e : episodes)
      out << e.agent << ',' << e.suite << ',' << e.density << ',' << e.scenario_index << ',' << e.run
          << ',' << e.mean_speed << ',' << e.duration << ',' << e.distance << ',' << e.collision << ','
          << e.total_return << ',' << e.left_start_lane << '\n';
  }
  {
    // density vs mean speed, one column pair per agent
    auto out = open("fig6.csv");
    std::vector<std::string> agents;
    for (const auto& r : density_rows)
      if (std::find(agents.begin(), agents.end(), r.agent) == agents.end()) agents.push_back(r.agent);
    out << "density";
    for (const auto& a : agents) out << ',' << a << "_mean," << a << "_std";
    out << '\n';
    std::vector<int> dens;
    for (const auto& r : density_rows)
      if (std::find(dens.begin(), dens.end(), r.density) == dens.end()) dens.push_back(r.density);
    for (int n : dens) {
      out << n;
      for (const auto& a : agents)
        for (const auto& r : density_rows)
          if (r.agent == a && r.density == n) out << ',' << r.mean_speed << ',' << r.std_speed;
      out << '\n';
    }
  }
  {
    auto out = open("fig7.csv");
    out << "scenario,agent,mean_speed,std_speed,mean_duration,std_duration\n";
    for (const auto& r : critical_rows)
      out << r.scenario << ',' << r.agent << ',' << r.mean_speed << ',' << r.std_speed << ','
          << r.mean_duration << ',' << r.std_duration << '\n';
  }
}

}  // namespace aqlmap
