#include "aqlmap/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace aqlmap {

namespace {
constexpr double kDomainSlack = 1e-9;
}

QuinticPoly::QuinticPoly(const std::array<double, 6>& coefficients, double duration)
    : c_(coefficients), duration_(duration) {
  if (!(duration > 0)) throw std::invalid_argument("QuinticPoly: duration must be positive");
}

PolyEval QuinticPoly::eval(double t) const {
  if (!(t >= -kDomainSlack && t <= duration_ + kDomainSlack))
    throw std::out_of_range("QuinticPoly::eval: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(duration_) + "]");
  const auto& c = c_;
  PolyEval e;
  e.p = c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))));
  e.v = c[1] + t * (2 * c[2] + t * (3 * c[3] + t * (4 * c[4] + t * 5 * c[5])));
  e.a = 2 * c[2] + t * (6 * c[3] + t * (12 * c[4] + t * 20 * c[5]));
  e.jerk = 6 * c[3] + t * (24 * c[4] + t * 60 * c[5]);
  return e;
}

QuinticPoly fit_quintic(const BoundaryState& start, const BoundaryState& end, double T) {
  if (!(T > 0)) throw std::invalid_argument("fit_quintic: duration must be positive");
  const double T2 = T * T;
  const double T3 = T2 * T;
  const double dp = end.p - start.p;
  const double c3 = (20 * dp - (8 * end.v + 12 * start.v) * T - (3 * start.a - end.a) * T2) / (2 * T3);
  const double c4 =
      (-30 * dp + (14 * end.v + 16 * start.v) * T + (3 * start.a - 2 * end.a) * T2) / (2 * T3 * T);
  const double c5 = (12 * dp - 6 * (end.v + start.v) * T + (end.a - start.a) * T2) / (2 * T3 * T2);
  return QuinticPoly({start.p, start.v, 0.5 * start.a, c3, c4, c5}, T);
}

PolyEval eval_poly(const QuinticPoly& poly, double t) { return poly.eval(t); }

double integral_squared_jerk(const QuinticPoly& poly) {
  // j(t) = A + B t + C t^2
  const auto& c = poly.coefficients();
  const double A = 6 * c[3];
  const double B = 24 * c[4];
  const double C = 60 * c[5];
  const double T = poly.duration();
  const double T2 = T * T;
  const double T3 = T2 * T;
  return A * A * T + A * B * T2 + (B * B + 2 * A * C) * T3 / 3.0 + B * C * T3 * T / 2.0 +
         C * C * T3 * T2 / 5.0;
}

double predict_constant_velocity(const VehicleState& vehicle, double t) {
  return vehicle.s + vehicle.v * t;
}

double ttc(const LongitudinalState& host, const LongitudinalState& reference) {
  const bool host_behind = host.s <= reference.s;
  const double v_follower = host_behind ? host.v : reference.v;
  const double v_leader = host_behind ? reference.v : host.v;
  const double closing = v_follower - v_leader;
  if (closing <= 0.0) return kInf;
  return std::abs(host.s - reference.s) / closing;
}

double thw(const LongitudinalState& host, const LongitudinalState& reference) {
  const double v_follower = host.s <= reference.s ? host.v : reference.v;
  const double dist = std::abs(host.s - reference.s);
  if (v_follower <= 0.0) return dist == 0.0 ? 0.0 : kInf;
  return dist / v_follower;
}

void SafetyParams::validate() const {
  if (!(ttc_min > 0 && thw_min > 0)) throw std::invalid_argument("SafetyParams: ttc/thw minimum");
  if (!(a_min < 0 && a_max > 0)) throw std::invalid_argument("SafetyParams: need a_min < 0 < a_max");
  if (!(v_max > 0 && horizon > 0 && check_dt > 0))
    throw std::invalid_argument("SafetyParams: non-positive limit");
}

std::string_view to_string(Feasibility f) {
  switch (f) {
    case Feasibility::kFeasible: return "feasible";
    case Feasibility::kSpeed: return "speed";
    case Feasibility::kAcceleration: return "acceleration";
    case Feasibility::kTtc: return "ttc";
    case Feasibility::kThw: return "thw";
    case Feasibility::kOverlap: return "overlap";
  }
  return "unknown";
}

double Trajectory::mean_speed() const {
  return (longitudinal.eval(duration).p - longitudinal.eval(0.0).p) / duration;
}

EgoSetpoint Trajectory::setpoint(double t) const {
  const PolyEval lon = longitudinal.eval(t);
  const PolyEval lat = lateral.eval(t);
  return {lon.p, lon.v, lon.a, start_lane * lane_width + lat.p, lat.v, lat.a};
}

VehicleState Trajectory::ego_at(double t, double ego_length) const {
  const PolyEval lon = longitudinal.eval(t);
  VehicleState e;
  e.id = kEgoId;
  e.lane = start_lane;
  e.d = lateral.eval(t).p;
  e.s = lon.p;
  e.v = lon.v;
  e.a = lon.a;
  e.length = ego_length;
  return e;
}

double GapInterval::rear_bound(double t) const {
  if (follower) return predict_constant_velocity(*follower, t);
  return virtual_rear_s + virtual_speed * t;
}

double GapInterval::front_bound(double t) const {
  if (leader) return predict_constant_velocity(*leader, t) - leader->length;
  return virtual_front_s + virtual_speed * t;
}

bool GapInterval::contains(double ego_front, double ego_length, double t) const {
  return ego_front >= lower_front(t, ego_length) && ego_front <= upper_front(t);
}

PlanStart PlanStart::from(const VehicleState& ego) {
  PlanStart p;
  p.s = ego.s;
  p.v = ego.v;
  p.a = ego.a;
  p.lane = ego.lane;
  p.d = ego.d;
  p.length = ego.length;
  return p;
}

PlanStart PlanStart::from(const WorldState& state) {
  PlanStart p = from(state.ego);
  p.d_rate = state.ego_d_rate;
  p.d_accel = state.ego_d_accel;
  return p;
}

FeasibilityVerdict check_feasible(const Trajectory& traj, double ego_length,
                                  std::span<const VehicleState> relevant,
                                  const SafetyParams& safety) {
  constexpr double kTol = 1e-9;
  const double w = traj.lane_width;
  const double s_start = traj.longitudinal.eval(0.0).p;
  const int n = static_cast<int>(std::ceil(traj.duration / safety.check_dt - 1e-9));
  for (int k = 1; k <= n; ++k) {
    const double t = std::min(k * safety.check_dt, traj.duration);
    const VehicleState ego = traj.ego_at(t, ego_length);
    if (ego.v < -kTol || ego.v > safety.v_max + kTol) return {Feasibility::kSpeed, t};
    if (ego.a < safety.a_min - kTol || ego.a > safety.a_max + kTol)
      return {Feasibility::kAcceleration, t};

    for (const auto& other : relevant) {
      VehicleState pred = other;
      pred.s = predict_constant_velocity(other, t);
      const bool rear_in_start_lane = other.lane == traj.start_lane && other.s < s_start;
      if (!rear_in_start_lane && occupies_lane(ego, other.lane, w)) {
        const bool other_ahead = pred.s > ego.s;
        const VehicleState& follower = other_ahead ? ego : pred;
        const VehicleState& leader = other_ahead ? pred : ego;
        const double gap = bumper_gap(follower, leader);
        if (gap <= 0.0) return {Feasibility::kThw, t};
        const LongitudinalState f{follower.s, follower.v};
        const LongitudinalState l{leader.rear(), leader.v};
        if (ttc(f, l) < safety.ttc_min) return {Feasibility::kTtc, t};
        if (thw(f, l) < safety.thw_min) return {Feasibility::kThw, t};
      }
      if (footprints_overlap(ego, pred, w)) return {Feasibility::kOverlap, t};
    }
  }
  return {};
}

std::vector<VehicleState> relevant_vehicles(std::span<const VehicleState> view, int start_lane,
                                            int target_lane) {
  std::vector<VehicleState> out;
  for (const auto& v : view)
    if (v.lane == start_lane || v.lane == target_lane) out.push_back(v);
  return out;
}

double weighted_total(const TrajectoryCost& c, const CostWeights& w) {
  return w.w_j * (c.jerk_long + c.jerk_lat) + w.w_d * c.lane_center_dev + w.w_v * c.speed_dev +
         w.w_g * c.gap_fit;
}

namespace {

double lane_center_deviation(const QuinticPoly& lateral, double target, double dt) {
  // trapezoid rule on the check grid
  const double T = lateral.duration();
  const int n = std::max(1, static_cast<int>(std::ceil(T / dt - 1e-9)));
  const double h = T / n;
  double acc = 0.0;
  double prev = std::abs(lateral.eval(0.0).p - target);
  for (int k = 1; k <= n; ++k) {
    const double cur = std::abs(lateral.eval(std::min(k * h, T)).p - target);
    acc += 0.5 * (prev + cur) * h;
    prev = cur;
  }
  return acc;
}

}  // namespace

std::vector<Trajectory> sample_trajectories(const PlanStart& start, int target_lane,
                                            double desired_speed, const PlannerConfig& config,
                                            std::span<const VehicleState> relevant,
                                            const GapInterval* gap) {
  if (std::abs(target_lane - start.lane) > 1)
    throw std::invalid_argument("sample_trajectories: target lane not adjacent");
  if (target_lane < 0 || target_lane >= config.lane_count)
    throw std::invalid_argument("sample_trajectories: target lane outside road");
  const SafetyParams& safety = config.safety;
  const LatticeConfig& lattice = config.lattice;
  const double w = config.lane_width;

  double base_speed = std::min(desired_speed, safety.v_max);
  if (gap && gap->leader) base_speed = std::min(base_speed, gap->leader->v);
  const bool spaced_in_gap = gap && gap->bounded_ahead();
  const bool has_center = gap && gap->leader && gap->follower;
  const double lateral_target = (target_lane - start.lane) * w;

  std::vector<Trajectory> out;
  out.reserve(lattice.durations.size() * lattice.speed_fractions.size() *
              (spaced_in_gap ? static_cast<std::size_t>(lattice.gap_points)
                             : lattice.open_offsets.size()));
  for (double T : lattice.durations) {
    if (T > safety.horizon + 1e-9) continue;
    const QuinticPoly lateral =
        fit_quintic({start.d, start.d_rate, start.d_accel}, {lateral_target, 0.0, 0.0}, T);
    const double jerk_lat = integral_squared_jerk(lateral);
    const double lane_dev = lane_center_deviation(lateral, lateral_target, safety.check_dt);

    std::vector<double> ends;
    double center = 0.0;
    double lo = 0.0, hi = 0.0;
    if (spaced_in_gap) {
      lo = gap->lower_front(T, start.length);
      hi = gap->upper_front(T);
      center = 0.5 * (lo + hi);
    }
    const auto [off_min, off_max] =
        std::minmax_element(lattice.open_offsets.begin(), lattice.open_offsets.end());
    for (double frac : lattice.speed_fractions) {
      const double v_end = std::clamp(frac * base_speed, 0.0, safety.v_max);
      const double natural = start.s + 0.5 * (start.v + v_end) * T;
      ends.clear();
      if (spaced_in_gap) {
        // evenly spaced over the part of the interval near the natural travel distance
        double a = std::max(lo, natural + *off_min);
        double b = std::min(hi, natural + *off_max);
        if (a >= b) {
          a = lo;
          b = hi;
        }
        for (int k = 0; k < lattice.gap_points; ++k)
          ends.push_back(a + (k + 1) * (b - a) / (lattice.gap_points + 1));
      } else {
        for (double off : lattice.open_offsets) ends.push_back(natural + off);
      }
      for (double s_end : ends) {
        Trajectory tr;
        tr.longitudinal = fit_quintic({start.s, start.v, start.a}, {s_end, v_end, 0.0}, T);
        tr.lateral = lateral;
        tr.start_lane = start.lane;
        tr.target_lane = target_lane;
        tr.lane_width = w;
        tr.duration = T;
        tr.terminal_speed_target = v_end;
        tr.cost.jerk_long = integral_squared_jerk(tr.longitudinal);
        tr.cost.jerk_lat = jerk_lat;
        tr.cost.lane_center_dev = lane_dev;
        tr.cost.speed_dev = std::abs(v_end - desired_speed);
        tr.cost.gap_fit = has_center ? std::abs(s_end - center) : 0.0;
        tr.cost.total = weighted_total(tr.cost, config.weights);
        tr.verdict = check_feasible(tr, start.length, relevant, safety);
        out.push_back(std::move(tr));
      }
    }
  }
  return out;
}

std::optional<Trajectory> best_trajectory_to_gap(std::span<const Trajectory> candidates,
                                                 const GapInterval& gap, double ego_length) {
  const Trajectory* best = nullptr;
  for (const auto& c : candidates) {
    if (!c.feasible() || c.target_lane != gap.lane) continue;
    if (!gap.contains(c.terminal_s(), ego_length, c.duration)) continue;
    if (!best || c.cost.total < best->cost.total ||
        (c.cost.total == best->cost.total &&
         (c.duration < best->duration ||
          (c.duration == best->duration && c.cost.jerk_long < best->cost.jerk_long))))
      best = &c;
  }
  if (!best) return std::nullopt;
  return *best;
}

}  // namespace aqlmap
