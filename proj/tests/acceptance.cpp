// Acceptance suite: prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails.
#include <CLI11.hpp>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>

#include "aqlmap/harness.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace aqlmap;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o) {
  std::cout << "criterion " << std::setw(2) << id << " " << std::left << std::setw(28) << name << std::right
            << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << std::endl;
  if (!o.pass) ++failures;
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << x;
  return os.str();
}

// 1
Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 gen(101);
  double worst = 0.0;
  int bad = 0, sided = 0, skipped = 0;
  long coords = 0;
  for (int i = 0; i < 20; ++i) {
    const DatasetKind kind = i % 4 == 3 ? DatasetKind::kDiscrete : DatasetKind::kGap;
    DeepSetQNet net(dims_for(kind), 1000 + static_cast<std::uint64_t>(i));
    std::vector<Transition> batch;
    std::vector<double> targets;
    for (int k = 0; k < 3; ++k) {
      batch.push_back(testing_support::random_transition(gen, kind));
      targets.push_back(std::uniform_real_distribution<double>(-2.0, 2.0)(gen));
    }
    int b = 0, o = 0, k = 0;
    worst = std::max(worst, testing_support::gradient_check(net, batch, targets, kind, 1e-5, 1e-4, 1e-7, &b, &o, &k));
    bad += b;
    sided += o;
    skipped += k;
    coords += net.params().size();
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && skipped <= coords / 10000 && secs < 60.0,
          std::to_string(coords) + " coordinates, " + std::to_string(bad) + " outside tolerance, " +
              std::to_string(sided) + " checked one-sided at a rectifier kink, " + std::to_string(skipped) +
              " with kinks on both sides, worst/allowed " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

// 2
Outcome permutation_invariance() {
  std::mt19937_64 gen(202);
  const DeepSetQNet net({}, 7);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    RlState s = testing_support::random_state(gen, 12);
    const std::vector<double> action{0.1, 0.02, 1.0, 0.6, 1.0};
    const double q = net.forward_q(s, action);
    for (int p = 0; p < 20; ++p) {
      std::shuffle(s.dynamic.begin(), s.dynamic.end(), gen);
      worst = std::max(worst, std::abs(net.forward_q(s, action) - q));
    }
  }
  return {worst <= 1e-9, "max |dq| " + fmt(worst) + " over 2000 permutations"};
}

// 3
Outcome planner_exactness() {
  std::mt19937_64 gen(303);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_res = 0.0, worst_rel = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double T = 1.0 + 5.0 * u(gen);
    const BoundaryState s{0.0, 35.0 * u(gen), 6.0 * u(gen) - 3.0};
    const BoundaryState e{200.0 * u(gen), 35.0 * u(gen), 6.0 * u(gen) - 3.0};
    const auto p = fit_quintic(s, e, T);
    const auto a = eval_poly(p, 0.0), b = eval_poly(p, T);
    for (double r : {a.p - s.p, a.v - s.v, a.a - s.a, b.p - e.p, b.v - e.v, b.a - e.a})
      worst_res = std::max(worst_res, std::abs(r));
    const auto sq = [&](double t) {
      const double j = eval_poly(p, t).jerk;
      return j * j;
    };
    const double ref = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(sq, 0.0, T, 10, 1e-14);
    const double got = integral_squared_jerk(p);
    if (ref > 0) worst_rel = std::max(worst_rel, std::abs(got - ref) / ref);
  }
  return {worst_res < 1e-9 && worst_rel < 1e-8,
          "max boundary residual " + fmt(worst_res) + ", max jerk-integral rel err " + fmt(worst_rel)};
}

// 4: random local scenes, others at constant velocity, ego follows a trajectory
// that passed the gates; every 0.1 s sample is checked independently.
Outcome safety_soundness() {
  std::mt19937_64 gen(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const SafetyParams safety;
  int scenes = 0, collisions = 0, violations = 0, attempts = 0;
  while (scenes < 1000 && attempts < 20000) {
    ++attempts;
    Scenario sc;
    sc.name = "safety";
    sc.ego_start.s = 500.0;
    sc.ego_start.lane = static_cast<int>(gen() % 3);
    sc.ego_start.v = 10.0 + 20.0 * u(gen);
    const int n = static_cast<int>(gen() % 10);
    std::vector<VehicleState> placed{sc.ego_start};
    for (int k = 0; k < n; ++k) {
      TrafficVehicle tv;
      tv.state.id = k + 1;
      tv.state.lane = static_cast<int>(gen() % 3);
      tv.state.s = 500.0 - 75.0 + 150.0 * u(gen);
      tv.state.v = 10.0 + 20.0 * u(gen);
      bool clash = false;
      for (const auto& p : placed)
        if (p.lane == tv.state.lane && std::abs(p.s - tv.state.s) < 8.0) clash = true;
      if (clash) continue;
      tv.params.v0 = tv.state.v;
      tv.params.lane_change_prob_per_s = 0.0;
      sc.vehicles.push_back(tv);
      placed.push_back(tv.state);
    }
    WorldConfig wc;
    wc.traffic = TrafficModel::kConstantVelocity;
    wc.lane_changes = false;
    World world(sc, wc);
    const auto view = sensor_view(world.state(), 80.0);
    auto gaps = enumerate_gaps(view, world.state().ego, 3, 80.0, 30.0);
    assign_features(gaps, world.state().ego, 30.0, 80.0, std::nullopt);
    const GapSet set = reachable_gaps(gaps, PlanStart::from(world.state()), view, 30.0, PlannerConfig{});
    if (set.empty()) continue;
    const Trajectory& traj = set.gaps[gen() % set.gaps.size()].best;
    ++scenes;

    const int steps = static_cast<int>(std::lround(traj.duration / wc.dt));
    for (int k = 1; k <= steps; ++k) {
      world.step(traj.setpoint(std::min(k * wc.dt, traj.duration)));
      const auto& st = world.state();
      if (st.ego_collision) ++collisions;
      for (const auto& o : st.vehicles) {
        if (footprints_overlap(st.ego, o, sc.lane_width)) ++collisions;
        const bool rear_in_start_lane = o.lane == traj.start_lane && o.id != kEgoId && [&] {
          for (const auto& v : sc.vehicles)
            if (v.state.id == o.id) return v.state.s < sc.ego_start.s;
          return false;
        }();
        if (rear_in_start_lane || !occupies_lane(st.ego, o.lane, sc.lane_width)) continue;
        const bool ahead = o.s > st.ego.s;
        const VehicleState& f = ahead ? st.ego : o;
        const VehicleState& l = ahead ? o : st.ego;
        const double gap = l.s - l.length - f.s;
        const double closing = f.v - l.v;
        const double t_ttc = closing > 0 ? gap / closing : kInf;
        const double t_thw = f.v > 0 ? gap / f.v : kInf;
        if (gap <= 0 || t_ttc < safety.ttc_min - 1e-9 || t_thw < safety.thw_min - 1e-9) ++violations;
      }
    }
  }
  return {scenes == 1000 && collisions == 0 && violations == 0,
          std::to_string(scenes) + " scenes, " + std::to_string(collisions) + " collisions, " +
              std::to_string(violations) + " ttc/thw violations"};
}

// 5
Outcome amortized_max(const Dataset& data) {
  const ModelBundle m = initial_model(DatasetKind::kGap, 55);
  const Hyperparams hp;
  std::size_t checked = 0, mismatched = 0;
  double worst = 0.0;
  for (std::size_t start = 0; start < data.transitions.size(); start += 512) {
    std::vector<const Transition*> batch;
    for (std::size_t i = start; i < std::min(start + 512, data.transitions.size()); ++i)
      batch.push_back(&data.transitions[i]);
    const auto y = compute_targets(batch, m.target_a, m.target_b, hp, data.kind);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Transition& t = *batch[i];
      double expected = t.reward;
      if (!t.terminal) {
        std::vector<std::vector<double>> acts;
        for (const auto& c : t.next_candidates) acts.push_back(gap_action_vector(*c.gap, hp.sensor_range));
        const auto qa = m.target_a.q_values(t.next_state, acts);
        const auto qb = m.target_b.q_values(t.next_state, acts);
        double best = -kInf;
        for (std::size_t k = 0; k < acts.size(); ++k) best = std::max(best, std::min(qa[k], qb[k]));
        expected += hp.gamma * best;
      }
      const double err = std::abs(y[i] - expected);
      worst = std::max(worst, err);
      if (err > 1e-9) ++mismatched;
      ++checked;
    }
  }

  // min-of-two bound on 10^4 sampled evaluations
  std::mt19937_64 gen(505);
  std::vector<const Transition*> sample;
  for (int i = 0; i < 10000; ++i) sample.push_back(&data.transitions[gen() % data.transitions.size()]);
  const auto both = compute_targets(sample, m.target_a, m.target_b, hp, data.kind);
  const auto ya = compute_targets_single(sample, m.target_a, hp, data.kind);
  const auto yb = compute_targets_single(sample, m.target_b, hp, data.kind);
  int bound_bad = 0;
  for (std::size_t i = 0; i < sample.size(); ++i)
    if (both[i] > ya[i] || both[i] > yb[i]) ++bound_bad;
  return {checked == data.transitions.size() && mismatched == 0 && bound_bad == 0,
          std::to_string(checked) + " targets scanned, " + std::to_string(mismatched) +
              " not equal to the max over recorded candidates (worst " + fmt(worst) + "), " +
              std::to_string(bound_bad) + "/10000 bound violations"};
}

// 6
Outcome tabular_oracle() {
  const auto t0 = Clock::now();
  testing_support::TabularMdp mdp;
  Hyperparams hp = Hyperparams::desk_scale();
  hp.gamma = 0.9;
  hp.tau = 5e-3;
  hp.learning_rate = 1e-3;
  const auto res = train(mdp.dataset(64), hp, 1);
  const double err = mdp.max_relative_error(res.model.online, hp.gamma);
  const double secs = seconds_since(t0);
  return {err <= 0.05 && secs <= 120.0, "max relative error " + fmt(err) + " after " +
                                            std::to_string(hp.training_steps) + " steps, " + fmt(secs, 3) + " s"};
}

struct Pipeline {
  Dataset data;
  std::vector<ModelBundle> models;
  EvalReport report;
  double seconds = 0.0;
};

Pipeline run_pipeline(const fs::path& work) {
  const auto t0 = Clock::now();
  Pipeline p;
  CollectConfig cc;
  cc.n_transitions = 50000;
  cc.seed = 1;
  p.data = collect_dataset(cc);
  save_dataset(p.data, work / "desk_gap.jsonl");
  const Hyperparams hp = Hyperparams::desk_scale();
  for (std::uint64_t seed = 1; seed <= 3; ++seed)
    p.models.push_back(train(p.data, hp, seed, work / ("model_" + std::to_string(seed))).model);
  EvalConfig ec;
  ec.agents = {AgentKind::kOptions, AgentKind::kGreedy, AgentKind::kRandom, AgentKind::kIdm};
  ec.gap_models = p.models;
  ec.runs = 3;
  p.report = evaluate(ec);
  p.report.write(work / "desk_eval");
  p.seconds = seconds_since(t0);
  return p;
}

// 7
Outcome agent_ordering(const Pipeline& p) {
  const double greedy = p.report.suite_mean("greedy");
  const double random = p.report.suite_mean("random");
  int ok = 0;
  std::string per_model;
  for (int m = 0; m < 3; ++m) {
    const double opt = p.report.suite_mean("options", m);
    if (opt >= 1.02 * greedy && greedy >= 1.02 * random) ++ok;
    per_model += (m ? ", " : "") + fmt(opt);
  }
  return {ok >= 2 && p.seconds < 1800.0,
          "options per model [" + per_model + "], greedy " + fmt(greedy) + ", random " + fmt(random) +
              " m/s; " + std::to_string(ok) + "/3 models with both 2% margins; pipeline " + fmt(p.seconds, 3) + " s"};
}

EpisodeConfig critical_config(AgentKind agent, const DeepSetQNet* model = nullptr) {
  EpisodeConfig ec;
  ec.agent = agent;
  ec.model = model;
  ec.goal_distance = 1000.0;
  ec.max_duration = 90.0;
  return ec;
}

GapSet critical_gapset(const Scenario& sc, const PlannerConfig& pc) {
  World w(sc);
  const auto view = sensor_view(w.state(), 80.0);
  auto gaps = enumerate_gaps(view, w.state().ego, sc.lane_count, 80.0, sc.ego_desired_speed);
  assign_features(gaps, w.state().ego, sc.ego_desired_speed, 80.0, std::nullopt);
  return reachable_gaps(gaps, PlanStart::from(w.state()), view, sc.ego_desired_speed, pc);
}

// 8
Outcome critical_a(const Pipeline& p) {
  const Scenario sc = critical_scenario_a();
  const auto greedy = run_episode(sc, critical_config(AgentKind::kGreedy));
  bool greedy_stays = !greedy.left_start_lane;
  for (const auto& d : greedy.decisions) {
    if (d.chosen < 0) continue;
    // the follower may drop out of sensor range; the gap stays the one behind the same leader
    const auto& id = d.candidates[static_cast<std::size_t>(d.chosen)].identity;
    if (!id || id->lane != critical_a_g0().lane || id->leader_id != critical_a_g0().leader_id)
      greedy_stays = false;
  }
  PlannerConfig three;
  three.lattice.durations = {3.0};
  const bool infeasible_3s = !critical_gapset(sc, three).find(critical_a_g1()) &&
                             critical_gapset(sc, PlannerConfig{}).find(critical_a_g1());
  int departed = 0;
  for (const auto& m : p.models)
    if (run_episode(sc, critical_config(AgentKind::kOptions, &m.online)).left_start_lane) ++departed;
  return {greedy_stays && infeasible_3s && departed >= 2,
          std::string("greedy stays in g0: ") + (greedy_stays ? "yes" : "no") +
              "; 3 s lane change into g1 infeasible: " + (infeasible_3s ? "yes" : "no") +
              "; options departs g0 in " + std::to_string(departed) + "/3 models"};
}

// 9
Outcome critical_b(const Pipeline& p) {
  const Scenario sc = critical_scenario_b();
  const double shared = sc.vehicles.front().state.v;
  bool rule_slow = true;
  double greedy_speed = 0.0;
  for (auto agent : {AgentKind::kGreedy, AgentKind::kIdm}) {
    const auto res = run_episode(sc, critical_config(agent));
    // 10 s window means: car-following ripple behind the leader is allowed,
    // any sustained speed-up is not
    const std::size_t w = 100;
    double worst_window = 0.0;
    for (std::size_t i = 0; i + w <= res.ego_speeds.size(); i += w) {
      double sum = 0.0;
      for (std::size_t k = i; k < i + w; ++k) sum += res.ego_speeds[k];
      worst_window = std::max(worst_window, sum / static_cast<double>(w));
    }
    if (res.left_start_lane || worst_window > shared * 1.02 || res.mean_speed > shared * 1.02) rule_slow = false;
    if (agent == AgentKind::kGreedy) greedy_speed = res.mean_speed;
  }
  int good = 0;
  std::string speeds;
  for (std::size_t m = 0; m < p.models.size(); ++m) {
    const auto res = run_episode(sc, critical_config(AgentKind::kOptions, &p.models[m].online));
    bool braked_into_g1 = false;
    for (const auto& d : res.decisions) {
      if (d.chosen < 0) continue;
      const auto& id = d.candidates[static_cast<std::size_t>(d.chosen)].identity;
      if (id && id->lane == critical_b_g1().lane && id->leader_id == critical_b_g1().leader_id &&
          d.planned_mean_accel < 0.0)
        braked_into_g1 = true;
    }
    if (braked_into_g1 && res.mean_speed > greedy_speed) ++good;
    speeds += (m ? ", " : "") + fmt(res.mean_speed) + (braked_into_g1 ? " (braked into g1)" : "");
  }
  return {rule_slow && good >= 2, std::string("greedy/idm stay at shared speed: ") + (rule_slow ? "yes" : "no") +
                                      "; greedy " + fmt(greedy_speed) + " m/s; options [" + speeds + "]; " +
                                      std::to_string(good) + "/3 models"};
}

// 10
Outcome reward_values() {
  const RewardParams rp;
  const double a = reward(30.0, rp, false), b = reward(30.0, rp, true), c = reward(15.0, rp, false);
  return {a == 1.0 && b == 0.99 && c == 0.5, "r(30)=" + fmt(a, 17) + ", r(30, changed)=" + fmt(b, 17) +
                                                 ", r(15)=" + fmt(c, 17)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// 11
Outcome determinism(const std::string& cli, const fs::path& work) {
  if (cli.empty()) return {false, "command line tool not available"};
  std::vector<std::string> digests[2];
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path dir = work / ("determinism_" + std::to_string(rep));
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();
    const std::string cmds[] = {
        cli + " collect --kind gap --n 3000 --seed 9 --out " + d + "/data.jsonl",
        cli + " train --data " + d + "/data.jsonl --out " + d + "/model --seed 4 --steps 300",
        cli + " eval --agents options,greedy,random --models " + d + "/model/model.json --densities 10,40 " +
            "--scenarios-per-density 2 --runs 2 --out " + d + "/eval"};
    for (const auto& c : cmds)
      if (std::system((c + " > /dev/null").c_str()) != 0) return {false, "command failed: " + c};
    for (const char* f : {"data.jsonl", "model/model.json", "model/train_log.csv", "eval/report.json",
                          "eval/report.csv", "eval/episodes.csv"})
      digests[rep].push_back(slurp(dir / f));
  }
  int differing = 0;
  for (std::size_t i = 0; i < digests[0].size(); ++i)
    if (digests[0][i] != digests[1][i] || digests[0][i].empty()) ++differing;
  return {differing == 0, std::to_string(digests[0].size() - differing) + "/" +
                              std::to_string(digests[0].size()) + " output files byte-identical"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = "acceptance_work", cli;
  app.add_option("--work-dir", work);
  app.add_option("--cli", cli, "path to the command line tool");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  report(1, "gradient correctness", gradient_correctness());
  report(2, "permutation invariance", permutation_invariance());
  report(3, "planner exactness", planner_exactness());
  report(4, "safety soundness", safety_soundness());
  const Pipeline p = run_pipeline(work);
  report(5, "amortized max", amortized_max(p.data));
  report(6, "tabular oracle", tabular_oracle());
  report(7, "agent ordering", agent_ordering(p));
  report(8, "critical scenario A", critical_a(p));
  report(9, "critical scenario B", critical_b(p));
  report(10, "reward values", reward_values());
  report(11, "determinism", determinism(cli, work));
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
