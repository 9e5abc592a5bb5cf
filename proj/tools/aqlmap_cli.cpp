#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "aqlmap/harness.hpp"

namespace fs = std::filesystem;
using namespace aqlmap;
using nlohmann::json;

namespace {

const char* kSchemas = R"(File formats
  dataset (JSON lines, one transition per line):
    {"format_version":1, "kind":"gap"|"discrete",
     "state":{"dynamic":[[d_rel,v_rel,lane_rel],...], "static":[v/v_des, left_valid, right_valid]},
     "action":{"features":{"d_rel","v_rel","lane_rel","len","af"}, "identity":{"follower","leader","lane"}, "index"},
     "reward":r, "next_state":{...}, "next_candidates":[action,...], "terminal":bool, "duration":seconds}
  model (JSON): {"format_version":1, "kind", "dims":{...}, "online":[...], "target_a":[...], "target_b":[...]}
  scenario (JSON): {"format_version":1, "name", "lane_count", "lane_width", "road_length",
     "ego_start":{"id","lane","s","d","v","a","length"}, "ego_desired_speed", "seed", "max_duration",
     "vehicles":[{"state":{...}, "params":{"v0","T","a_max","b_comf","s0","delta",
                  "lane_change_prob_per_s","b_emergency"}}]}
  train_log.csv: step,loss,mean_abs_q
  trace CSV: time,id,lane,s,d,v,a   (id 0 is the ego)
  decisions (JSON lines): time, ego_s, ego_v, ego_lane, candidates, q_values, chosen, maneuver,
     option_outcome, planned_mean_accel, end_speed, action_changed, reward
  eval output dir: report.json, report.csv (agent,density,mean_speed,std_speed,collisions,episodes),
     episodes.csv, fig6.csv (density vs speed per agent), fig7.csv (critical scenario speed/duration)
)";

std::vector<ModelBundle> load_models(const std::vector<std::string>& paths) {
  std::vector<ModelBundle> out;
  for (const auto& p : paths) {
    if (!fs::exists(p)) throw std::runtime_error("model file not found: " + p);
    out.push_back(ModelBundle::load(p));
  }
  return out;
}

Scenario pick_scenario(const std::string& file, const std::string& critical, int density,
                       std::uint64_t scenario_seed) {
  if (!file.empty()) return load_scenario(file);
  if (critical == "a") return critical_scenario_a();
  if (critical == "b") return critical_scenario_b();
  if (!critical.empty()) throw std::invalid_argument("--critical must be a or b");
  return generate_random_scenario(density, scenario_seed);
}

json candidate_json(const Trajectory& t, const GapIdentity& id, bool best) {
  return {{"gap", id.to_string()},
          {"target_lane", t.target_lane},
          {"duration", t.duration},
          {"terminal_speed", t.terminal_speed_target},
          {"terminal_s", t.terminal_s()},
          {"mean_speed", t.mean_speed()},
          {"cost",
           {{"jerk_long", t.cost.jerk_long},
            {"jerk_lat", t.cost.jerk_lat},
            {"lane_center_dev", t.cost.lane_center_dev},
            {"speed_dev", t.cost.speed_dev},
            {"gap_fit", t.cost.gap_fit},
            {"total", t.cost.total}}},
          {"feasible", t.feasible()},
          {"reason", std::string(to_string(t.verdict.reason))},
          {"violation_time", t.verdict.time},
          {"best", best}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gap-based option learning for highway driving"};
  app.footer(kSchemas);
  app.require_subcommand(1);

  // collect
  auto* collect = app.add_subcommand("collect", "Record a transition dataset with a random policy");
  std::string c_kind = "gap", c_out;
  int c_n = 50000, c_min = 0, c_max = 70;
  std::uint64_t c_seed = 1;
  collect->add_option("--kind", c_kind, "gap (random options) or discrete (pseudo-random high-level)")
      ->check(CLI::IsMember({"gap", "discrete"}));
  collect->add_option("--n", c_n, "number of transitions")->check(CLI::PositiveNumber);
  collect->add_option("--seed", c_seed, "random seed");
  collect->add_option("--min-vehicles", c_min)->check(CLI::Range(0, 80));
  collect->add_option("--max-vehicles", c_max)->check(CLI::Range(0, 80));
  collect->add_option("--out", c_out, "dataset path (JSON lines)")->required();

  // train
  auto* trn = app.add_subcommand("train", "Fixed-batch training on a dataset");
  std::string t_data, t_out;
  std::uint64_t t_seed = 1;
  Hyperparams hp = Hyperparams::desk_scale();
  bool t_paper = false, t_hard = false;
  trn->add_option("--data", t_data, "dataset path")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", t_out, "output directory (model.json, train_log.csv)")->required();
  trn->add_option("--seed", t_seed);
  trn->add_flag("--paper-scale", t_paper, "use the full-scale hyperparameters (75000 steps, tau 1e-4)");
  auto* o_steps = trn->add_option("--steps", hp.training_steps)->check(CLI::NonNegativeNumber);
  auto* o_batch = trn->add_option("--batch", hp.batch_size)->check(CLI::PositiveNumber);
  auto* o_gamma = trn->add_option("--gamma", hp.gamma)->check(CLI::Range(0.0, 1.0));
  auto* o_tau = trn->add_option("--tau", hp.tau)->check(CLI::Range(0.0, 1.0));
  auto* o_lr = trn->add_option("--lr", hp.learning_rate)->check(CLI::PositiveNumber);
  trn->add_flag("--hard-update", t_hard, "copy targets every round(1/tau) steps instead of blending");
  trn->add_flag("--discount-by-duration", hp.discount_by_duration, "discount by gamma^duration");
  trn->add_option("--checkpoint-every", hp.checkpoint_every)->check(CLI::NonNegativeNumber);

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate agents on the density suite and critical scenarios");
  std::vector<std::string> e_agents{"random", "greedy", "idm"}, e_models, e_hl_models;
  std::vector<int> e_dens{10, 20, 30, 40, 50, 60, 70, 80};
  int e_per = 10, e_runs = 3;
  std::uint64_t e_seed = 2024;
  bool e_no_critical = false;
  std::string e_out;
  ev->add_option("--agents", e_agents, "comma separated: options,random,greedy,idm,high-level,high-level-random")
      ->delimiter(',');
  ev->add_option("--models", e_models, "gap model files for the options agent")->delimiter(',');
  ev->add_option("--hl-models", e_hl_models, "discrete model files for the high-level agent")->delimiter(',');
  ev->add_option("--densities", e_dens)->delimiter(',');
  ev->add_option("--scenarios-per-density", e_per)->check(CLI::PositiveNumber);
  ev->add_option("--runs", e_runs, "repetitions of stochastic agents")->check(CLI::PositiveNumber);
  ev->add_option("--seed", e_seed);
  ev->add_flag("--no-critical", e_no_critical, "skip the two critical scenarios");
  ev->add_option("--out", e_out, "output directory")->required();

  // run
  auto* run = app.add_subcommand("run", "Run one episode and export its trace");
  std::string r_agent = "greedy", r_scenario, r_critical, r_model, r_trace, r_decisions;
  int r_density = 30;
  std::uint64_t r_sseed = 1, r_seed = 1;
  double r_goal = 0.0, r_duration = 0.0;
  run->add_option("--agent", r_agent);
  run->add_option("--scenario", r_scenario, "scenario JSON file")->check(CLI::ExistingFile);
  run->add_option("--critical", r_critical, "a or b")->check(CLI::IsMember({"a", "b"}));
  run->add_option("--density", r_density)->check(CLI::Range(0, 80));
  run->add_option("--scenario-seed", r_sseed);
  run->add_option("--seed", r_seed, "agent seed");
  run->add_option("--model", r_model, "model file for learned agents")->check(CLI::ExistingFile);
  run->add_option("--goal", r_goal, "stop after this distance (m)")->check(CLI::NonNegativeNumber);
  run->add_option("--duration", r_duration, "episode length override (s)")->check(CLI::NonNegativeNumber);
  run->add_option("--trace", r_trace, "trace CSV output");
  run->add_option("--decisions", r_decisions, "decision records output (JSON lines)");

  // plan-debug
  auto* pd = app.add_subcommand("plan-debug", "Print every planner candidate for the ego of a scenario");
  std::string p_scenario, p_out;
  double p_sr = 80.0;
  pd->add_option("--scenario", p_scenario)->required()->check(CLI::ExistingFile);
  pd->add_option("--sensor-range", p_sr)->check(CLI::PositiveNumber);
  pd->add_option("--out", p_out, "output JSON lines (default stdout)");

  // scenario
  auto* scn = app.add_subcommand("scenario", "Write a scenario file");
  std::string s_critical, s_out;
  int s_n = 30;
  std::uint64_t s_seed = 1;
  scn->add_option("--critical", s_critical)->check(CLI::IsMember({"a", "b"}));
  scn->add_option("--n", s_n)->check(CLI::Range(0, 80));
  scn->add_option("--seed", s_seed);
  scn->add_option("--out", s_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*collect) {
      if (c_min > c_max) throw std::invalid_argument("--min-vehicles exceeds --max-vehicles");
      CollectConfig cc;
      cc.kind = parse_dataset_kind(c_kind);
      cc.n_transitions = c_n;
      cc.seed = c_seed;
      cc.min_vehicles = c_min;
      cc.max_vehicles = c_max;
      const Dataset data = collect_dataset(cc);
      save_dataset(data, c_out);
      std::cout << "wrote " << data.transitions.size() << " transitions to " << c_out << '\n';
    } else if (*trn) {
      if (t_paper) {
        Hyperparams p = Hyperparams::paper_scale();
        if (o_steps->count() == 0) hp.training_steps = p.training_steps;
        if (o_batch->count() == 0) hp.batch_size = p.batch_size;
        if (o_gamma->count() == 0) hp.gamma = p.gamma;
        if (o_tau->count() == 0) hp.tau = p.tau;
        if (o_lr->count() == 0) hp.learning_rate = p.learning_rate;
      }
      hp.soft_update = !t_hard;
      const Dataset data = load_dataset(t_data);
      const TrainResult res = train(data, hp, t_seed, fs::path(t_out));
      std::cout << "trained " << hp.training_steps << " steps; final loss "
                << (res.log.empty() ? 0.0 : res.log.back().loss) << "; model " << (fs::path(t_out) / "model.json")
                << '\n';
    } else if (*ev) {
      EvalConfig cfg;
      cfg.agents.clear();
      for (const auto& a : e_agents) cfg.agents.push_back(parse_agent_kind(a));
      cfg.densities = e_dens;
      cfg.scenarios_per_density = e_per;
      cfg.runs = e_runs;
      cfg.seed = e_seed;
      cfg.critical = !e_no_critical;
      cfg.gap_models = load_models(e_models);
      cfg.discrete_models = load_models(e_hl_models);
      const EvalReport report = evaluate(cfg);
      report.write(e_out);
      std::cout << std::fixed << std::setprecision(3);
      for (const auto& a : e_agents) std::cout << a << " mean speed " << report.suite_mean(a) << " m/s\n";
    } else if (*run) {
      const Scenario sc = pick_scenario(r_scenario, r_critical, r_density, r_sseed);
      EpisodeConfig ec;
      ec.agent = parse_agent_kind(r_agent);
      ec.agent_seed = r_seed;
      ec.record_trace = !r_trace.empty();
      std::optional<ModelBundle> model;
      if (is_learned(ec.agent)) {
        if (r_model.empty()) throw std::invalid_argument("--model is required for " + r_agent);
        model = ModelBundle::load(r_model);
        ec.model = &model->online;
      }
      if (r_goal > 0) ec.goal_distance = r_goal;
      if (r_duration > 0) ec.max_duration = r_duration;
      const EpisodeResult res = run_episode(sc, ec);
      if (!r_trace.empty()) {
        std::ofstream out(r_trace, std::ios::binary);
        out << res.trace;
      }
      if (!r_decisions.empty()) {
        std::ofstream out(r_decisions, std::ios::binary);
        for (const auto& d : res.decisions) out << decision_to_json(d) << '\n';
      }
      std::cout << std::fixed << std::setprecision(3) << sc.name << " " << r_agent << ": mean speed "
                << res.mean_speed << " m/s, duration " << res.duration << " s, distance " << res.distance
                << " m, lane changes " << res.lane_changes << ", collision " << (res.collision ? "yes" : "no")
                << ", return " << res.total_return << '\n';
    } else if (*pd) {
      const Scenario sc = load_scenario(p_scenario);
      World world(sc);
      const auto& st = world.state();
      const auto view = sensor_view(st, p_sr);
      auto gaps = enumerate_gaps(view, st.ego, sc.lane_count, p_sr, sc.ego_desired_speed);
      assign_features(gaps, st.ego, sc.ego_desired_speed, p_sr, std::nullopt);
      PlannerConfig pc;
      pc.lane_count = sc.lane_count;
      pc.lane_width = sc.lane_width;
      const PlanStart start = PlanStart::from(st);
      std::ofstream file;
      if (!p_out.empty()) file.open(p_out, std::ios::binary);
      std::ostream& out = p_out.empty() ? std::cout : file;
      json summary = json::array();
      for (const auto& g : gaps) {
        const auto rel = relevant_vehicles(view, st.ego.lane, g.identity.lane);
        const auto cands = sample_trajectories(start, g.identity.lane, sc.ego_desired_speed, pc, rel, &g.interval);
        const auto best = best_trajectory_to_gap(cands, g.interval, st.ego.length);
        for (const auto& c : cands) {
          const bool is_best = best && c.duration == best->duration && c.terminal_s() == best->terminal_s() &&
                               c.terminal_speed_target == best->terminal_speed_target;
          out << candidate_json(c, g.identity, is_best).dump() << '\n';
        }
        summary.push_back({{"gap", g.identity.to_string()},
                           {"reachable", best.has_value()},
                           {"d_rel", g.features.d_rel},
                           {"v_rel", g.features.v_rel},
                           {"lane_rel", g.features.lane_rel},
                           {"len", g.features.len}});
      }
      out << json{{"gapset", summary}}.dump() << '\n';
    } else if (*scn) {
      const Scenario sc = pick_scenario("", s_critical, s_n, s_seed);
      save_scenario(sc, s_out);
      std::cout << "wrote " << s_out << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
