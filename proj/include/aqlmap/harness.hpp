#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "aqlmap/agents.hpp"
#include "aqlmap/learn.hpp"
#include "aqlmap/world.hpp"

namespace aqlmap {

struct RewardParams {
  double v_des = 30.0;
  double p_ac = -0.01;
  void validate() const;
};

/// 1 - |v - v_des| / v_des below the desired speed, 1 at or above it, plus
/// p_ac when the action changed.
double reward(double speed, const RewardParams& params, bool action_changed);

enum class AgentKind { kOptions, kRandom, kGreedy, kIdm, kHighLevel, kHighLevelRandom };

std::string_view to_string(AgentKind kind);
AgentKind parse_agent_kind(std::string_view text);
bool is_learned(AgentKind kind);

struct EpisodeConfig {
  AgentKind agent = AgentKind::kRandom;
  std::uint64_t agent_seed = 0;
  const DeepSetQNet* model = nullptr;  // options and high-level agents
  double sensor_range = 80.0;
  PlannerConfig planner;
  WorldConfig world;
  double p_ac = -0.01;
  double fallback_decel = 2.0;
  double p_repeat = 0.8;
  double lane_change_duration = 3.0;
  IdmAgentParams idm;
  std::optional<double> goal_distance;
  std::optional<double> max_duration;  // overrides the scenario value
  double road_end_margin = 100.0;
  bool record_transitions = false;
  bool record_trace = false;
};

/// One 1 Hz decision.
struct DecisionRecord {
  double time = 0.0;
  double ego_s = 0.0;
  double ego_v = 0.0;
  int ego_lane = 0;
  std::vector<ActionChoice> candidates;
  std::vector<double> q_values;
  int chosen = -1;  // index into candidates
  std::string maneuver;
  std::string option_outcome;  // previous option: running / reached / interrupted
  double planned_mean_accel = 0.0;
  double end_speed = 0.0;
  bool action_changed = false;
  double reward = 0.0;
};

std::string decision_to_json(const DecisionRecord& d);

struct EpisodeResult {
  std::string scenario;
  AgentKind agent = AgentKind::kRandom;
  double mean_speed = 0.0;  // average ego speed over world steps
  double duration = 0.0;
  double distance = 0.0;
  bool collision = false;
  bool goal_reached = false;
  double total_return = 0.0;
  int lane_changes = 0;
  bool left_start_lane = false;
  std::vector<double> ego_speeds;
  std::vector<DecisionRecord> decisions;
  std::vector<Transition> transitions;
  std::string trace;  // CSV, only with record_trace
};

EpisodeResult run_episode(const Scenario& scenario, const EpisodeConfig& config);

struct CollectConfig {
  DatasetKind kind = DatasetKind::kGap;
  int n_transitions = 50000;
  std::uint64_t seed = 0;
  int min_vehicles = 0;
  int max_vehicles = 70;
  ScenarioConfig scenario;
  EpisodeConfig episode;
};

/// Random-option (gap) or pseudo-random high-level (discrete) driving over
/// random scenarios until n_transitions are recorded.
Dataset collect_dataset(const CollectConfig& config,
                        const std::function<void(int done)>& progress = {});

/// Ego in the right lane among slow traffic; the middle-lane gap g1 behind
/// the ego is only reachable with a maneuver longer than 3 s.
Scenario critical_scenario_a();
/// Three vehicles at the ego's speed; the only way out is to brake into the
/// middle-lane gap g1 behind.
Scenario critical_scenario_b();

// Named gap identities of the critical scenarios at t = 0.
GapIdentity critical_a_g0();
GapIdentity critical_a_g1();
GapIdentity critical_b_g0();
GapIdentity critical_b_g1();

std::string scenario_to_json(const Scenario& scenario);
Scenario scenario_from_json(const std::string& text);
void save_scenario(const Scenario& scenario, const std::filesystem::path& path);
Scenario load_scenario(const std::filesystem::path& path);

struct EvalConfig {
  std::vector<AgentKind> agents{AgentKind::kRandom, AgentKind::kGreedy, AgentKind::kIdm};
  std::vector<int> densities{10, 20, 30, 40, 50, 60, 70, 80};
  int scenarios_per_density = 10;
  int runs = 3;  // repetitions of stochastic agents
  std::vector<ModelBundle> gap_models;
  std::vector<ModelBundle> discrete_models;
  std::uint64_t seed = 2024;
  bool critical = true;
  double critical_goal = 1000.0;
  double critical_max_duration = 90.0;
  ScenarioConfig scenario;
  EpisodeConfig episode;
};

struct EpisodeSummary {
  std::string agent;
  std::string suite;  // "density" or the critical scenario name
  int density = 0;
  int scenario_index = 0;
  int run = 0;  // repetition or model index
  double mean_speed = 0.0;
  double duration = 0.0;
  double distance = 0.0;
  bool collision = false;
  double total_return = 0.0;
  bool left_start_lane = false;
};

struct DensityRow {
  std::string agent;
  int density = 0;
  double mean_speed = 0.0;
  double std_speed = 0.0;  // across runs or models
  int collisions = 0;
  int episodes = 0;
};

struct CriticalRow {
  std::string agent;
  std::string scenario;
  double mean_speed = 0.0;
  double std_speed = 0.0;
  double mean_duration = 0.0;
  double std_duration = 0.0;
  int collisions = 0;
  int left_start_lane = 0;
  int episodes = 0;
};

struct EvalReport {
  std::vector<EpisodeSummary> episodes;
  std::vector<DensityRow> density_rows;
  std::vector<CriticalRow> critical_rows;

  // Mean of per-episode speeds over the density suite for one agent, optionally
  // restricted to one run or model.
  double suite_mean(const std::string& agent, std::optional<int> run = std::nullopt) const;

  std::string to_json() const;
  // report.json, report.csv, episodes.csv, fig6.csv, fig7.csv
  void write(const std::filesystem::path& dir) const;
};

EvalReport evaluate(const EvalConfig& config,
                    const std::function<void(const EpisodeSummary&)>& progress = {});

}  // namespace aqlmap
