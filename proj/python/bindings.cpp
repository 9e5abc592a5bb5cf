#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aqlmap/harness.hpp"

namespace py = pybind11;
using namespace aqlmap;

namespace {

AgentKind agent_from(const std::string& name) { return parse_agent_kind(name); }

EpisodeResult run(const Scenario& scenario, const std::string& agent, std::uint64_t seed,
                  const std::optional<std::filesystem::path>& model, std::optional<double> goal,
                  std::optional<double> max_duration, bool trace) {
  EpisodeConfig cfg;
  cfg.agent = agent_from(agent);
  cfg.agent_seed = seed;
  cfg.goal_distance = goal;
  cfg.max_duration = max_duration;
  cfg.record_trace = trace;
  std::optional<ModelBundle> bundle;
  if (is_learned(cfg.agent)) {
    if (!model) throw std::invalid_argument("agent '" + agent + "' needs a model");
    bundle = ModelBundle::load(*model);
    cfg.model = &bundle->online;
  }
  return run_episode(scenario, cfg);
}

EvalReport eval(const std::vector<std::string>& agents, const std::vector<std::filesystem::path>& models,
                const std::vector<std::filesystem::path>& hl_models, const std::vector<int>& densities,
                int per_density, int runs, std::uint64_t seed, bool critical) {
  EvalConfig cfg;
  cfg.agents.clear();
  for (const auto& a : agents) cfg.agents.push_back(agent_from(a));
  for (const auto& m : models) cfg.gap_models.push_back(ModelBundle::load(m));
  for (const auto& m : hl_models) cfg.discrete_models.push_back(ModelBundle::load(m));
  cfg.densities = densities;
  cfg.scenarios_per_density = per_density;
  cfg.runs = runs;
  cfg.seed = seed;
  cfg.critical = critical;
  return evaluate(cfg);
}

}  // namespace

PYBIND11_MODULE(_aqlmap, m) {
  m.doc() = "Gap-based lane-change planning with amortized Q-learning";

  py::class_<VehicleState>(m, "VehicleState")
      .def(py::init<>())
      .def_readwrite("id", &VehicleState::id)
      .def_readwrite("lane", &VehicleState::lane)
      .def_readwrite("s", &VehicleState::s)
      .def_readwrite("d", &VehicleState::d)
      .def_readwrite("v", &VehicleState::v)
      .def_readwrite("a", &VehicleState::a)
      .def_readwrite("length", &VehicleState::length);

  py::class_<DriverParams>(m, "DriverParams")
      .def(py::init<>())
      .def_readwrite("v0", &DriverParams::v0)
      .def_readwrite("T", &DriverParams::T)
      .def_readwrite("a_max", &DriverParams::a_max)
      .def_readwrite("b_comf", &DriverParams::b_comf)
      .def_readwrite("s0", &DriverParams::s0)
      .def_readwrite("delta", &DriverParams::delta)
      .def_readwrite("lane_change_prob_per_s", &DriverParams::lane_change_prob_per_s);

  py::class_<TrafficVehicle>(m, "TrafficVehicle")
      .def(py::init<>())
      .def_readwrite("state", &TrafficVehicle::state)
      .def_readwrite("params", &TrafficVehicle::params);

  py::class_<Scenario>(m, "Scenario")
      .def(py::init<>())
      .def_readwrite("name", &Scenario::name)
      .def_readwrite("lane_count", &Scenario::lane_count)
      .def_readwrite("lane_width", &Scenario::lane_width)
      .def_readwrite("vehicles", &Scenario::vehicles)
      .def_readwrite("ego_start", &Scenario::ego_start)
      .def_readwrite("seed", &Scenario::seed)
      .def_readwrite("max_duration", &Scenario::max_duration)
      .def("to_json", [](const Scenario& s) { return scenario_to_json(s); })
      .def_static("from_json", &scenario_from_json);

  py::class_<GapIdentity>(m, "GapIdentity")
      .def(py::init<>())
      .def_readwrite("follower_id", &GapIdentity::follower_id)
      .def_readwrite("leader_id", &GapIdentity::leader_id)
      .def_readwrite("lane", &GapIdentity::lane)
      .def("__eq__", [](const GapIdentity& a, const GapIdentity& b) { return a == b; })
      .def("__repr__", &GapIdentity::to_string);

  py::class_<DecisionRecord>(m, "Decision")
      .def_readonly("time", &DecisionRecord::time)
      .def_readonly("ego_s", &DecisionRecord::ego_s)
      .def_readonly("ego_v", &DecisionRecord::ego_v)
      .def_readonly("ego_lane", &DecisionRecord::ego_lane)
      .def_readonly("q_values", &DecisionRecord::q_values)
      .def_readonly("chosen", &DecisionRecord::chosen)
      .def_readonly("maneuver", &DecisionRecord::maneuver)
      .def_readonly("planned_mean_accel", &DecisionRecord::planned_mean_accel)
      .def_readonly("reward", &DecisionRecord::reward)
      .def_property_readonly("chosen_gap",
                             [](const DecisionRecord& d) -> std::optional<GapIdentity> {
                               if (d.chosen < 0) return std::nullopt;
                               return d.candidates[static_cast<std::size_t>(d.chosen)].identity;
                             })
      .def("to_json", &decision_to_json);

  py::class_<EpisodeResult>(m, "EpisodeResult")
      .def_readonly("scenario", &EpisodeResult::scenario)
      .def_readonly("mean_speed", &EpisodeResult::mean_speed)
      .def_readonly("duration", &EpisodeResult::duration)
      .def_readonly("distance", &EpisodeResult::distance)
      .def_readonly("collision", &EpisodeResult::collision)
      .def_readonly("goal_reached", &EpisodeResult::goal_reached)
      .def_readonly("total_return", &EpisodeResult::total_return)
      .def_readonly("lane_changes", &EpisodeResult::lane_changes)
      .def_readonly("left_start_lane", &EpisodeResult::left_start_lane)
      .def_readonly("ego_speeds", &EpisodeResult::ego_speeds)
      .def_readonly("decisions", &EpisodeResult::decisions)
      .def_readonly("trace", &EpisodeResult::trace);

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", [](const Dataset& d) { return d.transitions.size(); })
      .def_property_readonly("kind", [](const Dataset& d) { return std::string(to_string(d.kind)); })
      .def("save", [](const Dataset& d, const std::filesystem::path& p) { save_dataset(d, p); })
      .def_static("load", &load_dataset);

  py::class_<Hyperparams>(m, "Hyperparams")
      .def(py::init<>())
      .def_readwrite("training_steps", &Hyperparams::training_steps)
      .def_readwrite("batch_size", &Hyperparams::batch_size)
      .def_readwrite("gamma", &Hyperparams::gamma)
      .def_readwrite("tau", &Hyperparams::tau)
      .def_readwrite("learning_rate", &Hyperparams::learning_rate)
      .def_readwrite("soft_update", &Hyperparams::soft_update)
      .def_readwrite("discount_by_duration", &Hyperparams::discount_by_duration)
      .def_static("paper_scale", &Hyperparams::paper_scale)
      .def_static("desk_scale", &Hyperparams::desk_scale);

  py::class_<ModelBundle>(m, "Model")
      .def_readonly("kind", &ModelBundle::kind)
      .def("save", &ModelBundle::save)
      .def_static("load", &ModelBundle::load);

  py::class_<EpisodeSummary>(m, "EpisodeSummary")
      .def_readonly("agent", &EpisodeSummary::agent)
      .def_readonly("suite", &EpisodeSummary::suite)
      .def_readonly("density", &EpisodeSummary::density)
      .def_readonly("scenario_index", &EpisodeSummary::scenario_index)
      .def_readonly("run", &EpisodeSummary::run)
      .def_readonly("mean_speed", &EpisodeSummary::mean_speed)
      .def_readonly("collision", &EpisodeSummary::collision);

  py::class_<EvalReport>(m, "EvalReport")
      .def_readonly("episodes", &EvalReport::episodes)
      .def("suite_mean", &EvalReport::suite_mean, py::arg("agent"), py::arg("run") = std::nullopt)
      .def("to_json", &EvalReport::to_json)
      .def("write", &EvalReport::write);

  m.def("reward", [](double speed, bool changed, double v_des, double p_ac) {
        return reward(speed, RewardParams{v_des, p_ac}, changed);
      }, py::arg("speed"), py::arg("action_changed") = false, py::arg("v_des") = 30.0, py::arg("p_ac") = -0.01);

  m.def("idm_acceleration", [](const VehicleState& f, const std::optional<VehicleState>& l, const DriverParams& p) {
        return idm_acceleration(f, l, p);
      }, py::arg("follower"), py::arg("leader"), py::arg("params") = DriverParams{});

  m.def("ttc", [](double s_host, double v_host, double s_ref, double v_ref) {
    return ttc({s_host, v_host}, {s_ref, v_ref});
  });
  m.def("thw", [](double s_host, double v_host, double s_ref, double v_ref) {
    return thw({s_host, v_host}, {s_ref, v_ref});
  });

  // (p, v, a) at 0 and at T; returns the squared-jerk integral and the end sample
  m.def("quintic", [](std::array<double, 3> start, std::array<double, 3> end, double T) {
        const auto p = fit_quintic({start[0], start[1], start[2]}, {end[0], end[1], end[2]}, T);
        const auto e = eval_poly(p, T);
        return py::dict(py::arg("jerk_integral") = integral_squared_jerk(p), py::arg("end") = std::array{e.p, e.v, e.a});
      });

  py::class_<ScenarioConfig>(m, "ScenarioConfig")
      .def(py::init<>())
      .def_readwrite("ego_s", &ScenarioConfig::ego_s)
      .def_readwrite("max_duration", &ScenarioConfig::max_duration);
  m.def("random_scenario", &generate_random_scenario, py::arg("n_vehicles"), py::arg("seed"),
        py::arg("config") = ScenarioConfig{});
  m.def("critical_scenario_a", &critical_scenario_a);
  m.def("critical_scenario_b", &critical_scenario_b);
  m.def("critical_a_g0", &critical_a_g0);
  m.def("critical_a_g1", &critical_a_g1);

  m.def("run_episode", &run, py::arg("scenario"), py::arg("agent"), py::arg("seed") = 0,
        py::arg("model") = std::nullopt, py::arg("goal") = std::nullopt, py::arg("max_duration") = std::nullopt,
        py::arg("trace") = false, py::call_guard<py::gil_scoped_release>());

  m.def("collect", [](const std::string& kind, int n, std::uint64_t seed, int min_vehicles, int max_vehicles) {
        CollectConfig cfg;
        cfg.kind = parse_dataset_kind(kind);
        cfg.n_transitions = n;
        cfg.seed = seed;
        cfg.min_vehicles = min_vehicles;
        cfg.max_vehicles = max_vehicles;
        return collect_dataset(cfg);
      }, py::arg("kind") = "gap", py::arg("n") = 50000, py::arg("seed") = 0, py::arg("min_vehicles") = 0,
      py::arg("max_vehicles") = 70, py::call_guard<py::gil_scoped_release>());

  m.def("train", [](const Dataset& data, const Hyperparams& hp, std::uint64_t seed,
                    const std::optional<std::filesystem::path>& out) {
        auto r = train(data, hp, seed, out);
        std::vector<std::pair<int, double>> log;
        for (const auto& row : r.log) log.emplace_back(row.step, row.loss);
        return std::make_pair(std::move(r.model), log);
      }, py::arg("data"), py::arg("hyperparams") = Hyperparams::desk_scale(), py::arg("seed") = 0,
      py::arg("out_dir") = std::nullopt, py::call_guard<py::gil_scoped_release>());

  m.def("evaluate", &eval, py::arg("agents"), py::arg("models") = std::vector<std::filesystem::path>{},
        py::arg("hl_models") = std::vector<std::filesystem::path>{},
        py::arg("densities") = std::vector<int>{10, 20, 30, 40, 50, 60, 70, 80}, py::arg("scenarios_per_density") = 10,
        py::arg("runs") = 3, py::arg("seed") = 2024, py::arg("critical") = true,
        py::call_guard<py::gil_scoped_release>());
}
