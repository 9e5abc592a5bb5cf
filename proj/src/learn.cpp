#include "aqlmap/learn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace aqlmap {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

std::string_view to_string(DatasetKind kind) {
  return kind == DatasetKind::kGap ? "gap" : "discrete";
}

DatasetKind parse_dataset_kind(std::string_view text) {
  if (text == "gap") return DatasetKind::kGap;
  if (text == "discrete") return DatasetKind::kDiscrete;
  throw FormatError("unknown dataset kind '" + std::string(text) + "'");
}

bool ActionChoice::operator==(const ActionChoice& o) const {
  auto same_features = [](const GapFeatures& a, const GapFeatures& b) {
    return a.d_rel == b.d_rel && a.v_rel == b.v_rel && a.lane_rel == b.lane_rel && a.len == b.len &&
           a.af == b.af;
  };
  if (gap.has_value() != o.gap.has_value()) return false;
  if (gap && !same_features(*gap, *o.gap)) return false;
  return identity == o.identity && index == o.index;
}

namespace {

void validate_state(const RlState& s, const char* which) {
  for (const auto& o : s.dynamic) {
    for (double x : o)
      if (!std::isfinite(x)) throw FormatError(std::string(which) + ": non-finite object feature");
    if (std::abs(o[0]) > 1.0 + 1e-9)
      throw FormatError(std::string(which) + ": |d_rel| > 1 (outside sensor range)");
  }
  const auto& st = s.static_features;
  if (!std::isfinite(st[0]) || st[0] < 0) throw FormatError(std::string(which) + ": bad speed feature");
  for (int k : {1, 2})
    if (st[static_cast<std::size_t>(k)] != 0.0 && st[static_cast<std::size_t>(k)] != 1.0)
      throw FormatError(std::string(which) + ": lane-valid flags must be 0 or 1");
}

void validate_action(const ActionChoice& a, DatasetKind kind, const char* which) {
  if (kind == DatasetKind::kGap) {
    if (!a.gap) throw FormatError(std::string(which) + ": missing gap features");
    const auto& g = *a.gap;
    if (!std::isfinite(g.d_rel) || !std::isfinite(g.v_rel) || !std::isfinite(g.len))
      throw FormatError(std::string(which) + ": non-finite gap feature");
    if (std::abs(g.lane_rel) > 1) throw FormatError(std::string(which) + ": |lane_rel| > 1");
    if (g.af != 0 && g.af != 1) throw FormatError(std::string(which) + ": af must be 0 or 1");
  } else if (a.index < 0 || a.index > 2) {
    throw FormatError(std::string(which) + ": discrete action index outside {0,1,2}");
  }
}

json state_to_json(const RlState& s) {
  json dyn = json::array();
  for (const auto& o : s.dynamic) dyn.push_back({o[0], o[1], o[2]});
  return {{"dynamic", dyn},
          {"static", {s.static_features[0], s.static_features[1], s.static_features[2]}}};
}

RlState state_from_json(const json& j) {
  RlState s;
  for (const auto& o : j.at("dynamic")) {
    if (o.size() != 3) throw FormatError("object feature triple expected");
    s.dynamic.push_back({o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()});
  }
  const auto& st = j.at("static");
  if (st.size() != 3) throw FormatError("static feature triple expected");
  s.static_features = {st.at(0).get<double>(), st.at(1).get<double>(), st.at(2).get<double>()};
  return s;
}

json identity_to_json(const GapIdentity& id) {
  json j;
  j["follower"] = id.follower_id ? json(*id.follower_id) : json(nullptr);
  j["leader"] = id.leader_id ? json(*id.leader_id) : json(nullptr);
  j["lane"] = id.lane;
  return j;
}

GapIdentity identity_from_json(const json& j) {
  GapIdentity id;
  if (!j.at("follower").is_null()) id.follower_id = j.at("follower").get<int>();
  if (!j.at("leader").is_null()) id.leader_id = j.at("leader").get<int>();
  id.lane = j.at("lane").get<int>();
  return id;
}

json action_to_json(const ActionChoice& a) {
  json j = json::object();
  if (a.gap) {
    const auto& g = *a.gap;
    j["features"] = {{"d_rel", g.d_rel}, {"v_rel", g.v_rel}, {"lane_rel", g.lane_rel},
                     {"len", g.len},     {"af", g.af}};
  }
  if (a.identity) j["identity"] = identity_to_json(*a.identity);
  j["index"] = a.index;
  return j;
}

ActionChoice action_from_json(const json& j) {
  ActionChoice a;
  if (j.contains("features")) {
    const auto& f = j.at("features");
    GapFeatures g;
    g.d_rel = f.at("d_rel").get<double>();
    g.v_rel = f.at("v_rel").get<double>();
    g.lane_rel = f.at("lane_rel").get<int>();
    g.len = f.at("len").get<double>();
    g.af = f.at("af").get<int>();
    a.gap = g;
  }
  if (j.contains("identity")) a.identity = identity_from_json(j.at("identity"));
  a.index = j.value("index", 0);
  return a;
}

}  // namespace

void Transition::validate(DatasetKind kind) const {
  validate_state(state, "state");
  validate_state(next_state, "next_state");
  validate_action(action, kind, "action");
  if (!std::isfinite(reward)) throw FormatError("reward is not finite");
  if (!(duration > 0)) throw FormatError("duration must be positive");
  if (!terminal && next_candidates.empty())
    throw FormatError("non-terminal transition without next candidates");
  for (const auto& c : next_candidates) validate_action(c, kind, "next_candidates");
}

std::string transition_to_json(const Transition& t, DatasetKind kind) {
  json j;
  j["format_version"] = kDatasetFormatVersion;
  j["kind"] = std::string(to_string(kind));
  j["state"] = state_to_json(t.state);
  j["action"] = action_to_json(t.action);
  j["reward"] = t.reward;
  j["next_state"] = state_to_json(t.next_state);
  json cands = json::array();
  for (const auto& c : t.next_candidates) cands.push_back(action_to_json(c));
  j["next_candidates"] = cands;
  j["terminal"] = t.terminal;
  j["duration"] = t.duration;
  return j.dump();
}

Transition transition_from_json(const std::string& line, DatasetKind* kind_out) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("invalid JSON: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kDatasetFormatVersion)
      throw FormatError("unsupported format_version");
    const DatasetKind kind = parse_dataset_kind(j.at("kind").get<std::string>());
    Transition t;
    t.state = state_from_json(j.at("state"));
    t.action = action_from_json(j.at("action"));
    t.reward = j.at("reward").get<double>();
    t.next_state = state_from_json(j.at("next_state"));
    for (const auto& c : j.at("next_candidates")) t.next_candidates.push_back(action_from_json(c));
    t.terminal = j.at("terminal").get<bool>();
    t.duration = j.value("duration", 1.0);
    t.validate(kind);
    if (kind_out) *kind_out = kind;
    return t;
  } catch (const json::exception& e) {
    throw FormatError(e.what());
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  Dataset data;
  std::string line;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    DatasetKind kind{};
    try {
      data.transitions.push_back(transition_from_json(line, &kind));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (first) {
      data.kind = kind;
      first = false;
    } else if (kind != data.kind) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": mixed dataset kinds");
    }
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const auto& t : data.transitions) out << transition_to_json(t, data.kind) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<double> gap_action_vector(const GapFeatures& f, double sensor_range) {
  return {f.d_rel, f.v_rel, static_cast<double>(f.lane_rel), f.len / sensor_range,
          static_cast<double>(f.af)};
}

void Hyperparams::validate() const {
  if (gamma < 0 || gamma > 1) throw std::invalid_argument("Hyperparams: gamma outside [0,1]");
  if (batch_size < 1) throw std::invalid_argument("Hyperparams: batch_size < 1");
  if (training_steps < 0) throw std::invalid_argument("Hyperparams: negative training_steps");
  if (tau < 0 || tau > 1) throw std::invalid_argument("Hyperparams: tau outside [0,1]");
  if (!(learning_rate > 0)) throw std::invalid_argument("Hyperparams: learning_rate <= 0");
  if (!(sensor_range > 0)) throw std::invalid_argument("Hyperparams: sensor_range <= 0");
}

QNetDims dims_for(DatasetKind kind) {
  QNetDims d;
  if (kind == DatasetKind::kDiscrete) {
    d.action_dim = 0;
    d.outputs = 3;
  }
  return d;
}

ModelBundle initial_model(DatasetKind kind, std::uint64_t seed) {
  const QNetDims dims = dims_for(kind);
  DeepSetQNet online(dims, derive_seed(seed, 1));
  DeepSetQNet target_b(dims, derive_seed(seed, 2));
  return {std::string(to_string(kind)), online, online, target_b};
}

namespace {

MatrixXd action_matrix(std::span<const ActionChoice* const> actions, double sensor_range,
                       DatasetKind kind) {
  if (kind == DatasetKind::kDiscrete) return MatrixXd(0, static_cast<Eigen::Index>(actions.size()));
  MatrixXd m(5, static_cast<Eigen::Index>(actions.size()));
  for (std::size_t k = 0; k < actions.size(); ++k) {
    const auto v = gap_action_vector(*actions[k]->gap, sensor_range);
    for (int i = 0; i < 5; ++i) m(i, static_cast<Eigen::Index>(k)) = v[static_cast<std::size_t>(i)];
  }
  return m;
}

// Per candidate q values of each net for the next states of non-terminal
// transitions. Returns the bootstrap value max_g min_n q_n(g) per transition.
std::vector<double> bootstrap_values(std::span<const Transition* const> batch,
                                     std::span<const DeepSetQNet* const> nets,
                                     double sensor_range, DatasetKind kind) {
  std::vector<double> out(batch.size(), 0.0);
  std::vector<const RlState*> states;
  std::vector<std::size_t> which;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->terminal) continue;
    states.push_back(&batch[i]->next_state);
    which.push_back(i);
  }
  if (states.empty()) return out;
  const StateBatch sb = StateBatch::from(states);

  std::vector<const ActionChoice*> cands;
  std::vector<int> state_index;
  for (std::size_t k = 0; k < which.size(); ++k) {
    const auto& c = batch[which[k]]->next_candidates;
    if (kind == DatasetKind::kGap) {
      for (const auto& a : c) {
        cands.push_back(&a);
        state_index.push_back(static_cast<int>(k));
      }
    } else {
      state_index.push_back(static_cast<int>(k));
    }
  }
  const MatrixXd actions = action_matrix(cands, sensor_range, kind);

  std::vector<double> best(which.size(), -kInf);
  std::vector<MatrixXd> outs;
  for (const DeepSetQNet* net : nets) {
    const MatrixXd enc = net->encode(sb);
    outs.push_back(net->head(net->head_input(enc, sb.statics, actions, state_index)));
  }
  auto min_over_nets = [&](Eigen::Index row, Eigen::Index col) {
    double v = kInf;
    for (const auto& o : outs) v = std::min(v, o(row, col));
    return v;
  };
  if (kind == DatasetKind::kGap) {
    for (std::size_t m = 0; m < cands.size(); ++m) {
      const auto k = static_cast<std::size_t>(state_index[m]);
      best[k] = std::max(best[k], min_over_nets(0, static_cast<Eigen::Index>(m)));
    }
  } else {
    for (std::size_t k = 0; k < which.size(); ++k)
      for (const auto& a : batch[which[k]]->next_candidates)
        best[k] = std::max(best[k], min_over_nets(a.index, static_cast<Eigen::Index>(k)));
  }
  for (std::size_t k = 0; k < which.size(); ++k) out[which[k]] = best[k];
  return out;
}

std::vector<double> targets_from(std::span<const Transition* const> batch,
                                 std::span<const DeepSetQNet* const> nets, const Hyperparams& hp,
                                 DatasetKind kind) {
  if (batch.empty()) throw std::invalid_argument("compute_targets: empty minibatch");
  const auto boot = bootstrap_values(batch, nets, hp.sensor_range, kind);
  std::vector<double> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Transition& t = *batch[i];
    if (t.terminal) {
      y[i] = t.reward;
      continue;
    }
    const double g = hp.discount_by_duration ? std::pow(hp.gamma, t.duration) : hp.gamma;
    y[i] = t.reward + g * boot[i];
  }
  return y;
}

struct ChosenForward {
  StateBatch states;
  DeepSetQNet::EncodeCache enc_cache;
  DenseNet::Cache head_cache;
  MatrixXd out;
  std::vector<int> out_row;
};

ChosenForward forward_chosen(const DeepSetQNet& net, std::span<const Transition* const> batch,
                             double sensor_range, DatasetKind kind, bool keep_cache) {
  ChosenForward f;
  std::vector<const RlState*> states;
  std::vector<const ActionChoice*> actions;
  std::vector<int> idx;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    states.push_back(&batch[i]->state);
    actions.push_back(&batch[i]->action);
    idx.push_back(static_cast<int>(i));
    f.out_row.push_back(kind == DatasetKind::kGap ? 0 : batch[i]->action.index);
  }
  f.states = StateBatch::from(states);
  const MatrixXd enc = net.encode(f.states, keep_cache ? &f.enc_cache : nullptr);
  const MatrixXd in =
      net.head_input(enc, f.states.statics, action_matrix(actions, sensor_range, kind), idx);
  f.out = net.head(in, keep_cache ? &f.head_cache : nullptr);
  return f;
}

}  // namespace

std::vector<double> compute_targets(std::span<const Transition* const> batch,
                                    const DeepSetQNet& target_a, const DeepSetQNet& target_b,
                                    const Hyperparams& hp, DatasetKind kind) {
  const DeepSetQNet* nets[] = {&target_a, &target_b};
  return targets_from(batch, nets, hp, kind);
}

std::vector<double> compute_targets_single(std::span<const Transition* const> batch,
                                           const DeepSetQNet& target, const Hyperparams& hp,
                                           DatasetKind kind) {
  const DeepSetQNet* nets[] = {&target};
  return targets_from(batch, nets, hp, kind);
}

std::vector<double> predict_chosen(const DeepSetQNet& net, std::span<const Transition* const> batch,
                                   double sensor_range, DatasetKind kind) {
  const auto f = forward_chosen(net, batch, sensor_range, kind, false);
  std::vector<double> q(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i)
    q[i] = f.out(f.out_row[i], static_cast<Eigen::Index>(i));
  return q;
}

double mse_loss_and_grad(const DeepSetQNet& net, std::span<const Transition* const> batch,
                         std::span<const double> targets, double sensor_range, DatasetKind kind,
                         VectorXd* grads, double* mean_abs_q) {
  if (targets.size() != batch.size()) throw std::invalid_argument("mse: target count mismatch");
  const auto f = forward_chosen(net, batch, sensor_range, kind, grads != nullptr);
  const double b = static_cast<double>(batch.size());
  double loss = 0.0;
  double abs_q = 0.0;
  MatrixXd grad_out = MatrixXd::Zero(f.out.rows(), f.out.cols());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double q = f.out(f.out_row[i], static_cast<Eigen::Index>(i));
    const double diff = q - targets[i];
    loss += diff * diff;
    abs_q += std::abs(q);
    grad_out(f.out_row[i], static_cast<Eigen::Index>(i)) = 2.0 * diff / b;
  }
  if (mean_abs_q) *mean_abs_q = abs_q / b;
  if (grads) {
    const MatrixXd grad_in = net.backward_head(f.head_cache, grad_out, *grads);
    net.backward_encode(f.enc_cache, grad_in.topRows(net.dims().rho_out), *grads);
  }
  return loss / b;
}

Trainer::Trainer(const Dataset& data, Hyperparams hp, std::uint64_t seed)
    : Trainer(data, hp, seed, initial_model(data.kind, seed)) {}

Trainer::Trainer(const Dataset& data, Hyperparams hp, std::uint64_t seed, ModelBundle initial)
    : data_(data),
      hp_(hp),
      model_(std::move(initial)),
      opt_(static_cast<std::size_t>(model_.online.params().size()), hp.learning_rate),
      sampler_(derive_seed(seed, 3)) {
  hp_.validate();
  if (data_.transitions.size() < static_cast<std::size_t>(hp_.batch_size))
    throw std::invalid_argument("Trainer: dataset smaller than batch size");
  order_.resize(data_.transitions.size());
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

std::vector<const Transition*> Trainer::sample_minibatch() {
  const auto b = static_cast<std::size_t>(hp_.batch_size);
  if (data_.transitions.size() < b)
    throw std::invalid_argument("train_step: dataset smaller than batch size");
  std::vector<const Transition*> batch(b);
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = i + sampler_.index(order_.size() - i);
    std::swap(order_[i], order_[j]);
    batch[i] = &data_.transitions[order_[i]];
  }
  return batch;
}

TrainLogRow Trainer::step() {
  const auto batch = sample_minibatch();
  const auto y = compute_targets(batch, model_.target_a, model_.target_b, hp_, data_.kind);
  VectorXd grads = VectorXd::Zero(model_.online.params().size());
  TrainLogRow row;
  row.loss = mse_loss_and_grad(model_.online, batch, y, hp_.sensor_range, data_.kind, &grads,
                               &row.mean_abs_q);
  optimizer_step(model_.online.params(), grads, opt_);
  ++steps_done_;
  if (hp_.soft_update) {
    soft_update(model_.target_a, model_.online, hp_.tau);
    soft_update(model_.target_b, model_.online, hp_.tau);
  } else {
    const int period = std::max(1, static_cast<int>(std::lround(1.0 / std::max(hp_.tau, 1e-12))));
    if (steps_done_ % period == 0) {
      soft_update(model_.target_a, model_.online, 1.0);
      soft_update(model_.target_b, model_.online, 1.0);
    }
  }
  row.step = steps_done_;
  return row;
}

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "step,loss,mean_abs_q\n" << std::setprecision(10);
  for (const auto& r : log) out << r.step << ',' << r.loss << ',' << r.mean_abs_q << '\n';
}

TrainResult train(const Dataset& data, const Hyperparams& hp, std::uint64_t seed,
                  const std::optional<std::filesystem::path>& out_dir,
                  const std::function<void(const TrainLogRow&)>& on_step) {
  Trainer trainer(data, hp, seed);
  TrainResult result;
  result.log.reserve(static_cast<std::size_t>(hp.training_steps));
  if (out_dir) std::filesystem::create_directories(*out_dir);
  for (int s = 0; s < hp.training_steps; ++s) {
    result.log.push_back(trainer.step());
    if (on_step) on_step(result.log.back());
    if (out_dir && hp.checkpoint_every > 0 && trainer.steps_done() % hp.checkpoint_every == 0)
      trainer.model().save(*out_dir / ("checkpoint_" + std::to_string(trainer.steps_done()) + ".json"));
  }
  result.model = trainer.model();
  if (out_dir) {
    result.model.save(*out_dir / "model.json");
    write_train_log(result.log, *out_dir / "train_log.csv");
  }
  return result;
}

}  // namespace aqlmap
