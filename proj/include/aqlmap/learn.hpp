#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "aqlmap/common.hpp"
#include "aqlmap/gaps.hpp"
#include "aqlmap/neural.hpp"

namespace aqlmap {

inline constexpr int kDatasetFormatVersion = 1;

enum class DatasetKind { kGap, kDiscrete };

std::string_view to_string(DatasetKind kind);
DatasetKind parse_dataset_kind(std::string_view text);

/// An action as stored in a transition: a gap (features + identity) for the
/// options agent, or a discrete index for the high-level agent.
struct ActionChoice {
  std::optional<GapFeatures> gap;
  std::optional<GapIdentity> identity;
  int index = 0;

  bool operator==(const ActionChoice&) const;
};

struct Transition {
  RlState state;
  ActionChoice action;
  double reward = 0.0;
  RlState next_state;
  std::vector<ActionChoice> next_candidates;
  bool terminal = false;
  double duration = 1.0;  // seconds between the two decisions

  // Throws FormatError describing the first violated invariant.
  void validate(DatasetKind kind) const;
};

struct Dataset {
  DatasetKind kind = DatasetKind::kGap;
  std::vector<Transition> transitions;
};

std::string transition_to_json(const Transition& t, DatasetKind kind);
Transition transition_from_json(const std::string& line, DatasetKind* kind_out = nullptr);

// Parses a JSON-lines dataset; corrupt records raise FormatError naming the line.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& data, const std::filesystem::path& path);

/// Network input for a gap: (d_rel, v_rel, lane_rel, len / sensor_range, af).
std::vector<double> gap_action_vector(const GapFeatures& f, double sensor_range);

struct Hyperparams {
  int training_steps = 75000;
  int batch_size = 64;
  double gamma = 0.99;
  double tau = 1e-4;
  double learning_rate = 1e-4;
  bool soft_update = true;
  // Discount by gamma^duration instead of once per decision.
  bool discount_by_duration = false;
  int checkpoint_every = 0;
  double sensor_range = 80.0;

  void validate() const;
  static Hyperparams paper_scale() { return {}; }
  static Hyperparams desk_scale() {
    Hyperparams h;
    h.training_steps = 10000;
    h.tau = 1e-2;  // tau * steps = 100, about one horizon 1 / (1 - gamma)
    return h;
  }
};

QNetDims dims_for(DatasetKind kind);

/// Online network; target_a starts as its copy, target_b from an independent
/// seed so the two targets disagree.
ModelBundle initial_model(DatasetKind kind, std::uint64_t seed);

/// y = r for terminal transitions, otherwise
/// y = r + gamma * max over recorded next candidates of min(Q_a, Q_b).
std::vector<double> compute_targets(std::span<const Transition* const> batch,
                                    const DeepSetQNet& target_a, const DeepSetQNet& target_b,
                                    const Hyperparams& hp, DatasetKind kind);

// Same with a single target network (used to check the double-target bound).
std::vector<double> compute_targets_single(std::span<const Transition* const> batch,
                                           const DeepSetQNet& target, const Hyperparams& hp,
                                           DatasetKind kind);

/// Q(s_i, a_i) for a batch of transitions.
std::vector<double> predict_chosen(const DeepSetQNet& net, std::span<const Transition* const> batch,
                                   double sensor_range, DatasetKind kind);

/// Mean squared error against `targets`; adds d(loss)/d(params) into `grads`
/// when given.
double mse_loss_and_grad(const DeepSetQNet& net, std::span<const Transition* const> batch,
                         std::span<const double> targets, double sensor_range, DatasetKind kind,
                         Eigen::VectorXd* grads, double* mean_abs_q = nullptr);

struct TrainLogRow {
  int step = 0;
  double loss = 0.0;
  double mean_abs_q = 0.0;
};

/// Fixed-batch trainer: minibatch sampling, gradient step, target blending.
class Trainer {
 public:
  Trainer(const Dataset& data, Hyperparams hp, std::uint64_t seed);
  Trainer(const Dataset& data, Hyperparams hp, std::uint64_t seed, ModelBundle initial);

  // One training iteration; returns the minibatch loss.
  TrainLogRow step();

  const ModelBundle& model() const { return model_; }
  ModelBundle& model() { return model_; }
  const Hyperparams& hyperparams() const { return hp_; }
  int steps_done() const { return steps_done_; }

 private:
  std::vector<const Transition*> sample_minibatch();

  const Dataset& data_;
  Hyperparams hp_;
  ModelBundle model_;
  OptimizerState opt_;
  Rng sampler_;
  std::vector<std::size_t> order_;
  int steps_done_ = 0;
};

struct TrainResult {
  ModelBundle model;
  std::vector<TrainLogRow> log;
};

/// Runs hp.training_steps iterations. With `out_dir` set, writes model.json,
/// train_log.csv and periodic checkpoints there.
TrainResult train(const Dataset& data, const Hyperparams& hp, std::uint64_t seed,
                  const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                  const std::function<void(const TrainLogRow&)>& on_step = {});

void write_train_log(const std::vector<TrainLogRow>& log, const std::filesystem::path& path);

}  // namespace aqlmap
