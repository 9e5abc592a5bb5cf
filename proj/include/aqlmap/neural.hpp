#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace aqlmap {

enum class Activation { kRelu, kIdentity };

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::kIdentity;
  bool operator==(const LayerSpec&) const = default;
};

/// Fully connected stack whose parameters live in a flat vector owned by the
/// caller, starting at `offset`. Each layer stores W (out x in, column-major)
/// followed by b (out).
class DenseNet {
 public:
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input of each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
  };

  DenseNet() = default;
  DenseNet(std::vector<LayerSpec> layers, std::size_t offset);

  // Rectifier on hidden layers, identity on the output.
  static DenseNet mlp(int in, const std::vector<int>& hidden, int out, std::size_t offset);

  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t offset() const { return offset_; }
  std::size_t param_count() const { return count_; }
  int in_dim() const { return layers_.front().in; }
  int out_dim() const { return layers_.back().out; }

  Eigen::Map<const Eigen::MatrixXd> weight(const Eigen::VectorXd& params, std::size_t layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(const Eigen::VectorXd& params, std::size_t layer) const;

  // Columns of x are samples.
  Eigen::MatrixXd forward(const Eigen::VectorXd& params, const Eigen::MatrixXd& x,
                          Cache* cache = nullptr) const;

  // Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
  Eigen::MatrixXd backward(const Eigen::VectorXd& params, const Cache& cache,
                           const Eigen::MatrixXd& grad_out, Eigen::VectorXd& grads) const;

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> layer_offsets_;
  std::size_t offset_ = 0;
  std::size_t count_ = 0;
};

using ObjectFeatures = std::array<double, 3>;  // d_rel, v_rel, lane_rel
using StaticFeatures = std::array<double, 3>;  // v / v_des, ll_valid, rl_valid

/// Network-facing state: a variable-size set of surrounding-vehicle triples
/// and the static ego features.
struct RlState {
  std::vector<ObjectFeatures> dynamic;
  StaticFeatures static_features{};
  bool operator==(const RlState&) const = default;
};

/// Architecture sizes. `action_dim` is the gap-feature width fed to the head
/// (0 for the discrete-action variant); `outputs` is the head width.
struct QNetDims {
  int object_dim = 3;
  int phi_hidden = 20;
  int phi_out = 80;
  int rho_hidden = 80;
  int rho_out = 20;
  int static_dim = 3;
  int action_dim = 5;
  int fc_hidden = 100;
  int outputs = 1;

  bool operator==(const QNetDims&) const = default;
  int head_in() const { return rho_out + static_dim + action_dim; }
};

/// States stacked for batched evaluation. Objects of each state are stored in
/// canonical (lexicographic) order so pooled sums do not depend on input order.
struct StateBatch {
  Eigen::MatrixXd objects;   // object_dim x total objects
  std::vector<int> offsets;  // size batch+1
  Eigen::MatrixXd statics;   // static_dim x batch

  int size() const { return static_cast<int>(offsets.size()) - 1; }
  static StateBatch from(std::span<const RlState* const> states);
};

/// phi -> sum pooling -> rho, then a head over (rho output, static, action).
class DeepSetQNet {
 public:
  struct EncodeCache {
    DenseNet::Cache phi;
    DenseNet::Cache rho;
    std::vector<int> offsets;
  };

  explicit DeepSetQNet(QNetDims dims = {}, std::uint64_t seed = 0);

  const QNetDims& dims() const { return dims_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  const DenseNet& phi() const { return phi_; }
  const DenseNet& rho() const { return rho_; }
  const DenseNet& q() const { return q_; }

  // rho(sum phi(x)) per state: rho_out x batch.
  Eigen::MatrixXd encode(const StateBatch& batch, EncodeCache* cache = nullptr) const;

  // Head input columns: [encoded.col(state_index[m]); statics.col(state_index[m]); actions.col(m)].
  Eigen::MatrixXd head_input(const Eigen::MatrixXd& encoded, const Eigen::MatrixXd& statics,
                             const Eigen::MatrixXd& actions, std::span<const int> state_index) const;

  Eigen::MatrixXd head(const Eigen::MatrixXd& input, DenseNet::Cache* cache = nullptr) const;

  Eigen::MatrixXd backward_head(const DenseNet::Cache& cache, const Eigen::MatrixXd& grad_out,
                                Eigen::VectorXd& grads) const;
  void backward_encode(const EncodeCache& cache, const Eigen::MatrixXd& grad_encoded,
                       Eigen::VectorXd& grads) const;

  // Single-state convenience: q(state, action)[output].
  double forward_q(const RlState& state, std::span<const double> action, int output = 0) const;

  // One value per action, sharing one encoding of the state.
  std::vector<double> q_values(const RlState& state,
                               std::span<const std::vector<double>> actions) const;

  // Head outputs for a state without action features (discrete variant).
  std::vector<double> outputs(const RlState& state) const;

 private:
  QNetDims dims_;
  DenseNet phi_, rho_, q_;
  Eigen::VectorXd params_;
};

struct OptimizerState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  OptimizerState() = default;
  OptimizerState(std::size_t n, double learning_rate);
};

/// Adaptive-moment update with bias correction.
void optimizer_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, OptimizerState& state);

/// target <- tau * online + (1 - tau) * target.
void soft_update(DeepSetQNet& target, const DeepSetQNet& online, double tau);

/// Online network plus the two target copies; persisted as one JSON file.
struct ModelBundle {
  std::string kind = "gap";  // "gap" or "discrete"
  DeepSetQNet online;
  DeepSetQNet target_a;
  DeepSetQNet target_b;

  void save(const std::filesystem::path& path) const;
  static ModelBundle load(const std::filesystem::path& path);
  std::string to_json_string() const;
  static ModelBundle from_json_string(const std::string& text);
};

inline constexpr int kModelFormatVersion = 1;

}  // namespace aqlmap
