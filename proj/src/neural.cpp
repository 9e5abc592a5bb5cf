#include "aqlmap/neural.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "aqlmap/common.hpp"

namespace aqlmap {

using Eigen::MatrixXd;
using Eigen::VectorXd;

DenseNet::DenseNet(std::vector<LayerSpec> layers, std::size_t offset)
    : layers_(std::move(layers)), offset_(offset) {
  if (layers_.empty()) throw std::invalid_argument("DenseNet: no layers");
  std::size_t pos = offset_;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.in <= 0 || l.out <= 0) throw std::invalid_argument("DenseNet: non-positive layer size");
    if (i > 0 && layers_[i - 1].out != l.in)
      throw std::invalid_argument("DenseNet: layer dimensions do not chain");
    layer_offsets_.push_back(pos);
    pos += static_cast<std::size_t>(l.out) * static_cast<std::size_t>(l.in + 1);
  }
  count_ = pos - offset_;
}

DenseNet DenseNet::mlp(int in, const std::vector<int>& hidden, int out, std::size_t offset) {
  std::vector<LayerSpec> layers;
  int prev = in;
  for (int h : hidden) {
    layers.push_back({prev, h, Activation::kRelu});
    prev = h;
  }
  layers.push_back({prev, out, Activation::kIdentity});
  return DenseNet(std::move(layers), offset);
}

Eigen::Map<const MatrixXd> DenseNet::weight(const VectorXd& params, std::size_t layer) const {
  const auto& l = layers_[layer];
  return {params.data() + layer_offsets_[layer], l.out, l.in};
}

Eigen::Map<const VectorXd> DenseNet::bias(const VectorXd& params, std::size_t layer) const {
  const auto& l = layers_[layer];
  return {params.data() + layer_offsets_[layer] + static_cast<std::size_t>(l.out * l.in), l.out};
}

MatrixXd DenseNet::forward(const VectorXd& params, const MatrixXd& x, Cache* cache) const {
  if (x.rows() != in_dim()) throw std::invalid_argument("DenseNet::forward: input dimension mismatch");
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  MatrixXd h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    MatrixXd z = weight(params, i) * h;
    z.colwise() += bias(params, i);
    if (cache) {
      cache->inputs.push_back(std::move(h));
      cache->pre.push_back(z);
    }
    if (layers_[i].act == Activation::kRelu) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

MatrixXd DenseNet::backward(const VectorXd& params, const Cache& cache, const MatrixXd& grad_out,
                            VectorXd& grads) const {
  MatrixXd g = grad_out;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const auto& l = layers_[k];
    if (l.act == Activation::kRelu) g = g.cwiseProduct((cache.pre[k].array() > 0.0).cast<double>().matrix());
    Eigen::Map<MatrixXd> dW(grads.data() + layer_offsets_[k], l.out, l.in);
    Eigen::Map<VectorXd> db(grads.data() + layer_offsets_[k] + static_cast<std::size_t>(l.out * l.in),
                            l.out);
    dW.noalias() += g * cache.inputs[k].transpose();
    db += g.rowwise().sum();
    g = weight(params, k).transpose() * g;
  }
  return g;
}

StateBatch StateBatch::from(std::span<const RlState* const> states) {
  StateBatch b;
  int total = 0;
  for (const auto* s : states) total += static_cast<int>(s->dynamic.size());
  b.objects.resize(3, total);
  b.statics.resize(3, static_cast<Eigen::Index>(states.size()));
  b.offsets.reserve(states.size() + 1);
  b.offsets.push_back(0);
  int col = 0;
  std::vector<ObjectFeatures> sorted;
  for (std::size_t i = 0; i < states.size(); ++i) {
    sorted = states[i]->dynamic;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& o : sorted) {
      b.objects.col(col++) << o[0], o[1], o[2];
    }
    b.offsets.push_back(col);
    const auto& st = states[i]->static_features;
    b.statics.col(static_cast<Eigen::Index>(i)) << st[0], st[1], st[2];
  }
  return b;
}

DeepSetQNet::DeepSetQNet(QNetDims dims, std::uint64_t seed) : dims_(dims) {
  std::size_t off = 0;
  phi_ = DenseNet::mlp(dims_.object_dim, {dims_.phi_hidden}, dims_.phi_out, off);
  off += phi_.param_count();
  rho_ = DenseNet::mlp(dims_.phi_out, {dims_.rho_hidden}, dims_.rho_out, off);
  off += rho_.param_count();
  q_ = DenseNet::mlp(dims_.head_in(), {dims_.fc_hidden, dims_.fc_hidden}, dims_.outputs, off);
  off += q_.param_count();
  params_ = VectorXd::Zero(static_cast<Eigen::Index>(off));

  // Uniform fan-in initialization.
  Rng rng(seed);
  for (const DenseNet* net : {&phi_, &rho_, &q_}) {
    std::size_t pos = net->offset();
    for (const auto& l : net->layers()) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
      const std::size_t n = static_cast<std::size_t>(l.out) * static_cast<std::size_t>(l.in + 1);
      for (std::size_t k = 0; k < n; ++k)
        params_[static_cast<Eigen::Index>(pos + k)] = rng.uniform(-bound, bound);
      pos += n;
    }
  }
}

MatrixXd DeepSetQNet::encode(const StateBatch& batch, EncodeCache* cache) const {
  if (batch.objects.rows() != dims_.object_dim || batch.statics.rows() != dims_.static_dim)
    throw std::invalid_argument("DeepSetQNet::encode: feature dimension mismatch");
  const int n = batch.size();
  MatrixXd pooled = MatrixXd::Zero(dims_.phi_out, n);
  if (batch.objects.cols() > 0) {
    const MatrixXd phi_out = phi_.forward(params_, batch.objects, cache ? &cache->phi : nullptr);
    for (int b = 0; b < n; ++b) {
      const int begin = batch.offsets[static_cast<std::size_t>(b)];
      const int end = batch.offsets[static_cast<std::size_t>(b) + 1];
      for (int c = begin; c < end; ++c) pooled.col(b) += phi_out.col(c);
    }
  } else if (cache) {
    cache->phi = {};
  }
  if (cache) cache->offsets = batch.offsets;
  return rho_.forward(params_, pooled, cache ? &cache->rho : nullptr);
}

MatrixXd DeepSetQNet::head_input(const MatrixXd& encoded, const MatrixXd& statics,
                                 const MatrixXd& actions, std::span<const int> state_index) const {
  const auto m = static_cast<Eigen::Index>(state_index.size());
  if (actions.rows() != dims_.action_dim || (dims_.action_dim > 0 && actions.cols() != m))
    throw std::invalid_argument("DeepSetQNet::head_input: action dimension mismatch");
  MatrixXd in(dims_.head_in(), m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const int s = state_index[static_cast<std::size_t>(k)];
    in.col(k).head(dims_.rho_out) = encoded.col(s);
    in.col(k).segment(dims_.rho_out, dims_.static_dim) = statics.col(s);
    if (dims_.action_dim > 0) in.col(k).tail(dims_.action_dim) = actions.col(k);
  }
  return in;
}

MatrixXd DeepSetQNet::head(const MatrixXd& input, DenseNet::Cache* cache) const {
  return q_.forward(params_, input, cache);
}

MatrixXd DeepSetQNet::backward_head(const DenseNet::Cache& cache, const MatrixXd& grad_out,
                                    VectorXd& grads) const {
  return q_.backward(params_, cache, grad_out, grads);
}

void DeepSetQNet::backward_encode(const EncodeCache& cache, const MatrixXd& grad_encoded,
                                  VectorXd& grads) const {
  const MatrixXd grad_pooled = rho_.backward(params_, cache.rho, grad_encoded, grads);
  const int total = cache.offsets.back();
  if (total == 0) return;
  // The pooled gradient is broadcast to every object of its set.
  MatrixXd grad_phi(dims_.phi_out, total);
  const int n = static_cast<int>(cache.offsets.size()) - 1;
  for (int b = 0; b < n; ++b)
    for (int c = cache.offsets[static_cast<std::size_t>(b)];
         c < cache.offsets[static_cast<std::size_t>(b) + 1]; ++c)
      grad_phi.col(c) = grad_pooled.col(b);
  phi_.backward(params_, cache.phi, grad_phi, grads);
}

double DeepSetQNet::forward_q(const RlState& state, std::span<const double> action, int output) const {
  if (static_cast<int>(action.size()) != dims_.action_dim)
    throw std::invalid_argument("forward_q: action dimension mismatch");
  if (output < 0 || output >= dims_.outputs) throw std::out_of_range("forward_q: output index");
  const RlState* ptr = &state;
  const StateBatch batch = StateBatch::from({&ptr, 1});
  const MatrixXd enc = encode(batch);
  MatrixXd act(dims_.action_dim, 1);
  for (int i = 0; i < dims_.action_dim; ++i) act(i, 0) = action[static_cast<std::size_t>(i)];
  const int idx = 0;
  return head(head_input(enc, batch.statics, act, {&idx, 1}))(output, 0);
}

std::vector<double> DeepSetQNet::q_values(const RlState& state,
                                          std::span<const std::vector<double>> actions) const {
  if (actions.empty()) return {};
  const RlState* ptr = &state;
  const StateBatch batch = StateBatch::from({&ptr, 1});
  const MatrixXd enc = encode(batch);
  MatrixXd act(dims_.action_dim, static_cast<Eigen::Index>(actions.size()));
  for (std::size_t k = 0; k < actions.size(); ++k) {
    if (static_cast<int>(actions[k].size()) != dims_.action_dim)
      throw std::invalid_argument("q_values: action dimension mismatch");
    for (int i = 0; i < dims_.action_dim; ++i)
      act(i, static_cast<Eigen::Index>(k)) = actions[k][static_cast<std::size_t>(i)];
  }
  const std::vector<int> idx(actions.size(), 0);
  const MatrixXd out = head(head_input(enc, batch.statics, act, idx));
  std::vector<double> q(actions.size());
  for (std::size_t k = 0; k < actions.size(); ++k) q[k] = out(0, static_cast<Eigen::Index>(k));
  return q;
}

std::vector<double> DeepSetQNet::outputs(const RlState& state) const {
  if (dims_.action_dim != 0) throw std::logic_error("outputs: network expects action features");
  const RlState* ptr = &state;
  const StateBatch batch = StateBatch::from({&ptr, 1});
  const MatrixXd enc = encode(batch);
  const int idx = 0;
  const MatrixXd out = head(head_input(enc, batch.statics, MatrixXd(0, 1), {&idx, 1}));
  return {out.data(), out.data() + out.size()};
}

OptimizerState::OptimizerState(std::size_t n, double learning_rate)
    : m(VectorXd::Zero(static_cast<Eigen::Index>(n))),
      v(VectorXd::Zero(static_cast<Eigen::Index>(n))),
      lr(learning_rate) {}

void optimizer_step(VectorXd& params, const VectorXd& grads, OptimizerState& s) {
  if (params.size() != grads.size() || s.m.size() != params.size() || s.v.size() != params.size())
    throw std::invalid_argument("optimizer_step: shape mismatch");
  ++s.step;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grads;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  params.array() -= s.lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

void soft_update(DeepSetQNet& target, const DeepSetQNet& online, double tau) {
  if (!(target.dims() == online.dims())) throw std::invalid_argument("soft_update: architecture mismatch");
  if (tau == 1.0) {
    target.params() = online.params();
    return;
  }
  target.params() = tau * online.params() + (1.0 - tau) * target.params();
}

namespace {

using nlohmann::json;

json dims_to_json(const QNetDims& d) {
  return {{"object_dim", d.object_dim}, {"phi_hidden", d.phi_hidden}, {"phi_out", d.phi_out},
          {"rho_hidden", d.rho_hidden}, {"rho_out", d.rho_out},       {"static_dim", d.static_dim},
          {"action_dim", d.action_dim}, {"fc_hidden", d.fc_hidden},   {"outputs", d.outputs}};
}

QNetDims dims_from_json(const json& j) {
  QNetDims d;
  d.object_dim = j.at("object_dim").get<int>();
  d.phi_hidden = j.at("phi_hidden").get<int>();
  d.phi_out = j.at("phi_out").get<int>();
  d.rho_hidden = j.at("rho_hidden").get<int>();
  d.rho_out = j.at("rho_out").get<int>();
  d.static_dim = j.at("static_dim").get<int>();
  d.action_dim = j.at("action_dim").get<int>();
  d.fc_hidden = j.at("fc_hidden").get<int>();
  d.outputs = j.at("outputs").get<int>();
  return d;
}

json params_to_json(const DeepSetQNet& net) {
  const auto& p = net.params();
  return json(std::vector<double>(p.data(), p.data() + p.size()));
}

void params_from_json(DeepSetQNet& net, const json& j) {
  const auto values = j.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != net.params().size())
    throw FormatError("model: parameter count does not match architecture");
  net.params() = Eigen::Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

std::string ModelBundle::to_json_string() const {
  json j;
  j["format_version"] = kModelFormatVersion;
  j["kind"] = kind;
  j["dims"] = dims_to_json(online.dims());
  j["online"] = params_to_json(online);
  j["target_a"] = params_to_json(target_a);
  j["target_b"] = params_to_json(target_b);
  return j.dump();
}

ModelBundle ModelBundle::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion)
      throw FormatError("model: unsupported format_version");
    const QNetDims dims = dims_from_json(j.at("dims"));
    ModelBundle b{j.at("kind").get<std::string>(), DeepSetQNet(dims), DeepSetQNet(dims),
                  DeepSetQNet(dims)};
    params_from_json(b.online, j.at("online"));
    params_from_json(b.target_a, j.at("target_a"));
    params_from_json(b.target_b, j.at("target_b"));
    return b;
  } catch (const json::exception& e) {
    throw FormatError(std::string("model: ") + e.what());
  }
}

void ModelBundle::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model file " + path.string());
  out << to_json_string() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

ModelBundle ModelBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

}  // namespace aqlmap
