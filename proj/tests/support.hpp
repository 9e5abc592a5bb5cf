#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <random>
#include <vector>

#include "aqlmap/learn.hpp"

namespace testing_support {

using namespace aqlmap;

inline RlState random_state(std::mt19937_64& gen, int max_objects = 6) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> n(0, max_objects);
  std::uniform_int_distribution<int> lane(-1, 1);
  RlState s;
  const int k = n(gen);
  for (int i = 0; i < k; ++i) s.dynamic.push_back({u(gen), 0.5 * u(gen), static_cast<double>(lane(gen))});
  s.static_features = {0.5 + 0.5 * u(gen), static_cast<double>(gen() % 2), static_cast<double>(gen() % 2)};
  return s;
}

inline ActionChoice random_gap_action(std::mt19937_64& gen) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ActionChoice a;
  GapFeatures f;
  f.d_rel = u(gen);
  f.v_rel = 0.3 * u(gen);
  f.lane_rel = static_cast<int>(gen() % 3) - 1;
  f.len = 20.0 + 60.0 * std::abs(u(gen));
  f.af = static_cast<int>(gen() % 2);
  a.gap = f;
  a.identity = GapIdentity{static_cast<int>(gen() % 20) + 1, std::nullopt, f.lane_rel + 1};
  return a;
}

inline Transition random_transition(std::mt19937_64& gen, DatasetKind kind) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Transition t;
  t.state = random_state(gen);
  t.next_state = random_state(gen);
  t.reward = u(gen);
  t.terminal = u(gen) < 0.1;
  const int n_next = t.terminal ? 0 : 1 + static_cast<int>(gen() % 4);
  if (kind == DatasetKind::kGap) {
    t.action = random_gap_action(gen);
    for (int i = 0; i < n_next; ++i) t.next_candidates.push_back(random_gap_action(gen));
  } else {
    t.action.index = static_cast<int>(gen() % 3);
    for (int i = 0; i < n_next; ++i) {
      ActionChoice c;
      c.index = i % 3;
      t.next_candidates.push_back(c);
    }
  }
  return t;
}

inline std::vector<const Transition*> pointers(const std::vector<Transition>& ts) {
  std::vector<const Transition*> out;
  for (const auto& t : ts) out.push_back(&t);
  return out;
}

/// Signs of every rectifier pre-activation in the forward pass that
/// mse_loss_and_grad performs on `batch`.
inline std::vector<bool> relu_pattern(const DeepSetQNet& net, const std::vector<Transition>& batch,
                                      DatasetKind kind) {
  std::vector<const RlState*> states;
  std::vector<int> idx;
  const int adim = net.dims().action_dim;
  Eigen::MatrixXd actions(adim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    states.push_back(&batch[i].state);
    idx.push_back(static_cast<int>(i));
    if (kind == DatasetKind::kGap) {
      const auto v = gap_action_vector(*batch[i].action.gap, 80.0);
      for (int r = 0; r < adim; ++r) actions(r, static_cast<Eigen::Index>(i)) = v[static_cast<std::size_t>(r)];
    }
  }
  const StateBatch sb = StateBatch::from(states);
  DeepSetQNet::EncodeCache enc;
  DenseNet::Cache head;
  net.head(net.head_input(net.encode(sb, &enc), sb.statics, actions, idx), &head);
  std::vector<bool> signs;
  const auto add = [&](const DenseNet& d, const DenseNet::Cache& c) {
    for (std::size_t l = 0; l < d.layers().size(); ++l) {
      if (l >= c.pre.size() || d.layers()[l].act != Activation::kRelu) continue;
      const auto& m = c.pre[l];
      for (Eigen::Index k = 0; k < m.size(); ++k) signs.push_back(m.data()[k] > 0.0);
    }
  };
  add(net.phi(), enc.phi);
  add(net.rho(), enc.rho);
  add(net.q(), head);
  return signs;
}

/// Largest violation of |analytic - numeric| <= max(rel * max(|a|, |n|), abs_floor)
/// over all parameters, using central differences of mse_loss_and_grad.
/// Within one rectifier pattern the loss is quadratic in any single
/// parameter, so when a kink lies inside [x - eps, x + eps] the exact
/// second-order one-sided difference on the kink-free side is used instead.
/// Coordinates with kinks on both sides are counted in `unverifiable`.
inline double gradient_check(DeepSetQNet& net, const std::vector<Transition>& batch,
                             const std::vector<double>& targets, DatasetKind kind, double eps,
                             double rel, double abs_floor, int* bad = nullptr,
                             int* one_sided = nullptr, int* unverifiable = nullptr) {
  const auto ptrs = pointers(batch);
  Eigen::VectorXd grads = Eigen::VectorXd::Zero(net.params().size());
  const double l0 = mse_loss_and_grad(net, ptrs, targets, 80.0, kind, &grads);
  const auto base = relu_pattern(net, batch, kind);
  double worst = 0.0;
  int count = 0, sided = 0, skipped = 0;
  const auto loss_at = [&](Eigen::Index i, double x, double h, bool* same) {
    net.params()[i] = x + h;
    const double l = mse_loss_and_grad(net, ptrs, targets, 80.0, kind, nullptr);
    if (same) *same = relu_pattern(net, batch, kind) == base;
    net.params()[i] = x;
    return l;
  };
  for (Eigen::Index i = 0; i < net.params().size(); ++i) {
    const double x = net.params()[i];
    const double lp = loss_at(i, x, eps, nullptr);
    const double lm = loss_at(i, x, -eps, nullptr);
    double num = (lp - lm) / (2.0 * eps);
    const double a = grads[i];
    double allowed = std::max(rel * std::max(std::abs(a), std::abs(num)), abs_floor);
    if (std::abs(a - num) > allowed) {
      bool plus_ok = false, minus_ok = false;
      loss_at(i, x, eps, &plus_ok);
      loss_at(i, x, -eps, &minus_ok);
      if (plus_ok && minus_ok) {
        // no kink: a genuine mismatch
      } else if (plus_ok || minus_ok) {
        const double h = plus_ok ? eps : -eps;
        const double lh = loss_at(i, x, h / 2.0, nullptr);
        const double l2 = plus_ok ? lp : lm;
        num = (-3.0 * l0 + 4.0 * lh - l2) / h;
        allowed = std::max(rel * std::max(std::abs(a), std::abs(num)), abs_floor);
        ++sided;
      } else {
        ++skipped;
        continue;
      }
    }
    const double excess = std::abs(a - num) / allowed;
    if (excess > 1.0) ++count;
    worst = std::max(worst, excess);
  }
  if (bad) *bad = count;
  if (one_sided) *one_sided = sided;
  if (unverifiable) *unverifiable = skipped;
  return worst;
}

}  // namespace testing_support

namespace testing_support {

/// Two states, two gaps, deterministic transitions. Gap A keeps the current
/// state, gap B switches it. Rewards: (s0,A)=0.5, (s0,B)=0, (s1,A)=0, (s1,B)=1.
struct TabularMdp {
  RlState states[2];
  ActionChoice gaps[2];
  double reward[2][2] = {{0.5, 0.0}, {0.0, 1.0}};
  int next[2][2] = {{0, 1}, {1, 0}};

  TabularMdp() {
    states[0].dynamic = {{0.4, 0.0, 0.0}};
    states[0].static_features = {0.6, 1.0, 0.0};
    states[1].dynamic = {{-0.3, 0.1, 1.0}, {0.5, -0.1, 0.0}};
    states[1].static_features = {0.9, 1.0, 1.0};
    for (int g = 0; g < 2; ++g) {
      GapFeatures f;
      f.d_rel = g == 0 ? 0.0 : 0.3;
      f.v_rel = g == 0 ? 0.0 : 0.1;
      f.lane_rel = g;
      f.len = 50.0;
      f.af = g;
      gaps[g].gap = f;
      gaps[g].identity = GapIdentity{std::nullopt, g + 1, g};
    }
  }

  Dataset dataset(int copies) const {
    Dataset d;
    d.kind = DatasetKind::kGap;
    for (int c = 0; c < copies; ++c)
      for (int s = 0; s < 2; ++s)
        for (int g = 0; g < 2; ++g) {
          Transition t;
          t.state = states[s];
          t.action = gaps[g];
          t.reward = reward[s][g];
          t.next_state = states[next[s][g]];
          t.next_candidates = {gaps[0], gaps[1]};
          d.transitions.push_back(t);
        }
    return d;
  }

  // Q* by value iteration to machine precision.
  std::array<std::array<double, 2>, 2> value_iteration(double gamma) const {
    std::array<std::array<double, 2>, 2> q{};
    for (int it = 0; it < 100000; ++it) {
      auto nq = q;
      double delta = 0.0;
      for (int s = 0; s < 2; ++s)
        for (int g = 0; g < 2; ++g) {
          const int n = next[s][g];
          nq[s][g] = reward[s][g] + gamma * std::max(q[n][0], q[n][1]);
          delta = std::max(delta, std::abs(nq[s][g] - q[s][g]));
        }
      q = nq;
      if (delta < 1e-14) break;
    }
    return q;
  }

  // Largest relative error of the learned Q against value iteration.
  double max_relative_error(const DeepSetQNet& net, double gamma) const {
    const auto ref = value_iteration(gamma);
    double worst = 0.0;
    for (int s = 0; s < 2; ++s)
      for (int g = 0; g < 2; ++g) {
        const double q = net.forward_q(states[s], gap_action_vector(*gaps[g].gap, 80.0));
        worst = std::max(worst, std::abs(q - ref[s][g]) / std::abs(ref[s][g]));
      }
    return worst;
  }
};

}  // namespace testing_support
