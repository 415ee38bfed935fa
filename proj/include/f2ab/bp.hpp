// Copyright 2026 The f2ab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "f2ab/graph.hpp"
#include "f2ab/model.hpp"
#include "f2ab/random.hpp"

namespace f2ab {

/// Which cluster penalty enters the message exponent.
enum class Penalty {
  kNone,  ///< plain sum-product BP
  kFab,   ///< both F2IC terms (cluster and bicluster size)
  kFic,   ///< cluster-size term scaled by K(K+1)/2, bicluster term dropped
};

/// Baseline of the bicluster statistic T_{\j} in the penalty.
enum class BiclusterMass {
  kProportions,  ///< n² γ̂γ̂ᵀ, as printed
  kEdges,        ///< n² E[zz̄], the expected edge count of each bicluster
};

struct BpOptions {
  double tol_msg = 1e-2;
  int max_sweeps = 500;
  Penalty penalty = Penalty::kFab;
  bool prune = true;
  /// Clusters with zbar_k < prune_threshold / n are removed.
  double prune_threshold = 0.1;
  /// Weight of the old message in a damped update; 0 disables damping.
  double damping = 0.0;
  /// Verify simplex invariants after every update (debug aid).
  bool check_invariants = false;
};

class MessageUnderflow : public std::runtime_error {
 public:
  MessageUnderflow(int from, int to)
      : std::runtime_error("message underflow on edge " + std::to_string(from) + " -> " + std::to_string(to)) {}
};

/// Directed view of the non-self edges in CSR layout. Slot s in node i's
/// range [offset[i], offset[i+1]) stands for the ordered pair (i, target[s]).
struct DirectedEdges {
  std::vector<std::size_t> offset;
  std::vector<int> origin;
  std::vector<int> target;
  std::vector<std::size_t> reverse;
  std::vector<std::size_t> undirected;    // slot -> index into Graph::edges()
  std::vector<std::size_t> edge_slot;     // Graph::edges() index -> slot of (first, second); npos for self-loops

  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

  std::size_t size() const { return target.size(); }
  int source(std::size_t slot) const { return origin[slot]; }

  static DirectedEdges build(const Graph& g) {
    DirectedEdges d;
    const int n = g.num_nodes();
    d.offset.assign(static_cast<std::size_t>(n) + 1, 0);
    const auto& edges = g.edges();
    for (const auto& e : edges) {
      if (e.is_self_loop()) continue;
      ++d.offset[e.first + 1];
      ++d.offset[e.second + 1];
    }
    for (int i = 0; i < n; ++i) d.offset[i + 1] += d.offset[i];
    d.origin.resize(d.offset.back());
    d.target.resize(d.offset.back());
    d.reverse.resize(d.offset.back());
    d.undirected.resize(d.offset.back());
    d.edge_slot.assign(edges.size(), npos);
    std::vector<std::size_t> fill(d.offset.begin(), d.offset.end() - 1);
    for (std::size_t u = 0; u < edges.size(); ++u) {
      const auto& e = edges[u];
      if (e.is_self_loop()) continue;
      const std::size_t a = fill[e.first]++;
      const std::size_t b = fill[e.second]++;
      d.origin[a] = e.first;
      d.origin[b] = e.second;
      d.target[a] = e.second;
      d.target[b] = e.first;
      d.reverse[a] = b;
      d.reverse[b] = a;
      d.undirected[a] = u;
      d.undirected[b] = u;
      d.edge_slot[u] = a;
    }
    return d;
  }
};

/// Cluster penalties of one node together with the intermediate statistics
/// t_{\j} and T_{\j} (both clamped below at 1).
struct PenaltyTerms {
  Eigen::VectorXd lambda;
  Eigen::VectorXd t_excl;
  Eigen::MatrixXd T_excl;
};

/// ã = -n * Pi * zbar, the log-domain field replacing unconnected-node messages.
inline Eigen::VectorXd external_field(const Params& params, const Eigen::VectorXd& zbar, int n) {
  return -static_cast<double>(n) * (params.pi * zbar);
}

namespace detail {

/// Writes the penalty vector of one node into `out` without allocating.
/// With `zzbar` null, T uses n² zbar zbarᵀ; otherwise n² zzbar.
inline void penalty_lambda(Penalty kind, const Eigen::VectorXd& zbar, const Eigen::MatrixXd* zzbar, int n,
                           const double* belief, const double* neighbor_sum, double* out) {
  const int k = static_cast<int>(zbar.size());
  if (kind == Penalty::kNone) {
    std::fill(out, out + k, 0.0);
    return;
  }
  const double nn = n;
  const double fic_scale = kind == Penalty::kFic ? 0.5 * k * (k + 1) : 1.0;
  for (int a = 0; a < k; ++a) {
    const double t = std::max(1.0, nn * zbar[a] - belief[a] + 1.0);
    double lam = fic_scale * 0.5 * std::log1p(1.0 / t);
    if (kind == Penalty::kFab) {
      // Σ_b log1p(x_b) as the log of a running product, flushed before it can overflow.
      const double row = nn * nn * zbar[a];
      double prod = 1.0, logs = 0.0;
      for (int b = 0; b < k; ++b) {
        if (neighbor_sum[b] <= 0.0) continue;
        const double base = zzbar ? nn * nn * (*zzbar)(a, b) : row * zbar[b];
        const double big_t = std::max(1.0, base - belief[a] * neighbor_sum[b] + 1.0);
        prod *= 1.0 + neighbor_sum[b] / big_t;
        if (prod > 1e150) {
          logs += std::log(prod);
          prod = 1.0;
        }
      }
      lam += 0.5 * (logs + std::log(prod));
    }
    out[a] = lam;
  }
}

}  // namespace detail

/// Penalty of a node with belief `belief` whose neighbors' beliefs sum to
/// `neighbor_sum`, given the current cluster proportions `zbar`.
inline PenaltyTerms penalty_terms(Penalty kind, const Eigen::VectorXd& zbar, int n,
                                  std::span<const double> belief, std::span<const double> neighbor_sum,
                                  const Eigen::MatrixXd* zzbar = nullptr) {
  const int k = static_cast<int>(zbar.size());
  const double nn = n;
  PenaltyTerms p;
  p.lambda = Eigen::VectorXd::Zero(k);
  p.t_excl.resize(k);
  p.T_excl.resize(k, k);
  for (int a = 0; a < k; ++a) p.t_excl[a] = std::max(1.0, nn * zbar[a] - belief[a] + 1.0);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      const double base = zzbar ? nn * nn * (*zzbar)(a, b) : nn * nn * zbar[a] * zbar[b];
      p.T_excl(a, b) = std::max(1.0, base - belief[a] * neighbor_sum[b] + 1.0);
    }
  }
  detail::penalty_lambda(kind, zbar, zzbar, n, belief.data(), neighbor_sum.data(), p.lambda.data());
  return p;
}

/// Mutable state of one BP run: messages, node beliefs, caches and the
/// working parameters over the surviving clusters.
///
/// Messages are stored per slot of DirectedEdges: messages[s] is the
/// distribution mu^{i->j} over z_i for slot s = (i, j). log_incoming[s] caches
/// log(Pi mu^{j->i}) so that node_field(i) = sum over i's slots stays O(K) to
/// read.
struct BeliefState {
  int n = 0;
  int k = 0;
  std::vector<int> active;
  std::vector<int> removed;
  Params params;
  DirectedEdges slots;
  std::vector<double> messages;
  std::vector<double> log_incoming;
  RowMatrix node_field;
  RowMatrix node_belief;
  /// Σ of neighbor beliefs per node, recomputed at every refresh.
  RowMatrix neighbor_sum;
  Eigen::VectorXd zbar_cache;
  Eigen::MatrixXd zzbar_cache;
  Eigen::VectorXd field;

  bool converged = false;
  int sweeps = 0;
  double last_delta = std::numeric_limits<double>::infinity();
  /// Largest |incremental - recomputed| zbar difference seen at a sweep boundary.
  double max_zbar_drift = 0.0;
  BiclusterMass bicluster_mass = BiclusterMass::kProportions;
  /// Per-update scratch (4K doubles); contents are meaningless between updates.
  std::vector<double> scratch;

  int k_active() const { return k; }
  std::span<double> message(std::size_t slot) { return {messages.data() + slot * k, static_cast<std::size_t>(k)}; }
  std::span<const double> message(std::size_t slot) const {
    return {messages.data() + slot * k, static_cast<std::size_t>(k)};
  }
  std::span<const double> belief(int i) const { return {node_belief.row(i).data(), static_cast<std::size_t>(k)}; }
};

namespace detail {

/// Edge statistic used as the T baseline, or null for proportions. Falls back
/// to proportions while the cache does not match the cluster count.
inline const Eigen::MatrixXd* bicluster_baseline(const BeliefState& s) {
  if (s.bicluster_mass != BiclusterMass::kEdges || s.zzbar_cache.rows() != s.k) return nullptr;
  return &s.zzbar_cache;
}

inline void normalize_logits(std::span<double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) {
    throw std::domain_error("all message components are -inf");
  }
  double total = 0.0;
  for (double& x : v) {
    x = std::exp(x - top);
    total += x;
  }
  for (double& x : v) x /= total;
}

/// out = log(Pi_clamped * mu).
inline void log_pi_times(const Eigen::MatrixXd& pi, std::span<const double> mu, std::span<double> out) {
  const int k = static_cast<int>(mu.size());
  for (int a = 0; a < k; ++a) {
    double s = 0.0;
    for (int b = 0; b < k; ++b) s += clamp_prob(pi(a, b)) * mu[b];
    out[a] = std::log(s);
  }
}

/// Pairwise belief on an edge: B ∝ Pi ∘ (mu_a mu_b^T).
inline void pair_belief(const Eigen::MatrixXd& pi, std::span<const double> mu_a, std::span<const double> mu_b,
                        Eigen::MatrixXd& out) {
  const int k = static_cast<int>(mu_a.size());
  out.resize(k, k);
  double total = 0.0;
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      const double v = clamp_prob(pi(a, b)) * mu_a[a] * mu_b[b];
      out(a, b) = v;
      total += v;
    }
  }
  out /= total;
}

inline bool is_simplex(std::span<const double> v, double tol = 1e-9) {
  double s = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) return false;
    s += x;
  }
  return std::abs(s - 1.0) <= tol;
}

}  // namespace detail

/// Penalty for node j under the state's current beliefs and proportions.
inline PenaltyTerms compute_penalty(const BeliefState& state, Penalty kind, int j) {
  return penalty_terms(kind, state.zbar_cache, state.n, state.belief(j),
                       {state.neighbor_sum.row(j).data(), static_cast<std::size_t>(state.k)},
                       detail::bicluster_baseline(state));
}

/// Recomputes every cache from the messages: incoming logs, node fields, node
/// beliefs, neighbor sums and both moment caches. Records the drift between
/// the incremental zbar and the recomputed one.
inline void refresh_state(const Graph& g, BeliefState& s, Penalty kind) {
  const int k = s.k;
  const int n = s.n;
  s.log_incoming.assign(s.slots.size() * k, 0.0);
  s.node_field = RowMatrix::Zero(n, k);
  for (int i = 0; i < n; ++i) {
    for (std::size_t slot = s.slots.offset[i]; slot < s.slots.offset[i + 1]; ++slot) {
      std::span<double> out(s.log_incoming.data() + slot * k, static_cast<std::size_t>(k));
      detail::log_pi_times(s.params.pi, s.message(s.slots.reverse[slot]), out);
      for (int a = 0; a < k; ++a) s.node_field(i, a) += out[a];
    }
  }

  if (s.zbar_cache.size() == k && s.node_belief.rows() == n && s.node_belief.cols() == k) {
    const Eigen::VectorXd current = s.node_belief.colwise().sum().transpose() / static_cast<double>(n);
    s.max_zbar_drift = std::max(s.max_zbar_drift, (s.zbar_cache - current).cwiseAbs().maxCoeff());
  }

  // Beliefs use the penalty evaluated at the previous beliefs.
  std::vector<double> row(static_cast<std::size_t>(k));
  std::vector<double> lambda(static_cast<std::size_t>(k));
  const Eigen::MatrixXd* baseline = detail::bicluster_baseline(s);
  RowMatrix fresh(n, k);
  for (int i = 0; i < n; ++i) {
    detail::penalty_lambda(kind, s.zbar_cache, baseline, n, s.node_belief.row(i).data(),
                           s.neighbor_sum.row(i).data(), lambda.data());
    for (int a = 0; a < k; ++a) {
      row[a] = std::log(clamp_prob(s.params.gamma[a])) + s.field[a] + s.node_field(i, a) - lambda[a];
    }
    detail::normalize_logits(row);
    for (int a = 0; a < k; ++a) fresh(i, a) = row[a];
  }
  s.node_belief = std::move(fresh);

  s.zbar_cache = s.node_belief.colwise().sum().transpose() / static_cast<double>(n);
  s.field = external_field(s.params, s.zbar_cache, n);

  s.neighbor_sum = RowMatrix::Zero(n, k);
  for (int i = 0; i < n; ++i) {
    for (std::size_t slot = s.slots.offset[i]; slot < s.slots.offset[i + 1]; ++slot) {
      s.neighbor_sum.row(i) += s.node_belief.row(s.slots.target[slot]);
    }
  }

  const double n2 = static_cast<double>(n) * n;
  s.zzbar_cache = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd b;
  const auto& edges = g.edges();
  for (std::size_t u = 0; u < edges.size(); ++u) {
    if (edges[u].is_self_loop()) {
      s.zzbar_cache.diagonal() += 2.0 * s.node_belief.row(edges[u].first).transpose();
      continue;
    }
    const std::size_t slot = s.slots.edge_slot[u];
    detail::pair_belief(s.params.pi, s.message(slot), s.message(s.slots.reverse[slot]), b);
    s.zzbar_cache += b + b.transpose();
  }
  s.zzbar_cache /= n2;
}

/// Builds a state whose messages and beliefs mix a point mass on `labels`
/// (weight `label_weight`) with normalized uniform draws. Pass empty labels
/// for purely random initialization.
inline BeliefState make_belief_state(const Graph& g, const Params& params, std::span<const int> labels,
                                     std::uint64_t seed, double label_weight = 0.5,
                                     Penalty kind = Penalty::kNone) {
  params.validate();
  BeliefState s;
  s.n = g.num_nodes();
  s.k = params.k();
  if (!labels.empty()) check_labels(labels, s.n, s.k);
  s.active.resize(s.k);
  for (int a = 0; a < s.k; ++a) s.active[a] = a;
  s.params = params;
  s.slots = DirectedEdges::build(g);
  Rng rng = Rng(seed).fork(11);

  auto draw = [&](std::span<double> out, int label) {
    double total = 0.0;
    for (double& x : out) {
      x = rng.uniform() + 1e-3;
      total += x;
    }
    const double w = label >= 0 ? label_weight : 0.0;
    for (double& x : out) x = (1.0 - w) * x / total;
    if (label >= 0) out[label] += w;
  };

  s.messages.resize(s.slots.size() * s.k);
  for (int i = 0; i < s.n; ++i) {
    for (std::size_t slot = s.slots.offset[i]; slot < s.slots.offset[i + 1]; ++slot) {
      draw(s.message(slot), labels.empty() ? -1 : labels[i]);
    }
  }
  s.node_belief.resize(s.n, s.k);
  std::vector<double> row(static_cast<std::size_t>(s.k));
  for (int i = 0; i < s.n; ++i) {
    draw(row, labels.empty() ? -1 : labels[i]);
    for (int a = 0; a < s.k; ++a) s.node_belief(i, a) = row[a];
  }
  s.zbar_cache = s.node_belief.colwise().sum().transpose() / static_cast<double>(s.n);
  s.field = external_field(s.params, s.zbar_cache, s.n);
  s.neighbor_sum = RowMatrix::Zero(s.n, s.k);
  for (int i = 0; i < s.n; ++i) {
    for (std::size_t slot = s.slots.offset[i]; slot < s.slots.offset[i + 1]; ++slot) {
      s.neighbor_sum.row(i) += s.node_belief.row(s.slots.target[slot]);
    }
  }
  refresh_state(g, s, kind);
  s.max_zbar_drift = 0.0;
  return s;
}

namespace detail {

/// Writes the candidate message for `slot` into `msg` and, if non-null, the
/// sender's new belief into `belief`. `lambda` is subtracted in the exponent.
inline void message_into(const BeliefState& s, std::size_t slot, const double* lambda, double* msg, double* belief) {
  const int k = s.k;
  const int i = s.slots.source(slot);
  const double* incoming = s.log_incoming.data() + slot * k;
  for (int a = 0; a < k; ++a) {
    const double base = std::log(clamp_prob(s.params.gamma[a])) + s.field[a] + s.node_field(i, a) - lambda[a];
    if (belief) belief[a] = base;
    msg[a] = base - incoming[a];
  }
  try {
    normalize_logits({msg, static_cast<std::size_t>(k)});
    if (belief) normalize_logits({belief, static_cast<std::size_t>(k)});
  } catch (const std::domain_error&) {
    throw MessageUnderflow(i, s.slots.target[slot]);
  }
}

}  // namespace detail

/// Candidate message mu^{i->j} for `slot` = (i, j) with penalty `lambda`
/// subtracted in the exponent; also returns node i's new belief in `belief_out`.
inline std::vector<double> compute_message(const BeliefState& s, std::size_t slot, const Eigen::VectorXd& lambda,
                                           std::vector<double>* belief_out = nullptr) {
  std::vector<double> msg(static_cast<std::size_t>(s.k));
  if (belief_out) belief_out->resize(static_cast<std::size_t>(s.k));
  detail::message_into(s, slot, lambda.data(), msg.data(), belief_out ? belief_out->data() : nullptr);
  return msg;
}

/// Sum-product message with the sparse external field.
inline std::vector<double> update_message_standard(const BeliefState& s, std::size_t slot) {
  return compute_message(s, slot, Eigen::VectorXd::Zero(s.k));
}

/// Message with the sending node's F2IC penalty subtracted in the exponent.
inline std::vector<double> update_message_fab(const BeliefState& s, std::size_t slot) {
  const int i = s.slots.source(slot);
  return compute_message(s, slot, compute_penalty(s, Penalty::kFab, i).lambda);
}

/// Removes local cluster column `c` from every message, belief and cache and
/// from the working parameters, then renormalizes and refreshes.
inline void prune_cluster(const Graph& g, BeliefState& s, int c, Penalty kind) {
  if (s.k <= 1) throw std::logic_error("prune_cluster: cannot remove the last cluster");
  const int k = s.k;
  const int k2 = k - 1;
  auto shrink = [&](std::span<const double> in, std::span<double> out) {
    double total = 0.0;
    for (int a = 0, b = 0; a < k; ++a) {
      if (a == c) continue;
      out[b] = in[a];
      total += in[a];
      ++b;
    }
    if (total > 0.0) {
      for (double& x : out) x /= total;
    } else {
      for (double& x : out) x = 1.0 / k2;
    }
  };
  std::vector<double> msgs(s.slots.size() * k2);
  for (std::size_t slot = 0; slot < s.slots.size(); ++slot) {
    shrink(s.message(slot), {msgs.data() + slot * k2, static_cast<std::size_t>(k2)});
  }
  RowMatrix beliefs(s.n, k2);
  for (int i = 0; i < s.n; ++i) shrink(s.belief(i), {beliefs.row(i).data(), static_cast<std::size_t>(k2)});

  std::vector<int> keep;
  for (int a = 0; a < k; ++a)
    if (a != c) keep.push_back(a);
  Params p;
  p.gamma.resize(k2);
  p.pi.resize(k2, k2);
  for (int a = 0; a < k2; ++a) {
    p.gamma[a] = s.params.gamma[keep[a]];
    for (int b = 0; b < k2; ++b) p.pi(a, b) = s.params.pi(keep[a], keep[b]);
  }
  const double gsum = p.gamma.sum();
  if (gsum > 0.0) p.gamma /= gsum;
  else p.gamma.setConstant(1.0 / k2);

  if (s.zzbar_cache.rows() == k) {
    Eigen::MatrixXd zz(k2, k2);
    for (int a = 0; a < k2; ++a)
      for (int b = 0; b < k2; ++b) zz(a, b) = s.zzbar_cache(keep[a], keep[b]);
    s.zzbar_cache = std::move(zz);
  }

  s.removed.push_back(s.active[c]);
  s.active.erase(s.active.begin() + c);
  s.params = std::move(p);
  s.messages = std::move(msgs);
  s.node_belief = std::move(beliefs);
  s.k = k2;
  s.zbar_cache = s.node_belief.colwise().sum().transpose() / static_cast<double>(s.n);
  s.field = external_field(s.params, s.zbar_cache, s.n);
  s.neighbor_sum = RowMatrix::Zero(s.n, k2);
  for (int i = 0; i < s.n; ++i) {
    for (std::size_t slot = s.slots.offset[i]; slot < s.slots.offset[i + 1]; ++slot) {
      s.neighbor_sum.row(i) += s.node_belief.row(s.slots.target[slot]);
    }
  }
  refresh_state(g, s, kind);
}

/// Index of a cluster to prune (below threshold and not the largest), or -1.
inline int prune_candidate(const BeliefState& s, double threshold) {
  if (s.k <= 1) return -1;
  Eigen::Index largest = 0;
  s.zbar_cache.maxCoeff(&largest);
  const double cut = threshold / static_cast<double>(s.n);
  int worst = -1;
  for (int a = 0; a < s.k; ++a) {
    if (a == largest) continue;
    if (s.zbar_cache[a] < cut && (worst < 0 || s.zbar_cache[a] < s.zbar_cache[worst])) worst = a;
  }
  return worst;
}

/// Applies one message update on `slot` and all incremental cache updates.
/// Returns the L1 change of the message.
inline double apply_update(const Graph& g, BeliefState& s, std::size_t slot, const BpOptions& opts) {
  const int k = s.k;
  const int i = s.slots.source(slot);
  const std::size_t rev = s.slots.reverse[slot];
  const int j = s.slots.target[slot];

  s.scratch.resize(static_cast<std::size_t>(4 * k));
  double* lambda = s.scratch.data();
  double* msg = lambda + k;
  double* belief = msg + k;
  double* fresh = belief + k;

  detail::penalty_lambda(opts.penalty, s.zbar_cache, detail::bicluster_baseline(s), s.n,
                         s.node_belief.row(i).data(), s.neighbor_sum.row(i).data(), lambda);
  detail::message_into(s, slot, lambda, msg, belief);
  double* old_msg = s.messages.data() + slot * k;
  if (opts.damping > 0.0) {
    for (int a = 0; a < k; ++a) msg[a] = (1.0 - opts.damping) * msg[a] + opts.damping * old_msg[a];
  }

  double delta = 0.0;
  for (int a = 0; a < k; ++a) delta += std::abs(msg[a] - old_msg[a]);

  // Pairwise-moment cache for the undirected edge: B ∝ Pi ∘ (mu_slot mu_rev^T).
  const double n2 = static_cast<double>(s.n) * s.n;
  const double* other = s.messages.data() + rev * k;
  double z_old = 0.0, z_new = 0.0;
  for (int a = 0; a < k; ++a) {
    double row = 0.0;
    for (int b = 0; b < k; ++b) row += clamp_prob(s.params.pi(a, b)) * other[b];
    z_old += old_msg[a] * row;
    z_new += msg[a] * row;
  }
  const double c_old = 1.0 / (z_old * n2), c_new = 1.0 / (z_new * n2);
  for (int b = 0; b < k; ++b) {
    for (int a = 0; a < k; ++a) {
      const double d = clamp_prob(s.params.pi(a, b)) * (msg[a] * c_new - old_msg[a] * c_old) * other[b];
      s.zzbar_cache(a, b) += d;
      s.zzbar_cache(b, a) += d;
    }
  }

  std::copy(msg, msg + k, old_msg);

  // Receiver's cached log(Pi mu^{i->j}) and node field.
  detail::log_pi_times(s.params.pi, {old_msg, static_cast<std::size_t>(k)}, {fresh, static_cast<std::size_t>(k)});
  double* cached = s.log_incoming.data() + rev * k;
  for (int a = 0; a < k; ++a) {
    s.node_field(j, a) += fresh[a] - cached[a];
    cached[a] = fresh[a];
  }

  // Node belief, proportion cache and field; `belief` now holds the change.
  // Neighbor sums keep their values from the last refresh.
  for (int a = 0; a < k; ++a) {
    const double d = belief[a] - s.node_belief(i, a);
    s.node_belief(i, a) = belief[a];
    belief[a] = d;
  }
  const double inv_n = 1.0 / static_cast<double>(s.n);
  const bool self_loop = g.has_edge(i, i);
  for (int a = 0; a < k; ++a) {
    s.zbar_cache[a] += belief[a] * inv_n;
    if (self_loop) s.zzbar_cache(a, a) += 2.0 * belief[a] / n2;
    double f = 0.0;
    for (int b = 0; b < k; ++b) f += s.params.pi(a, b) * belief[b];
    s.field[a] -= f;
  }

  if (opts.check_invariants) {
    if (!detail::is_simplex(s.message(slot)) || !detail::is_simplex(s.belief(i))) {
      throw std::logic_error("belief propagation: simplex invariant violated");
    }
  }
  return delta;
}

/// Runs (penalized) BP sweeps until the mean L1 message change over a sweep
/// drops below opts.tol_msg or opts.max_sweeps is reached. Each sweep visits
/// every directed edge once in a fresh random order, prunes clusters whose
/// proportion falls under the threshold, and ends with an exact refresh of
/// all caches.
inline BeliefState& fabbp_run(const Graph& g, BeliefState& s, const BpOptions& opts, Rng& rng) {
  std::vector<std::size_t> order(s.slots.size());
  for (std::size_t t = 0; t < order.size(); ++t) order[t] = t;
  s.converged = false;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t slot : order) {
      total += apply_update(g, s, slot, opts);
      if (opts.prune) {
        const int c = prune_candidate(s, opts.prune_threshold);
        if (c >= 0) prune_cluster(g, s, c, opts.penalty);
      }
    }
    refresh_state(g, s, opts.penalty);
    if (opts.prune) {
      for (int c = prune_candidate(s, opts.prune_threshold); c >= 0; c = prune_candidate(s, opts.prune_threshold)) {
        prune_cluster(g, s, c, opts.penalty);
      }
    }
    ++s.sweeps;
    s.last_delta = order.empty() ? 0.0 : total / static_cast<double>(order.size());
    assert(s.k >= 1);
    if (s.last_delta < opts.tol_msg) {
      s.converged = true;
      break;
    }
  }
  return s;
}

/// Node and pairwise beliefs of a state, aligned with Graph::edges().
inline Beliefs state_beliefs(const Graph& g, const BeliefState& s) {
  Beliefs q;
  q.node = s.node_belief;
  const auto& edges = g.edges();
  q.edge.resize(edges.size());
  for (std::size_t u = 0; u < edges.size(); ++u) {
    if (edges[u].is_self_loop()) {
      q.edge[u] = Eigen::MatrixXd(s.node_belief.row(edges[u].first).transpose().asDiagonal());
      continue;
    }
    const std::size_t slot = s.slots.edge_slot[u];
    detail::pair_belief(s.params.pi, s.message(slot), s.message(s.slots.reverse[slot]), q.edge[u]);
  }
  return q;
}

inline Moments state_moments(const Graph& g, const BeliefState& s) {
  return moments_from_beliefs(g, state_beliefs(g, s));
}

/// Argmax of each node belief; ties go to the lowest index.
inline std::vector<int> map_assignment(const RowMatrix& beliefs) {
  std::vector<int> z(static_cast<std::size_t>(beliefs.rows()));
  for (Eigen::Index i = 0; i < beliefs.rows(); ++i) {
    int best = 0;
    for (Eigen::Index a = 1; a < beliefs.cols(); ++a) {
      if (beliefs(i, a) > beliefs(i, best)) best = static_cast<int>(a);
    }
    z[i] = best;
  }
  return z;
}

/// Replaces the working parameters (same cluster count) and refreshes caches.
inline void set_params(const Graph& g, BeliefState& s, Params params, Penalty kind) {
  if (params.k() != s.k) throw std::invalid_argument("set_params: cluster count mismatch");
  s.params = std::move(params);
  s.field = external_field(s.params, s.zbar_cache, s.n);
  refresh_state(g, s, kind);
}

}  // namespace f2ab
