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

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "f2ab/graph.hpp"

namespace f2ab {

/// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before logs
/// wherever a finite value is required.
inline constexpr double kProbClamp = 1e-12;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Mean-space parameters: cluster proportions and the symmetric affinity matrix.
struct Params {
  Eigen::VectorXd gamma;
  Eigen::MatrixXd pi;

  int k() const { return static_cast<int>(gamma.size()); }

  void validate() const {
    check_simplex(gamma, "params");
    check_affinity(pi, gamma.size(), "params");
  }
};

/// Natural parameters. eta has K-1 entries (component K is the anchor with
/// eta_K = 0); theta holds the logits of pi.
struct NaturalParams {
  Eigen::VectorXd eta;
  Eigen::MatrixXd theta;

  int k() const { return static_cast<int>(theta.rows()); }
};

/// Expected sufficient statistics under a distribution over assignments.
///
/// zzbar follows the bicluster statistic normalized by n^2, so diagonal
/// entries hold twice the expected edge count of the bicluster. The M-step
/// denominator is zbar zbar^T + diag(zbar)/n + pair_offset; pair_offset is
/// zero for hard assignments on unmasked graphs and otherwise corrects the
/// expected pair count for soft self-pairs, edge correlations and masking.
struct Moments {
  Eigen::VectorXd zbar;
  Eigen::MatrixXd zzbar;
  Eigen::MatrixXd pair_offset;
  int n = 0;

  int k() const { return static_cast<int>(zbar.size()); }

  Eigen::MatrixXd pair_mass() const {
    Eigen::MatrixXd d = zbar * zbar.transpose();
    d.diagonal() += zbar / static_cast<double>(n);
    if (pair_offset.size() != 0) d += pair_offset;
    return d;
  }
};

/// Diagonal Fisher blocks of -log p(X, Z | theta, eta) at the ML parameters.
/// f_theta is ordered (0,0), (0,1), ..., (0,K-1), (1,1), ...
struct HessianBlocks {
  Eigen::VectorXd f_theta;
  Eigen::MatrixXd f_eta;
};

/// Soft assignment summary: node marginals (n x K) and, for every entry of
/// Graph::edges(), the pairwise marginal P(z_first = k, z_second = l).
struct Beliefs {
  RowMatrix node;
  std::vector<Eigen::MatrixXd> edge;
};

class SingularBlockError : public std::runtime_error {
 public:
  SingularBlockError(int cluster)
      : std::runtime_error("singular Hessian block: cluster " + std::to_string(cluster) + " is empty"),
        cluster_(cluster) {}
  int cluster() const { return cluster_; }

 private:
  int cluster_;
};

/// x * log(y) with 0 * log(0) = 0.
inline double xlogy(double x, double y) {
  if (x == 0.0) return 0.0;
  if (y <= 0.0) return -std::numeric_limits<double>::infinity();
  return x * std::log(y);
}

inline double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

inline double logit(double p) { return std::log(p) - std::log1p(-p); }
inline double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// ---------------------------------------------------------------------------
// Hard-assignment statistics

/// Per-bicluster edge and pair counts of a hard assignment (symmetric K x K).
/// Masked pairs are excluded from both.
struct BlockCounts {
  Eigen::VectorXd sizes;
  Eigen::MatrixXd edges;
  Eigen::MatrixXd pairs;
};

inline void check_labels(std::span<const int> labels, int n, int k) {
  if (static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("labels: length " + std::to_string(labels.size()) +
                                " does not match node count " + std::to_string(n));
  }
  for (int z : labels) {
    if (z < 0 || z >= k) throw std::invalid_argument("labels: cluster index out of range");
  }
}

inline BlockCounts count_blocks(const Graph& g, std::span<const int> labels, int k) {
  check_labels(labels, g.num_nodes(), k);
  BlockCounts c;
  c.sizes = Eigen::VectorXd::Zero(k);
  c.edges = Eigen::MatrixXd::Zero(k, k);
  for (int z : labels) c.sizes[z] += 1.0;
  for (const auto& e : g.edges()) {
    const int a = labels[e.first], b = labels[e.second];
    c.edges(a, b) += 1.0;
    if (a != b) c.edges(b, a) += 1.0;
  }
  c.pairs = c.sizes * c.sizes.transpose();
  for (int a = 0; a < k; ++a) c.pairs(a, a) = 0.5 * c.sizes[a] * (c.sizes[a] + 1.0);
  for (const auto& p : g.masked_pairs()) {
    const int a = labels[p.i], b = labels[p.j];
    c.pairs(a, b) -= 1.0;
    if (a != b) c.pairs(b, a) -= 1.0;
  }
  return c;
}

/// log p(X, Z | pi, gamma) for a hard assignment. Returns -infinity when a
/// zero or unit probability contradicts an observation.
inline double joint_log_likelihood(const Graph& g, std::span<const int> labels, const Params& params) {
  const int k = params.k();
  const BlockCounts c = count_blocks(g, labels, k);
  double ll = 0.0;
  for (int a = 0; a < k; ++a) {
    ll += xlogy(c.sizes[a], params.gamma[a]);
    for (int b = a; b < k; ++b) {
      ll += xlogy(c.edges(a, b), params.pi(a, b)) + xlogy(c.pairs(a, b) - c.edges(a, b), 1.0 - params.pi(a, b));
    }
  }
  return ll;
}

/// Sufficient statistics of a hard assignment.
inline Moments hard_moments(const Graph& g, std::span<const int> labels, int k) {
  const BlockCounts c = count_blocks(g, labels, k);
  const double n = g.num_nodes();
  const double n2 = n * n;
  Moments m;
  m.n = g.num_nodes();
  m.zbar = c.sizes / n;
  m.zzbar = c.edges / n2;
  m.zzbar.diagonal() *= 2.0;
  // Exact pair counts differ from the zbar form only through masking.
  Eigen::MatrixXd exact = c.pairs / n2;
  exact.diagonal() *= 2.0;
  Eigen::MatrixXd base = m.zbar * m.zbar.transpose();
  base.diagonal() += m.zbar / n;
  m.pair_offset = exact - base;
  return m;
}

/// Expected sufficient statistics under a belief factorization: pairwise
/// beliefs on edges, products of node beliefs on every other pair, and
/// delta_kl * b_ik on self-pairs.
inline Moments moments_from_beliefs(const Graph& g, const Beliefs& q) {
  const int n = g.num_nodes();
  const int k = static_cast<int>(q.node.cols());
  if (q.node.rows() != n) throw std::invalid_argument("beliefs: node rows do not match graph");
  if (q.edge.size() != g.num_edges()) throw std::invalid_argument("beliefs: edge count mismatch");

  const Eigen::VectorXd s = q.node.colwise().sum().transpose();
  Eigen::MatrixXd zz = Eigen::MatrixXd::Zero(k, k);
  Eigen::MatrixXd offset = Eigen::MatrixXd::Zero(k, k);
  offset.diagonal() += s;
  offset.noalias() -= q.node.transpose() * q.node;

  const auto& edges = g.edges();
  for (std::size_t t = 0; t < edges.size(); ++t) {
    const auto& e = edges[t];
    if (e.is_self_loop()) {
      zz.diagonal() += 2.0 * q.node.row(e.first).transpose();
      continue;
    }
    const Eigen::MatrixXd& b = q.edge[t];
    zz += b + b.transpose();
    const Eigen::VectorXd bi = q.node.row(e.first).transpose();
    const Eigen::VectorXd bj = q.node.row(e.second).transpose();
    offset += b + b.transpose() - bi * bj.transpose() - bj * bi.transpose();
  }
  for (const auto& p : g.masked_pairs()) {
    const Eigen::VectorXd bi = q.node.row(p.i).transpose();
    if (p.i == p.j) {
      offset.diagonal() -= 2.0 * bi;
    } else {
      const Eigen::VectorXd bj = q.node.row(p.j).transpose();
      offset -= bi * bj.transpose() + bj * bi.transpose();
    }
  }
  const double n2 = static_cast<double>(n) * n;
  Moments m;
  m.n = n;
  m.zbar = s / static_cast<double>(n);
  m.zzbar = zz / n2;
  m.pair_offset = offset / n2;
  return m;
}

/// Point-mass beliefs for a hard assignment.
inline Beliefs hard_beliefs(const Graph& g, std::span<const int> labels, int k) {
  check_labels(labels, g.num_nodes(), k);
  Beliefs q;
  q.node = RowMatrix::Zero(g.num_nodes(), k);
  for (int i = 0; i < g.num_nodes(); ++i) q.node(i, labels[i]) = 1.0;
  q.edge.reserve(g.num_edges());
  for (const auto& e : g.edges()) {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(k, k);
    if (e.is_self_loop()) {
      b(labels[e.first], labels[e.first]) = 1.0;
    } else {
      b(labels[e.first], labels[e.second]) = 1.0;
    }
    q.edge.push_back(std::move(b));
  }
  return q;
}

/// E_q[log p(X, Z | pi, gamma)] expressed through the moments of q.
inline double expected_joint_log_likelihood(const Moments& m, const Params& params) {
  const int k = m.k();
  if (params.k() != k) throw std::invalid_argument("expected log-likelihood: dimension mismatch");
  const double n = m.n;
  const Eigen::MatrixXd d = m.pair_mass();
  double ll = 0.0;
  for (int a = 0; a < k; ++a) {
    ll += n * xlogy(m.zbar[a], params.gamma[a]);
    for (int b = a; b < k; ++b) {
      const double scale = n * n / (a == b ? 2.0 : 1.0);
      const double edges = scale * m.zzbar(a, b);
      const double non_edges = std::max(0.0, scale * (d(a, b) - m.zzbar(a, b)));
      ll += xlogy(edges, params.pi(a, b)) + xlogy(non_edges, 1.0 - params.pi(a, b));
    }
  }
  return ll;
}

inline double expected_joint_log_likelihood(const Graph& g, const Beliefs& q, const Params& params) {
  return expected_joint_log_likelihood(moments_from_beliefs(g, q), params);
}

// ---------------------------------------------------------------------------
// M-step and parameter maps

struct MStepResult {
  Params params;
  /// Clusters with zbar_k == 0; their pi rows and columns hold kProbClamp.
  std::vector<int> empty_clusters;
};

/// Closed-form maximizer of the expected joint log-likelihood:
/// gamma = zbar, pi = zzbar / pair_mass elementwise, clamped into [0, 1].
inline MStepResult m_step(const Moments& m) {
  const int k = m.k();
  MStepResult out;
  out.params.gamma = m.zbar;
  out.params.pi = Eigen::MatrixXd::Constant(k, k, kProbClamp);
  for (int a = 0; a < k; ++a) {
    if (!(m.zbar[a] > 0.0)) out.empty_clusters.push_back(a);
  }
  const Eigen::MatrixXd d = m.pair_mass();
  for (int a = 0; a < k; ++a) {
    if (!(m.zbar[a] > 0.0)) continue;
    for (int b = a; b < k; ++b) {
      if (!(m.zbar[b] > 0.0)) continue;
      double p = d(a, b) > 0.0 ? 0.5 * (m.zzbar(a, b) + m.zzbar(b, a)) / d(a, b) : 0.0;
      p = std::clamp(p, 0.0, 1.0);
      out.params.pi(a, b) = p;
      out.params.pi(b, a) = p;
    }
  }
  return out;
}

struct NaturalMapResult {
  NaturalParams natural;
  bool clamped = false;
};

/// theta = logit(pi); eta_k = log(gamma_k / gamma_K) for k < K. Boundary
/// values are clamped into [kProbClamp, 1 - kProbClamp] and reported.
inline NaturalMapResult natural_from_mean(const Params& params) {
  const int k = params.k();
  NaturalMapResult out;
  out.natural.theta.resize(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      const double p = params.pi(a, b);
      const double c = clamp_prob(p);
      if (c != p) out.clamped = true;
      out.natural.theta(a, b) = logit(c);
    }
  }
  Eigen::VectorXd g = params.gamma;
  for (int a = 0; a < k; ++a) {
    const double c = clamp_prob(g[a]);
    if (c != g[a] && !(k == 1 && g[a] == 1.0)) out.clamped = true;
    g[a] = c;
  }
  out.natural.eta.resize(k - 1);
  for (int a = 0; a + 1 < k; ++a) out.natural.eta[a] = std::log(g[a]) - std::log(g[k - 1]);
  return out;
}

/// pi = sigmoid(theta); gamma = softmax(eta, 0).
inline Params mean_from_natural(const NaturalParams& nat) {
  const int k = nat.k();
  if (nat.eta.size() != k - 1) throw std::invalid_argument("natural params: eta must have K-1 entries");
  Params p;
  p.pi.resize(k, k);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) p.pi(a, b) = sigmoid(nat.theta(a, b));
  double top = 0.0;
  for (int a = 0; a + 1 < k; ++a) top = std::max(top, nat.eta[a]);
  p.gamma.resize(k);
  double total = 0.0;
  for (int a = 0; a < k; ++a) {
    const double e = a + 1 < k ? nat.eta[a] : 0.0;
    p.gamma[a] = std::exp(e - top);
    total += p.gamma[a];
  }
  p.gamma /= total;
  return p;
}

/// Fisher blocks of a hard assignment: f_theta(k,l) = Mbar_kl pi_kl (1 - pi_kl)
/// with Mbar_kl = (n^2/2) zbar_k (zbar_l + [k=l]/n), and
/// f_eta = n (diag(gamma_<K) - gamma_<K gamma_<K^T).
inline HessianBlocks hessian_blocks(std::span<const int> labels, const Params& params, int n) {
  const int k = params.k();
  check_labels(labels, n, k);
  Eigen::VectorXd zbar = Eigen::VectorXd::Zero(k);
  for (int z : labels) zbar[z] += 1.0;
  zbar /= static_cast<double>(n);
  for (int a = 0; a < k; ++a) {
    if (zbar[a] == 0.0) throw SingularBlockError(a);
  }
  HessianBlocks h;
  h.f_theta.resize(k * (k + 1) / 2);
  const double nn = n;
  int idx = 0;
  for (int a = 0; a < k; ++a) {
    for (int b = a; b < k; ++b) {
      const double mbar = 0.5 * nn * nn * zbar[a] * (zbar[b] + (a == b ? 1.0 / nn : 0.0));
      const double p = params.pi(a, b);
      h.f_theta[idx++] = mbar * p * (1.0 - p);
    }
  }
  const Eigen::VectorXd g = params.gamma.head(k - 1);
  h.f_eta = nn * (Eigen::MatrixXd(g.asDiagonal()) - g * g.transpose());
  return h;
}

}  // namespace f2ab
