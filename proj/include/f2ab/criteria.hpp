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
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "f2ab/graph.hpp"
#include "f2ab/model.hpp"

namespace f2ab {

// ---------------------------------------------------------------------------
// Penalty terms of the F2IC lower bound

/// ½ Σ_k log(zbar_k + 1/n)
inline double r1_tilde(const Eigen::VectorXd& zbar, int n) {
  const double inv = 1.0 / static_cast<double>(n);
  double r = 0.0;
  for (double z : zbar) r += std::log(z + inv);
  return 0.5 * r;
}

/// ½ Σ_{k<=l} log(zzbar_kl + 1/n²)
inline double r2_tilde(const Eigen::MatrixXd& zzbar, int n) {
  const double inv = 1.0 / (static_cast<double>(n) * n);
  double r = 0.0;
  for (Eigen::Index a = 0; a < zzbar.rows(); ++a)
    for (Eigen::Index b = a; b < zzbar.cols(); ++b) r += std::log(zzbar(a, b) + inv);
  return 0.5 * r;
}

/// (K-1)/2 log n + K(K+1)/4 log(n(n+1)/2)
inline double ell_tilde(int n, int k) {
  const double nn = n;
  return 0.5 * (k - 1) * std::log(nn) + 0.25 * k * (k + 1) * std::log(0.5 * nn * (nn + 1.0));
}

namespace detail {
inline double entropy_of(const double* p, Eigen::Index size) {
  double h = 0.0;
  for (Eigen::Index a = 0; a < size; ++a) h -= xlogy(p[a], p[a]);
  return h;
}
}  // namespace detail

/// Bethe entropy: Σ_edges H(B_ij) + Σ_i (1 - deg_i) H(b_i), with self-loops
/// ignored (they carry no pairwise belief). Not guaranteed nonnegative on
/// loopy graphs.
inline double bethe_entropy(const Graph& g, const Beliefs& q) {
  const int n = g.num_nodes();
  std::vector<int> degree(static_cast<std::size_t>(n), 0);
  double h = 0.0;
  const auto& edges = g.edges();
  for (std::size_t u = 0; u < edges.size(); ++u) {
    if (edges[u].is_self_loop()) continue;
    ++degree[edges[u].first];
    ++degree[edges[u].second];
    const Eigen::MatrixXd& b = q.edge[u];
    h += detail::entropy_of(b.data(), b.size());
  }
  for (int i = 0; i < n; ++i) {
    h += (1.0 - degree[i]) * detail::entropy_of(q.node.row(i).data(), q.node.cols());
  }
  return h;
}

// ---------------------------------------------------------------------------
// Criteria

struct CriterionReport {
  double ffic_lb = 0.0;
  double fic = 0.0;
  double icl = 0.0;
  double cicl = 0.0;
  double entropy = 0.0;
  double expected_ll = 0.0;
  double r1_tilde = 0.0;
  double r2_tilde = 0.0;
  double ell_tilde = 0.0;
  bool entropy_negative = false;
  bool non_converged = false;
};

/// E_q[log p(X,Z|EML)] - R̃1 - R̃2 - ℓ̃ + H(q). `params` should be the M-step
/// output for q.
inline double ffic_lower_bound(const Graph& g, const Beliefs& q, const Params& params) {
  const Moments m = moments_from_beliefs(g, q);
  const int n = g.num_nodes();
  return expected_joint_log_likelihood(m, params) - r1_tilde(m.zbar, n) - r2_tilde(m.zzbar, n) -
         ell_tilde(n, m.k()) + bethe_entropy(g, q);
}

/// E_q[log p(X,Z|EML)] - K(K+1)/2 R̃1 - ℓ̃ + H(q).
inline double fic_value(const Graph& g, const Beliefs& q, const Params& params) {
  const Moments m = moments_from_beliefs(g, q);
  const int n = g.num_nodes();
  const int k = m.k();
  return expected_joint_log_likelihood(m, params) - 0.5 * k * (k + 1) * r1_tilde(m.zbar, n) - ell_tilde(n, k) +
         bethe_entropy(g, q);
}

/// Log-likelihood of the MAP assignment at that assignment's ML parameters,
/// minus ℓ̃. Hard plug-in of the expected assignment.
inline double icl_value(const Graph& g, std::span<const int> map_labels, int k) {
  const Params ml = m_step(hard_moments(g, map_labels, k)).params;
  return joint_log_likelihood(g, map_labels, ml) - ell_tilde(g.num_nodes(), k);
}

/// E_q[log p(X,Z|EML)] + H(q) - ℓ̃, meant for unpenalized BP beliefs.
inline double cicl_value(const Graph& g, const Beliefs& q, const Params& params) {
  const Moments m = moments_from_beliefs(g, q);
  return expected_joint_log_likelihood(m, params) + bethe_entropy(g, q) - ell_tilde(g.num_nodes(), m.k());
}

/// All criteria for beliefs q with EML parameters `params`.
inline CriterionReport evaluate_criteria(const Graph& g, const Beliefs& q, const Params& params,
                                         std::span<const int> map_labels) {
  CriterionReport r;
  const Moments m = moments_from_beliefs(g, q);
  const int n = g.num_nodes();
  const int k = m.k();
  r.expected_ll = expected_joint_log_likelihood(m, params);
  r.entropy = bethe_entropy(g, q);
  r.entropy_negative = r.entropy < 0.0;
  r.r1_tilde = r1_tilde(m.zbar, n);
  r.r2_tilde = r2_tilde(m.zzbar, n);
  r.ell_tilde = ell_tilde(n, k);
  r.ffic_lb = r.expected_ll - r.r1_tilde - r.r2_tilde - r.ell_tilde + r.entropy;
  r.fic = r.expected_ll - 0.5 * k * (k + 1) * r.r1_tilde - r.ell_tilde + r.entropy;
  r.cicl = r.expected_ll + r.entropy - r.ell_tilde;
  r.icl = icl_value(g, map_labels, k);
  return r;
}

// ---------------------------------------------------------------------------
// Joint marginal p(X, Z): closed form and asymptotic expansion

struct ExactJointMarginal {
  double value = 0.0;
  /// True when some occupied bicluster has no edges or only edges, or some
  /// cluster is empty; the improper prior makes those integrals diverge.
  bool divergent = false;
};

inline double log_beta(double a, double b) { return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b); }

/// log p(X, Z) under uniform priors on the natural parameters:
/// Σ_{k<=l} log B(e_kl, c_kl - e_kl) + Σ_k log Γ(n_k) - log Γ(n).
inline ExactJointMarginal exact_joint_marginal(const Graph& g, std::span<const int> labels, int k) {
  const BlockCounts c = count_blocks(g, labels, k);
  ExactJointMarginal out;
  double v = -std::lgamma(static_cast<double>(g.num_nodes()));
  for (int a = 0; a < k; ++a) {
    if (c.sizes[a] == 0.0) {
      out.divergent = true;
      continue;
    }
    v += std::lgamma(c.sizes[a]);
  }
  for (int a = 0; a < k; ++a) {
    for (int b = a; b < k; ++b) {
      if (c.sizes[a] == 0.0 || c.sizes[b] == 0.0) continue;
      const double e = c.edges(a, b);
      const double non = c.pairs(a, b) - e;
      if (e <= 0.0 || non <= 0.0) {
        out.divergent = true;
        continue;
      }
      v += log_beta(e, non);
    }
  }
  out.value = v;
  return out;
}

/// Terms of the asymptotic expansion log p(X,Z) ≈ F_J(Z) + C for a hard
/// assignment at its ML parameters.
struct JointMarginalTerms {
  double max_ll = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
  double ell_n = 0.0;
  double c_const = 0.0;
  std::vector<int> s_set;
  double m_star = 0.0;
  int k_zbar = 0;
  int k_zz = 0;
  Eigen::MatrixXd m_bar;

  double f_j() const { return max_ll - r1 - r2 - ell_n; }
  double total() const { return f_j() + c_const; }
};

/// Evaluates the expansion. The dimension penalty uses one half log of the
/// pair count per occupied bicluster, matching ℓ̃ at full occupancy. C holds
/// log ½ for each empty bicluster between non-empty clusters and for each
/// empty cluster, plus the Laplace normalizers: ½ log 2π per retained
/// parameter, less ½ log 2 for each off-diagonal bicluster whose Mbar counts
/// half of its pairs.
inline JointMarginalTerms joint_marginal_asymptotic(const Graph& g, std::span<const int> labels, int k) {
  const int n = g.num_nodes();
  const double nn = n;
  const Moments m = hard_moments(g, labels, k);
  const Params ml = m_step(m).params;
  JointMarginalTerms t;
  t.max_ll = joint_log_likelihood(g, labels, ml);
  t.m_bar = Eigen::MatrixXd::Zero(k, k);

  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double min_zbar = std::numeric_limits<double>::infinity();
  for (int a = 0; a < k; ++a) {
    if (m.zbar[a] > 0.0) {
      t.s_set.push_back(a);
      t.r1 += 0.5 * std::log(m.zbar[a]);
      min_zbar = std::min(min_zbar, m.zbar[a]);
    } else {
      t.c_const += std::log(0.5);
    }
  }
  t.k_zbar = static_cast<int>(t.s_set.size());
  t.m_star = t.s_set.empty() ? 0.0 : nn * nn * min_zbar * min_zbar;
  t.c_const += (t.k_zbar - 1) * half_log_2pi;

  for (int a = 0; a < k; ++a) {
    for (int b = a; b < k; ++b) {
      t.m_bar(a, b) = 0.5 * nn * nn * m.zbar[a] * (m.zbar[b] + (a == b ? 1.0 / nn : 0.0));
      t.m_bar(b, a) = t.m_bar(a, b);
      if (m.zbar[a] <= 0.0 || m.zbar[b] <= 0.0) continue;
      if (m.zzbar(a, b) > 0.0) {
        ++t.k_zz;
        t.r2 += 0.5 * std::log(m.zzbar(a, b) * (1.0 - ml.pi(a, b)));
        t.c_const += half_log_2pi - (a == b ? 0.0 : 0.5 * std::log(2.0));
      } else {
        t.c_const += std::log(0.5);
      }
    }
  }
  t.ell_n = 0.5 * (t.k_zbar - 1) * std::log(nn) + 0.5 * t.k_zz * std::log(0.5 * nn * (nn + 1.0));
  return t;
}

}  // namespace f2ab
