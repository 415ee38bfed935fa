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

#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "f2ab/model.hpp"
#include "oracles.hpp"

namespace f2ab {
namespace {

Params make_params(Eigen::VectorXd gamma, Eigen::MatrixXd pi) {
  Params p;
  p.gamma = std::move(gamma);
  p.pi = std::move(pi);
  return p;
}

/// Beliefs from an enumerated distribution, aligned with g.edges().
Beliefs beliefs_from(const Graph& g, const oracle::Enumeration& e) {
  Beliefs q;
  const Eigen::MatrixXd node = e.node_marginals();
  q.node = node;
  for (const auto& edge : g.edges()) {
    if (edge.is_self_loop()) {
      q.edge.push_back(Eigen::MatrixXd(node.row(edge.first).transpose().asDiagonal()));
    } else {
      q.edge.push_back(e.pair_marginal(edge.first, edge.second));
    }
  }
  return q;
}

TEST(JointLogLikelihood, SingleClusterClosedForm) {
  const Graph g(4, {{0, 1}, {1, 2}, {2, 3}});
  const Params p = make_params(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Constant(1, 1, 0.3));
  const std::vector<int> z(4, 0);
  EXPECT_NEAR(joint_log_likelihood(g, z, p), 3 * std::log(0.3) + 7 * std::log(0.7), 1e-12);
}

TEST(JointLogLikelihood, HalfAffinityIgnoresLabels) {
  Rng rng(4);
  const Graph g = oracle::random_graph(12, 0.3, rng, true);
  const Params p = make_params(Eigen::Vector3d(0.2, 0.3, 0.5), Eigen::MatrixXd::Constant(3, 3, 0.5));
  const double pairs = 12 * 13 / 2.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<int> z(12);
    double gamma_part = 0.0;
    for (auto& x : z) {
      x = static_cast<int>(rng.below(3));
      gamma_part += std::log(p.gamma[x]);
    }
    EXPECT_NEAR(joint_log_likelihood(g, z, p), pairs * std::log(0.5) + gamma_part, 1e-10);
  }
}

TEST(JointLogLikelihood, HandExample) {
  const Graph g(3, {{0, 1}, {1, 2}});
  Eigen::Matrix2d pi;
  pi << 0.8, 0.2, 0.2, 0.5;
  const Params p = make_params(Eigen::Vector2d(0.6, 0.4), pi);
  const std::vector<int> z{0, 0, 1};
  // Pairs: (0,0) (0,1)e (0,2) (1,1) (1,2)e (2,2); labels 0,0,1.
  const double hand = std::log(1 - 0.8) + std::log(0.8) + std::log(1 - 0.2) + std::log(1 - 0.8) + std::log(0.2) +
                      std::log(1 - 0.5) + 2 * std::log(0.6) + std::log(0.4);
  EXPECT_NEAR(joint_log_likelihood(g, z, p), hand, 1e-12);
  EXPECT_NEAR(joint_log_likelihood(g, z, p), oracle::brute_joint_ll(g, z, p.gamma, p.pi), 1e-12);
}

TEST(JointLogLikelihood, MatchesPairwiseOracleWithMasking) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g = oracle::random_graph(15, 0.25, rng, true);
    if (trial % 2 == 0) g = mask_pairs(g, 0.1, static_cast<std::uint64_t>(trial));
    const Params p = make_params(oracle::random_simplex(3, rng), oracle::random_affinity(3, rng));
    std::vector<int> z(15);
    for (auto& x : z) x = static_cast<int>(rng.below(3));
    EXPECT_NEAR(joint_log_likelihood(g, z, p), oracle::brute_joint_ll(g, z, p.gamma, p.pi), 1e-9);
  }
}

TEST(JointLogLikelihood, ImpossibleObservationGivesNegativeInfinity) {
  const Graph g(2, {{0, 1}});
  Eigen::Matrix2d pi;
  pi << 0.5, 0.0, 0.0, 0.5;
  const Params p = make_params(Eigen::Vector2d(0.5, 0.5), pi);
  const double v = joint_log_likelihood(g, std::vector<int>{0, 1}, p);
  EXPECT_TRUE(std::isinf(v) && v < 0);
}

TEST(ExpectedLogLikelihood, PointMassEqualsJoint) {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g = oracle::random_graph(20, 0.2, rng, true);
    if (trial % 3 == 0) g = mask_pairs(g, 0.05, static_cast<std::uint64_t>(trial));
    const Params p = make_params(oracle::random_simplex(3, rng), oracle::random_affinity(3, rng));
    std::vector<int> z(20);
    for (auto& x : z) x = static_cast<int>(rng.below(3));
    const Beliefs q = hard_beliefs(g, z, 3);
    EXPECT_NEAR(expected_joint_log_likelihood(g, q, p), joint_log_likelihood(g, z, p), 1e-9);
  }
}

TEST(ExpectedLogLikelihood, SingleClusterEqualsJoint) {
  Rng rng(13);
  const Graph g = oracle::random_graph(30, 0.1, rng, true);
  const Params p = make_params(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Constant(1, 1, 0.12));
  const std::vector<int> z(30, 0);
  EXPECT_NEAR(expected_joint_log_likelihood(g, hard_beliefs(g, z, 1), p), joint_log_likelihood(g, z, p), 1e-9);
}

TEST(ExpectedLogLikelihood, ExactPosteriorMatchesPairwiseExpectation) {
  Rng rng(21);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 6 + trial % 3;
    Graph g = oracle::random_graph(n, 0.4, rng, true);
    if (trial % 2 == 1) g = mask_pairs(g, 0.1, static_cast<std::uint64_t>(trial));
    const Params p = make_params(oracle::random_simplex(2, rng), oracle::random_affinity(2, rng));
    const auto post = oracle::enumerate_posterior(g, p.gamma, p.pi);
    const Beliefs q = beliefs_from(g, post);

    // Node and edge terms are exact expectations under the posterior; other
    // pairs use the product of node marginals.
    const Eigen::MatrixXd b = post.node_marginals();
    double expected = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int a = 0; a < 2; ++a) expected += b(i, a) * std::log(p.gamma[a]);
      for (int j = i; j < n; ++j) {
        if (g.is_masked(i, j)) continue;
        Eigen::MatrixXd joint;
        if (i == j) joint = b.row(i).transpose().asDiagonal();
        else if (g.has_edge(i, j)) joint = post.pair_marginal(i, j);
        else joint = b.row(i).transpose() * b.row(j);
        const bool x = g.has_edge(i, j);
        for (int a = 0; a < 2; ++a)
          for (int c = 0; c < 2; ++c)
            expected += joint(a, c) * (x ? std::log(p.pi(a, c)) : std::log(1 - p.pi(a, c)));
      }
    }
    EXPECT_NEAR(expected_joint_log_likelihood(g, q, p), expected, 1e-8);
  }
}

TEST(ExpectedLogLikelihood, CompleteGraphMatchesEnumeration) {
  Rng rng(22);
  std::vector<Edge> edges;
  const int n = 7;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) edges.push_back({i, j});
  edges.push_back({2, 2});
  const Graph g(n, edges);
  for (int trial = 0; trial < 4; ++trial) {
    const Params p = make_params(oracle::random_simplex(2, rng), oracle::random_affinity(2, rng));
    const auto post = oracle::enumerate_posterior(g, p.gamma, p.pi);
    const double exact = post.expectation([&](const std::vector<int>& z) {
      return oracle::brute_joint_ll(g, z, p.gamma, p.pi);
    });
    EXPECT_NEAR(expected_joint_log_likelihood(g, beliefs_from(g, post), p), exact, 1e-8);
  }
}

TEST(MStep, SingleClusterDensity) {
  const Graph g(4, {{0, 1}, {1, 2}, {2, 3}});
  const Moments m = hard_moments(g, std::vector<int>(4, 0), 1);
  EXPECT_NEAR(m.zzbar(0, 0), 2.0 * 3.0 / 16.0, 1e-15);
  const Params p = m_step(m).params;
  EXPECT_NEAR(p.pi(0, 0), 0.3, 1e-15);
  EXPECT_NEAR(p.pi(0, 0) * (1.0 + 1.0 / 4.0), m.zzbar(0, 0), 1e-15);
  EXPECT_DOUBLE_EQ(p.gamma[0], 1.0);
}

TEST(MStep, SingleClusterDensityOverUnmaskedPairs) {
  Rng rng(30);
  const Graph g = mask_pairs(oracle::random_graph(40, 0.1, rng, true), 0.05, 2);
  const Params p = m_step(hard_moments(g, std::vector<int>(40, 0), 1)).params;
  EXPECT_NEAR(p.pi(0, 0), static_cast<double>(g.num_edges()) / g.training_pairs(), 1e-12);
}

TEST(MStep, PointMassGivesEmpiricalProportions) {
  Rng rng(31);
  const Graph g = oracle::random_graph(50, 0.1, rng);
  std::vector<int> z(50);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(4);
  for (auto& x : z) {
    x = static_cast<int>(rng.below(4));
    counts[x] += 1.0;
  }
  const MStepResult r = m_step(hard_moments(g, z, 4));
  for (int a = 0; a < 4; ++a) EXPECT_DOUBLE_EQ(r.params.gamma[a], counts[a] / 50.0);
  r.params.validate();
  // Block densities from explicit counts.
  const BlockCounts c = count_blocks(g, z, 4);
  for (int a = 0; a < 4; ++a)
    for (int b = a; b < 4; ++b) {
      if (c.pairs(a, b) > 0) {
        EXPECT_NEAR(r.params.pi(a, b), c.edges(a, b) / c.pairs(a, b), 1e-12);
      }
    }
}

TEST(MStep, EmptyClusterIsFlagged) {
  const Graph g(4, {{0, 1}, {2, 3}});
  const MStepResult r = m_step(hard_moments(g, std::vector<int>{0, 0, 2, 2}, 3));
  ASSERT_EQ(r.empty_clusters, std::vector<int>{1});
  EXPECT_DOUBLE_EQ(r.params.pi(1, 1), kProbClamp);
  EXPECT_DOUBLE_EQ(r.params.pi(0, 1), kProbClamp);
  r.params.validate();
}

/// Soft beliefs on a small random graph: node beliefs random, edge beliefs
/// proportional to b_i b_j^T times a random positive coupling.
Beliefs random_beliefs(const Graph& g, int k, Rng& rng) {
  Beliefs q;
  q.node.resize(g.num_nodes(), k);
  for (int i = 0; i < g.num_nodes(); ++i) q.node.row(i) = oracle::random_simplex(k, rng, 0.01).transpose();
  for (const auto& e : g.edges()) {
    if (e.is_self_loop()) {
      q.edge.push_back(Eigen::MatrixXd(q.node.row(e.first).transpose().asDiagonal()));
      continue;
    }
    // Sinkhorn-balanced joint with the node beliefs as marginals.
    Eigen::MatrixXd b = oracle::random_affinity(k, rng, 0.2, 1.0);
    for (int it = 0; it < 500; ++it) {
      for (int a = 0; a < k; ++a) b.row(a) *= q.node(e.first, a) / b.row(a).sum();
      for (int c = 0; c < k; ++c) b.col(c) *= q.node(e.second, c) / b.col(c).sum();
    }
    q.edge.push_back(b);
  }
  return q;
}

TEST(MStep, NoPerturbationImproves) {
  Rng rng(40);
  for (int trial = 0; trial < 10; ++trial) {
    Graph g = oracle::random_graph(12, 0.3, rng, true);
    if (trial % 2) g = mask_pairs(g, 0.05, static_cast<std::uint64_t>(trial));
    const Beliefs q = random_beliefs(g, 3, rng);
    const Moments m = moments_from_beliefs(g, q);
    const Params best = m_step(m).params;
    const double top = expected_joint_log_likelihood(m, best);
    for (int probe = 0; probe < 200; ++probe) {
      Params p = best;
      const double h = 1e-3 * (1 + probe % 5);
      const int a = static_cast<int>(rng.below(3)), b = static_cast<int>(rng.below(3));
      p.pi(a, b) = p.pi(b, a) = std::clamp(p.pi(a, b) + (rng.uniform() < 0.5 ? -h : h), 1e-6, 1 - 1e-6);
      Eigen::VectorXd gshift = Eigen::VectorXd::Zero(3);
      gshift[a] += h;
      gshift[b] -= h;
      if ((p.gamma + gshift).minCoeff() > 0) p.gamma += gshift;
      EXPECT_LE(expected_joint_log_likelihood(m, p), top + 1e-9);
    }
  }
}

TEST(MStep, GridSearchNeverBeatsClosedForm) {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    const Graph g = oracle::random_graph(10, 0.35, rng, true);
    const Beliefs q = random_beliefs(g, 2, rng);
    const Moments m = moments_from_beliefs(g, q);
    const Params best = m_step(m).params;
    const double top = expected_joint_log_likelihood(m, best);
    // The objective separates over gamma and the three affinity entries.
    Params p = best;
    double grid_best = -std::numeric_limits<double>::infinity();
    for (double g0 = 0.0005; g0 < 1.0; g0 += 1e-3) {
      p.gamma = Eigen::Vector2d(g0, 1 - g0);
      grid_best = std::max(grid_best, expected_joint_log_likelihood(m, p));
    }
    p.gamma = best.gamma;
    double total = grid_best - expected_joint_log_likelihood(m, p);
    for (auto [a, b] : {std::pair{0, 0}, std::pair{0, 1}, std::pair{1, 1}}) {
      double entry_best = -std::numeric_limits<double>::infinity();
      Params r = best;
      for (double v = 0.0005; v < 1.0; v += 1e-3) {
        r.pi(a, b) = r.pi(b, a) = v;
        entry_best = std::max(entry_best, expected_joint_log_likelihood(m, r));
      }
      total += entry_best - top;
    }
    EXPECT_GE(top, top + total - 1e-6);
  }
}

TEST(NaturalMaps, ZeroThetaIsHalf) {
  NaturalParams nat;
  nat.eta = Eigen::VectorXd::Zero(2);
  nat.theta = Eigen::MatrixXd::Zero(3, 3);
  const Params p = mean_from_natural(nat);
  EXPECT_TRUE(p.pi.isApproxToConstant(0.5, 1e-15));
  EXPECT_TRUE(p.gamma.isApproxToConstant(1.0 / 3.0, 1e-15));
}

TEST(NaturalMaps, RoundTrip) {
  Rng rng(50);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(5));
    const Params p = make_params(oracle::random_simplex(k, rng, 0.01), oracle::random_affinity(k, rng, 0.001, 0.999));
    const NaturalMapResult nat = natural_from_mean(p);
    EXPECT_FALSE(nat.clamped);
    EXPECT_EQ(nat.natural.eta.size(), k - 1);
    const Params back = mean_from_natural(nat.natural);
    EXPECT_LT((back.pi - p.pi).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((back.gamma - p.gamma).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(NaturalMaps, BoundaryValuesAreClampedAndFlagged) {
  Eigen::Matrix2d pi;
  pi << 0.0, 0.3, 0.3, 1.0;
  const NaturalMapResult nat = natural_from_mean(make_params(Eigen::Vector2d(0.5, 0.5), pi));
  EXPECT_TRUE(nat.clamped);
  EXPECT_TRUE(nat.natural.theta.allFinite());
  const NaturalMapResult zero_gamma = natural_from_mean(make_params(Eigen::Vector2d(1.0, 0.0), Eigen::Matrix2d::Constant(0.2)));
  EXPECT_TRUE(zero_gamma.clamped);
  EXPECT_TRUE(zero_gamma.natural.eta.allFinite());
}

TEST(NaturalMaps, ThetaMonotoneInPi) {
  double prev = -std::numeric_limits<double>::infinity();
  for (double v = 0.01; v < 1.0; v += 0.01) {
    const auto nat = natural_from_mean(make_params(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Constant(1, 1, v)));
    EXPECT_GT(nat.natural.theta(0, 0), prev);
    prev = nat.natural.theta(0, 0);
  }
}

TEST(HessianBlocks, SingleCluster) {
  const Params p = make_params(Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Constant(1, 1, 0.2));
  const HessianBlocks h = hessian_blocks(std::vector<int>(10, 0), p, 10);
  EXPECT_EQ(h.f_eta.size(), 0);
  ASSERT_EQ(h.f_theta.size(), 1);
  EXPECT_NEAR(h.f_theta[0], 55.0 * 0.2 * 0.8, 1e-12);
}

TEST(HessianBlocks, HalfAffinityIsQuarterOfPairMass) {
  const Params p = make_params(Eigen::Vector2d(0.5, 0.5), Eigen::Matrix2d::Constant(0.5));
  const std::vector<int> z{0, 0, 0, 1, 1, 1, 1, 1};
  const HessianBlocks h = hessian_blocks(z, p, 8);
  const double n = 8, z0 = 3.0 / 8, z1 = 5.0 / 8;
  EXPECT_NEAR(h.f_theta[0], 0.5 * n * n * z0 * (z0 + 1 / n) / 4, 1e-12);
  EXPECT_NEAR(h.f_theta[1], 0.5 * n * n * z0 * z1 / 4, 1e-12);
  EXPECT_NEAR(h.f_theta[2], 0.5 * n * n * z1 * (z1 + 1 / n) / 4, 1e-12);
}

TEST(HessianBlocks, EtaBlockPositiveDefinite) {
  Rng rng(60);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const Params p = make_params(oracle::random_simplex(k, rng), oracle::random_affinity(k, rng));
    std::vector<int> z(40);
    for (int i = 0; i < 40; ++i) z[i] = i % k;
    const HessianBlocks h = hessian_blocks(z, p, 40);
    EXPECT_TRUE(h.f_eta.isApprox(h.f_eta.transpose()));
    EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(h.f_eta).info(), Eigen::Success);
    EXPECT_GE(h.f_theta.minCoeff(), 0.0);
  }
}

TEST(HessianBlocks, EmptyClusterThrowsNamingIt) {
  const Params p = make_params(Eigen::Vector3d(0.4, 0.3, 0.3), Eigen::Matrix3d::Constant(0.1));
  try {
    hessian_blocks(std::vector<int>{0, 0, 2, 2}, p, 4);
    FAIL() << "expected SingularBlockError";
  } catch (const SingularBlockError& e) {
    EXPECT_EQ(e.cluster(), 1);
  }
}

TEST(HessianBlocks, MatchFiniteDifferences) {
  Rng rng(61);
  const int n = 60, k = 3;
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<int> z(n);
    for (int i = 0; i < n; ++i) z[i] = i % k;
    const Params p = make_params(oracle::random_simplex(k, rng), oracle::random_affinity(k, rng, 0.05, 0.6));
    const auto gen = generate_sbm(n, p.gamma, p.pi, static_cast<std::uint64_t>(trial));
    const Graph& g = gen.first;
    const HessianBlocks h = hessian_blocks(z, p, n);

    // -log p(X, Z | theta, eta) with theta over k <= l and eta over the first K-1 entries.
    const auto nat = natural_from_mean(p).natural;
    Eigen::VectorXd x(k * (k + 1) / 2 + k - 1);
    int idx = 0;
    for (int a = 0; a < k; ++a)
      for (int b = a; b < k; ++b) x[idx++] = nat.theta(a, b);
    for (int a = 0; a + 1 < k; ++a) x[idx++] = nat.eta[a];
    auto f = [&](const Eigen::VectorXd& y) {
      NaturalParams q;
      q.theta.resize(k, k);
      int t = 0;
      for (int a = 0; a < k; ++a)
        for (int b = a; b < k; ++b) q.theta(a, b) = q.theta(b, a) = y[t++];
      q.eta = y.tail(k - 1);
      const Params mp = mean_from_natural(q);
      return -oracle::brute_joint_ll(g, z, mp.gamma, mp.pi);
    };
    idx = 0;
    for (int a = 0; a < k; ++a) {
      for (int b = a; b < k; ++b, ++idx) {
        const double fd = oracle::second_difference(f, x, idx, idx, 1e-3);
        // One theta_kl coordinate covers both (k,l) and (l,k) pair orderings.
        const double multiplicity = a == b ? 1.0 : 2.0;
        EXPECT_NEAR(h.f_theta[idx] * multiplicity, fd, 1e-4 * std::abs(fd));
      }
    }
    const int base = k * (k + 1) / 2;
    for (int a = 0; a + 1 < k; ++a) {
      for (int b = 0; b + 1 < k; ++b) {
        const double fd = oracle::second_difference(f, x, base + a, base + b, 1e-3);
        EXPECT_NEAR(h.f_eta(a, b), fd, 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

}  // namespace
}  // namespace f2ab
