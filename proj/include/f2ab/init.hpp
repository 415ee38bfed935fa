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
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "f2ab/graph.hpp"
#include "f2ab/model.hpp"
#include "f2ab/random.hpp"

namespace f2ab {

struct SpectralConfig {
  int k = 1;
  /// Added to every degree in the normalizer; negative means "mean degree".
  double regularizer = -1.0;
  int kmeans_restarts = 10;
  int kmeans_iters = 100;
  std::uint64_t seed = 0;
  double eigen_tol = 1e-6;
  int max_eigen_iters = 2000;
};

struct SpectralResult {
  std::vector<int> labels;
  Params params;
  /// n x k orthonormal basis of the leading invariant subspace.
  Eigen::MatrixXd eigenvectors;
  Eigen::VectorXd eigenvalues;
  std::vector<int> empty_clusters;
  bool eigen_converged = true;
  bool random_fallback = false;
  std::vector<std::string> warnings;
};

struct KMeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;
  double cost = 0.0;
};

/// Lloyd's k-means with k-means++ seeding on the rows of `points`; best of
/// `restarts` by within-cluster squared distance. Ties in assignment go to
/// the lowest centroid index.
inline KMeansResult kmeans(const Eigen::MatrixXd& points, int k, int restarts, int iters, Rng& rng) {
  const Eigen::Index n = points.rows();
  const Eigen::Index dim = points.cols();
  KMeansResult best;
  best.cost = std::numeric_limits<double>::infinity();
  if (n == 0) return best;
  const int kk = static_cast<int>(std::min<Eigen::Index>(k, n));

  for (int r = 0; r < std::max(1, restarts); ++r) {
    Eigen::MatrixXd centers(k, dim);
    centers.setZero();
    std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    Eigen::Index first = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    centers.row(0) = points.row(first);
    for (int c = 1; c < kk; ++c) {
      for (Eigen::Index i = 0; i < n; ++i) {
        d2[i] = std::min(d2[i], (points.row(i) - centers.row(c - 1)).squaredNorm());
      }
      double total = 0.0;
      for (double x : d2) total += x;
      Eigen::Index pick = 0;
      if (total > 0.0) {
        pick = static_cast<Eigen::Index>(rng.categorical(d2));
      } else {
        pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
      }
      centers.row(c) = points.row(pick);
    }

    std::vector<int> labels(static_cast<std::size_t>(n), -1);
    double cost = 0.0;
    for (int it = 0; it < std::max(1, iters); ++it) {
      bool changed = false;
      cost = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        int arg = 0;
        double dist = std::numeric_limits<double>::infinity();
        for (int c = 0; c < kk; ++c) {
          const double v = (points.row(i) - centers.row(c)).squaredNorm();
          if (v < dist) {
            dist = v;
            arg = c;
          }
        }
        cost += dist;
        if (labels[i] != arg) {
          labels[i] = arg;
          changed = true;
        }
      }
      if (!changed && it > 0) break;
      Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, dim);
      std::vector<int> counts(static_cast<std::size_t>(k), 0);
      for (Eigen::Index i = 0; i < n; ++i) {
        sums.row(labels[i]) += points.row(i);
        ++counts[labels[i]];
      }
      for (int c = 0; c < kk; ++c) {
        if (counts[c] > 0) centers.row(c) = sums.row(c) / counts[c];
      }
    }
    if (cost < best.cost) {
      best.cost = cost;
      best.labels = labels;
      best.centroids = centers;
    }
  }
  return best;
}

struct EigenIterationResult {
  Eigen::MatrixXd vectors;
  Eigen::VectorXd values;
  double residual = 0.0;
  bool converged = false;
};

/// Leading eigenpairs of the degree-regularized normalized adjacency
/// (D + tau I)^{-1/2} A (D + tau I)^{-1/2} by orthogonal iteration with a
/// Rayleigh-Ritz step. Iterates on the shifted operator (A_tau + I), which
/// is positive semidefinite, so the dominant subspace is that of the
/// largest algebraic eigenvalues.
inline EigenIterationResult leading_eigenvectors(const Graph& g, int k, double tau, double tol, int max_iters,
                                                 Rng& rng) {
  const int n = g.num_nodes();
  Eigen::VectorXd scale(n);
  for (int i = 0; i < n; ++i) scale[i] = 1.0 / std::sqrt(static_cast<double>(g.degree(i)) + tau);

  auto apply = [&](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, x.cols());
    for (int i = 0; i < n; ++i) {
      for (int j : g.neighbors(i)) y.row(i) += scale[j] * x.row(j);
      y.row(i) *= scale[i];
    }
    return y;
  };

  Eigen::MatrixXd q(n, k);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) q(i, c) = rng.uniform() - 0.5;
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() * Eigen::MatrixXd::Identity(n, k);

  EigenIterationResult out;
  for (int it = 1; it <= max_iters; ++it) {
    Eigen::MatrixXd y = apply(q) + q;
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(y).householderQ() * Eigen::MatrixXd::Identity(n, k);
    if (it % 10 == 0 || it == max_iters) {
      const Eigen::MatrixXd aq = apply(q);
      const Eigen::MatrixXd h = q.transpose() * aq;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
      // Descending order.
      const Eigen::MatrixXd v = es.eigenvectors().rowwise().reverse();
      const Eigen::VectorXd theta = es.eigenvalues().reverse();
      q = q * v;
      const Eigen::MatrixXd r = aq * v - q * theta.asDiagonal();
      out.residual = r.colwise().norm().maxCoeff();
      out.values = theta;
      if (out.residual < tol) {
        out.converged = true;
        break;
      }
    }
  }
  out.vectors = q;
  return out;
}

/// Spectral initialization: regularized normalized adjacency, k leading
/// eigenvectors, row-normalized embedding, k-means++, then ML parameters of
/// the resulting hard assignment.
inline SpectralResult spectral_init(const Graph& g, const SpectralConfig& config) {
  if (config.k < 1) throw std::invalid_argument("spectral_init: k must be >= 1");
  if (config.kmeans_restarts < 1) throw std::invalid_argument("spectral_init: restarts must be >= 1");
  const int n = g.num_nodes();
  const int k = config.k;
  SpectralResult out;
  Rng rng(config.seed);

  if (k == 1) {
    out.labels.assign(static_cast<std::size_t>(n), 0);
  } else {
    if (g.num_edges() == 0) throw std::invalid_argument("spectral_init: graph has no edges and k > 1");
    double tau = config.regularizer;
    if (tau < 0.0) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) total += g.degree(i);
      tau = total / n;
    }
    const int dim = std::min(k, n);
    Rng eig_rng = rng.fork(1);
    EigenIterationResult eig = leading_eigenvectors(g, dim, tau, config.eigen_tol, config.max_eigen_iters, eig_rng);
    out.eigen_converged = eig.converged;
    out.eigenvectors = eig.vectors;
    out.eigenvalues = eig.values;

    if (!eig.vectors.allFinite()) {
      out.random_fallback = true;
      out.warnings.push_back("eigen iteration produced non-finite values; random assignment used");
      Rng fallback = rng.fork(3);
      out.labels.resize(static_cast<std::size_t>(n));
      for (auto& z : out.labels) z = static_cast<int>(fallback.below(static_cast<std::uint64_t>(k)));
    } else {
      if (!eig.converged) {
        out.warnings.push_back("eigen iteration stopped at residual " + std::to_string(eig.residual) +
                               "; using the current Ritz vectors");
      }
      Eigen::MatrixXd emb = eig.vectors;
      for (int i = 0; i < n; ++i) {
        const double norm = emb.row(i).norm();
        if (norm > 0.0) emb.row(i) /= norm;
      }
      Rng km_rng = rng.fork(2);
      out.labels = kmeans(emb, k, config.kmeans_restarts, config.kmeans_iters, km_rng).labels;
    }
  }

  const MStepResult ms = m_step(hard_moments(g, out.labels, k));
  out.params = ms.params;
  out.empty_clusters = ms.empty_clusters;
  return out;
}

}  // namespace f2ab
