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

#include <chrono>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "f2ab/fit.hpp"
#include "f2ab/graph.hpp"
#include "f2ab/model.hpp"
#include "f2ab/random.hpp"

namespace f2ab {

struct EvalReport {
  double npll = 0.0;
  std::size_t n_masked = 0;
  std::optional<double> ari;
  int selected_k = 0;
  double runtime_seconds = 0.0;
};

/// Predictive probability E[z_i]' Pi E[z_j], clamped away from 0 and 1.
inline double predictive_probability(const Params& params, const RowMatrix& marginals, int i, int j) {
  const double p = marginals.row(i).dot(params.pi * marginals.row(j).transpose());
  return clamp_prob(p);
}

/// Held-out log-likelihood of the masked pairs under the factorized predictor,
/// divided by n(n+1)/2.
inline double npll(const Params& params, const RowMatrix& marginals, std::span<const MaskedPair> masked) {
  if (marginals.size() == 0) throw std::invalid_argument("npll: fit has no node marginals");
  if (marginals.cols() != params.k()) throw std::invalid_argument("npll: marginals do not match the parameters");
  if (masked.empty()) throw std::invalid_argument("npll: no masked pairs");
  const Eigen::Index n = marginals.rows();
  double total = 0.0;
  for (const auto& m : masked) {
    if (m.i < 0 || m.j < 0 || m.i >= n || m.j >= n) throw std::out_of_range("npll: masked pair out of range");
    const double p = predictive_probability(params, marginals, m.i, m.j);
    total += m.observed ? std::log(p) : std::log1p(-p);
  }
  return total / (0.5 * static_cast<double>(n) * static_cast<double>(n + 1));
}

/// Adjusted Rand index from the pair-counting contingency table. Labels may
/// be arbitrary non-negative integers.
inline double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("adjusted_rand_index: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> rows, cols;
  for (std::size_t t = 0; t < n; ++t) {
    cells[{a[t], b[t]}] += 1.0;
    rows[a[t]] += 1.0;
    cols[b[t]] += 1.0;
  }
  auto choose2 = [](double x) { return 0.5 * x * (x - 1.0); };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [key, c] : cells) index += choose2(c);
  for (const auto& [key, c] : rows) sum_a += choose2(c);
  for (const auto& [key, c] : cols) sum_b += choose2(c);
  const double total = choose2(static_cast<double>(n));
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return index == expected ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

/// Planted model of the synthetic protocol: K=4, uniform proportions,
/// within-cluster probability 20/n and between-cluster probability 1/n.
inline Params synthetic_params(int n, int k = 4, double c_in = 20.0, double c_out = 1.0) {
  Params p;
  p.gamma = Eigen::VectorXd::Constant(k, 1.0 / k);
  p.pi = Eigen::MatrixXd::Constant(k, k, c_out / n);
  p.pi.diagonal().setConstant(c_in / n);
  return p;
}

struct ProtocolRow {
  std::string method;
  int n = 0;
  std::uint64_t seed = 0;
  int selected_k = 0;
  double ari = 0.0;
  double seconds = 0.0;
};

/// For each (n, seed): generates the planted graph, fits it with f2ab_fit and
/// with a fixed-K sweep over 1..k_max scored by ICL, cICL and FIC. The sweep
/// is shared by the three criteria; its time is reported for each of them.
inline std::vector<ProtocolRow> run_synthetic_protocol(std::span<const int> n_list, std::span<const std::uint64_t> seeds,
                                                       int k_max, const FitOptions& opts = {}, bool with_sweeps = true,
                                                       unsigned threads = 1) {
  std::vector<std::pair<int, std::uint64_t>> jobs;
  for (int n : n_list)
    for (std::uint64_t s : seeds) jobs.emplace_back(n, s);
  const std::size_t per_job = with_sweeps ? 4 : 1;
  std::vector<ProtocolRow> rows(jobs.size() * per_job);
  parallel_for(jobs.size(), threads, [&](std::size_t t) {
    const auto [n, seed] = jobs[t];
    const Params planted = synthetic_params(n);
    const auto gen = generate_sbm(n, planted.gamma, planted.pi, seed);
    const Graph& g = gen.first;
    const std::vector<int>& truth = gen.second.labels;

    auto clock = std::chrono::steady_clock::now;
    auto start = clock();
    const FitResult fit = f2ab_fit(g, k_max, seed, opts);
    const double f2ab_seconds = std::chrono::duration<double>(clock() - start).count();
    rows[t * per_job] = {"f2ab", n, seed, fit.selected_k, adjusted_rand_index(fit.map_assignment, truth), f2ab_seconds};
    if (!with_sweeps) return;

    start = clock();
    std::vector<FitResult> fits;
    for (int k = 1; k <= k_max; ++k) {
      fits.push_back(fixed_k_fit(g, k, Rng(seed).fork(100 + static_cast<std::uint64_t>(k)).next(), opts));
    }
    const double sweep_seconds = std::chrono::duration<double>(clock() - start).count();
    const std::pair<const char*, Method> criteria[] = {
        {"icl", Method::kIcl}, {"cicl", Method::kCicl}, {"fic", Method::kFicBp}};
    for (std::size_t c = 0; c < 3; ++c) {
      std::size_t best = 0;
      for (std::size_t f = 1; f < fits.size(); ++f) {
        if (criterion_for(criteria[c].second, fits[f].criteria) > criterion_for(criteria[c].second, fits[best].criteria))
          best = f;
      }
      rows[t * per_job + 1 + c] = {criteria[c].first,
                                   n,
                                   seed,
                                   fits[best].selected_k,
                                   adjusted_rand_index(fits[best].map_assignment, truth),
                                   sweep_seconds};
    }
  });
  return rows;
}

inline void write_protocol_table(std::ostream& out, std::span<const ProtocolRow> rows, bool with_seconds = true) {
  out << "method,n,seed,selected_k,ari,seconds\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.ari);
    out << r.method << ',' << r.n << ',' << r.seed << ',' << r.selected_k << ',' << buf << ',';
    if (with_seconds) {
      std::snprintf(buf, sizeof buf, "%.3f", r.seconds);
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace f2ab
