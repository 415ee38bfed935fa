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
#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "f2ab/bp.hpp"
#include "f2ab/criteria.hpp"
#include "f2ab/graph.hpp"
#include "f2ab/init.hpp"
#include "f2ab/model.hpp"
#include "f2ab/random.hpp"

namespace f2ab {

enum class Method { kF2ab, kFicBp, kIcl, kCicl };

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::kF2ab: return "f2ab";
    case Method::kFicBp: return "fic-bp";
    case Method::kIcl: return "icl";
    case Method::kCicl: return "cicl";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "f2ab") return Method::kF2ab;
  if (s == "fic-bp") return Method::kFicBp;
  if (s == "icl") return Method::kIcl;
  if (s == "cicl") return Method::kCicl;
  throw std::invalid_argument("unknown method '" + std::string(s) + "'");
}

struct FitOptions {
  double tol_msg = 1e-2;
  double tol_pi = 1e-8;
  int max_sweeps = 500;
  int max_outer = 200;
  /// Weight of the spectral assignment in the initial messages.
  double label_weight = 0.5;
  double damping = 0.0;
  BiclusterMass bicluster_mass = BiclusterMass::kProportions;
  double regularizer = -1.0;
  int kmeans_restarts = 10;
  int kmeans_iters = 100;
};

struct TraceEntry {
  int iteration = 0;
  int sweeps = 0;
  double message_delta = 0.0;
  int k_active = 0;
  double criterion = 0.0;
  double pi_change = 0.0;
};

struct FitResult {
  std::string method;
  int k_max = 0;
  std::uint64_t seed = 0;
  int selected_k = 0;
  Params params;
  RowMatrix marginals;
  std::vector<int> map_assignment;
  /// Original (initial) cluster ids of the surviving columns.
  std::vector<int> active_clusters;
  bool converged = false;
  std::vector<TraceEntry> trace;
  CriterionReport criteria;
  std::vector<std::string> warnings;
  double runtime_seconds = 0.0;
};

/// Runs fn(0..count-1) over up to `threads` workers. Each index must write
/// only its own output slot; merging happens after join.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t t = 0; t < count; ++t) fn(t);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (unsigned w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t t = w; t < count; t += threads) fn(t);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace detail {

/// Drops empty clusters from a hard assignment, relabeling compactly.
inline int compact_labels(std::vector<int>& labels, int k) {
  std::vector<int> remap(static_cast<std::size_t>(k), -1);
  std::vector<int> used(static_cast<std::size_t>(k), 0);
  for (int z : labels) used[z] = 1;
  int next = 0;
  for (int a = 0; a < k; ++a)
    if (used[a]) remap[a] = next++;
  for (int& z : labels) z = remap[z];
  return next;
}

inline FitResult trivial_fit(const Graph& g, std::string_view method, int k_max, std::uint64_t seed) {
  FitResult r;
  r.method = std::string(method);
  r.k_max = k_max;
  r.seed = seed;
  r.selected_k = 1;
  std::vector<int> labels(static_cast<std::size_t>(g.num_nodes()), 0);
  r.params = m_step(hard_moments(g, labels, 1)).params;
  r.marginals = RowMatrix::Ones(g.num_nodes(), 1);
  r.map_assignment = labels;
  r.active_clusters = {0};
  r.converged = true;
  r.criteria = evaluate_criteria(g, hard_beliefs(g, labels, 1), r.params, labels);
  return r;
}

inline void finish_fit(const Graph& g, BeliefState& state, FitResult& r, bool outer_converged) {
  const Beliefs q = state_beliefs(g, state);
  const Moments m = moments_from_beliefs(g, q);
  r.params = m_step(m).params;
  r.marginals = state.node_belief;
  r.map_assignment = map_assignment(state.node_belief);
  r.selected_k = state.k;
  r.active_clusters = state.active;
  r.converged = outer_converged && state.converged;
  r.criteria = evaluate_criteria(g, q, r.params, r.map_assignment);
  r.criteria.non_converged = !r.converged;
  if (!r.converged) r.warnings.push_back("fit did not converge within the iteration caps");
}

/// Alternates BP and the closed-form M-step from a spectral start.
inline FitResult em_fit(const Graph& g, int k, std::uint64_t seed, const FitOptions& opts, Penalty penalty,
                        bool prune, std::string_view method) {
  if (k < 1) throw std::invalid_argument("fit: k must be >= 1");
  const auto start = std::chrono::steady_clock::now();
  if (g.num_edges() == 0) {
    FitResult r = trivial_fit(g, method, k, seed);
    r.warnings.push_back("graph has no training edges; returning the single-cluster fit");
    return r;
  }

  SpectralConfig sc;
  sc.k = k;
  sc.regularizer = opts.regularizer;
  sc.kmeans_restarts = opts.kmeans_restarts;
  sc.kmeans_iters = opts.kmeans_iters;
  sc.seed = Rng(seed).fork(21).next();
  SpectralResult init = spectral_init(g, sc);

  FitResult r;
  r.method = std::string(method);
  r.k_max = k;
  r.seed = seed;
  r.warnings = init.warnings;
  std::vector<int> labels = init.labels;
  const int k0 = detail::compact_labels(labels, k);
  if (k0 < k) {
    r.warnings.push_back("spectral initialization left " + std::to_string(k - k0) + " empty cluster(s)");
  }
  Params params = m_step(hard_moments(g, labels, k0)).params;

  BeliefState state = make_belief_state(g, params, labels, Rng(seed).fork(22).next(), opts.label_weight, penalty);
  if (opts.bicluster_mass != state.bicluster_mass) {
    state.bicluster_mass = opts.bicluster_mass;
    refresh_state(g, state, penalty);
  }
  Rng rng = Rng(seed).fork(23);

  BpOptions bp;
  bp.tol_msg = opts.tol_msg;
  bp.max_sweeps = opts.max_sweeps;
  bp.penalty = penalty;
  bp.prune = prune;
  bp.damping = opts.damping;

  bool outer_converged = false;
  for (int it = 1; it <= opts.max_outer; ++it) {
    const int sweeps_before = state.sweeps;
    fabbp_run(g, state, bp, rng);
    const Beliefs q = state_beliefs(g, state);
    const Moments m = moments_from_beliefs(g, q);
    MStepResult ms = m_step(m);
    const double change = (ms.params.pi - state.params.pi).cwiseAbs().maxCoeff();

    TraceEntry t;
    t.iteration = it;
    t.sweeps = state.sweeps - sweeps_before;
    t.message_delta = state.last_delta;
    t.k_active = state.k;
    t.pi_change = change;
    switch (penalty) {
      case Penalty::kFab: t.criterion = ffic_lower_bound(g, q, ms.params); break;
      case Penalty::kFic: t.criterion = fic_value(g, q, ms.params); break;
      case Penalty::kNone: t.criterion = cicl_value(g, q, ms.params); break;
    }
    r.trace.push_back(t);

    set_params(g, state, std::move(ms.params), penalty);
    if (prune) {
      for (int c = prune_candidate(state, bp.prune_threshold); c >= 0; c = prune_candidate(state, bp.prune_threshold)) {
        prune_cluster(g, state, c, penalty);
      }
    }
    if (change < opts.tol_pi && t.k_active == state.k) {
      outer_converged = true;
      break;
    }
  }
  detail::finish_fit(g, state, r, outer_converged);
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace detail

/// One-pass inference and model selection: penalized BP with pruning from
/// k_max clusters, alternated with M-steps until pi stabilizes. The selected
/// K is the number of surviving clusters.
inline FitResult f2ab_fit(const Graph& g, int k_max, std::uint64_t seed, const FitOptions& opts = {}) {
  return detail::em_fit(g, k_max, seed, opts, Penalty::kFab, true, method_name(Method::kF2ab));
}

/// Same engine with the FIC-style penalty.
inline FitResult fic_bp_fit(const Graph& g, int k_max, std::uint64_t seed, const FitOptions& opts = {}) {
  return detail::em_fit(g, k_max, seed, opts, Penalty::kFic, true, method_name(Method::kFicBp));
}

/// Plain BP + M-step at a fixed cluster count (no penalty, no pruning).
inline FitResult fixed_k_fit(const Graph& g, int k, std::uint64_t seed, const FitOptions& opts = {}) {
  return detail::em_fit(g, k, seed, opts, Penalty::kNone, false, "bp");
}

struct SweepRow {
  int k = 0;
  int effective_k = 0;
  CriterionReport criteria;
};

struct SweepResult {
  Method method = Method::kCicl;
  std::vector<SweepRow> rows;
  int best_k = 0;
  std::size_t best_row = 0;
  FitResult best_fit;
};

inline double criterion_for(Method m, const CriterionReport& r) {
  switch (m) {
    case Method::kF2ab: return r.ffic_lb;
    case Method::kFicBp: return r.fic;
    case Method::kIcl: return r.icl;
    case Method::kCicl: return r.cicl;
  }
  return r.cicl;
}

/// Fits fixed-K models for every K in [k_lo, k_hi] and selects the K that
/// maximizes the method's criterion (first maximum wins).
inline SweepResult criterion_sweep(const Graph& g, int k_lo, int k_hi, Method method, std::uint64_t seed,
                                   const FitOptions& opts = {}, unsigned threads = 1) {
  if (k_lo < 1 || k_hi < k_lo) throw std::invalid_argument("sweep: invalid K range");
  SweepResult out;
  out.method = method;
  out.rows.resize(static_cast<std::size_t>(k_hi - k_lo + 1));
  std::vector<FitResult> fits(out.rows.size());
  parallel_for(out.rows.size(), threads, [&](std::size_t t) {
    const int k = k_lo + static_cast<int>(t);
    fits[t] = fixed_k_fit(g, k, Rng(seed).fork(100 + static_cast<std::uint64_t>(k)).next(), opts);
    out.rows[t] = {k, fits[t].selected_k, fits[t].criteria};
  });
  double best = -std::numeric_limits<double>::infinity();
  out.best_k = out.rows.front().k;
  for (std::size_t t = 0; t < out.rows.size(); ++t) {
    const double v = criterion_for(method, out.rows[t].criteria);
    if (v > best) {
      best = v;
      out.best_k = out.rows[t].k;
      out.best_row = t;
    }
  }
  out.best_fit = std::move(fits[out.best_row]);
  out.best_fit.method = std::string(method_name(method));
  return out;
}

}  // namespace f2ab
