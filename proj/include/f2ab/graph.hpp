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
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "f2ab/random.hpp"

namespace f2ab {

/// Malformed edge-list input; carries the 1-based line number (0 when the
/// problem is not tied to a line).
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Unordered node pair with first <= second.
struct Edge {
  int first = 0;
  int second = 0;
  bool is_self_loop() const { return first == second; }
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

inline Edge make_pair_key(int i, int j) { return i <= j ? Edge{i, j} : Edge{j, i}; }

/// A held-out node pair and whether an edge was observed there.
struct MaskedPair {
  int i = 0;
  int j = 0;
  bool observed = false;
  friend bool operator==(const MaskedPair&, const MaskedPair&) = default;
};

/// Immutable sparse undirected graph over the pair universe i <= j.
///
/// Self-loops are allowed and appear once in their node's neighbor list, so
/// sum(degree) = 2 * (m - self_loops) + self_loops. Masked pairs are removed
/// from the training view entirely: they never carry an edge here and are
/// excluded from non-edge accounting by the likelihood code.
class Graph {
 public:
  Graph() = default;

  Graph(int n, std::vector<Edge> edges, std::vector<MaskedPair> masked = {},
        std::vector<std::string> names = {})
      : n_(n), edges_(std::move(edges)), masked_(std::move(masked)), names_(std::move(names)) {
    if (n_ < 0) throw std::invalid_argument("graph: negative node count");
    for (auto& e : edges_) {
      check_node(e.first);
      check_node(e.second);
      e = make_pair_key(e.first, e.second);
    }
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());

    for (auto& p : masked_) {
      check_node(p.i);
      check_node(p.j);
      if (p.i > p.j) std::swap(p.i, p.j);
    }
    std::sort(masked_.begin(), masked_.end(), [](const MaskedPair& a, const MaskedPair& b) {
      return std::pair(a.i, a.j) < std::pair(b.i, b.j);
    });
    for (std::size_t t = 1; t < masked_.size(); ++t) {
      if (masked_[t].i == masked_[t - 1].i && masked_[t].j == masked_[t - 1].j) {
        throw std::invalid_argument("graph: duplicate masked pair");
      }
    }
    for (const auto& p : masked_) {
      if (std::binary_search(edges_.begin(), edges_.end(), Edge{p.i, p.j})) {
        throw std::invalid_argument("graph: masked pair (" + std::to_string(p.i) + ", " +
                                    std::to_string(p.j) + ") also present as a training edge");
      }
    }

    if (!names_.empty() && static_cast<int>(names_.size()) != n_) {
      throw std::invalid_argument("graph: names size does not match node count");
    }

    offsets_.assign(static_cast<std::size_t>(n_) + 1, 0);
    for (const auto& e : edges_) {
      ++offsets_[e.first + 1];
      if (!e.is_self_loop()) ++offsets_[e.second + 1];
      else ++self_loops_;
    }
    for (int i = 0; i < n_; ++i) offsets_[i + 1] += offsets_[i];
    adjacency_.resize(offsets_.back());
    std::vector<std::size_t> fill(offsets_.begin(), offsets_.end() - 1);
    for (const auto& e : edges_) {
      adjacency_[fill[e.first]++] = e.second;
      if (!e.is_self_loop()) adjacency_[fill[e.second]++] = e.first;
    }
    for (int i = 0; i < n_; ++i) {
      std::sort(adjacency_.begin() + offsets_[i], adjacency_.begin() + offsets_[i + 1]);
    }
  }

  int num_nodes() const { return n_; }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t num_self_loops() const { return self_loops_; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Sorted neighbors of node i (a self-loop lists i once).
  std::span<const int> neighbors(int i) const {
    return {adjacency_.data() + offsets_[i], adjacency_.data() + offsets_[i + 1]};
  }
  int degree(int i) const { return static_cast<int>(offsets_[i + 1] - offsets_[i]); }

  bool has_edge(int i, int j) const {
    const auto key = make_pair_key(i, j);
    return std::binary_search(edges_.begin(), edges_.end(), key);
  }

  const std::vector<MaskedPair>& masked_pairs() const { return masked_; }
  bool is_masked(int i, int j) const {
    const auto key = make_pair_key(i, j);
    return std::binary_search(masked_.begin(), masked_.end(), MaskedPair{key.first, key.second, false},
                              [](const MaskedPair& a, const MaskedPair& b) {
                                return std::pair(a.i, a.j) < std::pair(b.i, b.j);
                              });
  }

  /// Size of the pair universe n(n+1)/2, masked pairs included.
  double total_pairs() const { return 0.5 * static_cast<double>(n_) * (n_ + 1.0); }
  /// Pairs that enter the training likelihood.
  double training_pairs() const { return total_pairs() - static_cast<double>(masked_.size()); }

  bool has_names() const { return !names_.empty(); }
  const std::vector<std::string>& names() const { return names_; }
  std::string name(int i) const { return names_.empty() ? std::to_string(i) : names_[i]; }

  /// Map from node name to index (decimal indices when the graph is unnamed).
  std::unordered_map<std::string, int> name_index() const {
    std::unordered_map<std::string, int> index;
    index.reserve(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) index.emplace(name(i), i);
    return index;
  }

 private:
  void check_node(int v) const {
    if (v < 0 || v >= n_) {
      throw std::out_of_range("graph: node index " + std::to_string(v) + " outside [0, " +
                              std::to_string(n_) + ")");
    }
  }

  int n_ = 0;
  std::vector<Edge> edges_;
  std::vector<MaskedPair> masked_;
  std::vector<std::string> names_;
  std::vector<std::size_t> offsets_;
  std::vector<int> adjacency_;
  std::size_t self_loops_ = 0;
};

/// Planted (or any hard) cluster assignment.
struct PlantedAssignment {
  std::vector<int> labels;
  int k_true = 0;
};

// ---------------------------------------------------------------------------
// Edge-list I/O

namespace detail {

inline bool all_default_names(const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] != std::to_string(i)) return false;
  }
  return true;
}

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < line.size() && !std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    if (pos > start) tokens.emplace_back(line.substr(start, pos - start));
  }
  return tokens;
}

}  // namespace detail

/// Reads a whitespace-separated edge list.
///
/// Node tokens are arbitrary strings mapped to dense indices in order of first
/// appearance. Lines starting with '#' are comments; the comment
/// `# nodes: N` additionally pre-registers the tokens "0".."N-1" so that
/// isolated nodes and index order survive a serialize/parse round trip.
inline Graph parse_edge_list(std::istream& in) {
  std::unordered_map<std::string, int> index;
  std::vector<std::string> names;
  std::vector<Edge> edges;
  auto intern = [&](const std::string& token) {
    auto [it, inserted] = index.emplace(token, static_cast<int>(names.size()));
    if (inserted) names.push_back(token);
    return it->second;
  };

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view(line);
    std::size_t first = view.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) continue;
    view.remove_prefix(first);
    if (view.front() == '#') {
      auto tokens = detail::split_ws(view.substr(1));
      if (tokens.size() == 2 && tokens[0] == "nodes:") {
        long long count = 0;
        try {
          count = std::stoll(tokens[1]);
        } catch (const std::exception&) {
          throw ParseError(line_no, "bad node-count directive");
        }
        if (count < 0) throw ParseError(line_no, "bad node-count directive");
        for (long long v = 0; v < count; ++v) intern(std::to_string(v));
      }
      continue;
    }
    auto tokens = detail::split_ws(view);
    if (tokens.size() != 2) {
      throw ParseError(line_no, "expected exactly two node identifiers, got " +
                                    std::to_string(tokens.size()));
    }
    const int a = intern(tokens[0]);
    const int b = intern(tokens[1]);
    edges.push_back(make_pair_key(a, b));
  }
  if (edges.empty()) throw ParseError(0, "no edges");
  const int n = static_cast<int>(names.size());
  if (detail::all_default_names(names)) names.clear();
  return Graph(n, std::move(edges), {}, std::move(names));
}

inline Graph parse_edge_list(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_edge_list(in);
}

/// Writes the training edges in sorted pair order. Unnamed graphs get a
/// `# nodes: N` header so that parse_edge_list reproduces them exactly.
inline void serialize_edge_list(const Graph& g, std::ostream& out) {
  if (!g.has_names()) out << "# nodes: " << g.num_nodes() << '\n';
  for (const auto& e : g.edges()) out << g.name(e.first) << ' ' << g.name(e.second) << '\n';
}

inline void write_assignment(const Graph& g, std::span<const int> labels, std::ostream& out) {
  for (int i = 0; i < g.num_nodes(); ++i) out << g.name(i) << ' ' << labels[i] << '\n';
}

/// Reads "node_id cluster_index" lines; nodes are resolved through the graph's names.
inline std::vector<int> read_assignment(const Graph& g, std::istream& in) {
  const auto index = g.name_index();
  std::vector<int> labels(static_cast<std::size_t>(g.num_nodes()), -1);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = detail::split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    if (tokens.size() != 2) throw ParseError(line_no, "expected \"node_id cluster_index\"");
    auto it = index.find(tokens[0]);
    if (it == index.end()) throw ParseError(line_no, "unknown node '" + tokens[0] + "'");
    try {
      labels[it->second] = std::stoi(tokens[1]);
    } catch (const std::exception&) {
      throw ParseError(line_no, "bad cluster index '" + tokens[1] + "'");
    }
  }
  for (int i = 0; i < g.num_nodes(); ++i) {
    if (labels[i] < 0) throw ParseError(0, "node '" + g.name(i) + "' has no label");
  }
  return labels;
}

inline void write_masked_pairs(const Graph& g, std::ostream& out) {
  for (const auto& p : g.masked_pairs()) {
    out << g.name(p.i) << ' ' << g.name(p.j) << ' ' << (p.observed ? 1 : 0) << '\n';
  }
}

/// Reads "i j observed_bit" lines, resolving node names through `g`.
inline std::vector<MaskedPair> read_masked_pairs(const Graph& g, std::istream& in) {
  const auto index = g.name_index();
  std::vector<MaskedPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto tokens = detail::split_ws(line);
    if (tokens.empty() || tokens[0].front() == '#') continue;
    if (tokens.size() != 3 || (tokens[2] != "0" && tokens[2] != "1")) {
      throw ParseError(line_no, "expected \"i j observed_bit\"");
    }
    auto a = index.find(tokens[0]);
    auto b = index.find(tokens[1]);
    if (a == index.end() || b == index.end()) throw ParseError(line_no, "unknown node");
    const auto key = make_pair_key(a->second, b->second);
    pairs.push_back({key.first, key.second, tokens[2] == "1"});
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Synthetic generation and masking

inline void check_simplex(const Eigen::VectorXd& gamma, const char* what) {
  if (gamma.size() == 0) throw std::domain_error(std::string(what) + ": empty proportion vector");
  for (double g : gamma) {
    if (!(g >= 0.0) || !std::isfinite(g)) {
      throw std::domain_error(std::string(what) + ": proportions must be nonnegative");
    }
  }
  if (std::abs(gamma.sum() - 1.0) > 1e-12) {
    throw std::domain_error(std::string(what) + ": proportions must sum to 1");
  }
}

inline void check_affinity(const Eigen::MatrixXd& pi, Eigen::Index k, const char* what) {
  if (pi.rows() != k || pi.cols() != k) {
    throw std::domain_error(std::string(what) + ": affinity matrix must be K x K");
  }
  for (Eigen::Index a = 0; a < k; ++a) {
    for (Eigen::Index b = 0; b < k; ++b) {
      const double p = pi(a, b);
      if (!(p >= 0.0 && p <= 1.0)) {
        throw std::domain_error(std::string(what) + ": affinity entries must lie in [0, 1]");
      }
      if (std::abs(p - pi(b, a)) > 1e-12) {
        throw std::domain_error(std::string(what) + ": affinity matrix must be symmetric");
      }
    }
  }
}

/// Samples a graph from the block model: labels i.i.d. from gamma, then every
/// pair i <= j (self-pairs included) independently with probability
/// pi[label_i][label_j].
inline std::pair<Graph, PlantedAssignment> generate_sbm(int n, const Eigen::VectorXd& gamma,
                                                        const Eigen::MatrixXd& pi,
                                                        std::uint64_t seed) {
  if (n < 1) throw std::domain_error("generate_sbm: n must be positive");
  check_simplex(gamma, "generate_sbm");
  check_affinity(pi, gamma.size(), "generate_sbm");

  Rng label_rng = Rng(seed).fork(1);
  Rng edge_rng = Rng(seed).fork(2);
  PlantedAssignment planted;
  planted.k_true = static_cast<int>(gamma.size());
  planted.labels.resize(static_cast<std::size_t>(n));
  for (auto& z : planted.labels) z = static_cast<int>(label_rng.categorical(gamma));

  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      if (edge_rng.uniform() < pi(planted.labels[i], planted.labels[j])) edges.push_back({i, j});
    }
  }
  return {Graph(n, std::move(edges)), std::move(planted)};
}

/// Number of pairs held out for a masking fraction: ceil(fraction * pairs),
/// with products that are integral up to rounding noise taken as exact.
inline std::size_t masked_pair_count(double fraction, double pairs) {
  const double raw = fraction * pairs;
  const double nearest = std::round(raw);
  if (std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(raw));
}

/// Holds out ceil(fraction * n(n+1)/2) node pairs chosen uniformly without
/// replacement; their observed values are kept for evaluation only.
inline Graph mask_pairs(const Graph& g, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw std::domain_error("mask_pairs: fraction must lie in (0, 1)");
  }
  if (!g.masked_pairs().empty()) throw std::invalid_argument("mask_pairs: graph is already masked");
  const auto n = static_cast<std::uint64_t>(g.num_nodes());
  const std::uint64_t universe = n * (n + 1) / 2;
  const std::size_t count = masked_pair_count(fraction, static_cast<double>(universe));

  // Floyd's sampling over pair indices.
  Rng rng = Rng(seed).fork(3);
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(count * 2);
  for (std::uint64_t j = universe - count; j < universe; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::uint64_t> picked(chosen.begin(), chosen.end());
  std::sort(picked.begin(), picked.end());

  // Row i holds pairs (i, i..n-1); row_start(i) = i*n - i*(i-1)/2.
  auto row_start = [n](std::uint64_t i) { return i * n - i * (i - 1) / 2; };
  std::vector<MaskedPair> masked;
  masked.reserve(count);
  std::uint64_t row = 0;
  for (std::uint64_t idx : picked) {
    while (row + 1 < n && row_start(row + 1) <= idx) ++row;
    const auto j = static_cast<int>(row + (idx - row_start(row)));
    const auto i = static_cast<int>(row);
    masked.push_back({i, j, g.has_edge(i, j)});
  }

  std::vector<Edge> kept;
  kept.reserve(g.num_edges());
  std::size_t cursor = 0;
  for (const auto& e : g.edges()) {
    while (cursor < masked.size() && std::pair(masked[cursor].i, masked[cursor].j) < std::pair(e.first, e.second)) {
      ++cursor;
    }
    if (cursor < masked.size() && masked[cursor].i == e.first && masked[cursor].j == e.second) continue;
    kept.push_back(e);
  }
  return Graph(g.num_nodes(), std::move(kept), std::move(masked), g.names());
}

}  // namespace f2ab
