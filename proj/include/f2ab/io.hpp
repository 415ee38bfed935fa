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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "f2ab/fit.hpp"
#include "f2ab/graph.hpp"
#include "f2ab/model.hpp"
#include "f2ab/random.hpp"

namespace f2ab {

using Json = nlohmann::ordered_json;

inline Json to_json(const Params& p) {
  const int k = p.k();
  Json j;
  j["k"] = k;
  j["gamma"] = std::vector<double>(p.gamma.data(), p.gamma.data() + k);
  Json rows = Json::array();
  for (int a = 0; a < k; ++a) {
    std::vector<double> row(static_cast<std::size_t>(k));
    for (int b = 0; b < k; ++b) row[b] = p.pi(a, b);
    rows.push_back(row);
  }
  j["pi"] = rows;
  return j;
}

inline Params params_from_json(const Json& j) {
  const int k = j.at("k").get<int>();
  if (k < 1) throw std::runtime_error("params: k must be >= 1");
  const auto gamma = j.at("gamma").get<std::vector<double>>();
  const auto pi = j.at("pi").get<std::vector<std::vector<double>>>();
  if (static_cast<int>(gamma.size()) != k || static_cast<int>(pi.size()) != k) {
    throw std::runtime_error("params: size mismatch with k");
  }
  Params p;
  p.gamma = Eigen::Map<const Eigen::VectorXd>(gamma.data(), k);
  p.pi.resize(k, k);
  for (int a = 0; a < k; ++a) {
    if (static_cast<int>(pi[a].size()) != k) throw std::runtime_error("params: pi row has wrong length");
    for (int b = 0; b < k; ++b) p.pi(a, b) = pi[a][b];
  }
  p.validate();
  return p;
}

inline Json to_json(const CriterionReport& r) {
  return Json{{"ffic_lb", r.ffic_lb},         {"fic", r.fic},
              {"icl", r.icl},                 {"cicl", r.cicl},
              {"entropy", r.entropy},         {"expected_ll", r.expected_ll},
              {"r1_tilde", r.r1_tilde},       {"r2_tilde", r.r2_tilde},
              {"ell_tilde", r.ell_tilde},     {"entropy_negative", r.entropy_negative},
              {"non_converged", r.non_converged}};
}

/// Serializes a fit. Node rows carry the graph's node names when it has
/// them. Runtime is only written when `with_runtime` is set, so repeated
/// runs produce identical files.
inline Json to_json(const FitResult& r, const Graph& g, bool with_runtime = false) {
  Json j;
  j["method"] = r.method;
  j["rng"] = std::string(kRngAlgorithm);
  j["seed"] = r.seed;
  j["k_max"] = r.k_max;
  j["selected_k"] = r.selected_k;
  j["converged"] = r.converged;
  j["active_clusters"] = r.active_clusters;
  j["params"] = to_json(r.params);
  j["criteria"] = to_json(r.criteria);
  Json nodes = Json::array();
  for (Eigen::Index i = 0; i < r.marginals.rows(); ++i) {
    std::vector<double> row(r.marginals.row(i).data(), r.marginals.row(i).data() + r.marginals.cols());
    Json node;
    node["name"] = g.name(static_cast<int>(i));
    node["map"] = r.map_assignment[static_cast<std::size_t>(i)];
    node["marginal"] = row;
    nodes.push_back(node);
  }
  j["nodes"] = nodes;
  Json trace = Json::array();
  for (const auto& t : r.trace) {
    trace.push_back({{"iteration", t.iteration},
                     {"sweeps", t.sweeps},
                     {"message_delta", t.message_delta},
                     {"k_active", t.k_active},
                     {"criterion", t.criterion},
                     {"pi_change", t.pi_change}});
  }
  j["trace"] = trace;
  j["warnings"] = r.warnings;
  if (with_runtime) j["runtime_seconds"] = r.runtime_seconds;
  return j;
}

/// Fields of a serialized fit needed for evaluation.
struct LoadedFit {
  std::string method;
  int selected_k = 0;
  Params params;
  RowMatrix marginals;
  std::vector<int> map_assignment;
  std::vector<std::string> node_names;
};

inline LoadedFit fit_from_json(const Json& j) {
  LoadedFit f;
  f.method = j.value("method", std::string());
  f.selected_k = j.at("selected_k").get<int>();
  f.params = params_from_json(j.at("params"));
  if (!j.contains("nodes")) throw std::runtime_error("fit file has no node marginals");
  const auto& nodes = j.at("nodes");
  const int k = f.params.k();
  f.marginals.resize(static_cast<Eigen::Index>(nodes.size()), k);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto row = nodes[i].at("marginal").get<std::vector<double>>();
    if (static_cast<int>(row.size()) != k) throw std::runtime_error("fit file: marginal row has wrong length");
    for (int a = 0; a < k; ++a) f.marginals(static_cast<Eigen::Index>(i), a) = row[a];
    f.map_assignment.push_back(nodes[i].at("map").get<int>());
    f.node_names.push_back(nodes[i].at("name").get<std::string>());
  }
  return f;
}

/// Writes `contents` to `path` through a temporary sibling and a rename, so a
/// reader never observes a partial file.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out << contents;
    out.flush();
    if (!out) {
      out.close();
      std::filesystem::remove(tmp);
      throw std::runtime_error("write failed for " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace f2ab
