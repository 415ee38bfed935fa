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

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "f2ab/f2ab.hpp"

namespace {

using namespace f2ab;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::uint64_t seed = 0;
  std::string output;
  double tol_msg = 1e-2;
  double tol_pi = 1e-8;
  int max_sweeps = FitOptions{}.max_sweeps;
  int max_outer = FitOptions{}.max_outer;
  std::string bicluster_mass = "proportions";
  unsigned threads = 1;
  bool timing = false;
  bool verbose = false;

  FitOptions fit_options() const {
    FitOptions o;
    o.tol_msg = tol_msg;
    o.tol_pi = tol_pi;
    o.max_sweeps = max_sweeps;
    o.max_outer = max_outer;
    o.bicluster_mass = bicluster_mass == "edges" ? BiclusterMass::kEdges : BiclusterMass::kProportions;
    return o;
  }
};

void add_fit_flags(CLI::App* cmd, Common& c) {
  cmd->add_option("--tol-msg", c.tol_msg, "BP convergence threshold on mean message change")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--tol-pi", c.tol_pi, "outer convergence threshold on max |delta pi|")->check(CLI::PositiveNumber);
  cmd->add_option("--max-sweeps", c.max_sweeps, "BP sweep cap per outer iteration")->check(CLI::PositiveNumber);
  cmd->add_option("--max-outer", c.max_outer, "outer iteration cap")->check(CLI::PositiveNumber);
  cmd->add_option("--bicluster-mass", c.bicluster_mass, "scale of the bicluster penalty")
      ->check(CLI::IsMember({"proportions", "edges"}));
  cmd->add_option("--threads", c.threads, "worker threads for per-K fits (0 = all cores)");
  cmd->add_flag("--verbose", c.verbose, "print one log line per outer iteration");
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(path, text);
  }
}

Graph load_graph(const std::string& path, const std::string& masked_path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open " + path);
  Graph g = parse_edge_list(in);
  if (masked_path.empty()) return g;
  std::ifstream min(masked_path);
  if (!min) throw UsageError("cannot open " + masked_path);
  auto masked = read_masked_pairs(g, min);
  std::vector<std::string> names = g.names();
  return Graph(g.num_nodes(), g.edges(), std::move(masked), std::move(names));
}

std::pair<int, int> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  try {
    if (colon == std::string::npos) {
      const int k = std::stoi(text);
      return {k, k};
    }
    return {std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1))};
  } catch (const std::exception&) {
    throw UsageError("bad K range '" + text + "' (expected lo:hi)");
  }
}

void log_trace(const FitResult& r) {
  for (const auto& t : r.trace) {
    std::fprintf(stderr, "iter %d sweeps %d delta %.3g k %d criterion %.6f dpi %.3g\n", t.iteration, t.sweeps,
                 t.message_delta, t.k_active, t.criterion, t.pi_change);
  }
}

std::string format_sweep(const SweepResult& s) {
  std::ostringstream out;
  out << "k,ffic_lb,fic,icl,cicl,entropy,selected\n";
  char buf[256];
  for (std::size_t t = 0; t < s.rows.size(); ++t) {
    const auto& r = s.rows[t].criteria;
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%s\n", s.rows[t].k, r.ffic_lb, r.fic, r.icl,
                  r.cicl, r.entropy, t == s.best_row ? "*" : "");
    out << buf;
  }
  out << "# best_k=" << s.best_k << '\n';
  return out.str();
}

int run_generate(int n, int k, double pin, double pout, const Common& c, const std::string& labels_path,
                 const std::string& holdout_path, double mask_fraction) {
  if (c.output.empty()) throw UsageError("generate: --output is required");
  Params p;
  p.gamma = Eigen::VectorXd::Constant(k, 1.0 / k);
  p.pi = Eigen::MatrixXd::Constant(k, k, pout);
  p.pi.diagonal().setConstant(pin);
  auto [g, truth] = generate_sbm(n, p.gamma, p.pi, c.seed);
  if (!holdout_path.empty()) {
    g = mask_pairs(g, mask_fraction, Rng(c.seed).fork(7).next());
    std::ostringstream h;
    write_masked_pairs(g, h);
    emit(holdout_path, h.str());
  }
  std::ostringstream edges;
  serialize_edge_list(g, edges);
  emit(c.output, edges.str());
  if (!labels_path.empty()) {
    std::ostringstream l;
    write_assignment(g, truth.labels, l);
    emit(labels_path, l.str());
  }
  return 0;
}

int run_fit(const std::string& input, const std::string& masked, int k_max, const std::string& method_text,
            const Common& c) {
  const Method method = parse_method(method_text);
  const Graph g = load_graph(input, masked);
  const FitOptions opts = c.fit_options();
  FitResult r;
  switch (method) {
    case Method::kF2ab: r = f2ab_fit(g, k_max, c.seed, opts); break;
    case Method::kFicBp: r = fic_bp_fit(g, k_max, c.seed, opts); break;
    case Method::kIcl:
    case Method::kCicl: r = criterion_sweep(g, 1, k_max, method, c.seed, opts, c.threads).best_fit; break;
  }
  if (c.verbose) log_trace(r);
  for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  emit(c.output, to_json(r, g, c.timing).dump(2) + "\n");
  return 0;
}

int run_sweep(const std::string& input, const std::string& masked, const std::string& range,
              const std::string& method_text, const Common& c) {
  const Method method = parse_method(method_text);
  const auto [lo, hi] = parse_range(range);
  if (lo < 1 || hi < lo) throw UsageError("bad K range '" + range + "'");
  const Graph g = load_graph(input, masked);
  const SweepResult s = criterion_sweep(g, lo, hi, method, c.seed, c.fit_options(), c.threads);
  emit(c.output, format_sweep(s));
  return 0;
}

int run_eval(const std::string& fit_path, const std::string& masked_path, const std::string& labels_path,
             const Common& c) {
  const Json doc = Json::parse(read_file(fit_path));
  const LoadedFit fit = fit_from_json(doc);
  const int n = static_cast<int>(fit.node_names.size());
  const Graph names(n, {}, {}, fit.node_names);
  std::ifstream min(masked_path);
  if (!min) throw UsageError("cannot open " + masked_path);
  const auto masked = read_masked_pairs(names, min);

  EvalReport report;
  report.npll = npll(fit.params, fit.marginals, masked);
  report.n_masked = masked.size();
  report.selected_k = fit.selected_k;
  report.runtime_seconds = doc.value("runtime_seconds", 0.0);
  if (!labels_path.empty()) {
    std::ifstream lin(labels_path);
    if (!lin) throw UsageError("cannot open " + labels_path);
    report.ari = adjusted_rand_index(fit.map_assignment, read_assignment(names, lin));
  }
  Json j;
  j["method"] = fit.method;
  j["npll"] = report.npll;
  j["n_masked"] = report.n_masked;
  j["selected_k"] = report.selected_k;
  j["ari"] = report.ari ? Json(*report.ari) : Json(nullptr);
  j["runtime_seconds"] = report.runtime_seconds;
  emit(c.output, j.dump(2) + "\n");
  return 0;
}

int run_protocol(const std::vector<int>& ns, const std::vector<std::uint64_t>& seeds, int k_max, bool no_sweeps,
                 const Common& c) {
  const auto rows = run_synthetic_protocol(ns, seeds, k_max, c.fit_options(), !no_sweeps, c.threads);
  std::ostringstream out;
  write_protocol_table(out, rows, c.timing);
  emit(c.output, out.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic block model inference with penalized belief propagation"};
  app.require_subcommand(1);
  Common c;

  int n = 400, k = 4, k_max = 20;
  double pin = 0.05, pout = 0.0025, mask_fraction = 0.01;
  std::string input, masked, labels, holdout, method = "f2ab", range = "1:8", fit_path;
  std::vector<int> ns = {400, 800};
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  bool no_sweeps = false;

  auto* gen = app.add_subcommand("generate", "sample a planted-partition graph");
  gen->add_option("--n", n, "number of nodes")->check(CLI::PositiveNumber);
  gen->add_option("--k", k, "number of planted clusters")->check(CLI::PositiveNumber);
  gen->add_option("--pin", pin, "within-cluster edge probability")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--pout", pout, "between-cluster edge probability")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--seed", c.seed, "random seed");
  gen->add_option("--output", c.output, "edge list path")->required();
  gen->add_option("--labels", labels, "planted assignment path");
  gen->add_option("--holdout", holdout, "hold out pairs and write them here");
  gen->add_option("--mask-fraction", mask_fraction, "fraction of pairs to hold out")->check(CLI::Range(0.0, 1.0));

  auto* fit = app.add_subcommand("fit", "fit a graph and write the result as JSON");
  fit->add_option("--input", input, "edge list")->required();
  fit->add_option("--masked", masked, "held-out pairs excluded from training");
  fit->add_option("--k-max", k_max, "initial (maximum) number of clusters")->check(CLI::PositiveNumber);
  fit->add_option("--method", method, "f2ab, fic-bp, icl or cicl")
      ->check(CLI::IsMember({"f2ab", "fic-bp", "icl", "cicl"}));
  fit->add_option("--seed", c.seed, "random seed");
  fit->add_option("--output", c.output, "result path (default stdout)");
  fit->add_flag("--timing", c.timing, "include wall-clock runtime in the output");
  add_fit_flags(fit, c);

  auto* sweep = app.add_subcommand("sweep", "fit every K in a range and tabulate the criteria");
  sweep->add_option("--input", input, "edge list")->required();
  sweep->add_option("--masked", masked, "held-out pairs excluded from training");
  sweep->add_option("--sweep", range, "inclusive K range lo:hi");
  sweep->add_option("--method", method, "criterion used to select K")
      ->check(CLI::IsMember({"f2ab", "fic-bp", "icl", "cicl"}));
  sweep->add_option("--seed", c.seed, "random seed");
  sweep->add_option("--output", c.output, "table path (default stdout)");
  add_fit_flags(sweep, c);

  auto* eval = app.add_subcommand("eval", "score a fit on held-out pairs");
  eval->add_option("--fit", fit_path, "fit result JSON")->required()->check(CLI::ExistingFile);
  eval->add_option("--masked", masked, "held-out pairs")->required();
  eval->add_option("--labels", labels, "reference assignment for ARI");
  eval->add_option("--output", c.output, "report path (default stdout)");

  auto* protocol = app.add_subcommand("protocol", "synthetic recovery experiment table");
  protocol->add_option("--n", ns, "graph sizes")->delimiter(',');
  protocol->add_option("--seeds", seeds, "seeds")->delimiter(',');
  protocol->add_option("--k-max", k_max, "initial number of clusters")->check(CLI::PositiveNumber);
  protocol->add_flag("--no-sweeps", no_sweeps, "skip the fixed-K criterion sweeps");
  protocol->add_option("--output", c.output, "table path (default stdout)");
  protocol->add_flag("--timing", c.timing, "fill the seconds column");
  add_fit_flags(protocol, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return run_generate(n, k, pin, pout, c, labels, holdout, mask_fraction);
    if (fit->parsed()) return run_fit(input, masked, k_max, method, c);
    if (sweep->parsed()) return run_sweep(input, masked, range, method, c);
    if (eval->parsed()) return run_eval(fit_path, masked, labels, c);
    if (protocol->parsed()) return run_protocol(ns, seeds, k_max, no_sweeps, c);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
