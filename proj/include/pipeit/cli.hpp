#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <json.hpp>

#include "pipeit/dse.hpp"
#include "pipeit/error.hpp"
#include "pipeit/netdesc.hpp"
#include "pipeit/perfmodel.hpp"
#include "pipeit/pipesim.hpp"

namespace pipeit::cli {

enum Exit : int { kOk = 0, kError = 1, kFitError = 2, kRefused = 3 };

inline std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 digest failed");
  std::ostringstream os;
  for (unsigned i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

// 4272048 -> "4,272,048"
inline std::string thousands(std::uint64_t v) {
  std::string s = std::to_string(v);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

// Input files read during a run, with their digests for the output header.
class Inputs {
 public:
  std::string read(const std::string& role, const std::string& path) {
    std::string text = read_text_file(path);
    entries_.push_back({role, path, sha256_hex(text)});
    return text;
  }
  void stamp(nlohmann::ordered_json& j, std::uint64_t seed) const {
    j["seed"] = seed;
    nlohmann::ordered_json in = nlohmann::ordered_json::object();
    for (auto& e : entries_) in[e.role] = {{"path", e.path}, {"sha256", e.digest}};
    j["inputs"] = in;
  }

 private:
  struct Entry {
    std::string role, path, digest;
  };
  std::vector<Entry> entries_;
};

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
  if (!f) throw Error("write to '" + path + "' failed");
}

inline nlohmann::ordered_json header(const std::string& kind) {
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["kind"] = kind;
  return j;
}

inline void print_warnings(const Diagnostics& d, std::ostream& err) {
  for (auto& w : d.warnings()) err << "warning: " << w << '\n';
}

// ---------------------------------------------------------------------------

struct FitArgs {
  std::string measurements;
  std::string out;
  std::string name = "fitted";
  std::map<CoreType, int> tile_sizes;
  std::map<CoreType, int> cores;
  std::uint64_t seed = 0;
};

inline int cmd_fit(const FitArgs& a, std::ostream& out, std::ostream& err) {
  Inputs inputs;
  auto samples = parse_measurements(inputs.read("measurements", a.measurements));
  Diagnostics diag;
  std::vector<ClusterFit> reports;
  PlatformModel p = fit_platform(samples, a.tile_sizes, a.cores, a.name, &reports, &diag);

  auto j = header("platform");
  auto body = platform_to_json(p);
  for (auto& [k, v] : body.items())
    if (k != "schema") j[k] = v;
  nlohmann::ordered_json fit = nlohmann::ordered_json::array();
  out << "fitted " << samples.size() << " samples\n";
  for (auto& r : reports) {
    auto one = [](const FitReport& f) {
      return nlohmann::ordered_json{{"samples", f.samples},
                                    {"rms_residual_s", f.rms_residual},
                                    {"max_relative_residual", f.max_rel_residual},
                                    {"condition", f.condition}};
    };
    fit.push_back({{"type", std::string(1, core_code(r.type))}, {"single_core", one(r.single)}, {"thread", one(r.thread)}});
    out << "  cluster " << core_code(r.type) << ": single-core rms residual " << r.single.rms_residual * 1e3
        << " ms over " << r.single.samples << " samples, thread rms residual " << r.thread.rms_residual * 1e3
        << " ms over " << r.thread.samples << " samples\n";
  }
  j["fit"] = fit;
  j["warnings"] = diag.warnings();
  inputs.stamp(j, a.seed);
  print_warnings(diag, err);
  if (!a.out.empty()) {
    write_file(a.out, j.dump(2) + "\n");
    out << "wrote " << a.out << '\n';
  } else {
    out << j.dump(2) << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct ModelArgs {
  std::string network, platform, matrix;
  unsigned jobs = 1;
};

struct LoadedMatrix {
  TimeMatrix t;
  std::string name;
};

// Time matrix from a network and platform, or read directly from CSV.
inline LoadedMatrix load_matrix(const ModelArgs& a, Inputs& inputs, Diagnostics& diag) {
  if (!a.matrix.empty()) {
    if (!a.network.empty() || !a.platform.empty())
      throw Error("give either --matrix or --network with --platform, not both");
    return {parse_time_matrix(inputs.read("matrix", a.matrix)), a.matrix};
  }
  if (a.network.empty() || a.platform.empty()) throw Error("--network and --platform are required");
  Network net = parse_network(inputs.read("network", a.network));
  PlatformModel p;
  try {
    p = platform_from_json(nlohmann::json::parse(inputs.read("platform", a.platform)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("platform file '" + a.platform + "': " + e.what());
  }
  return {build_time_matrix(net, p, &diag, a.jobs), net.name};
}

inline void print_plan(const PipelinePlan& p, std::ostream& out) {
  out << format_plan(p) << '\n';
  out << "  stage  config  layers     latency_ms\n";
  for (std::size_t i = 0; i < p.stages.size(); ++i) {
    std::ostringstream r;
    r << '[' << p.ranges[i].first + 1 << ',' << p.ranges[i].second << ']';
    out << "  " << std::left << std::setw(7) << i + 1 << std::setw(8) << p.stages[i].str() << std::setw(11)
        << r.str() << std::right << std::fixed << std::setprecision(3) << p.latencies[i] * 1e3 << '\n';
  }
  out << "  throughput " << std::fixed << std::setprecision(3) << p.throughput << " img/s\n";
  out.unsetf(std::ios::floatfield);
}

struct ExploreArgs {
  ModelArgs model;
  std::string out;         // plan JSON
  std::string matrix_out;  // time matrix CSV
  bool trace = false;
  std::uint64_t seed = 0;
};

inline int cmd_explore(const ExploreArgs& a, std::ostream& out, std::ostream& err) {
  Inputs inputs;
  Diagnostics diag;
  auto m = load_matrix(a.model, inputs, diag);
  if (!a.matrix_out.empty()) write_file(a.matrix_out, format_time_matrix(m.t));
  auto r = merge_stage(m.t);
  if (m.t.layers() == 1) diag.warn("network has a single layer; pipelining is degenerate");
  for (auto& e : r.trace)
    if (e.kind == MergeEvent::Flow && !e.converged)
      diag.warn("workload flow did not reach a fixed point; kept the best allocation seen");
  if (r.kept_earlier)
    diag.warn("merging ended at " + format_plan(r.terminal) + "; an earlier pipeline was faster and is reported");

  if (a.trace) {
    for (auto& e : r.trace) {
      std::ostringstream ps;
      for (std::size_t i = 0; i < e.pipeline.size(); ++i) ps << (i ? "-" : "") << e.pipeline[i].str();
      if (e.kind == MergeEvent::Flow) {
        out << "flow  " << ps.str() << " :";
        for (std::size_t i = 0; i + 1 < e.bounds.size(); ++i) {
          if (e.bounds[i + 1] == e.bounds[i])
            out << " {}";
          else
            out << " [" << e.bounds[i] + 1 << ',' << e.bounds[i + 1] << ']';
        }
        out << '\n';
      } else {
        out << "merge " << e.pipeline[e.pair].str() << '+' << e.pipeline[e.pair + 1].str() << " at stage "
            << e.pair + 1 << ": " << (e.accepted ? "accept" : "reject") << '\n';
      }
    }
  }
  out << m.name << ": ";
  print_plan(r.plan, out);
  print_warnings(diag, err);

  if (!a.out.empty()) {
    auto j = header("plan");
    const auto body = plan_to_json(r.plan);
    for (auto& [k, v] : body.items()) j[k] = v;
    j["network"] = m.name;
    j["warnings"] = diag.warnings();
    inputs.stamp(j, a.seed);
    write_file(a.out, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct OracleArgs {
  ModelArgs model;
  std::uint64_t max_points = 10'000'000;
  std::string out;
  std::uint64_t seed = 0;
};

inline int cmd_oracle(const OracleArgs& a, std::ostream& out, std::ostream& err) {
  Inputs inputs;
  Diagnostics diag;
  auto m = load_matrix(a.model, inputs, diag);
  print_warnings(diag, err);
  OracleResult o;
  try {
    o = exhaustive_search(m.t, {a.max_points, a.model.jobs});
  } catch (const LimitError& e) {
    err << "refused: design space has " << thousands(e.count) << " points (as-written count), limit "
        << thousands(a.max_points) << '\n';
    return kRefused;
  }
  auto h = merge_stage(m.t);
  const double gap = (o.plan.throughput - h.plan.throughput) / o.plan.throughput * 100.0;
  out << "oracle    ";
  print_plan(o.plan, out);
  out << "heuristic ";
  print_plan(h.plan, out);
  out << "design points " << thousands(o.design_points) << " (+" << thousands(o.degenerate_points)
      << " with empty stages)\n";
  out << "gap " << std::fixed << std::setprecision(3) << gap << "%\n";
  out.unsetf(std::ios::floatfield);
  if (!a.out.empty()) {
    auto j = header("oracle");
    j["oracle"] = plan_to_json(o.plan);
    j["heuristic"] = plan_to_json(h.plan);
    j["design_points"] = o.design_points;
    j["degenerate_points"] = o.degenerate_points;
    j["gap_percent"] = gap;
    inputs.stamp(j, a.seed);
    write_file(a.out, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct CountArgs {
  int big = 4, small = 4;
  std::optional<std::int64_t> layers;
  std::optional<CountVariant> variant;
};

inline int cmd_count(const CountArgs& a, std::ostream& out, std::ostream&) {
  if (a.big < 1 || a.small < 1) throw DomainError("core counts must be >= 1");
  std::uint64_t total = 0;
  for (int p = 2; p <= a.big + a.small; ++p) {
    auto c = count_pipelines(a.big, a.small, p);
    total += c;
    out << "p=" << p << ' ' << thousands(c) << '\n';
  }
  out << "total " << thousands(total) << '\n';
  if (a.layers) {
    if (*a.layers < 2) throw DomainError("--layers must be >= 2");
    auto w = count_design_points(*a.layers, a.big, a.small, CountVariant::AsWritten);
    auto r = count_design_points(*a.layers, a.big, a.small, CountVariant::Reported);
    out << "design points W=" << *a.layers << ": ";
    if (!a.variant)
      out << "as-written " << thousands(w) << " / reported-variant " << thousands(r) << '\n';
    else if (*a.variant == CountVariant::AsWritten)
      out << "as-written " << thousands(w) << '\n';
    else
      out << "reported-variant " << thousands(r) << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string plan;
  std::vector<double> stage_ms;  // alternative to a plan file
  std::size_t images = 50;
  double jitter = 0;  // log-normal sigma, 0 disables
  double handoff_ms = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string completions;
};

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out, std::ostream&) {
  Inputs inputs;
  SimSpec spec;
  if (!a.plan.empty()) {
    auto j = nlohmann::json::parse(inputs.read("plan", a.plan));
    spec.stage_times = plan_from_json(j).latencies;
  } else {
    for (double ms : a.stage_ms) spec.stage_times.push_back(ms * 1e-3);
  }
  if (spec.stage_times.empty()) throw Error("give --plan or --stage-ms");
  spec.images = a.images;
  spec.handoff = a.handoff_ms * 1e-3;
  if (a.jitter > 0) spec.jitter = Jitter{a.jitter, a.seed};
  auto r = simulate(spec);
  SimSpec flat = spec;
  flat.jitter.reset();
  const double steady = steady_state_throughput(flat);

  out << std::setprecision(6);
  out << "images " << spec.images << ", makespan " << r.makespan * 1e3 << " ms\n";
  out << "throughput " << r.throughput << " img/s (steady state " << steady << " img/s)\n";
  out << "busy";
  for (double b : r.busy) out << ' ' << b;
  out << '\n';
  if (!a.completions.empty()) write_file(a.completions, format_completions(r));
  if (!a.out.empty()) {
    auto j = header("simulation");
    j["images"] = spec.images;
    j["stage_times_ms"] = nlohmann::ordered_json::array();
    for (double t : spec.stage_times) j["stage_times_ms"].push_back(t * 1e3);
    j["jitter_sigma"] = a.jitter;
    j["handoff_ms"] = a.handoff_ms;
    j["makespan_ms"] = r.makespan * 1e3;
    j["throughput_ips"] = r.throughput;
    j["steady_state_throughput_ips"] = steady;
    j["busy_fraction"] = r.busy;
    inputs.stamp(j, a.seed);
    write_file(a.out, j.dump(2) + "\n");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string errors;              // CSV network,config,predicted_ms,measured_ms
  std::vector<std::string> plans;  // plan JSON files
  std::string csv;                 // optional CSV output of the error table
};

inline int cmd_report(const ReportArgs& a, std::ostream& out, std::ostream&) {
  if (a.errors.empty() && a.plans.empty()) throw Error("give --errors and/or --plan");
  Inputs inputs;
  if (!a.errors.empty()) {
    auto table = prediction_error(parse_error_records(inputs.read("errors", a.errors)));
    out << "Prediction error (MAPE)\n" << format_error_table(table);
    if (!a.csv.empty()) write_file(a.csv, format_error_csv(table));
  }
  if (!a.plans.empty()) {
    if (!a.errors.empty()) out << '\n';
    out << "Network        Pipeline / allocation                          Throughput (img/s)\n";
    for (auto& path : a.plans) {
      auto j = nlohmann::json::parse(inputs.read("plan", path));
      auto p = plan_from_json(j);
      std::string name = j.value("network", path);
      out << std::left << std::setw(15) << name << std::setw(47) << format_plan(p) << std::right << std::fixed
          << std::setprecision(2) << p.throughput << '\n';
      out.unsetf(std::ios::floatfield);
    }
  }
  return kOk;
}

}  // namespace pipeit::cli
