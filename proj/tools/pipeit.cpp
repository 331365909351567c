#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pipeit/cli.hpp"

using namespace pipeit;

namespace {

// "B=4" pairs from repeated --tile-size / --cores flags.
std::map<CoreType, int> per_type(const std::vector<std::string>& items, const char* flag) {
  std::map<CoreType, int> out;
  for (auto& s : items) {
    auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(std::string(flag) + " expects TYPE=N, got '" + s + "'");
    out[parse_core_type(s.substr(0, eq))] = std::stoi(s.substr(eq + 1));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pipeline partitioning for CNN inference on big.LITTLE clusters"};
  app.require_subcommand(1);
  app.fallthrough();

  std::uint64_t seed = 0;
  unsigned jobs = 1;
  app.add_option("--seed", seed, "Seed recorded in outputs and used for any randomness");
  app.add_option("--jobs", jobs, "Worker threads for matrix construction and enumeration")->check(CLI::PositiveNumber);

  cli::FitArgs fit;
  std::vector<std::string> tile_sizes, cores;
  auto* c_fit = app.add_subcommand("fit", "Fit a platform model to measurements");
  c_fit->add_option("--measurements", fit.measurements, "Measurement CSV")->required();
  c_fit->add_option("--out", fit.out, "Platform JSON to write");
  c_fit->add_option("--name", fit.name, "Platform name");
  c_fit->add_option("--tile-size", tile_sizes, "Tile size per cluster, e.g. B=26 (repeatable)")->required();
  c_fit->add_option("--cores", cores, "Core count per cluster, e.g. B=4 (repeatable)");

  cli::ModelArgs model;
  auto model_opts = [&](CLI::App* c) {
    c->add_option("--network", model.network, "Network descriptor JSON");
    c->add_option("--platform", model.platform, "Platform JSON");
    c->add_option("--matrix", model.matrix, "Time matrix CSV in ms (instead of network + platform)");
  };

  cli::ExploreArgs explore;
  auto* c_explore = app.add_subcommand("explore", "Search pipeline configurations with stage merging");
  model_opts(c_explore);
  c_explore->add_option("--out", explore.out, "Plan JSON to write");
  c_explore->add_option("--matrix-out", explore.matrix_out, "Write the time matrix CSV");
  c_explore->add_flag("--trace", explore.trace, "Print every workload flow and merge decision");

  cli::OracleArgs oracle;
  std::string variant;
  auto* c_oracle = app.add_subcommand("oracle", "Compare stage merging with exhaustive search");
  model_opts(c_oracle);
  c_oracle->add_option("--max-points", oracle.max_points, "Refuse above this many design points");
  c_oracle->add_option("--out", oracle.out, "Comparison JSON to write");

  cli::CountArgs count;
  std::int64_t layers = 0;
  auto* c_count = app.add_subcommand("count", "Count pipelines and design points");
  c_count->add_option("big", count.big, "Big cores")->required();
  c_count->add_option("small", count.small, "Small cores")->required();
  c_count->add_option("--layers", layers, "Major layer count W");
  c_count->add_option("--variant", variant, "Design point formula")->check(CLI::IsMember({"as-written", "reported"}));

  cli::SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate an image stream through a plan");
  c_sim->add_option("--plan", sim.plan, "Plan JSON");
  c_sim->add_option("--stage-ms", sim.stage_ms, "Stage times in ms (instead of a plan)");
  c_sim->add_option("--images", sim.images, "Images in the stream")->check(CLI::PositiveNumber);
  c_sim->add_option("--jitter", sim.jitter, "Log-normal sigma of per-stage noise");
  c_sim->add_option("--handoff-ms", sim.handoff_ms, "Delay per stage handoff");
  c_sim->add_option("--out", sim.out, "Result JSON to write");
  c_sim->add_option("--completions", sim.completions, "Per-image completion CSV to write");

  cli::ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Render error and plan tables");
  c_report->add_option("--errors", report.errors, "CSV network,config,predicted_ms,measured_ms");
  c_report->add_option("--plan", report.plans, "Plan JSON (repeatable)");
  c_report->add_option("--csv", report.csv, "Write the error table as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_fit->parsed()) {
      fit.tile_sizes = per_type(tile_sizes, "--tile-size");
      fit.cores = per_type(cores, "--cores");
      fit.seed = seed;
      return cli::cmd_fit(fit, std::cout, std::cerr);
    }
    model.jobs = jobs;
    if (c_explore->parsed()) {
      explore.model = model;
      explore.seed = seed;
      return cli::cmd_explore(explore, std::cout, std::cerr);
    }
    if (c_oracle->parsed()) {
      oracle.model = model;
      oracle.seed = seed;
      return cli::cmd_oracle(oracle, std::cout, std::cerr);
    }
    if (c_count->parsed()) {
      if (layers) count.layers = layers;
      if (!variant.empty())
        count.variant = variant == "reported" ? CountVariant::Reported : CountVariant::AsWritten;
      return cli::cmd_count(count, std::cout, std::cerr);
    }
    if (c_sim->parsed()) {
      sim.seed = seed;
      return cli::cmd_simulate(sim, std::cout, std::cerr);
    }
    if (c_report->parsed()) return cli::cmd_report(report, std::cout, std::cerr);
  } catch (const FitError& e) {
    std::cerr << "fit error: " << e.what() << '\n';
    if (!e.terms.empty()) {
      std::cerr << "terms:";
      for (auto& t : e.terms) std::cerr << ' ' << t;
      std::cerr << '\n';
    }
    return cli::kFitError;
  } catch (const LimitError& e) {
    std::cerr << "refused: " << e.what() << '\n';
    return cli::kRefused;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return cli::kError;
  }
  return cli::kError;
}
