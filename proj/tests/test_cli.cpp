#include <gtest/gtest.h>

#include <sys/wait.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "oracles.hpp"
#include "pipeit/cli.hpp"

using namespace pipeit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pipeit_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string tmp(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name, std::ios::binary) << text;
    return tmp(name);
  }

  // Runs the installed binary and captures both streams and the exit code.
  Outcome run(const std::string& args) const {
    const std::string o = tmp("stdout.txt"), e = tmp("stderr.txt");
    const std::string cmd = std::string(PIPEIT_CLI) + " " + args + " >" + o + " 2>" + e;
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
  }

  fs::path dir_;
};

std::string data(const std::string& name) { return oracle::data_path(name); }

}  // namespace

TEST_F(Cli, CountFourByFour) {
  auto r = run("count 4 4");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("p=2 1\np=3 6\np=4 15\np=5 20\np=6 15\np=7 6\np=8 1\ntotal 64\n"), std::string::npos);
  EXPECT_EQ(r.out.substr(r.out.rfind("total")), "total 64\n");
}

TEST_F(Cli, CountDesignPoints) {
  auto r = run("count 4 4 --layers 28");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("as-written 4,272,048 / reported-variant 5,379,616"), std::string::npos);
  auto w = run("count 4 4 --layers 28 --variant reported");
  EXPECT_NE(w.out.find("reported-variant 5,379,616"), std::string::npos);
  EXPECT_EQ(w.out.find("as-written"), std::string::npos);
  EXPECT_NE(run("count 4 4 --layers 1").code, 0);
  EXPECT_NE(run("count 4 4 --variant sideways").code, 0);
}

TEST_F(Cli, FitRecoversPlatformFromBundledMeasurements) {
  const std::string out = tmp("fitted.json");
  auto r = run("--seed 7 fit --measurements " + data("measurements.csv") + " --tile-size B=26 --tile-size s=32 --out " +
               out);
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(slurp(out));
  EXPECT_EQ(j["schema"], 1);
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["inputs"]["measurements"]["sha256"], cli::sha256_hex(slurp(data("measurements.csv"))));
  for (auto& c : j["fit"]) {
    EXPECT_LT(c["single_core"]["max_relative_residual"].get<double>(), 1e-9);
    EXPECT_LT(c["thread"]["max_relative_residual"].get<double>(), 1e-9);
  }
  // the refit platform gives the same time matrices and therefore the same plans
  auto resnet = run("explore --network " + data("resnet50.json") + " --platform " + out);
  ASSERT_EQ(resnet.code, 0) << resnet.err;
  EXPECT_NE(resnet.out.find("B4 - s2 - s2 / [1,35] - [36,44] - [45,54]"), std::string::npos);
  auto alexnet = run("explore --network " + data("alexnet.json") + " --platform " + out);
  EXPECT_NE(alexnet.out.find("B4 - s4 / [1,9] - [10,11]"), std::string::npos);
}

TEST_F(Cli, FitErrors) {
  auto missing = write("missing.csv", "kind,n,k,m,in,out,core_type,time_s\ngemm,1,1,1,,,B,0.1\n");
  auto r = run("fit --measurements " + missing + " --tile-size B=26");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("core_count"), std::string::npos);

  auto empty = write("empty.csv", "kind,n,k,m,in,out,core_type,core_count,time_s\n");
  r = run("fit --measurements " + empty + " --tile-size B=26");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("no samples"), std::string::npos);

  // every sample identical: the regression cannot separate its terms
  std::string same = "kind,n,k,m,in,out,core_type,core_count,time_s\n";
  for (int i = 0; i < 40; ++i) same += "gemm,49,32,32,,,B,1,0.001\n";
  for (int h = 2; h <= 4; ++h) same += "gemm,49,32,32,,,B," + std::to_string(h) + ",0.0005\n";
  r = run("fit --measurements " + write("same.csv", same) + " --tile-size B=26");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("fit error"), std::string::npos);
  EXPECT_NE(r.err.find("terms:"), std::string::npos);
}

TEST_F(Cli, ExploreBundledNetworks) {
  const std::string plan = tmp("plan.json"), matrix = tmp("matrix.csv");
  auto r = run("--seed 3 explore --network " + data("resnet50.json") + " --platform " + data("platform_4b4s.json") +
               " --out " + plan + " --matrix-out " + matrix);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("B4 - s2 - s2 / [1,35] - [36,44] - [45,54]"), std::string::npos);
  EXPECT_NE(r.out.find("latency_ms"), std::string::npos);
  EXPECT_NE(r.out.find("throughput 1.942 img/s"), std::string::npos);
  auto j = nlohmann::json::parse(slurp(plan));
  EXPECT_EQ(j["schema"], 1);
  EXPECT_EQ(j["kind"], "plan");
  EXPECT_EQ(j["seed"], 3);
  EXPECT_EQ(j["inputs"]["network"]["sha256"], cli::sha256_hex(slurp(data("resnet50.json"))));
  EXPECT_EQ(j["inputs"]["platform"]["sha256"], cli::sha256_hex(slurp(data("platform_4b4s.json"))));
  auto t = parse_time_matrix(slurp(matrix));
  EXPECT_EQ(t.layers(), 54u);
  EXPECT_EQ(t.num_configs(), 8u);

  auto a = run("explore --network " + data("alexnet.json") + " --platform " + data("platform_4b4s.json"));
  EXPECT_EQ(a.code, 0);
  EXPECT_NE(a.out.find("B4 - s4 / [1,9] - [10,11]"), std::string::npos);
}

TEST_F(Cli, ExploreTraceMatrix) {
  auto r = run("explore --trace --matrix " + data("resnet50_trace_matrix.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("flow  B1-B1-B1-B1-s1-s1-s1-s1 : [1,18] [19,32] [33,41] [42,48] [49,51] [52,54] {} {}\n", 0), 0u);
  EXPECT_NE(r.out.find("flow  B4-s2-s2 : [1,35] [36,44] [45,54]"), std::string::npos);
  EXPECT_NE(r.out.find("B4 - s2 - s2 / [1,35] - [36,44] - [45,54]"), std::string::npos);
}

TEST_F(Cli, SingleLayerNetworkWarns) {
  auto net = write("one.json", R"({"name": "one", "layers": [
    {"id": 1, "kind": "conv", "input": [56, 56, 64], "filter": [3, 3, 64], "ofm": 64, "pad": 1, "stride": 1}]})");
  auto r = run("explore --network " + net + " --platform " + data("platform_4b4s.json"));
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.err.find("pipelining is degenerate"), std::string::npos);
  // one stage carrying the only layer
  EXPECT_NE(r.out.find("[1,1]"), std::string::npos);
  EXPECT_EQ(r.out.find(" - "), std::string::npos);
}

TEST_F(Cli, ExploreErrors) {
  EXPECT_EQ(run("explore --network " + data("resnet50.json")).code, 1);
  auto bad = write("bad.json", R"({"name": "x", "layers": [{"id": 1, "kind": "pool"}]})");
  auto r = run("explore --network " + bad + " --platform " + data("platform_4b4s.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error"), std::string::npos);
  EXPECT_NE(run("explore --network /nonexistent.json --platform " + data("platform_4b4s.json")).code, 0);
}

TEST_F(Cli, OracleOnToyMatrix) {
  std::mt19937_64 rng(21);
  auto t = oracle::random_matrix(rng, 6, 2, 2);
  const std::string m = write("toy.csv", format_time_matrix(t)), out = tmp("oracle.json");
  auto r = run("--seed 5 oracle --matrix " + m + " --out " + out);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("oracle    "), std::string::npos);
  EXPECT_NE(r.out.find("heuristic "), std::string::npos);
  EXPECT_NE(r.out.find("gap "), std::string::npos);
  auto j = nlohmann::json::parse(slurp(out));
  EXPECT_GE(j["oracle"]["predicted_throughput_ips"].get<double>(), j["heuristic"]["predicted_throughput_ips"].get<double>());
  EXPECT_GE(j["gap_percent"].get<double>(), 0.0);
  EXPECT_EQ(j["seed"], 5);
}

TEST_F(Cli, OracleRefusesLargeSpace) {
  TimeMatrix t(28, oracle::configs(4, 4));
  for (std::size_t l = 0; l < 28; ++l)
    for (std::size_t c = 0; c < 8; ++c) t.at(l, c) = 1.0 + l + c;
  const std::string m = write("w28.csv", format_time_matrix(t));
  auto r = run("oracle --matrix " + m + " --max-points 1000000");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("4,272,048"), std::string::npos);
}

TEST_F(Cli, OracleTwoLayersNoGap) {
  TimeMatrix t(2, oracle::configs(1, 1));
  t.at(0, 0) = 2, t.at(1, 0) = 2, t.at(0, 1) = 3, t.at(1, 1) = 1;
  auto r = run("oracle --matrix " + write("w2.csv", format_time_matrix(t)));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("design points 1 "), std::string::npos);
  EXPECT_NE(r.out.find("gap 0.000%"), std::string::npos);
}

TEST_F(Cli, SimulateStageTimes) {
  auto r = run("simulate --stage-ms 100 200");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("steady state 5 img/s"), std::string::npos);
  EXPECT_NE(r.out.find("images 50, makespan 10100 ms"), std::string::npos);

  std::ostringstream out, err;
  cli::SimulateArgs a;
  a.stage_ms = {100, 200};
  a.out = tmp("sim.json");
  ASSERT_EQ(cli::cmd_simulate(a, out, err), 0);
  auto j = nlohmann::json::parse(slurp(a.out));
  EXPECT_DOUBLE_EQ(j["steady_state_throughput_ips"].get<double>(), 5.0);
  EXPECT_DOUBLE_EQ(j["makespan_ms"].get<double>(), 10100.0);
  EXPECT_EQ(j["schema"], 1);
}

TEST_F(Cli, SimulatePlanWithJitterIsSeeded) {
  const std::string plan = tmp("plan.json");
  ASSERT_EQ(run("explore --matrix " + data("resnet50_trace_matrix.csv") + " --out " + plan).code, 0);
  const std::string args = "simulate --plan " + plan + " --images 200 --jitter 0.1 --completions " + tmp("c.csv");
  auto a = run("--seed 9 " + args), b = run("--seed 9 " + args), c = run("--seed 10 " + args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out, c.out);
  EXPECT_NE(a.out.find("steady state 2.55"), std::string::npos);
  auto csv = slurp(tmp("c.csv"));
  EXPECT_EQ(csv.rfind("image,completion_ms\n", 0), 0u);
  EXPECT_NE(csv.find("\n200,"), std::string::npos);
  EXPECT_NE(run("simulate").code, 0);
  EXPECT_NE(run("simulate --stage-ms 100 0").code, 0);
}

TEST_F(Cli, ReportRendersTables) {
  std::string csv = "network,config,predicted_ms,measured_ms\n";
  csv += "net,B1,110,100\nnet,B2,45,50\nnet,s1,212,200\nnet,s4,60,50\n";
  const std::string errors = write("errors.csv", csv), table = tmp("table.csv"), plan = tmp("plan.json");
  ASSERT_EQ(run("explore --network " + data("alexnet.json") + " --platform " + data("platform_4b4s.json") +
                " --out " + plan)
                .code,
            0);
  auto r = run("report --errors " + errors + " --plan " + plan + " --csv " + table);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("Prediction error (MAPE)"), std::string::npos);
  EXPECT_NE(r.out.find("Big cluster average: 10.0%"), std::string::npos);
  EXPECT_NE(r.out.find("Small cluster average: 13.0%"), std::string::npos);
  EXPECT_NE(r.out.find("alexnet"), std::string::npos);
  EXPECT_NE(r.out.find("B4 - s4 / [1,9] - [10,11]"), std::string::npos);
  EXPECT_NE(r.out.find("2.78"), std::string::npos);
  EXPECT_EQ(slurp(table).rfind("network,B1", 0), 0u);
  EXPECT_NE(run("report").code, 0);
}

TEST_F(Cli, RunsAreDeterministic) {
  const std::string p1 = tmp("a.json"), p2 = tmp("b.json");
  const std::string args = " explore --network " + data("resnet50.json") + " --platform " + data("platform_4b4s.json");
  auto a = run("--jobs 1" + args + " --out " + p1), b = run("--jobs 4" + args + " --out " + p2);
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(p1), slurp(p2));
}

TEST(CliLibrary, CountAndDigest) {
  std::ostringstream out, err;
  cli::CountArgs a;
  a.layers = 28;
  EXPECT_EQ(cli::cmd_count(a, out, err), 0);
  EXPECT_NE(out.str().find("total 64\n"), std::string::npos);
  EXPECT_NE(out.str().find("as-written 4,272,048 / reported-variant 5,379,616"), std::string::npos);
  EXPECT_EQ(cli::thousands(0), "0");
  EXPECT_EQ(cli::thousands(999), "999");
  EXPECT_EQ(cli::thousands(1000), "1,000");
  EXPECT_EQ(cli::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(cli::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
