#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "pipeit/error.hpp"
#include "pipeit/perfmodel.hpp"

namespace pipeit {

// ---------------------------------------------------------------------------
// Counting

inline std::uint64_t binomial(std::int64_t n, std::int64_t k) {
  if (k < 0 || n < 0 || k > n) return 0;
  k = std::min(k, n - k);
  unsigned __int128 r = 1;
  for (std::int64_t i = 1; i <= k; ++i) {
    r = r * static_cast<unsigned __int128>(n - k + i) / static_cast<unsigned __int128>(i);
    if (r > std::numeric_limits<std::uint64_t>::max()) throw DomainError("binomial overflow");
  }
  return static_cast<std::uint64_t>(r);
}

namespace detail {
inline std::uint64_t checked_add(std::uint64_t a, std::uint64_t b) {
  if (a > std::numeric_limits<std::uint64_t>::max() - b) throw DomainError("count overflow");
  return a + b;
}
inline std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
  unsigned __int128 r = static_cast<unsigned __int128>(a) * b;
  if (r > std::numeric_limits<std::uint64_t>::max()) throw DomainError("count overflow");
  return static_cast<std::uint64_t>(r);
}
}  // namespace detail

// Pipelines with p stages: the Big cluster split into p_B ordered non-empty
// groups followed by the Small cluster split into p - p_B groups.
inline std::uint64_t count_pipelines(int big, int small, int p) {
  std::uint64_t total = 0;
  for (int pb = std::max(1, p - small); pb <= std::min(big, p - 1); ++pb)
    total = detail::checked_add(total, detail::checked_mul(binomial(big - 1, pb - 1), binomial(small - 1, p - pb - 1)));
  return total;
}

enum class CountVariant { AsWritten, Reported };

// Design points are (pipeline, layer allocation) pairs. AsWritten places
// p-1 cuts among the W-1 layer gaps; Reported chooses them among W positions,
// which lets the last stage go empty.
inline std::uint64_t count_design_points(std::int64_t layers, int big, int small, CountVariant v) {
  std::uint64_t total = 0;
  const std::int64_t slots = v == CountVariant::AsWritten ? layers - 1 : layers;
  for (int p = 2; p <= big + small; ++p)
    total = detail::checked_add(total, detail::checked_mul(binomial(slots, p - 1), count_pipelines(big, small, p)));
  return total;
}

// ---------------------------------------------------------------------------
// Allocations and plans

// Stage i owns layers [bounds[i], bounds[i+1]) (0-based); equal bounds mean
// an empty stage.
using Bounds = std::vector<std::size_t>;

inline bool valid_bounds(const Bounds& b, std::size_t layers, std::size_t stages) {
  if (b.size() != stages + 1 || b.front() != 0 || b.back() != layers) return false;
  for (std::size_t i = 0; i + 1 < b.size(); ++i)
    if (b[i] > b[i + 1]) return false;
  return true;
}

inline double stage_latency(const TimeMatrix& t, std::size_t cfg, std::size_t lo, std::size_t hi) {
  double s = 0.0;
  for (std::size_t l = lo; l < hi; ++l) s += t.at(l, cfg);
  return s;
}

inline std::vector<std::size_t> columns(const TimeMatrix& t, const std::vector<StageConfig>& p) {
  std::vector<std::size_t> c;
  for (auto& s : p) c.push_back(t.index(s));
  return c;
}

// Largest stage latency, ignoring empty stages.
inline double bottleneck(const TimeMatrix& t, const std::vector<std::size_t>& cols, const Bounds& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < cols.size(); ++i)
    if (b[i + 1] > b[i]) m = std::max(m, stage_latency(t, cols[i], b[i], b[i + 1]));
  return m;
}

inline double predicted_throughput(const std::vector<double>& stage_latencies) {
  double m = 0.0;
  for (double x : stage_latencies) m = std::max(m, x);
  if (stage_latencies.empty() || m <= 0) throw DomainError("plan has no non-empty stage");
  return 1.0 / m;
}

struct PipelinePlan {
  std::vector<StageConfig> stages;                          // non-empty stages only
  std::vector<std::pair<std::size_t, std::size_t>> ranges;  // 0-based [lo, hi)
  std::vector<double> latencies;                            // seconds
  double throughput = 0;                                    // images per second
};

// Drops empty stages and evaluates the rest.
inline PipelinePlan make_plan(const TimeMatrix& t, const std::vector<StageConfig>& p, const Bounds& b) {
  PipelinePlan plan;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (b[i + 1] == b[i]) continue;
    plan.stages.push_back(p[i]);
    plan.ranges.push_back({b[i], b[i + 1]});
    plan.latencies.push_back(stage_latency(t, t.index(p[i]), b[i], b[i + 1]));
  }
  plan.throughput = predicted_throughput(plan.latencies);
  return plan;
}

// "B4 - s2 - s2 / [1,35] - [36,44] - [45,54]"
inline std::string format_plan(const PipelinePlan& p) {
  std::ostringstream os;
  for (std::size_t i = 0; i < p.stages.size(); ++i) os << (i ? " - " : "") << p.stages[i].str();
  os << " / ";
  for (std::size_t i = 0; i < p.ranges.size(); ++i)
    os << (i ? " - " : "") << '[' << p.ranges[i].first + 1 << ',' << p.ranges[i].second << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Capability ranking

// Configurations ordered from most to least capable by mean per-layer time
// relative to that layer's fastest configuration.
inline std::vector<StageConfig> rank_stage_configs(const TimeMatrix& t) {
  const std::size_t w = t.layers(), c = t.num_configs();
  std::vector<double> score(c, 0.0);
  for (std::size_t l = 0; l < w; ++l) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) best = std::min(best, t.at(l, j));
    for (std::size_t j = 0; j < c; ++j) score[j] += t.at(l, j) / best;
  }
  std::vector<std::size_t> order(c);
  for (std::size_t j = 0; j < c; ++j) order[j] = j;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (score[a] != score[b]) return score[a] < score[b];
    const StageConfig &x = t.config(a), &y = t.config(b);
    if (x.type != y.type) return x.type == CoreType::Big;
    return x.count > y.count;
  });
  std::vector<StageConfig> out;
  for (auto j : order) out.push_back(t.config(j));
  return out;
}

// ---------------------------------------------------------------------------
// Two-stage split

// Starts with [lo, hi) on the faster stage and hands trailing layers to the
// slower stage while the faster stage stays strictly the busier one. Returns
// the first layer of the slower stage.
inline std::size_t find_split(const TimeMatrix& t, std::size_t fast, std::size_t slow, std::size_t lo,
                              std::size_t hi) {
  double a = 0.0;
  for (std::size_t l = lo; l < hi; ++l) a += t.at(l, fast);
  double b = 0.0;
  std::size_t k = hi;
  for (std::size_t j = hi; j-- > lo;) {
    const double na = a - t.at(j, fast);
    const double nb = b + t.at(j, slow);
    if (!(na > nb)) break;
    a = na, b = nb, k = j;
  }
  return k;
}

// Same routine on bare per-layer vectors.
inline std::size_t find_split(const std::vector<double>& fast, const std::vector<double>& slow) {
  if (fast.size() != slow.size()) throw DomainError("find_split: length mismatch");
  if (fast.empty()) return 0;
  TimeMatrix t(fast.size(), {{CoreType::Big, 1}, {CoreType::Small, 1}});
  for (std::size_t l = 0; l < fast.size(); ++l) t.at(l, 0) = fast[l], t.at(l, 1) = slow[l];
  return find_split(t, 0, 1, 0, fast.size());
}

// ---------------------------------------------------------------------------
// Workload flow

struct FlowResult {
  Bounds bounds;
  bool converged = true;  // false when a cycle or the sweep cap stopped the loop
  std::size_t sweeps = 0;
  std::vector<Bounds> path;  // allocation after each sweep
};

inline FlowResult work_flow(const TimeMatrix& t, const std::vector<std::size_t>& cols) {
  const std::size_t w = t.layers(), p = cols.size();
  FlowResult r;
  Bounds b(p + 1, w);
  b[0] = 0;
  if (p == 0) throw DomainError("work_flow: empty pipeline");
  std::set<Bounds> seen;
  Bounds best;
  double best_bn = std::numeric_limits<double>::infinity();
  const std::size_t cap = std::max<std::size_t>(1, w * p);
  for (std::size_t sweep = 0; sweep <= cap; ++sweep) {
    const Bounds old = b;
    for (std::size_t i = 0; i + 1 < p; ++i) b[i + 1] = find_split(t, cols[i], cols[i + 1], b[i], b[i + 2]);
    r.sweeps = sweep + 1;
    r.path.push_back(b);
    const double bn = bottleneck(t, cols, b);
    if (bn < best_bn) best_bn = bn, best = b;
    if (b == old) {
      r.bounds = b;
      return r;
    }
    if (!seen.insert(b).second) break;
  }
  r.bounds = best;
  r.converged = false;
  return r;
}

inline FlowResult work_flow(const TimeMatrix& t, const std::vector<StageConfig>& p) {
  return work_flow(t, columns(t, p));
}

// ---------------------------------------------------------------------------
// Stage merging

// True iff running both stages' layers on the merged configuration beats the
// slower of the two separate stages.
inline bool merge_condition(const TimeMatrix& t, std::size_t merged, std::size_t first, std::size_t second,
                            std::size_t lo, std::size_t mid, std::size_t hi) {
  const double tm = stage_latency(t, merged, lo, hi);
  return tm < std::max(stage_latency(t, first, lo, mid), stage_latency(t, second, mid, hi));
}

struct MergeEvent {
  enum Kind { Flow, Try } kind;
  std::vector<StageConfig> pipeline;
  Bounds bounds;  // Flow: resulting allocation
  std::size_t pair = 0;  // Try: index of the first stage of the pair
  bool accepted = false;
  bool converged = true;
};

struct MergeResult {
  PipelinePlan plan;                  // best balanced pipeline met during merging
  std::vector<StageConfig> pipeline;  // plan before empty stages are dropped
  Bounds bounds;
  PipelinePlan initial;   // single-core-stage pipeline at its flow fixed point
  PipelinePlan terminal;  // state the merge loop stopped in
  bool kept_earlier = false;  // plan is an earlier state beating the terminal one
  std::vector<MergeEvent> trace;
};

namespace detail {

inline void sort_cluster(std::vector<StageConfig>& p, CoreType type, const std::vector<StageConfig>& rank) {
  auto pos = [&](const StageConfig& s) { return std::find(rank.begin(), rank.end(), s) - rank.begin(); };
  auto first = std::find_if(p.begin(), p.end(), [&](auto& s) { return s.type == type; });
  auto last = std::find_if(first, p.end(), [&](auto& s) { return s.type != type; });
  std::stable_sort(first, last, [&](auto& a, auto& b) { return pos(a) < pos(b); });
}

}  // namespace detail

// Starts from one single-core stage per core (Big first), balances it, then
// greedily merges adjacent same-type stages while that helps. After an
// accepted merge the scan restarts at the cluster's first pair; a rejected
// pair moves the scan to the next pair. Passes repeat until nothing merges.
// A merge that pays off locally can still rebalance into a worse pipeline, so
// the best state seen is returned (later states win ties).
inline MergeResult merge_stage(const TimeMatrix& t) {
  const int big = t.max_cores(CoreType::Big), small = t.max_cores(CoreType::Small);
  if (big + small == 0) throw DomainError("time matrix has no configurations");
  const auto rank = rank_stage_configs(t);
  MergeResult r;
  std::vector<StageConfig> p;
  for (int i = 0; i < big; ++i) p.push_back({CoreType::Big, 1});
  for (int i = 0; i < small; ++i) p.push_back({CoreType::Small, 1});

  auto flow = [&] {
    auto f = work_flow(t, p);
    r.trace.push_back({MergeEvent::Flow, p, f.bounds, 0, false, f.converged});
    return f.bounds;
  };
  Bounds b = flow();
  r.initial = make_plan(t, p, b);
  r.plan = r.initial;
  r.pipeline = p;
  r.bounds = b;
  auto keep_if_better = [&] {
    auto cur = make_plan(t, p, b);
    if (cur.throughput >= r.plan.throughput) {
      r.plan = std::move(cur);
      r.pipeline = p;
      r.bounds = b;
    }
  };

  for (bool changed = true; changed;) {
    changed = false;
    for (CoreType type : {CoreType::Big, CoreType::Small}) {
      auto it = std::find_if(p.begin(), p.end(), [&](auto& s) { return s.type == type; });
      if (it == p.end()) continue;
      const std::size_t first = static_cast<std::size_t>(it - p.begin());
      std::size_t i = first;
      while (i + 1 < p.size() && p[i].type == type && p[i + 1].type == type) {
        const StageConfig merged{type, p[i].count + p[i + 1].count};
        const bool ok =
            merge_condition(t, t.index(merged), t.index(p[i]), t.index(p[i + 1]), b[i], b[i + 1], b[i + 2]);
        r.trace.push_back({MergeEvent::Try, p, b, i, ok, true});
        if (!ok) {
          ++i;
          continue;
        }
        p[i] = merged;
        p.erase(p.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        detail::sort_cluster(p, type, rank);
        b = flow();
        keep_if_better();
        changed = true;
        i = first;
      }
    }
  }
  r.terminal = make_plan(t, p, b);
  r.kept_earlier = r.terminal.throughput < r.plan.throughput;
  return r;
}

// ---------------------------------------------------------------------------
// Exhaustive oracle

struct OracleLimits {
  std::uint64_t max_points = 10'000'000;
  unsigned jobs = 1;
};

struct OracleResult {
  PipelinePlan plan;
  std::uint64_t design_points = 0;      // allocations with every stage non-empty
  std::uint64_t degenerate_points = 0;  // allocations with some empty stage
};

namespace detail {

// Total order used to pick among equally fast plans: fewer stages, then the
// lexicographically smallest allocation, then stage configurations.
inline bool plan_before(const PipelinePlan& a, const PipelinePlan& b) {
  if (a.throughput != b.throughput) return a.throughput > b.throughput;
  if (a.stages.size() != b.stages.size()) return a.stages.size() < b.stages.size();
  if (a.ranges != b.ranges) return a.ranges < b.ranges;
  return a.stages < b.stages;
}

inline void compositions(int n, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
  if (n == 0) {
    out.push_back(cur);
    return;
  }
  for (int k = 1; k <= n; ++k) {
    cur.push_back(k);
    compositions(n - k, cur, out);
    cur.pop_back();
  }
}

}  // namespace detail

// Every ordered split of each cluster into stages (Big stages first).
inline std::vector<std::vector<StageConfig>> enumerate_pipelines(int big, int small) {
  std::vector<std::vector<int>> cb, cs;
  std::vector<int> cur;
  detail::compositions(big, cur, cb);
  detail::compositions(small, cur, cs);
  std::vector<std::vector<StageConfig>> out;
  for (auto& x : cb)
    for (auto& y : cs) {
      std::vector<StageConfig> p;
      for (int c : x) p.push_back({CoreType::Big, c});
      for (int c : y) p.push_back({CoreType::Small, c});
      out.push_back(std::move(p));
    }
  return out;
}

// Evaluates every pipeline against every contiguous allocation, including
// ones that leave stages empty, and returns the highest-throughput plan.
inline OracleResult exhaustive_search(const TimeMatrix& t, const OracleLimits& lim = {}) {
  const int big = t.max_cores(CoreType::Big), small = t.max_cores(CoreType::Small);
  const std::size_t w = t.layers();
  if (big < 1 || small < 1) throw DomainError("exhaustive search needs both core clusters");
  if (w < 1) throw DomainError("exhaustive search needs at least one layer");
  const std::uint64_t space =
      w >= 2 ? count_design_points(static_cast<std::int64_t>(w), big, small, CountVariant::AsWritten) : 0;
  if (space > lim.max_points)
    throw LimitError("design space has " + std::to_string(space) + " points, limit is " +
                         std::to_string(lim.max_points),
                     space);

  // stage latencies for every (config, lo, hi), summed exactly as elsewhere
  const std::size_t nc = t.num_configs();
  std::vector<double> lat(nc * (w + 1) * (w + 1), 0.0);
  auto L = [&](std::size_t c, std::size_t lo, std::size_t hi) -> double& {
    return lat[(c * (w + 1) + lo) * (w + 1) + hi];
  };
  for (std::size_t c = 0; c < nc; ++c)
    for (std::size_t lo = 0; lo <= w; ++lo)
      for (std::size_t hi = lo; hi <= w; ++hi) L(c, lo, hi) = stage_latency(t, c, lo, hi);

  const auto pipelines = enumerate_pipelines(big, small);
  struct Local {
    bool have = false;
    PipelinePlan best;
    std::uint64_t full = 0, degenerate = 0;
  };

  auto run = [&](std::size_t which, Local& out) {
    const auto& p = pipelines[which];
    const auto cols = columns(t, p);
    const std::size_t n = p.size();
    Bounds b(n + 1, 0);
    b[n] = w;
    std::function<void(std::size_t)> rec = [&](std::size_t i) {
      if (i == n) {
        double m = 0.0;
        bool full = true;
        for (std::size_t s = 0; s < n; ++s) {
          if (b[s + 1] == b[s]) {
            full = false;
            continue;
          }
          m = std::max(m, L(cols[s], b[s], b[s + 1]));
        }
        ++(full ? out.full : out.degenerate);
        const double tp = 1.0 / m;
        if (out.have && tp < out.best.throughput) return;
        PipelinePlan cand;
        for (std::size_t s = 0; s < n; ++s) {
          if (b[s + 1] == b[s]) continue;
          cand.stages.push_back(p[s]);
          cand.ranges.push_back({b[s], b[s + 1]});
          cand.latencies.push_back(L(cols[s], b[s], b[s + 1]));
        }
        cand.throughput = tp;
        if (!out.have || detail::plan_before(cand, out.best)) {
          out.best = std::move(cand);
          out.have = true;
        }
        return;
      }
      for (std::size_t x = b[i - 1]; x <= w; ++x) {
        b[i] = x;
        rec(i + 1);
      }
    };
    rec(1);
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(lim.jobs, static_cast<unsigned>(pipelines.size())));
  std::vector<Local> locals(jobs);
  if (jobs == 1) {
    for (std::size_t i = 0; i < pipelines.size(); ++i) run(i, locals[0]);
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        for (std::size_t i = j; i < pipelines.size(); i += jobs) run(i, locals[j]);
      });
    for (auto& th : pool) th.join();
  }
  OracleResult r;
  bool have = false;
  for (auto& l : locals) {
    r.design_points += l.full;
    r.degenerate_points += l.degenerate;
    if (l.have && (!have || detail::plan_before(l.best, r.plan))) {
      r.plan = l.best;
      have = true;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Plan files

inline nlohmann::ordered_json plan_to_json(const PipelinePlan& p) {
  nlohmann::ordered_json j;
  j["pipeline"] = nlohmann::ordered_json::array();
  for (auto& s : p.stages) j["pipeline"].push_back({{"type", std::string(1, core_code(s.type))}, {"count", s.count}});
  j["allocation"] = nlohmann::ordered_json::array();
  for (auto& r : p.ranges) j["allocation"].push_back({r.first + 1, r.second});
  j["predicted_throughput_ips"] = p.throughput;
  j["stage_latencies_ms"] = nlohmann::ordered_json::array();
  for (double x : p.latencies) j["stage_latencies_ms"].push_back(x * 1e3);
  j["table"] = format_plan(p);
  return j;
}

inline PipelinePlan plan_from_json(const nlohmann::json& j) {
  auto fail = [](const std::string& m) { throw ParseError("plan file: " + m); };
  PipelinePlan p;
  try {
    for (auto& s : j.at("pipeline"))
      p.stages.push_back({parse_core_type(s.at("type").get<std::string>()), s.at("count").get<int>()});
    for (auto& r : j.at("allocation")) {
      auto v = r.get<std::vector<std::size_t>>();
      if (v.size() != 2 || v[0] < 1 || v[1] < v[0]) fail("bad allocation range");
      p.ranges.push_back({v[0] - 1, v[1]});
    }
    for (auto& x : j.at("stage_latencies_ms")) p.latencies.push_back(x.get<double>() * 1e-3);
  } catch (const nlohmann::json::exception& e) {
    fail(e.what());
  }
  if (p.stages.size() != p.ranges.size() || p.stages.size() != p.latencies.size())
    fail("pipeline, allocation and stage_latencies_ms differ in length");
  p.throughput = predicted_throughput(p.latencies);
  return p;
}

}  // namespace pipeit
