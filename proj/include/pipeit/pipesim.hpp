#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pipeit/error.hpp"

namespace pipeit {

// Multiplicative log-normal noise with unit mean.
struct Jitter {
  double sigma = 0.05;
  std::uint64_t seed = 0;
};

struct SimSpec {
  std::vector<double> stage_times;  // seconds
  std::size_t images = 1;
  double handoff = 0;  // seconds added whenever an image moves to the next stage
  std::optional<Jitter> jitter;
};

struct SimResult {
  double makespan = 0;
  double throughput = 0;
  std::vector<double> busy;         // fraction of the makespan each stage spends working
  std::vector<double> completions;  // finish time of each image at the last stage
};

inline void validate_spec(const SimSpec& s) {
  if (s.stage_times.empty()) throw DomainError("simulation needs at least one stage");
  for (double t : s.stage_times)
    if (!(t > 0)) throw DomainError("stage times must be positive");
  if (s.images < 1) throw DomainError("simulation needs at least one image");
  if (s.handoff < 0) throw DomainError("handoff delay must be >= 0");
  if (s.jitter && !(s.jitter->sigma >= 0)) throw DomainError("jitter sigma must be >= 0");
}

// Each stage holds one image at a time. Image z starts stage i once it has
// left stage i-1 and stage i has finished image z-1.
inline SimResult simulate(const SimSpec& spec) {
  validate_spec(spec);
  const std::size_t p = spec.stage_times.size(), z = spec.images;
  std::mt19937_64 rng(spec.jitter ? spec.jitter->seed : 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sigma = spec.jitter ? spec.jitter->sigma : 0.0;
  auto duration = [&](std::size_t i) {
    if (!spec.jitter) return spec.stage_times[i];
    return spec.stage_times[i] * std::exp(sigma * normal(rng) - 0.5 * sigma * sigma);
  };

  std::vector<double> finish(p, 0.0), work(p, 0.0);
  SimResult r;
  r.completions.reserve(z);
  for (std::size_t img = 0; img < z; ++img) {
    double ready = 0.0;  // when this image is available to the current stage
    for (std::size_t i = 0; i < p; ++i) {
      const double start = std::max(i ? ready + spec.handoff : ready, finish[i]);
      const double d = duration(i);
      finish[i] = start + d;
      work[i] += d;
      ready = finish[i];
    }
    r.completions.push_back(ready);
  }
  r.makespan = r.completions.back();
  r.throughput = double(z) / r.makespan;
  for (double w : work) r.busy.push_back(w / r.makespan);
  return r;
}

inline double steady_state_throughput(const SimSpec& spec) {
  validate_spec(spec);
  if (spec.jitter) throw DomainError("steady-state throughput is defined without jitter");
  return 1.0 / *std::max_element(spec.stage_times.begin(), spec.stage_times.end());
}

inline std::string format_completions(const SimResult& r) {
  std::ostringstream os;
  os << "image,completion_ms\n";
  os.precision(17);
  for (std::size_t i = 0; i < r.completions.size(); ++i) os << i + 1 << ',' << r.completions[i] * 1e3 << '\n';
  return os.str();
}

}  // namespace pipeit
