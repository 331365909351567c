#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pipeit/error.hpp"
#include "pipeit/netdesc.hpp"

namespace pipeit {

// Floor applied to every predicted time, seconds.
inline constexpr double kMinTime = 1e-6;

enum class CoreType { Big, Small };

inline char core_code(CoreType t) { return t == CoreType::Big ? 'B' : 's'; }

inline CoreType parse_core_type(const std::string& s) {
  if (s == "B" || s == "big" || s == "Big") return CoreType::Big;
  if (s == "s" || s == "small" || s == "Small") return CoreType::Small;
  throw DomainError("unknown core type '" + s + "' (expected B or s)");
}

struct StageConfig {
  CoreType type = CoreType::Big;
  int count = 1;
  auto operator<=>(const StageConfig&) const = default;
  std::string str() const { return std::string(1, core_code(type)) + std::to_string(count); }
};

// ---------------------------------------------------------------------------
// Coefficient sets

inline const std::array<const char*, 8> kGemmTerms = {"N", "K", "M", "NK", "KM", "NM", "NKM", "1"};

struct GemmCoefficients {
  std::array<double, 8> beta{};
};

struct ThreadCoefficients {
  double a1 = 0, a2 = 0, a3 = 0;
};

struct FcCoefficients {
  double g1 = 0, g2 = 0;
};

struct ClusterModel {
  CoreType type = CoreType::Big;
  int max_cores = 1;
  int tile_size = 1;
  GemmCoefficients gemm;
  ThreadCoefficients thread;
  std::map<std::pair<int, std::int64_t>, FcCoefficients> fc;  // (cores, neuron class)
};

struct PlatformModel {
  std::string name;
  std::vector<ClusterModel> clusters;

  int total_cores() const {
    int h = 0;
    for (auto& c : clusters) h += c.max_cores;
    return h;
  }
  const ClusterModel* find(CoreType t) const {
    for (auto& c : clusters)
      if (c.type == t) return &c;
    return nullptr;
  }
  const ClusterModel& cluster(CoreType t) const {
    if (auto* c = find(t)) return *c;
    throw DomainError(std::string("platform has no '") + core_code(t) + "' cluster");
  }
  int cores(CoreType t) const {
    auto* c = find(t);
    return c ? c->max_cores : 0;
  }
};

inline void validate_platform(const PlatformModel& p) {
  if (p.clusters.empty()) throw DomainError("platform has no clusters");
  std::set<CoreType> seen;
  for (auto& c : p.clusters) {
    if (!seen.insert(c.type).second)
      throw DomainError(std::string("duplicate cluster type '") + core_code(c.type) + "'");
    if (c.max_cores < 1) throw DomainError("cluster core count must be >= 1");
    if (c.tile_size < 1) throw DomainError("tile size must be >= 1");
    for (double b : c.gemm.beta)
      if (!std::isfinite(b)) throw DomainError("non-finite gemm coefficient");
    if (!std::isfinite(c.thread.a1) || !std::isfinite(c.thread.a2) || !std::isfinite(c.thread.a3))
      throw DomainError("non-finite thread coefficient");
  }
}

// ---------------------------------------------------------------------------
// Prediction

inline std::array<double, 8> gemm_terms(const GemmDims& g) {
  const double n = double(g.n), k = double(g.k), m = double(g.m);
  return {n, k, m, n * k, k * m, n * m, n * k * m, 1.0};
}

inline double clamp_time(double t, Diagnostics* diag, const char* what) {
  if (t >= kMinTime) return t;
  std::ostringstream os;
  os << what << " prediction " << t << " s clamped to " << kMinTime << " s";
  warn(diag, os.str());
  return kMinTime;
}

inline double predict_single_core(const GemmCoefficients& c, const GemmDims& g, Diagnostics* diag = nullptr) {
  auto x = gemm_terms(g);
  double t = 0;
  for (int i = 0; i < 8; ++i) t += c.beta[i] * x[i];
  return clamp_time(t, diag, "single-core");
}

inline std::int64_t iteration_count(const GemmDims& g, int tile_size) {
  if (tile_size < 1) throw DomainError("tile size must be >= 1");
  return std::max<std::int64_t>(1, (g.n + tile_size - 1) / tile_size);
}

inline double predict_iteration_time(double t_single, std::int64_t n_iter, const ThreadCoefficients& a,
                                     Diagnostics* diag = nullptr) {
  if (n_iter < 1) throw DomainError("iteration count must be >= 1");
  return clamp_time((t_single - a.a1) / double(n_iter) + a.a2, diag, "per-iteration");
}

// Iterations given to each of h threads under a static equal split.
inline std::vector<std::int64_t> thread_iterations(std::int64_t n_iter, int h) {
  std::vector<std::int64_t> it(h, n_iter / h);
  for (std::int64_t t = 0; t < n_iter % h; ++t) ++it[t];
  return it;
}

// Multi-core time as the slowest thread's finish: each thread runs its share
// of the single-core work plus a per-iteration overhead.
inline double multicore_by_threads(double t_single, std::int64_t n_iter, int h, const ThreadCoefficients& a) {
  double slowest = -std::numeric_limits<double>::infinity();
  for (std::int64_t it : thread_iterations(n_iter, h)) {
    const double share = double(it) / double(n_iter);
    slowest = std::max(slowest, (t_single - a.a1) * share + a.a2 * double(it));
  }
  return slowest + a.a3;
}

// Closed form for the case where h divides n_iter.
inline double multicore_closed_form(double t_single, std::int64_t n_iter, int h, const ThreadCoefficients& a) {
  return (t_single - a.a1) * (1.0 / h) + a.a2 * (double(n_iter) / h) + a.a3;
}

inline double predict_multicore(const ClusterModel& c, const GemmDims& g, int h, Diagnostics* diag = nullptr) {
  if (h < 1 || h > c.max_cores)
    throw DomainError("core count " + std::to_string(h) + " outside 1.." + std::to_string(c.max_cores));
  const double t = predict_single_core(c.gemm, g, diag);
  const std::int64_t n = iteration_count(g, c.tile_size);
  return clamp_time(multicore_by_threads(t, n, h, c.thread), diag, "multi-core");
}

inline double predict_fc(const ClusterModel& c, std::int64_t in_size, std::int64_t neurons, int h,
                         Diagnostics* diag = nullptr) {
  const FcCoefficients* best = nullptr;
  std::int64_t best_class = 0;
  for (auto& [key, coef] : c.fc) {
    if (key.first != h) continue;
    if (!best || std::llabs(key.second - neurons) < std::llabs(best_class - neurons)) {
      best = &coef;
      best_class = key.second;
    }
  }
  if (!best)
    throw DomainError(std::string("no fully-connected coefficients for ") + core_code(c.type) +
                      std::to_string(h));
  if (best_class != neurons)
    warn(diag, "fc neuron class " + std::to_string(neurons) + " not fitted on " + core_code(c.type) +
                   std::to_string(h) + "; using class " + std::to_string(best_class));
  return clamp_time(best->g1 * double(in_size) * double(neurons) + best->g2, diag, "fully-connected");
}

// ---------------------------------------------------------------------------
// Measurements

enum class SampleKind { Gemm, Fc };

struct MeasurementSample {
  SampleKind kind = SampleKind::Gemm;
  GemmDims gemm;
  std::int64_t in = 0, out = 0;  // fully-connected sizes
  CoreType type = CoreType::Big;
  int cores = 1;
  double time = 0;  // seconds
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  for (auto& s : out) {
    auto b = s.find_first_not_of(" \t");
    auto e = s.find_last_not_of(" \t");
    s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }
  return out;
}

inline double to_double(const std::string& s, const std::string& col, std::size_t line) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("column '" + col + "': cannot read '" + s + "' as a number", line);
  }
}

inline std::int64_t to_int(const std::string& s, const std::string& col, std::size_t line) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("column '" + col + "': cannot read '" + s + "' as an integer", line);
  }
}

}  // namespace detail

inline const std::array<const char*, 9> kMeasurementColumns = {"kind", "n",         "k",          "m",     "in",
                                                               "out",  "core_type", "core_count", "time_s"};

inline std::vector<MeasurementSample> parse_measurements(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  std::map<std::string, std::size_t> col;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++ln;
    if (line.find_first_not_of(" \t\r") != std::string::npos) {
      have_header = true;
      break;
    }
  }
  if (!have_header) throw ParseError("no samples");
  auto header = detail::split_csv(line);
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* c : kMeasurementColumns)
    if (!col.count(c)) throw ParseError(std::string("missing column '") + c + "'", ln);

  std::vector<MeasurementSample> out;
  while (std::getline(in, line)) {
    ++ln;
    auto f = detail::split_csv(line);
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != header.size())
      throw ParseError("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()), ln);
    auto get = [&](const char* c) -> const std::string& { return f[col[c]]; };
    MeasurementSample s;
    const std::string& kind = get("kind");
    if (kind == "gemm") {
      s.kind = SampleKind::Gemm;
      s.gemm = {detail::to_int(get("n"), "n", ln), detail::to_int(get("k"), "k", ln),
                detail::to_int(get("m"), "m", ln)};
      if (s.gemm.n < 1 || s.gemm.k < 1 || s.gemm.m < 1) throw ParseError("gemm dimensions must be >= 1", ln);
    } else if (kind == "fc") {
      s.kind = SampleKind::Fc;
      s.in = detail::to_int(get("in"), "in", ln);
      s.out = detail::to_int(get("out"), "out", ln);
      if (s.in < 0 || s.out < 1) throw ParseError("fc sizes must be in >= 0, out >= 1", ln);
    } else {
      throw ParseError("column 'kind': expected gemm or fc, got '" + kind + "'", ln);
    }
    try {
      s.type = parse_core_type(get("core_type"));
    } catch (const DomainError& e) {
      throw ParseError(std::string("column 'core_type': ") + e.what(), ln);
    }
    s.cores = static_cast<int>(detail::to_int(get("core_count"), "core_count", ln));
    s.time = detail::to_double(get("time_s"), "time_s", ln);
    if (s.cores < 1) throw ParseError("column 'core_count' must be >= 1", ln);
    if (!(s.time > 0)) throw ParseError("column 'time_s' must be > 0", ln);
    out.push_back(s);
  }
  if (out.empty()) throw ParseError("no samples");
  return out;
}

inline std::string format_measurements(const std::vector<MeasurementSample>& samples) {
  std::ostringstream os;
  os << "kind,n,k,m,in,out,core_type,core_count,time_s\n";
  os << std::setprecision(17);
  for (auto& s : samples) {
    if (s.kind == SampleKind::Gemm)
      os << "gemm," << s.gemm.n << ',' << s.gemm.k << ',' << s.gemm.m << ",,,";
    else
      os << "fc,,,," << s.in << ',' << s.out << ',';
    os << core_code(s.type) << ',' << s.cores << ',' << s.time << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Fitting

struct FitReport {
  std::size_t samples = 0;
  double rms_residual = 0;      // seconds
  double max_rel_residual = 0;  // fraction of measured time
  double condition = 0;         // of the column-scaled design matrix
};

namespace detail {

// Least squares on column-scaled data with a rank-revealing QR and one step
// of iterative refinement. Row i is weighted by 1/measured[i], so the fit
// minimises relative rather than absolute residuals; timing noise is
// multiplicative and the samples span several orders of magnitude.
inline Eigen::VectorXd least_squares(const Eigen::MatrixXd& x_raw, const Eigen::VectorXd& y_raw,
                                     const Eigen::VectorXd& measured, const std::vector<std::string>& names,
                                     FitReport* report) {
  const Eigen::Index cols = x_raw.cols();
  if (x_raw.rows() < cols)
    throw FitError("too few samples: need at least " + std::to_string(cols) + ", got " + std::to_string(x_raw.rows()));
  const Eigen::VectorXd w = measured.cwiseInverse();
  const Eigen::MatrixXd x = w.asDiagonal() * x_raw;
  const Eigen::VectorXd y = w.cwiseProduct(y_raw);
  Eigen::VectorXd scale(cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    double m = x.col(j).cwiseAbs().maxCoeff();
    scale(j) = m > 0 ? 1.0 / m : 1.0;
  }
  Eigen::MatrixXd xs = x * scale.asDiagonal();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-11);
  if (qr.rank() < cols) {
    std::vector<std::string> bad;
    auto perm = qr.colsPermutation().indices();
    for (Eigen::Index r = qr.rank(); r < cols; ++r) bad.push_back(names[perm(r)]);
    std::string msg = "rank-deficient design matrix; cannot separate terms {";
    for (std::size_t i = 0; i < bad.size(); ++i) msg += (i ? "," : "") + bad[i];
    throw FitError(msg + "}", bad);
  }
  Eigen::VectorXd b = qr.solve(y);
  Eigen::VectorXd r = y - xs * b;
  b += qr.solve(r);
  Eigen::VectorXd beta = scale.asDiagonal() * b;

  if (report) {
    Eigen::VectorXd res = y_raw - x_raw * beta;
    report->samples = static_cast<std::size_t>(x.rows());
    report->rms_residual = std::sqrt(res.squaredNorm() / double(x.rows()));
    report->max_rel_residual = res.cwiseProduct(w).cwiseAbs().maxCoeff();
    Eigen::VectorXd d = qr.matrixR().diagonal().cwiseAbs();
    report->condition = d.minCoeff() > 0 ? d.maxCoeff() / d.minCoeff() : INFINITY;
  }
  return beta;
}

}  // namespace detail

// Fits the 8-term GEMM model to single-core samples.
inline GemmCoefficients fit_single_core(const std::vector<MeasurementSample>& samples, FitReport* report = nullptr) {
  std::vector<const MeasurementSample*> rows;
  for (auto& s : samples)
    if (s.kind == SampleKind::Gemm) rows.push_back(&s);
  if (rows.size() < 8)
    throw FitError("too few samples for single-core fit: need 8, got " + std::to_string(rows.size()));
  Eigen::MatrixXd x(rows.size(), 8);
  Eigen::VectorXd y(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto t = gemm_terms(rows[i]->gemm);
    for (int j = 0; j < 8; ++j) x(i, j) = t[j];
    y(i) = rows[i]->time;
  }
  auto b = detail::least_squares(x, y, y, {kGemmTerms.begin(), kGemmTerms.end()}, report);
  GemmCoefficients c;
  for (int j = 0; j < 8; ++j) c.beta[j] = b(j);
  return c;
}

// Fits the thread overheads from multi-core samples (core count >= 2). The
// model is linear in the overheads once the single-core time is known:
//   t - T*share = -a1*share + a2*slowest + a3
inline ThreadCoefficients fit_thread_coefficients(const std::vector<MeasurementSample>& samples,
                                                  const GemmCoefficients& gemm, int tile_size,
                                                  FitReport* report = nullptr) {
  std::vector<const MeasurementSample*> rows;
  std::set<int> counts;
  std::set<std::int64_t> iters;
  for (auto& s : samples) {
    if (s.kind != SampleKind::Gemm || s.cores < 2) continue;
    rows.push_back(&s);
    counts.insert(s.cores);
    iters.insert(iteration_count(s.gemm, tile_size));
  }
  if (counts.size() < 2)
    throw FitError("thread fit needs samples at >= 2 distinct multi-core counts, got " + std::to_string(counts.size()),
                   {"a2", "a3"});
  if (iters.size() < 3)
    throw FitError("thread fit needs >= 3 distinct iteration counts, got " + std::to_string(iters.size()),
                   {"a1", "a2"});
  Eigen::MatrixXd x(rows.size(), 3);
  Eigen::VectorXd y(rows.size()), measured(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& s = *rows[i];
    measured(i) = s.time;
    double t = 0;
    auto tm = gemm_terms(s.gemm);
    for (int j = 0; j < 8; ++j) t += gemm.beta[j] * tm[j];
    const std::int64_t n = iteration_count(s.gemm, tile_size);
    const std::int64_t slow = (n + s.cores - 1) / s.cores;
    const double share = double(slow) / double(n);
    x(i, 0) = -share;
    x(i, 1) = double(slow);
    x(i, 2) = 1.0;
    y(i) = s.time - t * share;
  }
  auto a = detail::least_squares(x, y, measured, {"a1", "a2", "a3"}, report);
  return {a(0), a(1), a(2)};
}

// Fits one linear fully-connected model per (cores, neuron class).
inline std::map<std::pair<int, std::int64_t>, FcCoefficients> fit_fc(const std::vector<MeasurementSample>& samples,
                                                                      Diagnostics* diag = nullptr) {
  std::map<std::pair<int, std::int64_t>, std::vector<const MeasurementSample*>> groups;
  for (auto& s : samples)
    if (s.kind == SampleKind::Fc) groups[{s.cores, s.out}].push_back(&s);
  std::map<std::pair<int, std::int64_t>, FcCoefficients> out;
  for (auto& [key, rows] : groups) {
    std::set<std::int64_t> sizes;
    for (auto* r : rows) sizes.insert(r->in);
    std::string tag = "fc (" + std::to_string(key.first) + " cores, " + std::to_string(key.second) + " neurons)";
    if (sizes.size() < 2) throw FitError(tag + " needs >= 2 distinct input sizes", {"g1", "g2"});
    Eigen::MatrixXd x(rows.size(), 2);
    Eigen::VectorXd y(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      x(i, 0) = double(rows[i]->in) * double(rows[i]->out);
      x(i, 1) = 1.0;
      y(i) = rows[i]->time;
    }
    FitReport rep;
    auto g = detail::least_squares(x, y, y, {"g1", "g2"}, &rep);
    if (rep.max_rel_residual > 0.05) {
      std::ostringstream os;
      os << tag << " residual up to " << rep.max_rel_residual * 100 << "%";
      warn(diag, os.str());
    }
    out[key] = {g(0), g(1)};
  }
  return out;
}

struct ClusterFit {
  CoreType type;
  FitReport single, thread;
};

// Fits every cluster present in the samples. tile_sizes must cover each
// measured type; a missing core count defaults to the largest one measured.
inline PlatformModel fit_platform(const std::vector<MeasurementSample>& samples,
                                  const std::map<CoreType, int>& tile_sizes, const std::map<CoreType, int>& cores,
                                  const std::string& name, std::vector<ClusterFit>* reports = nullptr,
                                  Diagnostics* diag = nullptr) {
  PlatformModel p;
  p.name = name;
  std::set<CoreType> types;
  for (auto& s : samples) types.insert(s.type);
  for (CoreType t : types) {
    std::vector<MeasurementSample> single, multi, fc;
    int seen_max = 1;
    for (auto& s : samples) {
      if (s.type != t) continue;
      seen_max = std::max(seen_max, s.cores);
      if (s.kind == SampleKind::Fc)
        fc.push_back(s);
      else if (s.cores == 1)
        single.push_back(s);
      else
        multi.push_back(s);
    }
    auto ts = tile_sizes.find(t);
    if (ts == tile_sizes.end()) throw FitError(std::string("no tile size given for cluster ") + core_code(t));
    ClusterModel c;
    c.type = t;
    c.tile_size = ts->second;
    c.max_cores = cores.count(t) ? cores.at(t) : seen_max;
    if (seen_max > c.max_cores)
      throw FitError(std::string("samples use ") + std::to_string(seen_max) + " cores on cluster " + core_code(t) +
                     " but it has " + std::to_string(c.max_cores));
    ClusterFit rep{t, {}, {}};
    try {
      c.gemm = fit_single_core(single, &rep.single);
      if (c.max_cores > 1) c.thread = fit_thread_coefficients(multi, c.gemm, c.tile_size, &rep.thread);
      c.fc = fit_fc(fc, diag);
    } catch (FitError& e) {
      throw FitError(std::string("cluster ") + core_code(t) + ": " + e.what(), e.terms);
    }
    if (rep.single.condition > 1e10)
      warn(diag, std::string("cluster ") + core_code(t) + ": single-core design is ill-conditioned");
    p.clusters.push_back(std::move(c));
    if (reports) reports->push_back(rep);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Platform file

inline nlohmann::ordered_json platform_to_json(const PlatformModel& p) {
  nlohmann::ordered_json j;
  j["schema"] = 1;
  j["name"] = p.name;
  j["clusters"] = nlohmann::ordered_json::array();
  for (auto& c : p.clusters) {
    nlohmann::ordered_json cj;
    cj["type"] = std::string(1, core_code(c.type));
    cj["cores"] = c.max_cores;
    cj["tile_size"] = c.tile_size;
    cj["gemm"] = c.gemm.beta;
    cj["thread"] = {c.thread.a1, c.thread.a2, c.thread.a3};
    cj["fc"] = nlohmann::ordered_json::array();
    for (auto& [key, g] : c.fc)
      cj["fc"].push_back({{"cores", key.first}, {"neurons", key.second}, {"gamma", {g.g1, g.g2}}});
    j["clusters"].push_back(cj);
  }
  return j;
}

inline PlatformModel platform_from_json(const nlohmann::json& j) {
  auto fail = [](const std::string& m) { throw ParseError("platform file: " + m); };
  if (!j.is_object()) fail("not a JSON object");
  if (j.contains("schema") && j["schema"] != 1) fail("unsupported schema version");
  PlatformModel p;
  p.name = j.value("name", "");
  if (!j.contains("clusters") || !j["clusters"].is_array()) fail("missing 'clusters' array");
  try {
    for (auto& cj : j["clusters"]) {
      ClusterModel c;
      c.type = parse_core_type(cj.at("type").get<std::string>());
      c.max_cores = cj.at("cores").get<int>();
      c.tile_size = cj.at("tile_size").get<int>();
      auto beta = cj.at("gemm").get<std::vector<double>>();
      if (beta.size() != 8) fail("'gemm' must hold 8 coefficients");
      std::copy(beta.begin(), beta.end(), c.gemm.beta.begin());
      auto a = cj.at("thread").get<std::vector<double>>();
      if (a.size() != 3) fail("'thread' must hold 3 coefficients");
      c.thread = {a[0], a[1], a[2]};
      if (cj.contains("fc"))
        for (auto& f : cj["fc"]) {
          auto g = f.at("gamma").get<std::vector<double>>();
          if (g.size() != 2) fail("'gamma' must hold 2 coefficients");
          c.fc[{f.at("cores").get<int>(), f.at("neurons").get<std::int64_t>()}] = {g[0], g[1]};
        }
      p.clusters.push_back(std::move(c));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(e.what());
  }
  validate_platform(p);
  return p;
}

inline PlatformModel load_platform(const std::string& path) {
  try {
    return platform_from_json(nlohmann::json::parse(read_text_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("platform file '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Time matrix

class TimeMatrix {
 public:
  TimeMatrix() = default;
  TimeMatrix(std::size_t layers, std::vector<StageConfig> configs)
      : w_(layers), configs_(std::move(configs)), t_(layers * configs_.size(), 0.0) {}

  std::size_t layers() const { return w_; }
  std::size_t num_configs() const { return configs_.size(); }
  const std::vector<StageConfig>& configs() const { return configs_; }
  const StageConfig& config(std::size_t c) const { return configs_[c]; }

  double& at(std::size_t l, std::size_t c) { return t_[l * configs_.size() + c]; }
  double at(std::size_t l, std::size_t c) const { return t_[l * configs_.size() + c]; }

  std::size_t index(const StageConfig& s) const {
    for (std::size_t c = 0; c < configs_.size(); ++c)
      if (configs_[c] == s) return c;
    throw DomainError("configuration " + s.str() + " not in time matrix");
  }
  bool has(const StageConfig& s) const {
    return std::find(configs_.begin(), configs_.end(), s) != configs_.end();
  }
  int max_cores(CoreType t) const {
    int m = 0;
    for (auto& s : configs_)
      if (s.type == t) m = std::max(m, s.count);
    return m;
  }

 private:
  std::size_t w_ = 0;
  std::vector<StageConfig> configs_;
  std::vector<double> t_;  // seconds, row-major by layer
};

// Big configurations first, then Small, each by ascending core count.
inline std::vector<StageConfig> platform_configs(const PlatformModel& p) {
  std::vector<StageConfig> out;
  for (CoreType t : {CoreType::Big, CoreType::Small})
    for (int h = 1; h <= p.cores(t); ++h) out.push_back({t, h});
  return out;
}

inline TimeMatrix build_time_matrix(const Network& net, const PlatformModel& platform, Diagnostics* diag = nullptr,
                                    unsigned jobs = 1) {
  validate_platform(platform);
  TimeMatrix tm(net.size(), platform_configs(platform));
  const std::size_t cols = tm.num_configs();
  std::vector<Diagnostics> local(net.size());

  auto fill = [&](std::size_t l) {
    const Layer& layer = net.layers[l];
    GemmDims g = gemm_dims(layer);
    for (std::size_t c = 0; c < cols; ++c) {
      const StageConfig& s = tm.config(c);
      const ClusterModel& cl = platform.cluster(s.type);
      tm.at(l, c) = layer.kind == LayerKind::FullyConnected
                        ? predict_fc(cl, layer.input_elements(), layer.neurons, s.count, &local[l])
                        : predict_multicore(cl, g, s.count, &local[l]);
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(net.size())));
  if (jobs == 1) {
    for (std::size_t l = 0; l < net.size(); ++l) fill(l);
  } else {
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j)
      pool.emplace_back([&, j] {
        for (std::size_t l = j; l < net.size(); l += jobs) fill(l);
      });
    for (auto& th : pool) th.join();
  }
  // merge diagnostics in layer order so logs do not depend on scheduling
  for (std::size_t l = 0; l < net.size(); ++l)
    for (auto& w : local[l].warnings()) warn(diag, "layer " + std::to_string(l + 1) + ": " + w);

  for (std::size_t l = 0; l < net.size(); ++l)
    for (std::size_t c = 1; c < cols; ++c) {
      const StageConfig &prev = tm.config(c - 1), &cur = tm.config(c);
      if (prev.type == cur.type && tm.at(l, c) > tm.at(l, c - 1))
        warn(diag, "layer " + std::to_string(l + 1) + ": time rises from " + prev.str() + " to " + cur.str());
    }
  return tm;
}

// CSV with a header "layer,<config>..." and times in milliseconds.
inline std::string format_time_matrix(const TimeMatrix& tm) {
  std::ostringstream os;
  os << "layer";
  for (auto& c : tm.configs()) os << ',' << c.str();
  os << '\n' << std::setprecision(17);
  for (std::size_t l = 0; l < tm.layers(); ++l) {
    os << l + 1;
    for (std::size_t c = 0; c < tm.num_configs(); ++c) os << ',' << tm.at(l, c) * 1e3;
    os << '\n';
  }
  return os.str();
}

inline StageConfig parse_stage_config(const std::string& s) {
  if (s.size() < 2) throw DomainError("bad stage configuration '" + s + "'");
  StageConfig c;
  c.type = parse_core_type(s.substr(0, 1));
  try {
    std::size_t pos = 0;
    c.count = std::stoi(s.substr(1), &pos);
    if (pos != s.size() - 1) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw DomainError("bad stage configuration '" + s + "'");
  }
  if (c.count < 1) throw DomainError("bad stage configuration '" + s + "'");
  return c;
}

inline TimeMatrix parse_time_matrix(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 0;
  if (!std::getline(in, line)) throw ParseError("time matrix is empty");
  ++ln;
  auto header = detail::split_csv(line);
  if (header.size() < 2 || header[0] != "layer") throw ParseError("time matrix header must start with 'layer'", 1);
  std::vector<StageConfig> configs;
  for (std::size_t i = 1; i < header.size(); ++i) {
    try {
      configs.push_back(parse_stage_config(header[i]));
    } catch (const DomainError& e) {
      throw ParseError(e.what(), 1);
    }
  }
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++ln;
    auto f = detail::split_csv(line);
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != header.size()) throw ParseError("wrong number of fields", ln);
    if (detail::to_int(f[0], "layer", ln) != static_cast<std::int64_t>(rows.size() + 1))
      throw ParseError("layers must be numbered 1..W in order", ln);
    std::vector<double> r;
    for (std::size_t i = 1; i < f.size(); ++i) {
      double v = detail::to_double(f[i], header[i], ln);
      if (!(v > 0)) throw ParseError("times must be positive", ln);
      r.push_back(v * 1e-3);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw ParseError("time matrix has no layers");
  TimeMatrix tm(rows.size(), configs);
  for (std::size_t l = 0; l < rows.size(); ++l)
    for (std::size_t c = 0; c < configs.size(); ++c) tm.at(l, c) = rows[l][c];
  return tm;
}

// ---------------------------------------------------------------------------
// Prediction error tables

struct ErrorRecord {
  std::string network;
  StageConfig config;
  double predicted = 0, measured = 0;  // seconds
};

struct ErrorTable {
  std::vector<std::string> networks;  // in first-seen order
  std::vector<StageConfig> configs;   // sorted
  std::map<std::pair<std::string, StageConfig>, double> mape;  // percent
  std::map<StageConfig, double> config_mean;                   // pooled over networks
  std::map<CoreType, double> cluster_mean;                     // pooled over all samples
};

inline ErrorTable prediction_error(const std::vector<ErrorRecord>& records) {
  if (records.empty()) throw DomainError("no reference samples");
  struct Acc {
    double sum = 0;
    std::size_t n = 0;
    void add(double v) { sum += v, ++n; }
    double mean() const { return n ? sum / double(n) : 0.0; }
  };
  std::map<std::pair<std::string, StageConfig>, Acc> cell;
  std::map<StageConfig, Acc> col;
  std::map<CoreType, Acc> cluster;
  ErrorTable t;
  for (auto& r : records) {
    if (!(r.measured > 0)) throw DomainError("measured time must be positive");
    double e = std::abs(r.predicted - r.measured) / r.measured * 100.0;
    if (std::find(t.networks.begin(), t.networks.end(), r.network) == t.networks.end())
      t.networks.push_back(r.network);
    cell[{r.network, r.config}].add(e);
    col[r.config].add(e);
    cluster[r.config.type].add(e);
  }
  for (auto& [k, a] : cell) t.mape[k] = a.mean();
  for (auto& [k, a] : col) {
    t.configs.push_back(k);
    t.config_mean[k] = a.mean();
  }
  for (auto& [k, a] : cluster) t.cluster_mean[k] = a.mean();
  return t;
}

inline std::string format_error_table(const ErrorTable& t) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  std::size_t wn = 8;
  for (auto& n : t.networks) wn = std::max(wn, n.size());
  os << std::left << std::setw(int(wn)) << "Network";
  for (auto& c : t.configs) os << std::right << std::setw(8) << c.str();
  os << '\n';
  for (auto& n : t.networks) {
    os << std::left << std::setw(int(wn)) << n;
    for (auto& c : t.configs) {
      auto it = t.mape.find({n, c});
      if (it == t.mape.end())
        os << std::right << std::setw(8) << "-";
      else
        os << std::right << std::setw(7) << it->second << '%';
    }
    os << '\n';
  }
  os << std::left << std::setw(int(wn)) << "Average";
  for (auto& c : t.configs) os << std::right << std::setw(7) << t.config_mean.at(c) << '%';
  os << '\n';
  for (auto& [type, m] : t.cluster_mean)
    os << (type == CoreType::Big ? "Big" : "Small") << " cluster average: " << m << "%\n";
  return os.str();
}

inline std::string format_error_csv(const ErrorTable& t) {
  std::ostringstream os;
  os << "network";
  for (auto& c : t.configs) os << ',' << c.str();
  os << '\n' << std::setprecision(10);
  for (auto& n : t.networks) {
    os << n;
    for (auto& c : t.configs) {
      os << ',';
      auto it = t.mape.find({n, c});
      if (it != t.mape.end()) os << it->second;
    }
    os << '\n';
  }
  os << "average";
  for (auto& c : t.configs) os << ',' << t.config_mean.at(c);
  os << '\n';
  return os.str();
}

inline std::vector<ErrorRecord> parse_error_records(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t ln = 1;
  if (!std::getline(in, line)) throw ParseError("error record file is empty");
  auto header = detail::split_csv(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  for (const char* c : {"network", "config", "predicted_ms", "measured_ms"})
    if (!col.count(c)) throw ParseError(std::string("missing column '") + c + "'", 1);
  std::vector<ErrorRecord> out;
  while (std::getline(in, line)) {
    ++ln;
    auto f = detail::split_csv(line);
    if (f.size() == 1 && f[0].empty()) continue;
    if (f.size() != header.size()) throw ParseError("wrong number of fields", ln);
    ErrorRecord r;
    r.network = f[col["network"]];
    try {
      r.config = parse_stage_config(f[col["config"]]);
    } catch (const DomainError& e) {
      throw ParseError(e.what(), ln);
    }
    r.predicted = detail::to_double(f[col["predicted_ms"]], "predicted_ms", ln) * 1e-3;
    r.measured = detail::to_double(f[col["measured_ms"]], "measured_ms", ln) * 1e-3;
    out.push_back(r);
  }
  if (out.empty()) throw ParseError("no samples");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic measurement sweeps

// Convolution sweep over input size, filter size and depths, stride 1, no
// padding; filters larger than the input are skipped.
inline std::vector<GemmDims> sweep_grid(const std::vector<int>& inputs = {7, 14, 28, 56, 112},
                                        const std::vector<int>& filters = {1, 3, 5, 7, 11},
                                        const std::vector<int>& depths = {32, 64, 128, 256},
                                        const std::vector<int>& ofms = {32, 64, 128, 256}) {
  std::vector<GemmDims> out;
  for (int i : inputs)
    for (int f : filters) {
      if (f > i) continue;
      for (int d : depths)
        for (int m : ofms) {
          const std::int64_t o = i - f + 1;
          out.push_back({o * o, std::int64_t(f) * f * d, m});
        }
    }
  return out;
}

struct SynthOptions {
  std::vector<GemmDims> grid = sweep_grid();
  std::vector<std::int64_t> fc_inputs = {1024, 2048, 4096, 9216, 25088};
  double noise = 0;  // relative standard deviation, multiplicative
  std::uint64_t seed = 1;
};

// Times the platform model itself would predict; the single-core rows use the
// plain GEMM model, multi-core rows the thread model.
inline std::vector<MeasurementSample> synthesize_measurements(const PlatformModel& p, const SynthOptions& o) {
  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  auto jitter = [&](double t) { return o.noise > 0 ? t * (1.0 + o.noise * z(rng)) : t; };
  std::vector<MeasurementSample> out;
  for (auto& c : p.clusters) {
    for (auto& g : o.grid)
      for (int h = 1; h <= c.max_cores; ++h) {
        double t = h == 1 ? predict_single_core(c.gemm, g) : predict_multicore(c, g, h);
        out.push_back({SampleKind::Gemm, g, 0, 0, c.type, h, jitter(t)});
      }
    for (auto& [key, coef] : c.fc)
      for (auto in : o.fc_inputs) {
        double t = std::max(kMinTime, coef.g1 * double(in) * double(key.second) + coef.g2);
        out.push_back({SampleKind::Fc, {}, in, key.second, c.type, key.first, jitter(t)});
      }
  }
  return out;
}

}  // namespace pipeit
