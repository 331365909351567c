#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pipeit {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input document or CSV. line is 1-based, 0 when unknown.
struct ParseError : Error {
  std::size_t line = 0;
  ParseError(const std::string& what, std::size_t line_ = 0)
      : Error(line_ ? what + " (line " + std::to_string(line_) + ")" : what), line(line_) {}
};

// Geometry or argument outside the model's domain.
struct DomainError : Error {
  using Error::Error;
};

struct FitError : Error {
  std::vector<std::string> terms;  // offending regression terms, if any
  FitError(const std::string& what, std::vector<std::string> t = {})
      : Error(what), terms(std::move(t)) {}
};

// Design space too large for exhaustive enumeration.
struct LimitError : Error {
  std::uint64_t count;
  LimitError(const std::string& what, std::uint64_t c) : Error(what), count(c) {}
};

// Non-fatal findings collected during a run.
class Diagnostics {
 public:
  void warn(std::string msg) { warnings_.push_back(std::move(msg)); }
  const std::vector<std::string>& warnings() const { return warnings_; }
  bool empty() const { return warnings_.empty(); }
  void clear() { warnings_.clear(); }

 private:
  std::vector<std::string> warnings_;
};

inline void warn(Diagnostics* d, std::string msg) {
  if (d) d->warn(std::move(msg));
}

}  // namespace pipeit
