#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lamino {

/// Broad failure classes. The CLI prints the category name as the first
/// token of its one-line error report, so keep the names stable.
enum class ErrorCategory {
  usage,
  config,
  io,
  format,
  geometry,
  shape,
  numeric,
  calibration,
};

constexpr std::string_view category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return "usage";
    case ErrorCategory::config: return "config";
    case ErrorCategory::io: return "io";
    case ErrorCategory::format: return "format";
    case ErrorCategory::geometry: return "geometry";
    case ErrorCategory::shape: return "shape";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::calibration: return "calibration";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) { throw Error(c, msg); }

inline void require(bool ok, ErrorCategory c, const std::string& msg) {
  if (!ok) fail(c, msg);
}

}  // namespace lamino
