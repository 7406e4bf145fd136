#pragma once

#include <compare>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

namespace floodsim {

// Row-major grid coordinate. Directives and logs print cells as (row, col).
struct GridCoord {
  int row = 0;
  int col = 0;

  friend auto operator<=>(const GridCoord&, const GridCoord&) = default;
};

inline int manhattan(GridCoord a, GridCoord b) {
  return std::abs(a.row - b.row) + std::abs(a.col - b.col);
}

enum class ErrorKind {
  InvalidHorizon,
  InvalidPartition,
  NoDemandSource,
  UndefinedRates,
  InvalidWeights,
  MetricSetMismatch,
  InsufficientRuns,
  EmptyQuery,
  NodeNotFound,
  EmptySeed,
  MissingTask,
  DanglingEdge,
  InvalidDistribution,
  MissingLocalPolicy,
  BackendUnavailable,
  UnknownRegion,
  UnknownDirective,
  NotTriggered,
  InsufficientResponses,
  ConfigError,
  DumpError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library; `kind()` identifies the failure and
// `field()` carries a config path or offending item where one applies.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message, std::string field = {})
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        field_(std::move(field)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

private:
  ErrorKind kind_;
  std::string field_;
};

}  // namespace floodsim
