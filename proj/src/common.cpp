#include "floodsim/common.hpp"

namespace floodsim {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidHorizon: return "InvalidHorizon";
    case ErrorKind::InvalidPartition: return "InvalidPartition";
    case ErrorKind::NoDemandSource: return "NoDemandSource";
    case ErrorKind::UndefinedRates: return "UndefinedRates";
    case ErrorKind::InvalidWeights: return "InvalidWeights";
    case ErrorKind::MetricSetMismatch: return "MetricSetMismatch";
    case ErrorKind::InsufficientRuns: return "InsufficientRuns";
    case ErrorKind::EmptyQuery: return "EmptyQuery";
    case ErrorKind::NodeNotFound: return "NodeNotFound";
    case ErrorKind::EmptySeed: return "EmptySeed";
    case ErrorKind::MissingTask: return "MissingTask";
    case ErrorKind::DanglingEdge: return "DanglingEdge";
    case ErrorKind::InvalidDistribution: return "InvalidDistribution";
    case ErrorKind::MissingLocalPolicy: return "MissingLocalPolicy";
    case ErrorKind::BackendUnavailable: return "BackendUnavailable";
    case ErrorKind::UnknownRegion: return "UnknownRegion";
    case ErrorKind::UnknownDirective: return "UnknownDirective";
    case ErrorKind::NotTriggered: return "NotTriggered";
    case ErrorKind::InsufficientResponses: return "InsufficientResponses";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::DumpError: return "DumpError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace floodsim
