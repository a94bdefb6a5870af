#include "neuropgm/error.hpp"

namespace neuropgm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotSPD: return "NotSPD";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::BadShape: return "BadShape";
    case ErrorCode::SolverFailure: return "SolverFailure";
    case ErrorCode::DegenerateNoise: return "DegenerateNoise";
    case ErrorCode::NonPositiveWidth: return "NonPositiveWidth";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::Usage: return "Usage";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace neuropgm
