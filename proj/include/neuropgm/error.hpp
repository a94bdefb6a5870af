#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace neuropgm {

enum class ErrorCode {
  NotSPD,
  DimensionMismatch,
  RankDeficient,
  BadSpec,
  BadShape,
  SolverFailure,
  DegenerateNoise,
  NonPositiveWidth,
  BadMagic,
  TruncatedFile,
  NonNumericCell,
  ConfigError,
  IoError,
  Usage,
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. The code lets callers (and the CLI) map failures
/// to recovery actions or exit statuses without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

}  // namespace neuropgm
