#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "neuropgm/model_tag.hpp"

namespace neuropgm {

/// Per-fit diagnostics. The objective trace starts with the initial value, so
/// trace.size() == iterations + 1.
struct FitReport {
  ModelTag model = ModelTag::Srm;
  std::vector<double> objective_trace;
  int iterations = 0;
  bool converged = false;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
  std::string message;

  void record(double objective) {
    objective_trace.push_back(objective);
    iterations = static_cast<int>(objective_trace.size()) - 1;
  }
};

}  // namespace neuropgm
