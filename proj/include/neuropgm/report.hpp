#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "neuropgm/fit_report.hpp"
#include "neuropgm/model_tag.hpp"

namespace neuropgm {

inline constexpr int kReportVersion = 1;

/// Output of `evaluate`: metrics comparing a fit with the simulation truth.
struct EvalReport {
  ModelTag model = ModelTag::Srm;
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
  FitReport fit;
};

std::string fit_report_to_json(const FitReport& report);
FitReport fit_report_from_json(const std::string& text);

std::string eval_report_to_json(const EvalReport& report);
/// Throws BadSpec when the document does not follow the report schema.
EvalReport eval_report_from_json(const std::string& text);

/// format: "text", "json" or "csv".
std::string render_report(const EvalReport& report, const std::string& format);

}  // namespace neuropgm
