#include "neuropgm/report.hpp"

#include <cmath>
#include <sstream>

#include <json.hpp>

#include "neuropgm/error.hpp"

namespace neuropgm {

namespace {

using nlohmann::json;

json fit_to_json(const FitReport& r) {
  json j;
  j["model"] = std::string(to_string(r.model));
  j["objective_trace"] = r.objective_trace;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["wall_seconds"] = r.wall_seconds;
  j["seed"] = r.seed;
  j["metrics"] = r.metrics;
  j["message"] = r.message;
  return j;
}

[[noreturn]] void schema_error(const std::string& what) { fail(ErrorCode::BadSpec, "report schema: " + what); }

const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) schema_error(std::string("missing field '") + name + "'");
  return j.at(name);
}

std::map<std::string, double> metrics_from(const json& j) {
  if (!j.is_object()) schema_error("metrics must be an object");
  std::map<std::string, double> m;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_number()) schema_error("metric '" + k + "' is not a number");
    m[k] = v.get<double>();
  }
  return m;
}

FitReport fit_from_json(const json& j) {
  FitReport r;
  r.model = parse_model_tag(field(j, "model").get<std::string>());
  const json& trace = field(j, "objective_trace");
  if (!trace.is_array()) schema_error("objective_trace must be an array");
  for (const auto& v : trace) {
    if (!v.is_number()) schema_error("objective_trace entries must be numbers");
    r.objective_trace.push_back(v.get<double>());
  }
  r.iterations = field(j, "iterations").get<int>();
  if (r.iterations + 1 != static_cast<int>(r.objective_trace.size()))
    schema_error("iterations must equal the trace length minus one");
  r.converged = field(j, "converged").get<bool>();
  r.wall_seconds = field(j, "wall_seconds").get<double>();
  if (r.wall_seconds < 0.0) schema_error("wall_seconds must be non-negative");
  r.seed = field(j, "seed").get<std::uint64_t>();
  r.metrics = metrics_from(field(j, "metrics"));
  if (j.contains("message")) r.message = j.at("message").get<std::string>();
  return r;
}

json parse_json(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    schema_error(std::string("invalid JSON: ") + e.what());
  }
}

}  // namespace

std::string fit_report_to_json(const FitReport& report) {
  json j = fit_to_json(report);
  j["v"] = kReportVersion;
  return j.dump(2);
}

FitReport fit_report_from_json(const std::string& text) {
  try {
    return fit_from_json(parse_json(text));
  } catch (const json::exception& e) {
    schema_error(e.what());
  }
}

std::string eval_report_to_json(const EvalReport& report) {
  json j;
  j["v"] = kReportVersion;
  j["model"] = std::string(to_string(report.model));
  j["seed"] = report.seed;
  j["metrics"] = report.metrics;
  j["fit"] = fit_to_json(report.fit);
  return j.dump(2);
}

EvalReport eval_report_from_json(const std::string& text) {
  try {
    const json j = parse_json(text);
    if (field(j, "v").get<int>() != kReportVersion) schema_error("unsupported version");
    EvalReport r;
    r.model = parse_model_tag(field(j, "model").get<std::string>());
    r.seed = field(j, "seed").get<std::uint64_t>();
    r.metrics = metrics_from(field(j, "metrics"));
    r.fit = fit_from_json(field(j, "fit"));
    return r;
  } catch (const json::exception& e) {
    schema_error(e.what());
  }
}

std::string render_report(const EvalReport& report, const std::string& format) {
  if (format == "json") return eval_report_to_json(report) + "\n";
  std::ostringstream ss;
  ss.precision(17);
  if (format == "csv") {
    ss << "metric,value\n";
    for (const auto& [k, v] : report.metrics) ss << k << "," << v << "\n";
    return ss.str();
  }
  if (format == "text") {
    ss.precision(6);
    ss << "model: " << to_string(report.model) << "\nseed: " << report.seed << "\n";
    ss << "iterations: " << report.fit.iterations << (report.fit.converged ? " (converged)" : " (not converged)") << "\n";
    for (const auto& [k, v] : report.metrics) ss << "  " << k << " = " << v << "\n";
    return ss.str();
  }
  fail(ErrorCode::Usage, "unknown report format '" + format + "' (expected text, json or csv)");
}

}  // namespace neuropgm
