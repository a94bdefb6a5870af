#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "neuropgm/config.hpp"
#include "neuropgm/error.hpp"
#include "neuropgm/report.hpp"
#include "neuropgm/simgen.hpp"

namespace neuropgm {

/// 1 usage, 2 data (files, shapes, config), 3 solver failure.
int exit_code_for(ErrorCode code);

/// Builds a SimSpec from the [simulate] section.
SimSpec sim_spec_from_config(const Config& cfg, ModelTag model);

/// Data directory: manifest.json, X_<m>.f64, auxiliary inputs (grid.f64,
/// points.f64, y.f64, design.f64) and truth/<latent>.f64.
void run_simulate(ModelTag model, const Config& spec, const std::string& out_dir);
/// Fit directory: fit.json plus one .f64 per estimated matrix.
FitReport run_fit(ModelTag model, const std::string& data_dir, const Config& cfg, const std::string& out_dir);
EvalReport run_evaluate(const std::string& truth_dir, const std::string& fit_dir);

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_main(int argc, const char* const* argv);

}  // namespace neuropgm
