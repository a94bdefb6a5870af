#include "neuropgm/cli.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "neuropgm/brsa.hpp"
#include "neuropgm/drd.hpp"
#include "neuropgm/htfa.hpp"
#include "neuropgm/io.hpp"
#include "neuropgm/matnormal.hpp"
#include "neuropgm/metrics.hpp"
#include "neuropgm/srm.hpp"

namespace neuropgm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string path_in(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string sub(const std::string& name, std::size_t m) { return name + "_" + std::to_string(m); }

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoError, "cannot create directory " + dir + ": " + ec.message());
}

struct DataDir {
  ModelTag model = ModelTag::Srm;
  std::uint64_t seed = 0;
  int factors = 0;
  std::vector<Matrix> datasets;
  std::map<std::string, double> scalars;
  std::string dir;

  Matrix aux(const std::string& name) const { return read_matrix(path_in(dir, name + ".f64")); }
  Matrix truth(const std::string& name) const { return read_matrix(path_in(dir, "truth/" + name + ".f64")); }
  double scalar(const std::string& name) const {
    const auto it = scalars.find(name);
    if (it == scalars.end()) fail(ErrorCode::BadShape, dir + ": manifest lacks scalar '" + name + "'");
    return it->second;
  }
};

DataDir load_data(const std::string& dir) {
  DataDir d;
  d.dir = dir;
  const std::string mpath = path_in(dir, "manifest.json");
  json j;
  try {
    j = json::parse(read_text_file(mpath));
    d.model = parse_model_tag(j.at("model").get<std::string>());
    d.seed = j.at("seed").get<std::uint64_t>();
    d.factors = j.at("factors").get<int>();
    for (const auto& [k, v] : j.at("scalars").items()) d.scalars[k] = v.get<double>();
    const int M = j.at("subjects").get<int>();
    for (int m = 0; m < M; ++m) d.datasets.push_back(read_matrix(path_in(dir, sub("X", m) + ".f64")));
  } catch (const json::exception& e) {
    fail(ErrorCode::BadShape, mpath + ": " + e.what());
  }
  return d;
}

std::vector<Matrix> read_indexed(const std::string& dir, const std::string& name, std::size_t M) {
  std::vector<Matrix> out;
  for (std::size_t m = 0; m < M; ++m) out.push_back(read_matrix(path_in(dir, sub(name, m) + ".f64")));
  return out;
}

void write_indexed(const std::string& dir, const std::string& name, const std::vector<Matrix>& mats) {
  for (std::size_t m = 0; m < mats.size(); ++m) write_matrix(path_in(dir, sub(name, m) + ".f64"), mats[m]);
}

std::vector<Matrix> as_columns(const std::vector<Vector>& vs) { return {vs.begin(), vs.end()}; }

Matrix drop_tail_rows(const Matrix& X, Eigen::Index n) { return X.topRows(X.rows() - n); }

int model_k(const Config& cfg, const std::string& section, const DataDir& d) {
  return static_cast<int>(cfg.get_int(section + ".k", d.factors));
}

MnOptions mn_options(const Config& cfg, const std::string& s) {
  MnOptions o;
  o.max_iters = static_cast<int>(cfg.get_int(s + ".max_iters", o.max_iters));
  o.tol = cfg.get_double(s + ".tol", o.tol);
  o.seed = static_cast<std::uint64_t>(cfg.get_int(s + ".seed", 0));
  const std::string t = cfg.get_string(s + ".temporal", "ar1");
  if (t == "ar1") o.temporal = AR1{1.0, 0.0};
  else if (t == "identity") o.temporal = ScaledIdentity{1.0};
  else fail(ErrorCode::ConfigError, s + ".temporal must be ar1 or identity");
  const std::string v = cfg.get_string(s + ".voxel_cov", "diagonal");
  if (v != "diagonal" && v != "scaled") fail(ErrorCode::ConfigError, s + ".voxel_cov must be diagonal or scaled");
  o.diagonal_voxel = v == "diagonal";
  return o;
}

}  // namespace

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::Usage: return 1;
    case ErrorCode::IoError:
    case ErrorCode::BadMagic:
    case ErrorCode::TruncatedFile:
    case ErrorCode::NonNumericCell:
    case ErrorCode::BadShape:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::ConfigError:
    case ErrorCode::BadSpec: return 2;
    case ErrorCode::NotSPD:
    case ErrorCode::RankDeficient:
    case ErrorCode::SolverFailure:
    case ErrorCode::DegenerateNoise:
    case ErrorCode::NonPositiveWidth: return 3;
  }
  return 3;
}

SimSpec sim_spec_from_config(const Config& cfg, ModelTag model) {
  const std::string p = "simulate.";
  if (cfg.has(p + "model") && parse_model_tag(cfg.get_string(p + "model", "")) != model)
    fail(ErrorCode::ConfigError, "config line " + std::to_string(cfg.at(p + "model").line) + ": model disagrees with --model");
  SimSpec s;
  s.model = model;
  const auto geti = [&](const char* k, int def) { return static_cast<int>(cfg.get_int(p + k, def)); };
  const auto getd = [&](const char* k, double def) { return cfg.get_double(p + k, def); };
  s.subjects = geti("subjects", s.subjects);
  s.timepoints = geti("timepoints", s.timepoints);
  s.voxels = geti("voxels", s.voxels);
  s.factors = geti("factors", s.factors);
  s.snr = getd("snr", s.snr);
  if (cfg.has(p + "noise_var")) s.noise_var = getd("noise_var", 0.0);
  s.seed = static_cast<std::uint64_t>(cfg.get_int(p + "seed", 0));
  s.mean_scale = getd("mean_scale", s.mean_scale);
  s.temporal_phi = getd("temporal_phi", s.temporal_phi);
  if (cfg.has(p + "center_spread")) s.center_spread = getd("center_spread", 0.0);
  s.subject_center_var = getd("subject_center_var", s.subject_center_var);
  s.width_mean = getd("width_mean", s.width_mean);
  s.width_sd = getd("width_sd", s.width_sd);
  s.subject_width_var = getd("subject_width_var", s.subject_width_var);
  s.weight_mean = getd("weight_mean", s.weight_mean);
  s.weight_sd = getd("weight_sd", s.weight_sd);
  s.drd_mean = getd("drd_mean", s.drd_mean);
  s.drd_magnitude = getd("drd_magnitude", s.drd_magnitude);
  s.drd_length = getd("drd_length", s.drd_length);
  s.drd_blocks = geti("drd_blocks", s.drd_blocks);
  s.drd_block_width = geti("drd_block_width", s.drd_block_width);
  s.drd_block_level = getd("drd_block_level", s.drd_block_level);
  s.drd_test_rows = geti("drd_test_rows", s.drd_test_rows);
  s.nuisance_rank = geti("nuisance_rank", s.nuisance_rank);
  s.nuisance_scale = getd("nuisance_scale", s.nuisance_scale);
  s.ar_phi_min = getd("ar_phi_min", s.ar_phi_min);
  s.ar_phi_max = getd("ar_phi_max", s.ar_phi_max);
  if (cfg.has(p + "pattern_within") || cfg.has(p + "pattern_across"))
    s.shared_cov = two_cluster_pattern_cov(s.factors, getd("pattern_within", 0.8), getd("pattern_across", 0.0));
  s.validate();
  return s;
}

void run_simulate(ModelTag model, const Config& spec_cfg, const std::string& out_dir) {
  const SimSpec spec = sim_spec_from_config(spec_cfg, model);
  const SimOutput sim = simulate(spec);
  make_dir(out_dir);
  make_dir(path_in(out_dir, "truth"));
  write_indexed(out_dir, "X", sim.datasets);
  if (model == ModelTag::Htfa) write_matrix(path_in(out_dir, "grid.f64"), default_grid(spec.voxels).positions);
  if (model == ModelTag::Drd) {
    write_matrix(path_in(out_dir, "y.f64"), sim.targets);
    write_matrix(path_in(out_dir, "points.f64"), sim.truth.latent("points"));
  }
  if (model == ModelTag::Brsa) write_matrix(path_in(out_dir, "design.f64"), sim.truth.latent("design"));
  for (const auto& [name, M] : sim.truth.latents) write_matrix(path_in(out_dir, "truth/" + name + ".f64"), M);
  json j;
  j["v"] = kReportVersion;
  j["model"] = std::string(to_string(model));
  j["seed"] = spec.seed;
  j["subjects"] = sim.datasets.size();
  j["factors"] = spec.factors;
  j["scalars"] = sim.truth.scalars;
  write_text_file(path_in(out_dir, "manifest.json"), j.dump(2));
}

FitReport run_fit(ModelTag model, const std::string& data_dir, const Config& cfg, const std::string& out_dir) {
  const DataDir d = load_data(data_dir);
  if (d.model != model) {
    const bool mn = (d.model == ModelTag::MnSrm || d.model == ModelTag::DpSrm || d.model == ModelTag::Srm) &&
                    (model == ModelTag::MnSrm || model == ModelTag::DpSrm || model == ModelTag::Srm);
    if (!mn) fail(ErrorCode::BadShape, data_dir + " holds " + std::string(to_string(d.model)) + " data");
  }
  make_dir(out_dir);
  const auto M = d.datasets.size();
  FitReport report;
  switch (model) {
    case ModelTag::Srm: {
      SrmOptions o;
      o.max_iters = static_cast<int>(cfg.get_int("srm.max_iters", o.max_iters));
      o.tol = cfg.get_double("srm.tol", o.tol);
      o.seed = static_cast<std::uint64_t>(cfg.get_int("srm.seed", 0));
      o.diagonal_shared_cov = cfg.get_bool("srm.diagonal_shared_cov", false);
      const std::string method = cfg.get_string("srm.method", "probabilistic");
      SrmFit fit;
      if (method == "probabilistic") fit = fit_srm_probabilistic(d.datasets, model_k(cfg, "srm", d), o);
      else if (method == "deterministic") fit = fit_srm_deterministic(d.datasets, model_k(cfg, "srm", d), o);
      else fail(ErrorCode::ConfigError, "srm.method must be probabilistic or deterministic");
      write_matrix(path_in(out_dir, "S.f64"), fit.model.S);
      write_indexed(out_dir, "W", fit.model.W);
      if (!fit.model.mu.empty()) write_indexed(out_dir, "mu", as_columns(fit.model.mu));
      report = fit.report;
      break;
    }
    case ModelTag::Htfa: {
      HtfaOptions o;
      o.max_iters = static_cast<int>(cfg.get_int("htfa.max_iters", o.max_iters));
      o.tol = cfg.get_double("htfa.tol", o.tol);
      o.seed = static_cast<std::uint64_t>(cfg.get_int("htfa.seed", 0));
      o.subsample = cfg.get_double("htfa.subsample", o.subsample);
      o.subject_center_var = cfg.get_double("htfa.subject_center_var", o.subject_center_var);
      o.subject_width_var = cfg.get_double("htfa.subject_width_var", o.subject_width_var);
      o.weight_prior.mean = cfg.get_double("htfa.weight_mean", o.weight_prior.mean);
      o.weight_prior.var = cfg.get_double("htfa.weight_var", o.weight_prior.var);
      o.initial_radius = cfg.get_double("htfa.initial_radius", o.initial_radius);
      o.max_inner_iters = static_cast<int>(cfg.get_int("htfa.max_inner_iters", o.max_inner_iters));
      o.candidate_fraction = cfg.get_double("htfa.candidate_fraction", o.candidate_fraction);
      VoxelGrid grid{d.aux("grid")};
      const HtfaFit fit = fit_htfa(d.datasets, grid, model_k(cfg, "htfa", d), o);
      write_matrix(path_in(out_dir, "centers.f64"), fit.global.centers);
      write_matrix(path_in(out_dir, "widths.f64"), fit.global.widths);
      std::vector<Matrix> c, w, wt;
      for (const auto& s : fit.subjects) {
        c.push_back(s.centers);
        w.push_back(s.widths);
        wt.push_back(s.weights);
      }
      write_indexed(out_dir, "centers", c);
      write_indexed(out_dir, "widths", w);
      write_indexed(out_dir, "weights", wt);
      report = fit.report;
      for (std::size_t m = 0; m < M; ++m) report.metrics[sub("noise_var", m)] = fit.subjects[m].noise_var;
      break;
    }
    case ModelTag::Drd: {
      DrdOptions o;
      o.outer_evals = static_cast<int>(cfg.get_int("drd.outer_evals", o.outer_evals));
      o.inner_iters = static_cast<int>(cfg.get_int("drd.inner_iters", o.inner_iters));
      o.length_min = cfg.get_double("drd.length_min", o.length_min);
      if (cfg.has("drd.length_max")) o.length_max = cfg.get_double("drd.length_max", 0.0);
      o.rho_min = cfg.get_double("drd.rho_min", o.rho_min);
      o.rho_max = cfg.get_double("drd.rho_max", o.rho_max);
      o.seed = static_cast<std::uint64_t>(cfg.get_int("drd.seed", 0));
      const auto test_rows = static_cast<Eigen::Index>(d.scalars.count("test_rows") ? d.scalar("test_rows") : 0.0);
      const Matrix X = drop_tail_rows(d.datasets.at(0), test_rows);
      const Vector y = drop_tail_rows(d.aux("y"), test_rows).col(0);
      const DrdModel fit = fit_drd(X, y, d.aux("points"), o);
      write_matrix(path_in(out_dir, "w.f64"), fit.w);
      write_matrix(path_in(out_dir, "u.f64"), fit.u);
      report = fit.report;
      report.metrics["b"] = fit.hyper.b;
      report.metrics["rho"] = fit.hyper.rho;
      report.metrics["length"] = fit.hyper.length;
      report.metrics["noise_var"] = fit.hyper.noise_var;
      report.metrics["log_evidence"] = fit.log_evidence;
      break;
    }
    case ModelTag::Brsa: {
      BrsaOptions o;
      o.nuisance_rank = static_cast<int>(cfg.get_int("brsa.nuisance_rank", o.nuisance_rank));
      o.rounds = static_cast<int>(cfg.get_int("brsa.rounds", o.rounds));
      o.max_iters = static_cast<int>(cfg.get_int("brsa.max_iters", o.max_iters));
      o.tol = cfg.get_double("brsa.tol", o.tol);
      o.demean = cfg.get_bool("brsa.demean", o.demean);
      const BrsaModel fit = fit_brsa(d.datasets.at(0), d.aux("design"), o);
      write_matrix(path_in(out_dir, "similarity.f64"), fit.similarity);
      write_matrix(path_in(out_dir, "U.f64"), fit.pattern_cov());
      write_matrix(path_in(out_dir, "sigma.f64"), fit.sigma);
      write_matrix(path_in(out_dir, "phi.f64"), fit.phi);
      report = fit.report;
      break;
    }
    case ModelTag::MnSrm:
    case ModelTag::DpSrm: {
      const std::string s(to_string(model));
      const MnOptions o = mn_options(cfg, s);
      const int K = model_k(cfg, s, d);
      const MnModel fit = model == ModelTag::MnSrm ? fit_mnsrm(d.datasets, K, o) : fit_dpsrm(d.datasets, K, o);
      write_matrix(path_in(out_dir, "S.f64"), fit.S);
      write_indexed(out_dir, "W", fit.W);
      write_indexed(out_dir, "mu", as_columns(fit.mu));
      report = fit.report;
      report.metrics["temporal_phi"] = fit.temporal_phi();
      break;
    }
  }
  write_text_file(path_in(out_dir, "fit.json"), fit_report_to_json(report));
  return report;
}

EvalReport run_evaluate(const std::string& truth_dir, const std::string& fit_dir) {
  const DataDir d = load_data(truth_dir);
  EvalReport r;
  r.fit = fit_report_from_json(read_text_file(path_in(fit_dir, "fit.json")));
  r.model = r.fit.model;
  r.seed = d.seed;
  const auto fitm = [&](const std::string& name) { return read_matrix(path_in(fit_dir, name + ".f64")); };
  const auto M = d.datasets.size();
  switch (r.model) {
    case ModelTag::Srm:
    case ModelTag::MnSrm:
    case ModelTag::DpSrm: {
      r.metrics["aligned_recovery_score"] = aligned_recovery_score(d.truth("S"), fitm("S"));
      if (r.model != ModelTag::Srm && d.scalars.count("phi_t"))
        r.metrics["temporal_phi_error"] = std::abs(r.fit.metrics.at("temporal_phi") - d.scalar("phi_t"));
      break;
    }
    case ModelTag::Htfa: {
      const VoxelGrid grid{d.aux("grid")};
      r.metrics["matched_center_error"] = matched_center_error(d.truth("centers"), fitm("centers"));
      const auto c = read_indexed(fit_dir, "centers", M);
      const auto w = read_indexed(fit_dir, "widths", M);
      const auto wt = read_indexed(fit_dir, "weights", M);
      double se = 0.0, n = 0.0, g2 = 0.0;
      for (std::size_t m = 0; m < M; ++m) {
        const Matrix F = rbf_factors(c[m], w[m].col(0), grid);
        se += (d.datasets[m] - wt[m] * F).squaredNorm();
        n += static_cast<double>(d.datasets[m].size());
        g2 += d.scalar(sub("gamma2", m)) / static_cast<double>(M);
      }
      r.metrics["reconstruction_rmse"] = std::sqrt(se / n);
      r.metrics["noise_sd"] = std::sqrt(g2);
      r.metrics["reconstruction_rmse_ratio"] = std::sqrt(se / n) / std::sqrt(g2);
      break;
    }
    case ModelTag::Drd: {
      const Vector w = fitm("w").col(0);
      r.metrics["weight_correlation"] = pearson(w, Vector(d.truth("w").col(0)));
      const auto test_rows = static_cast<Eigen::Index>(d.scalars.count("test_rows") ? d.scalar("test_rows") : 0.0);
      if (test_rows > 0) {
        const Matrix& X = d.datasets.at(0);
        const Vector y = d.aux("y").col(0);
        const Vector pred = X.bottomRows(test_rows) * w;
        r.metrics["test_rmse"] = std::sqrt((pred - y.tail(test_rows)).squaredNorm() / static_cast<double>(test_rows));
      }
      break;
    }
    case ModelTag::Brsa: {
      const Matrix truth = d.truth("similarity_realized");
      r.metrics["similarity_rmse"] = offdiag_rmse(fitm("similarity"), truth);
      r.metrics["naive_similarity_rmse"] = offdiag_rmse(naive_rsa(d.datasets.at(0), d.aux("design")), truth);
      break;
    }
  }
  return r;
}

namespace {

ModelTag usage_model(const std::string& name) {
  try {
    return parse_model_tag(name);
  } catch (const Error& e) {
    fail(ErrorCode::Usage, e.what());
  }
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Probabilistic models for multi-subject fMRI: simulate, fit, evaluate, report", "neuropgm"};
  app.require_subcommand(1);
  std::string model, spec, out_dir, data, config, truth, fit_dir, in, format = "text";
  auto* sim = app.add_subcommand("simulate", "Sample a dataset and its ground truth");
  sim->add_option("--model", model, "srm|htfa|drd|brsa|mnsrm|dpsrm")->required();
  sim->add_option("--spec", spec, "Simulation config")->required();
  sim->add_option("--out", out_dir, "Output directory")->required();
  auto* fit = app.add_subcommand("fit", "Fit a model to a data directory");
  fit->add_option("--model", model, "srm|htfa|drd|brsa|mnsrm|dpsrm")->required();
  fit->add_option("--data", data, "Data directory")->required();
  fit->add_option("--config", config, "Fit config");
  fit->add_option("--out", out_dir, "Output directory")->required();
  auto* ev = app.add_subcommand("evaluate", "Score a fit against the simulation truth");
  ev->add_option("--truth", truth, "Data directory with truth/")->required();
  ev->add_option("--fit", fit_dir, "Fit directory")->required();
  ev->add_option("--out", out_dir, "Report path")->required();
  auto* rep = app.add_subcommand("report", "Render an evaluation report");
  rep->add_option("--in", in, "Report path")->required();
  rep->add_option("--format", format, "text|json|csv")->check(CLI::IsMember({"text", "json", "csv"}));

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (sim->parsed()) {
      run_simulate(usage_model(model), parse_config(spec), out_dir);
    } else if (fit->parsed()) {
      const Config cfg = config.empty() ? Config{} : parse_config(config);
      run_fit(usage_model(model), data, cfg, out_dir);
    } else if (ev->parsed()) {
      write_text_file(out_dir, eval_report_to_json(run_evaluate(truth, fit_dir)) + "\n");
    } else if (rep->parsed()) {
      out << render_report(eval_report_from_json(read_text_file(in)), format);
    }
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    if (e.code() == ErrorCode::Usage) err << app.help();
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

int cli_main(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_main(args, std::cout, std::cerr);
}

}  // namespace neuropgm
