#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fars/fars.hpp"

using namespace fars;

namespace {

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, qtau, edge, delta, sample_size;
  std::optional<int> h, n_samples;
  std::optional<std::string> direction, gamma, support;
};

void add_overrides(CLI::App* cmd, std::string& config, Overrides& o) {
  cmd->add_option("--config", config, "Run configuration (JSON)")->required();
  cmd->add_option("--out", o.out, "Output directory (overrides the config)");
  cmd->add_option("--seed", o.seed, "Random seed for subsampling and density draws");
  cmd->add_option("--alpha", o.alpha, "Confidence level of the stress ellipsoid, in (0, 1)");
  cmd->add_option("--qtau", o.qtau, "Quantile level for stressing and risk, in (0, 1)");
  cmd->add_option("--h", o.h, "Forecast horizon (>= 1)");
  cmd->add_option("--edge", o.edge, "Outer quantile level, in (0, 0.25)");
  cmd->add_option("--direction", o.direction, "Stress direction")->check(CLI::IsMember({"min", "max"}));
  cmd->add_option("--gamma", o.gamma, "Idiosyncratic covariance estimator")->check(CLI::IsMember({"bn", "fpr"}));
  cmd->add_option("--delta", o.delta, "Thresholding constant for --gamma fpr");
  cmd->add_option("--n-samples", o.n_samples, "Number of subsamples");
  cmd->add_option("--sample-size", o.sample_size, "Fraction of each block kept per subsample, in (0, 1]");
  cmd->add_option("--support", o.support, "Density grid as lo,hi");
}

std::pair<double, double> parse_support(const std::string& s) {
  const auto comma = s.find(',');
  if (comma != std::string::npos) {
    const auto lo = csv::parse_double(s.substr(0, comma));
    const auto hi = csv::parse_double(s.substr(comma + 1));
    if (lo && hi) return {*lo, *hi};
  }
  throw InputError("--support expects lo,hi, got '" + s + "'");
}

PipelineConfig resolve(const std::string& path, const Overrides& o) {
  PipelineConfig c = load_config(path);
  if (o.out) c.output = fs::path(*o.out);
  if (o.seed) c.seed = *o.seed;
  if (o.alpha) c.alpha = *o.alpha;
  if (o.qtau) c.qtau = *o.qtau;
  if (o.edge) c.edge = *o.edge;
  if (o.delta) c.delta = *o.delta;
  if (o.sample_size) c.sample_size = *o.sample_size;
  if (o.h) c.h = *o.h;
  if (o.n_samples) c.n_samples = *o.n_samples;
  if (o.direction) c.direction = parse_direction(*o.direction);
  if (o.gamma) c.gamma = parse_gamma_mode(*o.gamma);
  if (o.support) std::tie(c.lo, c.hi) = parse_support(*o.support);
  c.validate();
  c.check_paths();
  return c;
}

std::string num(double v) {
  std::ostringstream s;
  s << std::setprecision(6) << v;
  return s.str();
}

void summarize_model(const fs::path& out) {
  const Json m = artifacts::meta(out, "model/meta.json");
  std::cout << "Multi-level dynamic factor model\n"
            << "  Number of periods:   " << m["periods"] << "\n"
            << "  Number of variables: " << m["variables"] << "\n"
            << "  Number of blocks:    " << m["block_ends"].size() << "\n"
            << "  Number of factors:   " << m["factors"] << "\n"
            << "  Factors per node:\n";
  for (const auto& n : m["nodes"]) {
    std::string label;
    for (const auto& b : n["blocks"]) label += (label.empty() ? "" : "-") + std::to_string(b.get<int>());
    std::cout << "    " << std::left << std::setw(12) << label << std::right << n["count"] << "\n";
  }
  std::cout << "  Initialization:      " << m["method"].get<std::string>() << "\n"
            << "  Iterations:          " << m["iterations"]
            << (m["converged"].get<bool>() ? " (converged)" : " (not converged)") << "\n"
            << "  Final RSS:           " << std::fixed << std::setprecision(4) << m["rss"].get<double>()
            << std::defaultfloat << "\n";
}

void summarize_subsamples(const fs::path& out) {
  const Json m = artifacts::meta(out, "subsamples/meta.json");
  std::cout << "Subsample estimation\n"
            << "  Number of subsamples: " << m["n_samples"] << "\n"
            << "  Sample fraction:      " << num(m["sample_size"].get<double>()) << "\n"
            << "  Variables per draw:   " << m["subsample_dim"] << "\n"
            << "  Not converged:        " << m["nonconverged"] << "\n";
}

void summarize_scenario(const fs::path& out) {
  const Json m = artifacts::meta(out, "scenario/meta.json");
  std::cout << "Stress scenario\n"
            << "  Number of periods:  " << m["periods"] << "\n"
            << "  Number of factors:  " << m["factors"] << "\n"
            << "  Confidence level:   " << num(m["alpha"].get<double>()) << "\n"
            << "  Chi-square value:   " << num(m["chi2"].get<double>()) << "\n"
            << "  Points per period:  " << m["points"] << "\n"
            << "  Gamma estimator:    " << m["gamma"].get<std::string>() << "\n"
            << "  Subsamples:         " << m["subsample_count"] << "\n";
}

void summarize_quantiles(const fs::path& out) {
  const Json m = artifacts::meta(out, "fars/meta.json");
  const auto coef = artifacts::table(out, "fars/coefficients.csv");
  const auto se = artifacts::table(out, "fars/std_errors.csv");
  const auto pv = artifacts::table(out, "fars/p_values.csv");
  std::cout << "Factor-augmented quantile regression\n"
            << "  Horizon:            " << m["h"] << "\n"
            << "  Number of rows:     " << m["rows"] << "\n"
            << "  Quantile levels:   ";
  for (const auto& l : m["levels"]) std::cout << ' ' << num(l.get<double>());
  std::cout << "\n  Stressed:           ";
  if (m["stressed"].get<bool>())
    std::cout << "yes (qtau " << num(m["qtau"].get<double>()) << ", " << m["direction"].get<std::string>() << ")\n";
  else
    std::cout << "no\n";
  std::cout << "  Coefficients (estimate / std. error / p-value):\n";
  for (Index r = 0; r < coef.values.rows(); ++r) {
    std::cout << "    tau " << coef.row_labels[static_cast<std::size_t>(r)] << "\n";
    for (Index c = 0; c < coef.values.cols(); ++c)
      std::cout << "      " << std::left << std::setw(10) << coef.header[static_cast<std::size_t>(c)] << std::right
                << std::setw(12) << num(coef.values(r, c)) << std::setw(12) << num(se.values(r, c)) << std::setw(12)
                << num(pv.values(r, c)) << "\n";
  }
}

void summarize_density(const fs::path& out) {
  const Json m = artifacts::meta(out, "density/meta.json");
  std::cout << "Skew-t densities\n"
            << "  Source:             " << m["source"].get<std::string>() << "\n"
            << "  Number of rows:     " << m["rows"] << "\n"
            << "  Grid points:        " << m["est_points"] << " on [" << num(m["support"][0].get<double>()) << ", "
            << num(m["support"][1].get<double>()) << "]\n"
            << "  Draws per row:      " << m["random_samples"] << " (seed " << m["seed"] << ")\n"
            << "  Optimization:       " << m["optimization"].get<std::string>() << "\n"
            << "  Failed rows:        " << m["failed_rows"].size() << "\n";
}

void summarize_risk(const fs::path& out, double qtau) {
  const auto r = artifacts::table(out, "risk.csv");
  std::cout << "Quantile risk\n"
            << "  Level:              " << num(qtau) << "\n"
            << "  Number of rows:     " << r.values.rows() << "\n";
  if (r.values.rows() > 0)
    std::cout << "  Last row (" << r.row_labels.back() << "): " << num(r.values(r.values.rows() - 1, 0)) << "\n"
              << "  Minimum:            " << num(r.values.minCoeff()) << "\n";
}

void report(const RunManifest& m, const PipelineConfig& c) {
  for (const auto& w : m.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "Artifacts written to " << c.output.string() << " (" << m.artifacts.size() << " files)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Factor-augmented risk scenarios: multi-level factor models, stress scenarios and skew-t densities"};
  app.set_help_flag("--help", "Print this help message and exit");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config;
  Overrides o;
  auto command = [&](const std::string& name, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    add_overrides(cmd, config, o);
    return cmd;
  };
  auto* estimate = command("estimate", "Fit the multi-level factor model");
  auto* subsample = command("subsample", "Re-estimate on random cross-sectional subsamples");
  auto* scenario = command("scenario", "Build per-period stress ellipsoids");
  auto* quantiles = command("quantiles", "Fit factor-augmented quantile regressions");
  bool stressed = false;
  quantiles->add_flag("--stressed", stressed, "Optimize over the persisted scenario");
  auto* density = command("density", "Fit skew-t densities to the quantile forecasts");
  auto* risk = command("risk", "Quantile risk of the density draws");
  auto* unstressed_run = command("run-unstressed", "estimate, quantiles, density, risk");
  auto* stressed_run = command("run-stressed", "estimate, subsample, scenario, stressed quantiles, density, risk");

  auto* plot = app.add_subcommand("plot-data", "Long-format CSV of an artifact on standard output");
  std::string artifact;
  std::string kind;
  plot->add_option("artifact", artifact, "Artifact CSV")->required();
  plot->add_option("--kind", kind, "Artifact kind")
      ->required()
      ->check(CLI::IsMember({"factors", "quantiles", "density", "risk"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto parsed = app.get_subcommands();
    std::cerr << (parsed.empty() ? app.help() : parsed.front()->help());
    return 1;
  }

  try {
    if (plot->parsed()) {
      plot_data(artifact, parse_plot_kind(kind), std::cout);
      return 0;
    }
    const PipelineConfig cfg = resolve(config, o);
    Runner run(cfg, app.get_subcommands().front()->get_name());
    const auto quant = [s = stressed](const PipelineConfig& c, RunLog& l) { stage_quantiles(c, l, s); };
    if (estimate->parsed()) {
      run.stage("estimate", stage_estimate);
      summarize_model(cfg.output);
    } else if (subsample->parsed()) {
      run.stage("subsample", stage_subsample);
      summarize_subsamples(cfg.output);
    } else if (scenario->parsed()) {
      run.stage("scenario", stage_scenario);
      summarize_scenario(cfg.output);
    } else if (quantiles->parsed()) {
      run.stage("quantiles", quant);
      summarize_quantiles(cfg.output);
    } else if (density->parsed()) {
      run.stage("density", stage_density);
      summarize_density(cfg.output);
    } else if (risk->parsed()) {
      run.stage("risk", stage_risk);
      summarize_risk(cfg.output, cfg.risk_level());
    } else if (unstressed_run->parsed()) {
      const auto m = run_unstressed(cfg);
      summarize_model(cfg.output);
      summarize_quantiles(cfg.output);
      summarize_density(cfg.output);
      summarize_risk(cfg.output, cfg.risk_level());
      report(m, cfg);
      return 0;
    } else if (stressed_run->parsed()) {
      const auto m = run_stressed(cfg);
      summarize_model(cfg.output);
      summarize_subsamples(cfg.output);
      summarize_scenario(cfg.output);
      summarize_quantiles(cfg.output);
      summarize_density(cfg.output);
      summarize_risk(cfg.output, cfg.risk_level());
      report(m, cfg);
      return 0;
    }
    report(run.finish(), cfg);
    return 0;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
