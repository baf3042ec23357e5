#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fars/csv.hpp"
#include "fars/data_model.hpp"
#include "fars/density.hpp"
#include "fars/error.hpp"
#include "fars/factor_models.hpp"
#include "fars/factor_uncertainty.hpp"
#include "fars/faqr.hpp"
#include "fars/version.hpp"

namespace fars {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

/// Everything a run needs. Paths are resolved against the config file's
/// directory when loaded from disk.
struct PipelineConfig {
  fs::path data;
  bool has_dates = true;
  bool has_header = true;
  std::optional<fs::path> dep_path;
  std::optional<std::string> dep_column;
  std::vector<Index> block_ends;  // empty: one block holding every variable
  int global = 1;
  std::vector<int> local;
  std::map<std::string, int> middle_layer;
  InitMethod method = InitMethod::CCA;
  double tol = 1e-6;
  int max_iter = 1000;
  bool standardize = true;
  int h = 1;
  double edge = 0.05;
  std::optional<double> qtau;
  Direction direction = Direction::Min;
  double alpha = 0.95;
  GammaMode gamma = GammaMode::BN;
  double delta = 2.0;
  int n_samples = 100;
  double sample_size = 0.94;
  Index est_points = 512;
  Index random_samples = 5000;
  double lo = -10.0;
  double hi = 10.0;
  std::uint64_t seed = 42;
  fs::path output = "fars_out";

  /// Level used for quantile risk and, in stressed runs, for stressing.
  double risk_level() const { return qtau.value_or(edge); }

  FactorStructure structure(int block_count) const {
    return FactorStructure::from_counts(block_count, global, local, middle_layer);
  }

  EstimationOptions estimation() const { return {method, tol, max_iter}; }

  DensityOptions density() const { return {est_points, random_samples, lo, hi, seed}; }

  /// Parameter domains. File existence is checked separately.
  void validate() const {
    auto fail = [](const std::string& m) { throw InputError("config: " + m); };
    if (data.empty()) fail("'data' is required");
    if (!dep_path && !dep_column) fail("'dep_variable' is required");
    if (global < 0) fail("structure.global must be >= 0");
    for (int v : local)
      if (v < 0) fail("structure.local counts must be >= 0");
    if (!(tol > 0.0)) fail("tol must be > 0");
    if (max_iter < 1) fail("max_iter must be >= 1");
    if (h < 1) fail("h must be >= 1");
    if (!(edge > 0.0 && edge < 0.25)) fail("edge must lie in (0, 0.25)");
    if (qtau && !(*qtau > 0.0 && *qtau < 1.0)) fail("qtau must lie in (0, 1)");
    if (!(alpha > 0.0 && alpha < 1.0)) fail("alpha must lie in (0, 1)");
    if (!(delta >= 0.0)) fail("delta must be >= 0");
    if (n_samples < 1) fail("n_samples must be >= 1");
    if (!(sample_size > 0.0 && sample_size <= 1.0)) fail("sample_size must lie in (0, 1]");
    if (est_points < 2) fail("est_points must be >= 2");
    if (random_samples < 1) fail("random_samples must be >= 1");
    if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) fail("support must satisfy lo < hi");
    for (std::size_t i = 0; i < block_ends.size(); ++i)
      if (block_ends[i] < 1 || (i && block_ends[i] <= block_ends[i - 1]))
        fail("block_ends must be strictly increasing positive integers");
  }

  void check_paths() const {
    if (!fs::is_regular_file(data)) throw InputError("data file not found: " + data.string());
    if (dep_path && !fs::is_regular_file(*dep_path))
      throw InputError("dep_variable file not found: " + dep_path->string());
  }

  Json to_json() const {
    Json j;
    j["data"] = data.string();
    j["has_dates"] = has_dates;
    j["has_header"] = has_header;
    if (dep_path)
      j["dep_variable"] = Json{{"path", dep_path->string()}};
    else if (dep_column)
      j["dep_variable"] = Json{{"column", *dep_column}};
    j["block_ends"] = block_ends;
    Json s;
    s["global"] = global;
    s["local"] = local;
    s["middle_layer"] = Json::object();
    for (const auto& [k, v] : middle_layer) s["middle_layer"][k] = v;
    j["structure"] = s;
    j["method"] = to_string(method);
    j["tol"] = tol;
    j["max_iter"] = max_iter;
    j["standardize"] = standardize;
    j["h"] = h;
    j["edge"] = edge;
    j["qtau"] = qtau ? Json(*qtau) : Json(nullptr);
    j["direction"] = to_string(direction);
    j["alpha"] = alpha;
    j["gamma"] = to_string(gamma);
    j["delta"] = delta;
    j["n_samples"] = n_samples;
    j["sample_size"] = sample_size;
    j["est_points"] = est_points;
    j["random_samples"] = random_samples;
    j["support"] = {lo, hi};
    j["seed"] = seed;
    j["output"] = output.string();
    return j;
  }
};

namespace detail {

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys{
      "data",  "has_dates", "has_header", "dep_variable", "block_ends", "structure",   "method",
      "tol",   "max_iter",  "standardize", "h",           "edge",       "qtau",        "direction",
      "alpha", "gamma",     "delta",      "n_samples",    "sample_size", "est_points", "random_samples",
      "support", "seed",    "output"};
  return keys;
}

template <typename T>
void take(const Json& j, const char* key, T& dst) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InputError(std::string("config: '") + key + "' has the wrong type");
  }
}

inline fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return (q.is_absolute() ? q : base / q).lexically_normal();
}

}  // namespace detail

/// Builds a config from a parsed JSON object. Unknown keys are rejected.
inline PipelineConfig parse_config(const Json& j, const fs::path& base = ".") {
  if (!j.is_object()) throw InputError("config: top level must be an object");
  for (const auto& [key, value] : j.items())
    if (!detail::config_keys().count(key)) throw InputError("config: unknown key '" + key + "'");

  PipelineConfig c;
  std::string s;
  if (j.contains("data")) {
    detail::take(j, "data", s);
    c.data = detail::resolve(base, s);
  }
  detail::take(j, "has_dates", c.has_dates);
  detail::take(j, "has_header", c.has_header);
  if (j.contains("dep_variable")) {
    const Json& d = j.at("dep_variable");
    if (d.is_string()) {
      // A bare string is a file when one exists there, a column name otherwise.
      const fs::path p = detail::resolve(base, d.get<std::string>());
      if (fs::is_regular_file(p))
        c.dep_path = p;
      else
        c.dep_column = d.get<std::string>();
    } else if (d.is_object() && d.size() == 1 && d.contains("path") && d.at("path").is_string()) {
      c.dep_path = detail::resolve(base, d.at("path").get<std::string>());
    } else if (d.is_object() && d.size() == 1 && d.contains("column") && d.at("column").is_string()) {
      c.dep_column = d.at("column").get<std::string>();
    } else {
      throw InputError("config: 'dep_variable' must be a string, {\"path\": ...} or {\"column\": ...}");
    }
  }
  detail::take(j, "block_ends", c.block_ends);
  if (j.contains("structure")) {
    const Json& st = j.at("structure");
    if (!st.is_object()) throw InputError("config: 'structure' must be an object");
    for (const auto& [key, value] : st.items())
      if (key != "global" && key != "local" && key != "middle_layer")
        throw InputError("config: unknown key 'structure." + key + "'");
    detail::take(st, "global", c.global);
    detail::take(st, "local", c.local);
    detail::take(st, "middle_layer", c.middle_layer);
  }
  if (j.contains("method")) {
    detail::take(j, "method", s);
    c.method = parse_init_method(s);
  }
  detail::take(j, "tol", c.tol);
  detail::take(j, "max_iter", c.max_iter);
  detail::take(j, "standardize", c.standardize);
  detail::take(j, "h", c.h);
  detail::take(j, "edge", c.edge);
  if (j.contains("qtau") && !j.at("qtau").is_null()) {
    double q = 0.0;
    detail::take(j, "qtau", q);
    c.qtau = q;
  }
  if (j.contains("direction")) {
    detail::take(j, "direction", s);
    c.direction = parse_direction(s);
  }
  detail::take(j, "alpha", c.alpha);
  if (j.contains("gamma")) {
    detail::take(j, "gamma", s);
    c.gamma = parse_gamma_mode(s);
  }
  detail::take(j, "delta", c.delta);
  detail::take(j, "n_samples", c.n_samples);
  detail::take(j, "sample_size", c.sample_size);
  detail::take(j, "est_points", c.est_points);
  detail::take(j, "random_samples", c.random_samples);
  if (j.contains("support")) {
    std::vector<double> sup;
    detail::take(j, "support", sup);
    if (sup.size() != 2) throw InputError("config: 'support' must be [lo, hi]");
    c.lo = sup[0];
    c.hi = sup[1];
  }
  if (j.contains("seed")) {
    const Json& sd = j.at("seed");
    if (!sd.is_number_integer() || (sd.is_number_integer() && !sd.is_number_unsigned() && sd.get<std::int64_t>() < 0))
      throw InputError("config: 'seed' must be a non-negative integer");
    c.seed = sd.get<std::uint64_t>();
  }
  if (j.contains("output")) {
    detail::take(j, "output", s);
    c.output = detail::resolve(base, s);
  } else {
    c.output = detail::resolve(base, c.output.string());
  }
  c.validate();
  return c;
}

inline Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(path.string() + ": invalid JSON (" + e.what() + ")");
  }
}

inline PipelineConfig load_config(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw InputError("config file not found: " + path.string());
  return parse_config(read_json(path), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

/// The standardized panel and the target series.
struct Inputs {
  Panel panel;
  Vector target;
  std::string target_name;
  std::vector<std::string> periods;
};

inline std::vector<std::string> period_labels(const Panel& p) {
  if (p.dates()) return *p.dates();
  std::vector<std::string> out;
  for (Index t = 0; t < p.periods(); ++t) out.push_back(std::to_string(t + 1));
  return out;
}

inline Inputs load_inputs(const PipelineConfig& c) {
  c.check_paths();
  Panel raw = load_panel(c.data, c.has_dates, c.has_header);
  Inputs in{raw, Vector(), "", {}};
  if (c.dep_column) {
    if (!raw.var_names()) throw InputError("dep_variable names a column but the data file has no header");
    const auto& names = *raw.var_names();
    const auto it = std::find(names.begin(), names.end(), *c.dep_column);
    if (it == names.end()) throw InputError("dep_variable column '" + *c.dep_column + "' not in " + c.data.string());
    const auto idx = static_cast<Index>(it - names.begin());
    in.target = raw.values().col(idx);
    in.target_name = *c.dep_column;
    std::vector<Index> keep;
    for (Index i = 0; i < raw.variables(); ++i)
      if (i != idx) keep.push_back(i);
    in.panel = raw.select_columns(keep);
  } else {
    const Panel dep = load_panel(*c.dep_path, c.has_dates, c.has_header);
    if (dep.variables() != 1)
      throw InputError(c.dep_path->string() + ": target file must hold exactly one series");
    if (dep.periods() != raw.periods())
      throw InputError(c.dep_path->string() + ": " + std::to_string(dep.periods()) + " periods, data has " +
                       std::to_string(raw.periods()));
    in.target = dep.values().col(0);
    in.target_name = dep.var_names() ? dep.variable_label(0) : "target";
  }
  if (in.panel.variables() < 1) throw InputError("data file has no predictor columns");
  if (c.standardize) in.panel = standardize(in.panel);
  in.periods = period_labels(in.panel);
  return in;
}

inline BlockSpec block_spec(const PipelineConfig& c, Index n) {
  BlockSpec spec = c.block_ends.empty() ? BlockSpec::single(n) : BlockSpec(c.block_ends);
  spec.check_matches(n);
  return spec;
}

/// Writes artifacts under the output root and remembers what was produced.
class RunLog {
 public:
  explicit RunLog(fs::path root) : root_(std::move(root)) {}

  const fs::path& root() const noexcept { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }

  void csv(const std::string& rel, const Matrix& values, const std::vector<std::string>& header = {},
           const std::vector<std::string>& labels = {}, const std::string& label_name = "period") {
    csv::write(path(rel), values, header, labels, label_name);
    record(rel);
  }

  void json(const std::string& rel, const Json& j) {
    const fs::path p = path(rel);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << j.dump(2) << '\n';
    if (!out) throw InputError("failed writing file: " + p.string());
    record(rel);
  }

  /// Drops a stage directory so stale files from earlier runs cannot mix in.
  void reset(const std::string& rel) {
    fs::remove_all(path(rel));
    std::erase_if(artifacts_, [&](const std::string& a) { return a.rfind(rel + "/", 0) == 0; });
  }

  void warn(std::string w) { warnings_.push_back(std::move(w)); }

  const std::vector<std::string>& artifacts() const noexcept { return artifacts_; }
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  void record(const std::string& rel) {
    if (std::find(artifacts_.begin(), artifacts_.end(), rel) == artifacts_.end()) artifacts_.push_back(rel);
  }

  fs::path root_;
  std::vector<std::string> artifacts_;
  std::vector<std::string> warnings_;
};

namespace artifacts {

inline csv::Table table(const fs::path& root, const std::string& rel, bool header = true) {
  const fs::path p = root / rel;
  if (!fs::is_regular_file(p)) throw InputError("missing artifact: " + p.string());
  return csv::read(p, true, header);
}

inline Json meta(const fs::path& root, const std::string& rel) {
  const fs::path p = root / rel;
  if (!fs::is_regular_file(p)) throw InputError("missing artifact: " + p.string());
  return read_json(p);
}

inline std::string padded(std::size_t i, std::size_t n) {
  const std::size_t width = std::max<std::size_t>(3, std::to_string(n).size());
  std::string s = std::to_string(i);
  return std::string(width - std::min(width, s.size()), '0') + s;
}

inline std::string level_name(double tau) { return "q" + csv::format_double(tau); }

struct Model {
  MldfmResult result;
  std::vector<std::string> periods;
  std::vector<std::string> variables;
  Json meta;
};

inline Json structure_json(const FactorStructure& s) {
  Json nodes = Json::array();
  for (const auto& n : s.nodes()) nodes.push_back({{"blocks", n.blocks}, {"count", n.count}});
  return nodes;
}

inline FactorStructure structure_from(const Json& nodes) {
  std::vector<FactorNode> out;
  for (const auto& n : nodes) out.push_back({n.at("blocks").get<std::vector<int>>(), n.at("count").get<int>()});
  return FactorStructure(std::move(out));
}

inline Model read_model(const fs::path& root) {
  Model m;
  m.meta = meta(root, "model/meta.json");
  auto f = table(root, "model/factors.csv");
  auto l = table(root, "model/loadings.csv");
  auto e = table(root, "model/residuals.csv");
  m.result.factors = std::move(f.values);
  m.result.loadings = std::move(l.values);
  m.result.residuals = std::move(e.values);
  m.periods = std::move(f.row_labels);
  m.variables = std::move(l.row_labels);
  try {
    m.result.method = parse_init_method(m.meta.at("method").get<std::string>());
    m.result.iterations = m.meta.at("iterations").get<int>();
    m.result.converged = m.meta.at("converged").get<bool>();
    m.result.rss_trace = m.meta.at("rss_trace").get<std::vector<double>>();
    m.result.structure = structure_from(m.meta.at("nodes"));
    m.result.blocks = BlockSpec(m.meta.at("block_ends").get<std::vector<Index>>());
  } catch (const nlohmann::json::exception& ex) {
    throw InputError("model/meta.json: " + std::string(ex.what()));
  }
  if (m.result.loadings.cols() != m.result.factors.cols() || m.result.residuals.rows() != m.result.factors.rows() ||
      m.result.residuals.cols() != m.result.loadings.rows())
    throw InputError("model artifacts disagree in shape");
  return m;
}

inline std::vector<MldfmResult> read_subsamples(const fs::path& root) {
  const Json j = meta(root, "subsamples/meta.json");
  const auto count = j.at("n_samples").get<std::size_t>();
  std::vector<MldfmResult> subs(count);
  for (std::size_t s = 0; s < count; ++s) {
    const std::string dir = "subsamples/" + padded(s + 1, count) + "/";
    subs[s].factors = table(root, dir + "factors.csv").values;
    subs[s].loadings = table(root, dir + "loadings.csv").values;
  }
  return subs;
}

inline Scenario read_scenario(const fs::path& root) {
  const Json j = meta(root, "scenario/meta.json");
  Scenario sc;
  sc.alpha = j.at("alpha").get<double>();
  sc.chi2_value = j.at("chi2").get<double>();
  sc.z = j.at("points").get<Index>();
  sc.mode = parse_gamma_mode(j.at("gamma").get<std::string>());
  sc.delta = j.at("delta").get<double>();
  sc.subsample_count = j.at("subsample_count").get<int>();
  sc.subsample_dim = j.at("subsample_dim").get<Index>();
  const auto periods = j.at("periods").get<std::size_t>();
  sc.per_t.resize(periods);
  for (std::size_t t = 0; t < periods; ++t) {
    const fs::path p = root / ("scenario/period_" + padded(t + 1, periods) + ".csv");
    if (!fs::is_regular_file(p)) throw InputError("missing artifact: " + p.string());
    sc.per_t[t] = csv::read(p, false, true).values;
  }
  return sc;
}

}  // namespace artifacts

/// Fits the factor model on the standardized panel.
inline void stage_estimate(const PipelineConfig& c, RunLog& log) {
  const Inputs in = load_inputs(c);
  const BlockSpec spec = block_spec(c, in.panel.variables());
  const FactorStructure structure = c.structure(spec.block_count());
  const MldfmResult m = estimate_mldfm(in.panel, spec, structure, c.estimation());

  std::vector<std::string> vars;
  for (Index i = 0; i < in.panel.variables(); ++i) vars.push_back(in.panel.variable_label(i));
  const auto names = m.factor_names();
  log.reset("model");
  log.csv("model/factors.csv", m.factors, names, in.periods);
  log.csv("model/loadings.csv", m.loadings, names, vars, "variable");
  log.csv("model/residuals.csv", m.residuals, vars, in.periods);
  Json meta;
  meta["method"] = to_string(m.method);
  meta["iterations"] = m.iterations;
  meta["converged"] = m.converged;
  meta["rss"] = m.rss();
  meta["rss_trace"] = m.rss_trace;
  meta["periods"] = m.periods();
  meta["variables"] = in.panel.variables();
  meta["factors"] = m.factor_count();
  meta["block_ends"] = spec.block_end_indices();
  meta["nodes"] = artifacts::structure_json(structure);
  meta["factor_names"] = names;
  meta["standardized"] = c.standardize;
  meta["target"] = in.target_name;
  log.json("model/meta.json", meta);
  if (!m.converged)
    log.warn("estimate: no convergence within " + std::to_string(m.iterations) + " iterations (tol " +
             csv::format_double(c.tol) + ")");
}

/// Re-estimates the model on random cross-sectional subsamples.
inline void stage_subsample(const PipelineConfig& c, RunLog& log) {
  const Inputs in = load_inputs(c);
  const auto model = artifacts::read_model(log.root());
  const auto& full = model.result;
  if (in.panel.variables() != full.loadings.rows())
    throw InputError("data has " + std::to_string(in.panel.variables()) + " predictors, model/ has " +
                     std::to_string(full.loadings.rows()) + " (re-run estimate)");
  const auto subs = subsample_estimates(in.panel.values(), full.blocks, full.structure, c.n_samples, c.sample_size,
                                        c.estimation(), c.seed);
  const auto names = full.factor_names();
  const std::size_t count = subs.size();
  log.reset("subsamples");
  int stalled = 0;
  for (std::size_t s = 0; s < count; ++s) {
    const std::string dir = "subsamples/" + artifacts::padded(s + 1, count) + "/";
    const auto& r = subs[s].result;
    std::vector<std::string> vars;
    std::vector<Index> cols;
    for (Index col : subs[s].columns) {
      vars.push_back(model.variables[static_cast<std::size_t>(col)]);
      cols.push_back(col + 1);
    }
    log.csv(dir + "factors.csv", r.factors, names, model.periods);
    log.csv(dir + "loadings.csv", r.loadings, names, vars, "variable");
    log.json(dir + "meta.json",
             {{"columns", cols}, {"iterations", r.iterations}, {"converged", r.converged}, {"rss", r.rss()}});
    if (!r.converged) ++stalled;
  }
  Json meta;
  meta["n_samples"] = count;
  meta["sample_size"] = c.sample_size;
  meta["seed"] = c.seed;
  meta["subsample_dim"] = count ? subs.front().result.loadings.rows() : 0;
  meta["block_ends"] = subsample_block_spec(full.blocks, c.sample_size).block_end_indices();
  meta["nonconverged"] = stalled;
  log.json("subsamples/meta.json", meta);
  if (stalled)
    log.warn("subsample: " + std::to_string(stalled) + " of " + std::to_string(count) + " estimations did not converge");
}

/// Corrected factor covariance and the per-period ellipsoid points.
inline void stage_scenario(const PipelineConfig& c, RunLog& log) {
  const auto model = artifacts::read_model(log.root());
  const auto subs = artifacts::read_subsamples(log.root());
  const MseSeries mse = corrected_mse(model.result, std::span<const MldfmResult>(subs), c.gamma, c.delta);
  const Scenario sc = create_scenario(model.result.factors, mse, c.alpha);
  const Index r = model.result.factor_count();
  const auto names = model.result.factor_names();

  Matrix flat(static_cast<Index>(mse.per_t.size()), r * r);
  std::vector<std::string> cells;
  for (Index i = 0; i < r; ++i)
    for (Index k = 0; k < r; ++k) cells.push_back(names[static_cast<std::size_t>(i)] + ":" + names[static_cast<std::size_t>(k)]);
  for (std::size_t t = 0; t < mse.per_t.size(); ++t)
    for (Index i = 0; i < r; ++i)
      for (Index k = 0; k < r; ++k) flat(static_cast<Index>(t), i * r + k) = mse.per_t[t](i, k);

  log.reset("scenario");
  log.csv("scenario/mse.csv", flat, cells, model.periods);
  for (std::size_t t = 0; t < sc.per_t.size(); ++t)
    log.csv("scenario/period_" + artifacts::padded(t + 1, sc.per_t.size()) + ".csv", sc.per_t[t], names);
  Json meta;
  meta["alpha"] = sc.alpha;
  meta["chi2"] = sc.chi2_value;
  meta["points"] = sc.z;
  meta["factors"] = r;
  meta["periods"] = sc.periods();
  meta["gamma"] = to_string(sc.mode);
  meta["delta"] = sc.delta;
  meta["subsample_count"] = sc.subsample_count;
  meta["subsample_dim"] = sc.subsample_dim;
  log.json("scenario/meta.json", meta);
}

/// Quantile regressions of the h-step target on its lag and the factors,
/// optionally stressed over the scenario ellipsoids.
inline void stage_quantiles(const PipelineConfig& c, RunLog& log, bool stressed) {
  const Inputs in = load_inputs(c);
  const auto model = artifacts::read_model(log.root());
  const Matrix& factors = model.result.factors;
  if (factors.rows() != in.target.size())
    throw InputError("model/ has " + std::to_string(factors.rows()) + " periods, target has " +
                     std::to_string(in.target.size()) + " (re-run estimate)");
  std::optional<Scenario> sc;
  if (stressed) {
    sc = artifacts::read_scenario(log.root());
    if (sc->periods() != factors.rows() || sc->dimension() != factors.cols())
      throw InputError("scenario/ does not match model/ (re-run scenario)");
  }
  const auto res = compute_fars(in.target, factors, c.h, c.edge, sc ? &*sc : nullptr,
                                stressed ? c.qtau : std::nullopt, c.direction);

  const auto names = model.result.factor_names();
  std::vector<std::string> qcols;
  std::vector<std::string> taus;
  for (double l : res.levels) {
    qcols.push_back(artifacts::level_name(l));
    taus.push_back(csv::format_double(l));
  }
  const std::vector<std::string> origins(model.periods.begin(), model.periods.begin() + res.rows());
  std::vector<std::string> terms{"intercept", "lag"};
  terms.insert(terms.end(), names.begin(), names.end());
  const Index p = static_cast<Index>(terms.size());
  Matrix coef(5, p), se(5, p), pv(5, p);
  Json inflations = Json::array();
  for (std::size_t j = 0; j < 5; ++j) {
    const auto& f = res.fits[j];
    coef.row(static_cast<Index>(j)) = f.coefficients.transpose();
    se.row(static_cast<Index>(j)) = f.std_errors.transpose();
    pv.row(static_cast<Index>(j)) = f.p_values.transpose();
    inflations.push_back(f.bandwidth_inflations);
    if (f.bandwidth_inflations > 0)
      log.warn("quantiles: sparsity bandwidth at tau " + taus[j] + " widened " +
               std::to_string(f.bandwidth_inflations) + " time(s)");
  }

  log.reset("fars");
  log.csv("fars/quantiles.csv", res.quantiles, qcols, origins, "origin");
  log.csv("fars/coefficients.csv", coef, terms, taus, "tau");
  log.csv("fars/std_errors.csv", se, terms, taus, "tau");
  log.csv("fars/p_values.csv", pv, terms, taus, "tau");
  if (stressed) {
    log.csv("fars/stressed_quantiles.csv", *res.stressed_quantiles, qcols, origins, "origin");
    log.csv("fars/stressed_factors.csv", *res.stressed_factors, names, origins, "origin");
  }
  Json meta;
  meta["h"] = res.horizon;
  meta["edge"] = c.edge;
  meta["levels"] = res.levels;
  meta["rows"] = res.rows();
  meta["stressed"] = stressed;
  meta["qtau"] = res.qtau ? Json(*res.qtau) : Json(nullptr);
  meta["direction"] = to_string(res.direction);
  meta["target"] = in.target_name;
  meta["bandwidth_inflations"] = inflations;
  log.json("fars/meta.json", meta);
}

/// Skew-t densities for every quantile row; stressed quantiles when the
/// last quantile stage ran with a scenario.
inline void stage_density(const PipelineConfig& c, RunLog& log) {
  const Json fm = artifacts::meta(log.root(), "fars/meta.json");
  const bool stressed = fm.at("stressed").get<bool>();
  const std::string source = stressed ? "stressed_quantiles" : "quantiles";
  const auto q = artifacts::table(log.root(), "fars/" + source + ".csv");
  const auto levels = fm.at("levels").get<Levels>();
  const auto d = compute_density(q.values, levels, c.density());

  std::vector<std::string> xs;
  for (Index g = 0; g < d.grid.size(); ++g) xs.push_back(csv::format_double(d.grid(g)));
  Matrix params(d.rows(), 7);
  for (Index r = 0; r < d.rows(); ++r) {
    const auto& p = d.params[static_cast<std::size_t>(r)];
    params.row(r) << p.location, p.scale, p.shape, p.dof, d.fit_loss(r), d.iterations[static_cast<std::size_t>(r)],
        d.row_ok[static_cast<std::size_t>(r)] ? 1.0 : 0.0;
  }
  log.reset("density");
  log.csv("density/density_grid.csv", d.densities, xs, q.row_labels, "origin");
  log.csv("density/samples.csv", d.samples, {}, q.row_labels, "origin");
  log.csv("density/params.csv", params, {"location", "scale", "shape", "dof", "loss", "iterations", "ok"},
          q.row_labels, "origin");
  Json meta;
  meta["source"] = source;
  meta["levels"] = levels;
  meta["rows"] = d.rows();
  meta["est_points"] = c.est_points;
  meta["random_samples"] = c.random_samples;
  meta["support"] = {d.lo, d.hi};
  meta["seed"] = d.seed;
  meta["optimization"] = d.optimization;
  meta["failed_rows"] = d.errors;
  log.json("density/meta.json", meta);
  for (const auto& e : d.errors) log.warn("density: " + e);
}

/// The qtau quantile of each row's draws.
inline void stage_risk(const PipelineConfig& c, RunLog& log) {
  const auto s = artifacts::table(log.root(), "density/samples.csv", false);
  const Vector risk = quantile_risk(s.values, c.risk_level());
  log.csv("risk.csv", risk, {"risk"}, s.row_labels, "origin");
}

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct RunManifest {
  std::string command;
  std::string version = kVersion;
  std::string status = "ok";
  std::string failed_stage;
  std::string error;
  Json config;
  std::vector<StageTiming> stages;
  std::vector<std::string> artifacts;
  std::vector<std::string> warnings;

  Json to_json() const {
    Json j;
    j["command"] = command;
    j["version"] = version;
    j["status"] = status;
    if (status != "ok") {
      j["failed_stage"] = failed_stage;
      j["error"] = error;
    }
    j["config"] = config;
    Json st = Json::array();
    for (const auto& s : stages) st.push_back({{"name", s.name}, {"seconds", s.seconds}});
    j["stages"] = st;
    j["artifacts"] = artifacts;
    j["warnings"] = warnings;
    return j;
  }
};

/// Runs stages in order, timing each, and writes manifest.json last. A
/// failing stage leaves a partial manifest naming it before the error
/// propagates with the stage name prefixed.
class Runner {
 public:
  Runner(PipelineConfig config, std::string command) : config_(std::move(config)), log_(config_.output) {
    manifest_.command = std::move(command);
    manifest_.config = config_.to_json();
  }

  const PipelineConfig& config() const noexcept { return config_; }
  RunLog& log() noexcept { return log_; }

  template <typename Stage>
  void stage(const std::string& name, Stage&& fn) {
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
    try {
      fn(config_, log_);
    } catch (const InputError& e) {
      fail(name, e.what(), elapsed());
      throw InputError(name + ": " + e.what());
    } catch (const NumericError& e) {
      fail(name, e.what(), elapsed());
      throw NumericError(name + ": " + e.what());
    } catch (const std::exception& e) {
      fail(name, e.what(), elapsed());
      throw NumericError(name + ": " + e.what());
    }
    manifest_.stages.push_back({name, elapsed()});
  }

  RunManifest finish() {
    write();
    return manifest_;
  }

 private:
  void fail(const std::string& name, const std::string& what, double seconds) {
    manifest_.stages.push_back({name, seconds});
    manifest_.status = "failed";
    manifest_.failed_stage = name;
    manifest_.error = what;
    try {
      write();
    } catch (...) {
    }
  }

  void write() {
    manifest_.artifacts = log_.artifacts();
    manifest_.artifacts.push_back("manifest.json");
    manifest_.warnings = log_.warnings();
    fs::create_directories(config_.output);
    std::ofstream out(config_.output / "manifest.json", std::ios::binary);
    out << manifest_.to_json().dump(2) << '\n';
    if (!out) throw InputError("failed writing file: " + (config_.output / "manifest.json").string());
  }

  PipelineConfig config_;
  RunLog log_;
  RunManifest manifest_;
};

inline void check_runnable(const PipelineConfig& c) {
  c.validate();
  c.check_paths();
}

/// estimate -> quantiles -> density -> risk.
inline RunManifest run_unstressed(const PipelineConfig& config) {
  check_runnable(config);
  Runner run(config, "run-unstressed");
  run.stage("estimate", stage_estimate);
  run.stage("quantiles", [](const PipelineConfig& c, RunLog& l) { stage_quantiles(c, l, false); });
  run.stage("density", stage_density);
  run.stage("risk", stage_risk);
  return run.finish();
}

/// estimate -> subsample -> scenario -> stressed quantiles -> density -> risk.
inline RunManifest run_stressed(const PipelineConfig& config) {
  check_runnable(config);
  Runner run(config, "run-stressed");
  run.stage("estimate", stage_estimate);
  run.stage("subsample", stage_subsample);
  run.stage("scenario", stage_scenario);
  run.stage("quantiles", [](const PipelineConfig& c, RunLog& l) { stage_quantiles(c, l, true); });
  run.stage("density", stage_density);
  run.stage("risk", stage_risk);
  return run.finish();
}

}  // namespace fars
