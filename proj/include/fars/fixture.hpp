#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fars/csv.hpp"
#include "fars/pipeline.hpp"
#include "fars/synthetic.hpp"

namespace fars::synthetic {

struct FixtureSpec {
  Index periods = 60;
  std::vector<Index> block_sizes{20, 20};
  int global = 1;
  std::vector<int> local{1, 1};
  double noise_sd = 0.5;
  std::uint64_t seed = 7;
};

inline std::vector<std::string> quarter_labels(Index n, int first_year = 2000) {
  std::vector<std::string> out;
  for (Index t = 0; t < n; ++t)
    out.push_back(std::to_string(first_year + t / 4) + "-Q" + std::to_string(t % 4 + 1));
  return out;
}

/// Writes data.csv, target.csv and config.json into `dir` and returns the
/// config path. `overrides` is merged into the generated config.
inline std::filesystem::path write_fixture(const std::filesystem::path& dir, const FixtureSpec& spec = {},
                                           const Json& overrides = Json::object()) {
  std::vector<Index> ends;
  Index total = 0;
  for (Index s : spec.block_sizes) ends.push_back(total += s);
  const BlockSpec blocks(ends);
  const auto structure = FactorStructure::from_counts(blocks.block_count(), spec.global, spec.local);
  const Dataset d = generate(spec.periods, blocks, structure, spec.noise_sd, spec.seed);

  std::vector<std::string> names;
  for (Index i = 0; i < total; ++i) names.push_back("x" + std::to_string(i + 1));
  const auto dates = quarter_labels(spec.periods);
  std::filesystem::create_directories(dir);
  csv::write(dir / "data.csv", d.x, names, dates, "date");
  csv::write(dir / "target.csv", d.target, {"growth"}, dates, "date");

  Json cfg;
  cfg["data"] = "data.csv";
  cfg["dep_variable"] = {{"path", "target.csv"}};
  cfg["block_ends"] = ends;
  cfg["structure"] = {{"global", spec.global}, {"local", spec.local}};
  cfg["h"] = 1;
  cfg["edge"] = 0.05;
  cfg["alpha"] = 0.95;
  cfg["n_samples"] = 20;
  cfg["sample_size"] = 0.9;
  cfg["est_points"] = 128;
  cfg["random_samples"] = 1000;
  cfg["support"] = {-10.0, 10.0};
  cfg["seed"] = 42;
  cfg["output"] = "out";
  for (const auto& [k, v] : overrides.items()) cfg[k] = v;
  const auto path = dir / "config.json";
  std::ofstream(path) << cfg.dump(2) << '\n';
  return path;
}

}  // namespace fars::synthetic
