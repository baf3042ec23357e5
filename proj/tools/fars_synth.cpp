#include <CLI11.hpp>

#include <iostream>

#include "fars/fixture.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a simulated multi-level factor panel, its target and a run configuration"};
  std::string out = "fixture";
  fars::synthetic::FixtureSpec spec;
  std::vector<fars::Index> blocks{20, 20};
  app.add_option("--out", out, "Directory to write into");
  app.add_option("--periods", spec.periods, "Number of periods")->check(CLI::PositiveNumber);
  app.add_option("--blocks", blocks, "Variables per block")->delimiter(',');
  app.add_option("--global", spec.global, "Global factors");
  app.add_option("--local", spec.local, "Local factors per block")->delimiter(',');
  app.add_option("--noise", spec.noise_sd, "Idiosyncratic noise sd")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", spec.seed, "Simulation seed");
  CLI11_PARSE(app, argc, argv);
  spec.block_sizes = blocks;
  if (spec.local.size() != blocks.size()) spec.local.assign(blocks.size(), spec.local.empty() ? 0 : spec.local.front());
  try {
    const auto cfg = fars::synthetic::write_fixture(out, spec);
    std::cout << "wrote " << cfg.string() << "\n";
  } catch (const fars::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
