#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "fars/fixture.hpp"

using namespace fars;

namespace {

const fs::path kRoot = fs::absolute("cli_work");

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Result cli(const std::string& args) {
  fs::create_directories(kRoot);
  const fs::path o = kRoot / "stdout.txt";
  const fs::path e = kRoot / "stderr.txt";
  const std::string cmd = std::string("'") + FARS_CLI_PATH + "' " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(o), slurp(e)};
}

fs::path fixture(const std::string& name, const Json& overrides = Json::object()) {
  const fs::path dir = kRoot / name;
  fs::remove_all(dir);
  synthetic::FixtureSpec spec;
  spec.periods = 40;
  Json o = {{"n_samples", 6}, {"est_points", 64}, {"random_samples", 300}};
  for (const auto& [k, v] : overrides.items()) o[k] = v;
  return synthetic::write_fixture(dir, spec, o);
}

std::size_t lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

bool has(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

}  // namespace

TEST_CASE("estimate prints the model summary", "[cli]") {
  const auto cfg = fixture("estimate");
  const auto r = cli("estimate --config '" + cfg.string() + "'");
  REQUIRE(r.code == 0);
  CHECK(has(r.out, "Number of periods:   40"));
  CHECK(has(r.out, "Number of factors:   3"));
  CHECK(has(r.out, "Factors per node:"));
  CHECK(has(r.out, "    1-2         1\n"));
  CHECK(has(r.out, "    1           1\n"));
  CHECK(has(r.out, "    2           1\n"));
  CHECK(has(r.out, "Iterations:"));
  CHECK(has(r.out, "Final RSS:"));
  CHECK(fs::is_regular_file(cfg.parent_path() / "out" / "model" / "factors.csv"));
}

TEST_CASE("usage errors exit with 1", "[cli]") {
  const auto cfg = fixture("usage");
  auto r = cli("estimate --config '" + cfg.string() + "' --bogus");
  CHECK(r.code == 1);
  CHECK(has(r.err, "--bogus"));
  CHECK(has(r.err, "Usage"));
  CHECK(cli("").code == 1);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("estimate").code == 1);
  CHECK(cli("estimate --config '" + cfg.string() + "' --alpha 1.5").code == 1);
  CHECK(cli("estimate --config '" + cfg.string() + "' --direction sideways").code == 1);
  CHECK(cli("estimate --config '" + cfg.string() + "' --support 3").code == 1);
  CHECK(cli("estimate --config '" + cfg.string() + "' --gamma xyz").code == 1);
  CHECK(cli("--help").code == 0);
  CHECK(has(cli("run-stressed --help").out, "--n-samples"));
}

TEST_CASE("a config pointing at a missing file names it", "[cli]") {
  const auto cfg = fixture("missing", {{"data", "absent_panel.csv"}});
  const auto r = cli("estimate --config '" + cfg.string() + "'");
  CHECK(r.code == 1);
  CHECK(has(r.err, "absent_panel.csv"));
  const auto r2 = cli("estimate --config '" + (kRoot / "no_such_config.json").string() + "'");
  CHECK(r2.code == 1);
  CHECK(has(r2.err, "no_such_config.json"));
}

TEST_CASE("numeric failures exit with 2", "[cli]") {
  const auto cfg = fixture("numeric");
  // A constant target makes the lag column collinear with the intercept.
  const auto t = csv::read(cfg.parent_path() / "target.csv", true, true);
  csv::write(cfg.parent_path() / "target.csv", Matrix::Ones(t.values.rows(), 1), t.header, t.row_labels, "date");
  const auto r = cli("run-unstressed --config '" + cfg.string() + "'");
  CHECK(r.code == 2);
  CHECK(has(r.err, "quantiles"));
  const Json m = read_json(cfg.parent_path() / "out" / "manifest.json");
  CHECK(m["status"] == "failed");
  CHECK(m["failed_stage"] == "quantiles");
}

TEST_CASE("stage commands compose into the stressed pipeline", "[cli][property]") {
  const auto cfg = fixture("compose");
  const std::string c = "--config '" + cfg.string() + "'";
  const fs::path dir = cfg.parent_path();
  REQUIRE(cli("run-stressed " + c + " --out '" + (dir / "whole").string() + "'").code == 0);
  const std::string staged = " --out '" + (dir / "staged").string() + "'";
  for (const char* step : {"estimate", "subsample", "scenario", "quantiles --stressed", "density", "risk"}) {
    const auto r = cli(std::string(step) + " " + c + staged);
    INFO(step << ": " << r.err);
    REQUIRE(r.code == 0);
  }
  for (const char* f : {"model/factors.csv", "scenario/period_040.csv", "fars/stressed_quantiles.csv",
                        "density/samples.csv", "risk.csv"}) {
    INFO(f);
    CHECK(slurp(dir / "whole" / f) == slurp(dir / "staged" / f));
  }
  const auto q = cli("quantiles " + c + staged);
  CHECK(has(q.out, "Stressed:           no"));
}

TEST_CASE("overrides reach the artifacts", "[cli]") {
  const auto cfg = fixture("overrides");
  const std::string c = "--config '" + cfg.string() + "'";
  const fs::path out = cfg.parent_path() / "ov";
  const auto r = cli("run-unstressed " + c + " --out '" + out.string() + "' --support -30,10 --h 2 --seed 9 --edge 0.1");
  INFO(r.err);
  REQUIRE(r.code == 0);
  const Json d = read_json(out / "density/meta.json");
  CHECK(d["support"][0] == -30.0);
  CHECK(d["seed"] == 9);
  const Json f = read_json(out / "fars/meta.json");
  CHECK(f["h"] == 2);
  CHECK(f["levels"][0] == 0.1);
  CHECK(csv::read(out / "risk.csv", true, true).values.rows() == 39);
  CHECK(has(r.out, "Level:              0.1"));
}

TEST_CASE("plot-data emits long format and checks the kind", "[cli]") {
  const auto cfg = fixture("plot");
  const fs::path out = cfg.parent_path() / "out";
  REQUIRE(cli("run-unstressed --config '" + cfg.string() + "'").code == 0);
  auto f = cli("plot-data '" + (out / "model/factors.csv").string() + "' --kind factors");
  REQUIRE(f.code == 0);
  CHECK(lines(f.out) == 1 + 40 * 3);
  CHECK(f.out.rfind("period,series,value\n", 0) == 0);
  auto d = cli("plot-data '" + (out / "density/density_grid.csv").string() + "' --kind density");
  REQUIRE(d.code == 0);
  CHECK(lines(d.out) == 1 + 40 * 64);
  CHECK(d.out.rfind("period,abscissa,density\n", 0) == 0);
  auto r = cli("plot-data '" + (out / "risk.csv").string() + "' --kind risk");
  CHECK(lines(r.out) == 1 + 40);
  auto q = cli("plot-data '" + (out / "fars/quantiles.csv").string() + "' --kind quantiles");
  CHECK(lines(q.out) == 1 + 40 * 5);
  CHECK(cli("plot-data '" + (out / "risk.csv").string() + "' --kind density").code == 1);
  CHECK(cli("plot-data '" + (out / "risk.csv").string() + "' --kind nonsense").code == 1);
  CHECK(cli("plot-data '" + (out / "none.csv").string() + "' --kind risk").code == 1);
}
