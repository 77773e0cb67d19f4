#include <doctest.h>

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "hvdc/cli.hpp"
#include "hvdc/report_io.hpp"

using namespace hvdc;
namespace fs = std::filesystem;

namespace {

const std::string kDataDir = HVDC_DATA_DIR;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hvdc_cli_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

cli::RunConfig three_terminal_config(const fs::path& out, const fs::path& scenario) {
  cli::RunConfig cfg;
  cfg.case_path = kDataDir + "/cases/three_terminal.case";
  cfg.scenario_paths = {scenario};
  cfg.modes = {strategy::ControlMode::ActivePowerControl, strategy::ControlMode::AdaptiveDroop,
               strategy::ControlMode::ProposedDroop};
  cfg.out_dir = out;
  cfg.formats = {false, true, true};
  return cfg;
}

std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("solve writes one report per run and the aggregate tables") {
  TempDir tmp("solve");
  const auto scn = tmp.path / "normal.scn";
  spit(scn, "format hvdc-scenario 1\nname normal\n");
  std::ostringstream out, err;
  REQUIRE(cli::cmd_solve(three_terminal_config(tmp.path / "a", scn), out, err) == cli::kExitOk);
  CHECK(err.str().empty());
  int reports = 0;
  for (const auto& e : fs::directory_iterator(tmp.path / "a" / "reports")) reports += e.path().extension() == ".json";
  CHECK(reports == 3);
  for (const char* name : cli::kAggregateNames) {
    CHECK(fs::exists(tmp.path / "a" / (std::string(name) + ".csv")));
    CHECK(fs::exists(tmp.path / "a" / (std::string(name) + ".json")));
  }
  CHECK(fs::exists(tmp.path / "a" / "run_metadata.json"));

  SUBCASE("identical runs give identical files apart from the metadata sidecar") {
    auto cfg = three_terminal_config(tmp.path / "b", scn);
    cfg.workers = 3;
    REQUIRE(cli::cmd_solve(cfg, out, err) == cli::kExitOk);
    const auto fa = files_under(tmp.path / "a"), fb = files_under(tmp.path / "b");
    REQUIRE(fa == fb);
    for (const auto& f : fa) {
      if (f == "run_metadata.json") continue;
      CAPTURE(f.string());
      CHECK(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f));
    }
  }

  SUBCASE("objective table repeats the costs stored in the reports") {
    const auto csv = slurp(tmp.path / "a" / "objective.csv");
    for (const auto& e : fs::directory_iterator(tmp.path / "a" / "reports")) {
      const auto rep = report::load_run(e.path());
      std::ostringstream needle;
      needle << "," << nlohmann::json(rep.final_cost).dump() << "\n";
      CHECK(csv.find(needle.str()) != std::string::npos);
    }
  }

  SUBCASE("fresh outputs validate") {
    std::ostringstream vout, verr;
    CHECK(cli::cmd_validate(tmp.path / "a", vout, verr) == cli::kExitOk);
    CHECK(vout.str().find("FAIL") == std::string::npos);
  }

  SUBCASE("an edited voltage fails validation") {
    const auto file = tmp.path / "a" / "reports" / "normal__proposed-droop.json";
    auto j = nlohmann::ordered_json::parse(slurp(file));
    auto& x = j["stages"][2]["x"];
    for (auto it = x.begin(); it != x.end(); ++it) {
      if (it.key().rfind("vm", 0) == 0) {
        it.value() = it.value().get<double>() + 0.05;
        break;
      }
    }
    spit(file, j.dump(2));
    std::ostringstream vout, verr;
    CHECK(cli::cmd_validate(tmp.path / "a", vout, verr) == cli::kExitFailure);
    CHECK(verr.str().find("normal__proposed-droop.json stage 3") != std::string::npos);
  }
}

TEST_CASE("report files round-trip the stored state exactly") {
  const auto base = grid::parse_case(kDataDir + "/cases/three_terminal.case");
  report::RunRecord run;
  run.case_text = grid::serialize_case(base);
  run.report = strategy::run_strategy(base, {"none", {}, {}}, strategy::ControlMode::ProposedDroop);
  run.verdicts.resize(run.report.stages.size());
  const auto loaded = report::parse_run(report::serialize_run(run));
  CHECK(loaded.case_name == base.name);
  CHECK(loaded.final_cost == run.report.final_cost);
  REQUIRE(loaded.stages.size() == run.report.stages.size());
  for (std::size_t i = 0; i < loaded.stages.size(); ++i) {
    const auto& a = run.report.stages[i];
    const auto& b = loaded.stages[i];
    CHECK(b.x == a.solution.x);
    CHECK(b.formulation == a.formulation);
    CHECK(*b.network == *a.network);
    CHECK(b.cost == a.cost);
  }
  CHECK_THROWS_AS(report::parse_run("{\"schema\": \"other\"}"), Error);
  CHECK_THROWS_AS(report::parse_run("not json"), Error);
}

TEST_CASE("validate on an empty directory reports no reports") {
  TempDir tmp("empty");
  std::ostringstream out, err;
  CHECK(cli::cmd_validate(tmp.path, out, err) == cli::kExitFailure);
  CHECK(err.str().find("no reports found") != std::string::npos);
}

TEST_CASE("scenario with an unknown generator exits 1 naming the id") {
  TempDir tmp("badscn");
  const auto scn = tmp.path / "bad.scn";
  spit(scn, "format hvdc-scenario 1\nname bad\ngenerator_outage 77\n");
  std::ostringstream out, err;
  CHECK(cli::cmd_solve(three_terminal_config(tmp.path / "o", scn), out, err) == cli::kExitFailure);
  CHECK(err.str().find("77") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp.path / "o" / "reports"));
}

TEST_CASE("fallback run exits 2 and flags the aggregate tables") {
  TempDir tmp("fallback");
  cli::RunConfig cfg;
  cfg.case_path = kDataDir + "/cases/nordic_like.case";
  cfg.scenario_paths = {kDataDir + "/scenarios/scenario3_mmc4.scn"};
  cfg.modes = {strategy::ControlMode::ProposedDroop};
  cfg.out_dir = tmp.path;
  std::ostringstream out, err;
  CHECK(cli::cmd_solve(cfg, out, err) == cli::kExitFallback);
  const auto csv = slurp(tmp.path / "objective.csv");
  CHECK(csv.find("scenario3,proposed-droop,converged,true,") != std::string::npos);
  // the outaged converter has no settings
  CHECK(slurp(tmp.path / "droop_coefficients.csv").find("scenario3,proposed-droop,4,converged,true,-,-,-,-") !=
        std::string::npos);
}

TEST_CASE("check-case prints the bases and counts") {
  std::ostringstream out, err;
  CHECK(cli::cmd_check_case(kDataDir + "/cases/nordic_like.case", out, err) == cli::kExitOk);
  CHECK(out.str().find("100 MVA") != std::string::npos);
  CHECK(out.str().find("200 kV") != std::string::npos);

  std::ostringstream out2;
  CHECK(cli::cmd_check_case(kDataDir + "/cases/ieee9_ac.case", out2, err) == cli::kExitOk);
  CHECK(out2.str().find("converters     0") != std::string::npos);

  TempDir tmp("check");
  spit(tmp.path / "bad.case", "format hvdc-case 1\nname x\n[bus]\n1 0 0 0 0 1.0 0 1.1\n");
  std::ostringstream out3, err3;
  CHECK(cli::cmd_check_case(tmp.path / "bad.case", out3, err3) == cli::kExitFailure);
  CHECK(err3.str().find(":4:") != std::string::npos);
}

TEST_CASE("format lists") {
  const auto f = cli::parse_formats("csv,json");
  CHECK(f.csv);
  CHECK(f.json);
  CHECK_FALSE(f.table);
  CHECK_THROWS_AS(cli::parse_formats("csv,xml"), Error);
}
