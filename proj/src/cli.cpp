#include "hvdc/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "hvdc/report_io.hpp"

namespace hvdc::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using strategy::ControlMode;

namespace {

constexpr const char* kAggregateSchema = "hvdc-opf-aggregate";
constexpr int kAggregateSchemaVersion = 1;
constexpr const char* kMissing = "-";

// Shortest text that reads back to the same double.
std::string num(double v) { return json(v).dump(); }

std::string fixed(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << content;
  if (!f) throw Error("write failed for " + path.string());
}

// A table cell: number, text, or both for integers. Empty means missing.
struct Cell {
  std::optional<double> number;
  std::optional<std::string> text;
  static Cell of(double v) { return {v, std::nullopt}; }
  static Cell of(std::string s) { return {std::nullopt, std::move(s)}; }
  static Cell of(bool b) { return of(std::string(b ? "true" : "false")); }
  static Cell of(int i) { return {static_cast<double>(i), std::to_string(i)}; }
  static Cell missing() { return {}; }

  std::string csv() const {
    if (number && text) return *text;
    if (number) return num(*number);
    if (text) return *text;
    return kMissing;
  }
  json to_json() const {
    if (number && text) return static_cast<long long>(*number);
    if (number) return *number;
    if (text) return *text;
    return nullptr;
  }
  std::string pretty() const {
    if (number && text) return *text;
    if (number) return fixed("%.9g", *number);
    if (text) return *text;
    return kMissing;
  }
};

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  std::string csv() const {
    std::string s = std::string("# ") + kAggregateSchema + " " + std::to_string(kAggregateSchemaVersion) + " " + name + "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
    s += "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + r[i].csv();
      s += "\n";
    }
    return s;
  }

  std::string to_json() const {
    json j;
    j["schema"] = kAggregateSchema;
    j["schema_version"] = kAggregateSchemaVersion;
    j["table"] = name;
    j["columns"] = columns;
    json rs = json::array();
    for (const auto& r : rows) {
      json o = json::object();
      for (std::size_t i = 0; i < r.size(); ++i) o[columns[i]] = r[i].to_json();
      rs.push_back(o);
    }
    j["rows"] = rs;
    return j.dump(2) + "\n";
  }

  void print(std::ostream& out) const {
    std::vector<std::size_t> width(columns.size());
    for (std::size_t i = 0; i < columns.size(); ++i) width[i] = columns[i].size();
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].pretty().size());
    auto line = [&](auto&& cell) {
      std::string s;
      for (std::size_t i = 0; i < columns.size(); ++i) {
        std::string c = cell(i);
        c.resize(width[i], ' ');
        s += (i ? "  " : "") + c;
      }
      while (!s.empty() && s.back() == ' ') s.pop_back();
      out << s << "\n";
    };
    out << name << "\n";
    line([&](std::size_t i) { return columns[i]; });
    for (const auto& r : rows) line([&](std::size_t i) { return r[i].pretty(); });
    out << "\n";
  }
};

struct Job {
  std::size_t scenario = 0;
  ControlMode mode = ControlMode::ProposedDroop;
};

report::RunRecord run_one(const grid::NetworkCase& base, const std::string& case_text, const grid::Scenario& scenario,
                          ControlMode mode, const strategy::StrategyOptions& options) {
  report::RunRecord rec;
  rec.case_text = case_text;
  try {
    rec.report = strategy::run_strategy(base, scenario, mode, options);
  } catch (const strategy::StrategyFailure& e) {
    rec.report = e.partial();
    rec.failed = true;
    rec.error = e.what();
  } catch (const Error& e) {
    rec.report.case_name = base.name;
    rec.report.scenario = scenario;
    rec.report.mode = mode;
    rec.failed = true;
    rec.error = e.what();
  }
  rec.verdicts.resize(rec.report.stages.size());
  for (std::size_t i = 0; i < rec.report.stages.size(); ++i) {
    const auto& s = rec.report.stages[i];
    if (s.converged()) rec.verdicts[i] = validation::verify_solution(s.network, s.formulation, s.solution.x);
  }
  return rec;
}

std::string status_of(const report::RunRecord& r) { return r.failed ? "failed" : "converged"; }

const strategy::StageResult* final_stage(const report::RunRecord& r) {
  if (r.failed || r.report.stages.empty()) return nullptr;
  return &r.report.stages.back();
}

std::vector<Table> aggregate(const grid::NetworkCase& base, const std::vector<report::RunRecord>& runs) {
  Table droop{"droop_coefficients",
              {"scenario", "mode", "converter", "status", "fallback_triggered", "control", "k_droop", "p_ref", "u_ref"},
              {}};
  Table objective{"objective", {"scenario", "mode", "status", "fallback_triggered", "stages", "cost"}, {}};
  Table vdev{"voltage_deviation", {"scenario", "mode", "status", "fallback_triggered", "vdev"}, {}};
  Table dcv{"dc_voltage_setpoints", {"scenario", "mode", "dc_bus", "status", "u_dc", "u_ref"}, {}};

  for (const auto& run : runs) {
    const auto& rep = run.report;
    const Cell sc = Cell::of(rep.scenario.name);
    const Cell md = Cell::of(std::string(strategy::to_string(rep.mode)));
    const Cell st = Cell::of(status_of(run));
    const Cell fb = Cell::of(rep.fallback_triggered);
    const auto* fin = final_stage(run);

    objective.rows.push_back({sc, md, st, fb, Cell::of(static_cast<int>(rep.stages.size())),
                              fin ? Cell::of(fin->cost) : Cell::missing()});
    vdev.rows.push_back({sc, md, st, fb, fin ? Cell::of(fin->vdev) : Cell::missing()});

    for (const auto& conv : base.converters) {
      const strategy::ConverterSetting* set = nullptr;
      if (fin)
        for (const auto& c : fin->control_snapshot)
          if (c.converter_id == conv.id) set = &c;
      std::vector<Cell> row{sc, md, Cell::of(conv.id), st, fb};
      if (set) {
        const bool droop = set->control.mode == grid::ControlMode::Droop;
        row.push_back(Cell::of(std::string(grid::to_string(set->control.mode))));
        row.push_back(droop ? Cell::of(set->control.k_droop) : Cell::missing());
        row.push_back(Cell::of(set->control.p_ref));
        row.push_back(Cell::of(set->control.u_ref));
      } else {
        row.insert(row.end(), 4, Cell::missing());
      }
      droop.rows.push_back(std::move(row));
    }

    for (std::size_t b = 0; b < base.dc_buses.size(); ++b) {
      const int bus_id = base.dc_buses[b].id;
      std::vector<Cell> row{sc, md, Cell::of(bus_id), st};
      Cell u_dc = Cell::missing(), u_ref = Cell::missing();
      if (fin) {
        const eq::VariableLayout layout(*fin->network, fin->formulation);
        if (auto idx = fin->network->dc_bus_index(bus_id)) u_dc = Cell::of(fin->solution.x[layout.vdc(*idx)]);
        for (std::size_t c = 0; c < fin->network->converters.size(); ++c) {
          if (fin->network->converters[c].dc_bus != bus_id) continue;
          for (const auto& s : fin->control_snapshot)
            if (s.converter_id == fin->network->converters[c].id) u_ref = Cell::of(s.control.u_ref);
          break;
        }
      }
      row.push_back(u_dc);
      row.push_back(u_ref);
      dcv.rows.push_back(std::move(row));
    }
  }
  return {droop, objective, vdev, dcv};
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

OutputFormats parse_formats(const std::string& text) {
  OutputFormats f{false, false, false};
  std::stringstream ss(text);
  std::string item;
  bool any = false;
  while (std::getline(ss, item, ',')) {
    if (item == "table") f.table = true;
    else if (item == "csv") f.csv = true;
    else if (item == "json") f.json = true;
    else throw Error("unknown output format '" + item + "' (expected table, csv or json)");
    any = true;
  }
  if (!any) throw Error("empty output format list");
  return f;
}

int cmd_solve(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const auto started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  grid::NetworkCase base;
  std::vector<grid::Scenario> scenarios;
  try {
    if (config.modes.empty()) throw Error("at least one mode is required");
    base = grid::parse_case(config.case_path);
    for (const auto& p : config.scenario_paths) scenarios.push_back(grid::parse_scenario(p));
    if (scenarios.empty()) scenarios.push_back(grid::Scenario{"base", {}, {}});
    std::set<std::string> names;
    for (const auto& s : scenarios) {
      grid::apply_scenario(base, s);  // reject unknown ids before any solve
      if (!names.insert(s.name).second) throw Error("duplicate scenario name '" + s.name + "'");
    }
    std::set<ControlMode> seen;
    for (auto m : config.modes)
      if (!seen.insert(m).second) throw Error("mode '" + std::string(strategy::to_string(m)) + "' given twice");
    fs::create_directories(config.out_dir / "reports");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  const std::string case_text = grid::serialize_case(base);
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < scenarios.size(); ++s)
    for (auto m : config.modes) jobs.push_back({s, m});

  std::vector<report::RunRecord> runs(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();)
      runs[i] = run_one(base, case_text, scenarios[jobs[i].scenario], jobs[i].mode, config.options);
  };
  const int nworkers = std::clamp<int>(config.workers, 1, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int w = 1; w < nworkers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  bool any_failed = false, any_fallback = false;
  try {
    for (const auto& run : runs) {
      const auto name = report::report_file_name(run.report.scenario.name, run.report.mode);
      write_file(config.out_dir / "reports" / name, report::serialize_run(run));
      any_failed |= run.failed;
      any_fallback |= run.report.fallback_triggered;
      if (run.failed) err << "run " << name << " failed: " << run.error << "\n";
    }
    const auto tables = aggregate(base, runs);
    for (const auto& t : tables) {
      if (config.formats.csv) write_file(config.out_dir / (t.name + ".csv"), t.csv());
      if (config.formats.json) write_file(config.out_dir / (t.name + ".json"), t.to_json());
      if (config.formats.table) t.print(out);
    }

    json meta;
    meta["schema"] = "hvdc-opf-run-metadata";
    meta["schema_version"] = 1;
    meta["started_utc"] = started;
    meta["finished_utc"] = utc_now();
    meta["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    meta["case"] = config.case_path.string();
    json sp = json::array();
    for (const auto& p : config.scenario_paths) sp.push_back(p.string());
    meta["scenarios"] = sp;
    json ms = json::array();
    for (auto m : config.modes) ms.push_back(std::string(strategy::to_string(m)));
    meta["modes"] = ms;
    meta["seed"] = config.seed;
    meta["workers"] = nworkers;
    write_file(config.out_dir / "run_metadata.json", meta.dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }

  if (any_failed) return kExitFailure;
  return any_fallback ? kExitFallback : kExitOk;
}

int cmd_validate(const fs::path& out_dir, std::ostream& out, std::ostream& err,
                 const validation::VerifyTolerances& tol) {
  std::vector<fs::path> files;
  std::error_code ec;
  const fs::path dir = out_dir / "reports";
  if (fs::is_directory(dir, ec)) {
    for (const auto& e : fs::directory_iterator(dir, ec))
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  if (files.empty()) {
    err << "error: no reports found in " << dir.string() << "\n";
    return kExitFailure;
  }
  std::sort(files.begin(), files.end());

  Table t{"validation",
          {"report", "stage", "network", "status", "max_residual", "discrepancy", "closure", "objective", "verdict"},
          {}};
  bool all_ok = true;
  for (const auto& f : files) {
    const Cell name = Cell::of(f.filename().string());
    report::LoadedReport rep;
    try {
      rep = report::load_run(f);
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      t.rows.push_back({name, Cell::missing(), Cell::missing(), Cell::of(std::string("unreadable")), Cell::missing(),
                        Cell::missing(), Cell::missing(), Cell::missing(), Cell::of(std::string("FAIL"))});
      all_ok = false;
      continue;
    }
    for (std::size_t i = 0; i < rep.stages.size(); ++i) {
      const auto& s = rep.stages[i];
      std::vector<Cell> row{name, Cell::of(s.stage), Cell::of(s.network_label), Cell::of(s.status)};
      if (!s.converged()) {
        row.insert(row.end(), 4, Cell::missing());
        row.push_back(Cell::of(std::string("skipped")));
        t.rows.push_back(std::move(row));
        continue;
      }
      const auto v = validation::verify_solution(s.network, s.formulation, s.x, tol);
      // Stored objective values must be what the equations module gives for x.
      const eq::ResidualSet set(s.network, s.formulation);
      const double cost = eq::objective_cost(s.x, set), vd = eq::objective_vdev(s.x, set);
      const auto close = [](double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); };
      bool objective_ok = close(s.cost, cost) && close(s.vdev, vd);
      if (i + 1 == rep.stages.size() && !rep.failed)
        objective_ok = objective_ok && rep.final_cost == s.cost && rep.final_vdev == s.vdev;
      const double closure =
          std::max({std::abs(v.closure.ac_active), std::abs(v.closure.ac_reactive), std::abs(v.closure.dc),
                    std::abs(v.closure.converter)});
      const bool ok = v.passed && objective_ok;
      all_ok = all_ok && ok;
      row.push_back(Cell::of(v.max_residual));
      row.push_back(v.powerflow_error.empty() ? Cell::of(v.max_discrepancy) : Cell::of(std::string("pf-error")));
      row.push_back(Cell::of(closure));
      row.push_back(Cell::of(std::string(objective_ok ? "ok" : "mismatch")));
      row.push_back(Cell::of(std::string(ok ? "PASS" : "FAIL")));
      t.rows.push_back(std::move(row));
      if (!ok) {
        err << f.filename().string() << " stage " << s.stage << ":";
        if (v.max_residual > tol.residual) err << " residual " << num(v.max_residual) << " at " << v.worst_residual;
        if (!v.powerflow_error.empty()) err << " power flow: " << v.powerflow_error;
        else if (v.max_discrepancy > tol.discrepancy)
          err << " discrepancy " << num(v.max_discrepancy) << " at " << v.worst_variable;
        if (!objective_ok) err << " stored objective differs from recomputation";
        err << "\n";
      }
    }
  }
  t.print(out);
  out << (all_ok ? "all stored solutions verified" : "verification FAILED") << "\n";
  return all_ok ? kExitOk : kExitFailure;
}

int cmd_check_case(const fs::path& path, std::ostream& out, std::ostream& err) {
  try {
    const auto net = grid::parse_case(path);
    const auto diag = grid::validate_case(net);
    const auto ref = grid::reference_bus_index(net);
    out << "case " << net.name << "\n";
    out << "  S_nom          " << fixed("%g", net.s_nominal) << " MVA\n";
    out << "  V_dc base      " << fixed("%g", net.v_dc_nominal) << " kV\n";
    out << "  AC buses       " << net.ac_buses.size() << "\n";
    out << "  AC branches    " << net.ac_branches.size() << "\n";
    out << "  generators     " << net.generators.size() << "\n";
    out << "  DC buses       " << net.dc_buses.size() << "\n";
    out << "  DC branches    " << net.dc_branches.size() << "\n";
    out << "  converters     " << net.converters.size() << "\n";
    out << "  reference bus  " << net.ac_buses[ref].id << "\n";
    for (const auto& w : diag.warnings) out << "warning: " << w << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

int run(int argc, char** argv) {
  CLI::App app{"Hybrid AC/DC optimal power flow with staged MMC droop control"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML or INI file with option values");

  RunConfig cfg;
  std::string case_path, out_dir, formats = "table,csv", linear = "auto";
  std::vector<std::string> scenario_paths, modes;
  auto& so = cfg.options.solver;

  auto* solve = app.add_subcommand("solve", "Run every scenario in every control mode");
  solve->add_option("--case", case_path, "Case file")->required()->check(CLI::ExistingFile);
  solve->add_option("--scenario", scenario_paths, "Scenario files (default: the unmodified case)")
      ->check(CLI::ExistingFile);
  solve->add_option("--mode", modes, "active-power, adaptive-droop, proposed-droop (default: all)");
  solve->add_option("--out", out_dir, "Output directory (default: $HVDC_OPF_OUT or hvdc-opf-out)");
  solve->add_option("--format", formats, "Comma list of table, csv, json")->capture_default_str();
  solve->add_option("--seed", cfg.seed, "Run seed, recorded in run_metadata.json")->capture_default_str();
  solve->add_option("--workers", cfg.workers, "Concurrent runs")->check(CLI::PositiveNumber)->capture_default_str();
  solve->add_option("--tol", so.tol, "Scaled KKT tolerance")->capture_default_str();
  solve->add_option("--feas-tol", so.feas_tol, "Constraint violation tolerance")->capture_default_str();
  solve->add_option("--opt-tol", so.opt_tol, "Dual infeasibility tolerance")->capture_default_str();
  solve->add_option("--max-iter", so.max_iter, "Iteration cap per solve")->capture_default_str();
  solve->add_option("--mu-init", so.mu_init, "Initial barrier parameter of stage 1")->capture_default_str();
  solve->add_option("--mu-linear-factor", so.mu_linear_factor, "Barrier reduction factor")->capture_default_str();
  solve->add_option("--mu-superlinear-power", so.mu_superlinear_power, "Barrier reduction exponent")
      ->capture_default_str();
  solve->add_option("--linear-solver", linear, "auto, dense or sparse")
      ->check(CLI::IsMember({"auto", "dense", "sparse"}))
      ->capture_default_str();
  solve->add_option("--dense-threshold", so.dense_threshold, "auto uses dense below this many variables")
      ->capture_default_str();

  std::string validate_dir;
  auto* validate = app.add_subcommand("validate", "Re-verify stored reports with the power-flow oracle");
  validate->add_option("--out", validate_dir, "Output directory of a previous solve");

  std::string check_path;
  auto* check = app.add_subcommand("check-case", "Parse and summarize a case file");
  check->add_option("case", check_path, "Case file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitFailure;
  }

  auto default_out = [](const std::string& given) -> fs::path {
    if (!given.empty()) return given;
    if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
    return kDefaultOutDir;
  };

  if (*solve) {
    try {
      cfg.case_path = case_path;
      for (const auto& s : scenario_paths) cfg.scenario_paths.emplace_back(s);
      if (modes.empty())
        cfg.modes = {ControlMode::ActivePowerControl, ControlMode::AdaptiveDroop, ControlMode::ProposedDroop};
      for (const auto& m : modes) cfg.modes.push_back(strategy::control_mode_from_string(m));
      cfg.formats = parse_formats(formats);
      so.linear_solver = linear == "dense"    ? nlp::LinearSolver::Dense
                         : linear == "sparse" ? nlp::LinearSolver::Sparse
                                              : nlp::LinearSolver::Auto;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return kExitFailure;
    }
    cfg.out_dir = default_out(out_dir);
    return cmd_solve(cfg, std::cout, std::cerr);
  }
  if (*validate) return cmd_validate(default_out(validate_dir), std::cout, std::cerr);
  return cmd_check_case(check_path, std::cout, std::cerr);
}

}  // namespace hvdc::cli
