// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "hvdc/case_model.hpp"
#include "hvdc/cli.hpp"
#include "hvdc/droop_strategy.hpp"
#include "hvdc/equations.hpp"
#include "hvdc/nlp_solver.hpp"
#include "hvdc/opf_problem.hpp"
#include "hvdc/validation.hpp"

using namespace hvdc;
using strategy::ControlMode;
namespace fs = std::filesystem;

namespace {

const std::string kDataDir = HVDC_DATA_DIR;
const ControlMode kModes[] = {ControlMode::ActivePowerControl, ControlMode::AdaptiveDroop, ControlMode::ProposedDroop};
const char* kScenarioFiles[] = {"scenario1_normal", "scenario2_gen16", "scenario3_mmc4"};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  std::printf("%s C%-2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

// Runs `body`, turning escaped exceptions into a failure line.
void criterion(int id, const std::string& title, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, title, o);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

grid::NetworkCase load_case(const std::string& name) { return grid::parse_case(kDataDir + "/cases/" + name + ".case"); }

grid::Scenario load_scenario(const std::string& file) {
  return grid::parse_scenario(kDataDir + "/scenarios/" + file + ".scn");
}

// Outcome of one strategy run; `failure` is set when run_strategy threw.
struct Run {
  std::string case_name;
  std::string scenario;
  ControlMode mode;
  strategy::StrategyReport report;
  std::string failure;
};

Run run_one(const grid::NetworkCase& base, const grid::Scenario& sc, ControlMode mode) {
  Run r{base.name, sc.name, mode, {}, {}};
  try {
    r.report = strategy::run_strategy(base, sc, mode);
  } catch (const strategy::StrategyFailure& e) {
    r.report = e.partial();
    r.failure = e.what();
  }
  return r;
}

std::string label(const Run& r) {
  return r.case_name + "/" + r.scenario + "/" + std::string(strategy::to_string(r.mode));
}

// ---- criterion 1 ------------------------------------------------------------

Outcome jacobian_fidelity() {
  const auto t0 = Clock::now();
  auto net = std::make_shared<const grid::NetworkCase>(load_case("three_terminal"));
  // cover every law the stages use
  std::vector<std::vector<eq::ConverterFormulation>> forms;
  {
    auto f = eq::formulation_from_case(*net);
    for (auto& c : f) c.law = eq::ConverterLaw::Free;
    forms.push_back(f);
    for (auto& c : f) c.law = eq::ConverterLaw::DroopVariableGain;
    forms.push_back(f);
    f[0].law = eq::ConverterLaw::VControl;
    f[1].law = eq::ConverterLaw::PControl;
    f[2].law = eq::ConverterLaw::Droop;
    forms.push_back(f);
  }
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double h = 1e-6;
  long entries = 0, bad = 0;
  double worst = 0.0;
  std::string worst_where;
  for (int trial = 0; trial < 100; ++trial) {
    const OpfProblem problem(net, forms[trial % forms.size()], ObjectiveKind::Cost);
    const auto& set = problem.residuals();
    const auto lo = problem.lower_bounds(), hi = problem.upper_bounds();
    std::vector<double> x(problem.num_variables());
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double a = std::isfinite(lo[j]) ? lo[j] : -1.0, b = std::isfinite(hi[j]) ? hi[j] : 1.0;
      x[j] = a + (b - a) * unit(rng);
    }
    const Eigen::MatrixXd J = Eigen::MatrixXd(set.jacobian(x));
    for (std::size_t j = 0; j < x.size(); ++j) {
      auto xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      const auto rp = set.evaluate(xp), rm = set.evaluate(xm);
      for (std::size_t r = 0; r < set.size(); ++r) {
        const double fd = (rp[r] - rm[r]) / (2 * h), an = J(static_cast<int>(r), static_cast<int>(j));
        const double err = std::abs(an - fd);
        ++entries;
        if (err > std::max(1e-8, 1e-6 * std::abs(fd))) {
          ++bad;
          if (err > worst) {
            worst = err;
            worst_where = set.describe(r) + " / " + problem.variable_name(j);
          }
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  std::string d = fmt("%ld entries on 100 points, %ld outside tolerance, %.2f s", entries, bad, secs);
  if (bad) d += ", worst " + worst_where;
  return {bad == 0 && secs < 10.0, d};
}

// ---- criterion 2 ------------------------------------------------------------

Eigen::SparseMatrix<double> dense_rows(int rows, int cols, std::initializer_list<double> values) {
  Eigen::SparseMatrix<double> j(rows, cols);
  auto it = values.begin();
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c, ++it)
      if (*it != 0.0) j.insert(r, c) = *it;
  j.makeCompressed();
  return j;
}

Outcome analytic_kkt() {
  using nlp::kInf;
  const auto t0 = Clock::now();
  // min x^2, x >= 1
  const nlp::FunctionalNlp bound(
      {1.0}, {kInf}, {3.0}, 0, [](auto x) { return x[0] * x[0]; }, [](auto x, auto g) { g[0] = 2 * x[0]; },
      [](auto, auto) {}, [](auto) { return Eigen::SparseMatrix<double>(0, 1); });
  // min (x-2)^2 + (y-1)^2, x + y = 1
  const nlp::FunctionalNlp equality(
      {-kInf, -kInf}, {kInf, kInf}, {0.0, 0.0}, 1,
      [](auto x) { return (x[0] - 2) * (x[0] - 2) + (x[1] - 1) * (x[1] - 1); },
      [](auto x, auto g) {
        g[0] = 2 * (x[0] - 2);
        g[1] = 2 * (x[1] - 1);
      },
      [](auto x, auto c) { c[0] = x[0] + x[1] - 1; }, [](auto) { return dense_rows(1, 2, {1.0, 1.0}); });
  // x = 0 and x = 1
  const nlp::FunctionalNlp contradictory(
      {-kInf}, {kInf}, {0.5}, 2, [](auto) { return 0.0; }, [](auto, auto g) { g[0] = 0.0; },
      [](auto x, auto c) {
        c[0] = x[0];
        c[1] = x[0] - 1.0;
      },
      [](auto) { return dense_rows(2, 1, {1.0, 1.0}); });

  const auto a = nlp::solve(bound);
  const auto b = nlp::solve(equality);
  const auto c = nlp::solve(contradictory);
  const double secs = seconds_since(t0);

  const double ea = std::abs(a.x[0] - 1.0);
  const double eb = std::max(std::abs(b.x[0] - 1.0), std::abs(b.x[1]));
  const bool ok = a.status == nlp::SolveStatus::Converged && ea <= 1e-8 && b.status == nlp::SolveStatus::Converged &&
                  eb <= 1e-8 && c.status == nlp::SolveStatus::Infeasible && secs < 1.0;
  return {ok, fmt("bound |x-1| = %.1e (%s), equality err %.1e (%s), contradictory %s, %.3f s", ea,
                  std::string(nlp::to_string(a.status)).c_str(), eb, std::string(nlp::to_string(b.status)).c_str(),
                  std::string(nlp::to_string(c.status)).c_str(), secs)};
}

// ---- criteria 3 and 4 -------------------------------------------------------

struct StageCheck {
  int stages = 0;
  double worst_residual = 0.0;
  double worst_closure = 0.0;
  double worst_discrepancy = 0.0;
  std::string worst_residual_at, worst_closure_at, worst_discrepancy_at;
  std::vector<std::string> pf_errors;
};

StageCheck check_stages(const std::vector<Run>& runs) {
  StageCheck out;
  for (const auto& r : runs) {
    for (const auto& s : r.report.stages) {
      if (!s.converged()) continue;
      ++out.stages;
      const auto v = validation::verify_solution(s.network, s.formulation, s.solution.x);
      const std::string where = label(r) + " stage " + std::to_string(s.stage);
      if (v.max_residual > out.worst_residual) {
        out.worst_residual = v.max_residual;
        out.worst_residual_at = where;
      }
      const double closure = std::max({std::abs(v.closure.ac_active), std::abs(v.closure.ac_reactive),
                                       std::abs(v.closure.dc), std::abs(v.closure.converter)});
      if (closure > out.worst_closure) {
        out.worst_closure = closure;
        out.worst_closure_at = where;
      }
      if (!v.powerflow_error.empty()) {
        out.pf_errors.push_back(where + ": " + v.powerflow_error);
      } else if (v.max_discrepancy > out.worst_discrepancy) {
        out.worst_discrepancy = v.max_discrepancy;
        out.worst_discrepancy_at = where;
      }
    }
  }
  return out;
}

// ---- criterion 5 ------------------------------------------------------------

Outcome droop_bounds(const std::vector<Run>& runs) {
  int stage2 = 0, stage3 = 0;
  std::vector<std::string> problems;
  for (const auto& r : runs) {
    const strategy::StageResult* last2 = nullptr;
    for (const auto& s : r.report.stages) {
      if (s.stage == 2 && s.converged()) {
        last2 = &s;
        ++stage2;
        for (const auto& c : s.control_snapshot) {
          const double k = c.control.k_droop;
          if (!(k >= 0.001 && k <= 0.5))
            problems.push_back(label(r) + fmt(" converter %d k = %.17g", c.converter_id, k));
        }
      }
      if (s.stage == 3 && last2 && r.mode != ControlMode::ActivePowerControl) {
        ++stage3;
        for (const auto& c : s.control_snapshot) {
          const auto it = std::find_if(last2->control_snapshot.begin(), last2->control_snapshot.end(),
                                       [&](const auto& p) { return p.converter_id == c.converter_id; });
          if (it == last2->control_snapshot.end() ||
              std::memcmp(&it->control.k_droop, &c.control.k_droop, sizeof(double)) != 0)
            problems.push_back(label(r) + fmt(" converter %d gain changed in stage 3", c.converter_id));
        }
      }
    }
  }
  std::string d = fmt("%d stage-2 solutions in [0.001, 0.5], %d stage-3 solutions with frozen gains", stage2, stage3);
  if (!problems.empty()) d += "; " + problems.front();
  return {problems.empty() && stage2 > 0 && stage3 > 0, d};
}

// ---- criterion 9 ------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

std::map<std::string, std::string> machine_outputs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    // wall-clock sidecar
    if (rel == "run_metadata.json") continue;
    out[rel] = slurp(e.path());
  }
  return out;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("hvdc_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  cli::RunConfig cfg;
  cfg.case_path = kDataDir + "/cases/nordic_like.case";
  for (const char* s : kScenarioFiles) cfg.scenario_paths.push_back(kDataDir + "/scenarios/" + s + ".scn");
  cfg.modes.assign(std::begin(kModes), std::end(kModes));
  cfg.formats = {false, true, true};
  cfg.seed = 1;
  cfg.workers = 4;
  std::ostringstream sink;
  int codes[2];
  for (int i = 0; i < 2; ++i) {
    cfg.out_dir = root / (i ? "b" : "a");
    codes[i] = cli::cmd_solve(cfg, sink, sink);
  }
  const auto a = machine_outputs(root / "a"), b = machine_outputs(root / "b");
  fs::remove_all(root);
  std::size_t differing = 0;
  std::string first;
  for (const auto& [name, text] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != text) {
      ++differing;
      if (first.empty()) first = name;
    }
  }
  const bool same_set = a.size() == b.size();
  std::string d = fmt("%zu files compared, %zu differ, exit codes %d/%d", a.size(), differing, codes[0], codes[1]);
  if (!first.empty()) d += ", first " + first;
  return {same_set && differing == 0 && !a.empty() && codes[0] == codes[1], d};
}

}  // namespace

int main() {
  std::printf("hvdc-opf acceptance\n");

  criterion(1, "Jacobian vs central differences", jacobian_fidelity);
  criterion(2, "analytic KKT problems", analytic_kkt);

  // the nordic-like matrix, timed on its own
  const auto nordic = load_case("nordic_like");
  std::vector<Run> matrix;
  double matrix_secs = 0.0;
  std::string matrix_error;
  try {
    const auto t0 = Clock::now();
    for (const char* f : kScenarioFiles) {
      const auto sc = load_scenario(f);
      for (auto mode : kModes) matrix.push_back(run_one(nordic, sc, mode));
    }
    matrix_secs = seconds_since(t0);
  } catch (const std::exception& e) {
    matrix_error = e.what();
  }

  // every bundled case; the extra cases run without a disturbance
  std::vector<Run> all = matrix;
  double solve_secs = matrix_secs;
  std::string extra_error;
  try {
    const auto t0 = Clock::now();
    for (const char* name : {"three_terminal", "ieee9_ac"}) {
      const auto base = load_case(name);
      const grid::Scenario none{"none", {}, {}};
      if (base.converters.empty()) {
        all.push_back(run_one(base, none, ControlMode::ActivePowerControl));
      } else {
        for (auto mode : kModes) all.push_back(run_one(base, none, mode));
      }
    }
    solve_secs += seconds_since(t0);
  } catch (const std::exception& e) {
    extra_error = e.what();
  }

  const auto t_check = Clock::now();
  StageCheck checks;
  std::string check_error;
  try {
    checks = check_stages(all);
  } catch (const std::exception& e) {
    check_error = e.what();
  }
  const double check_secs = seconds_since(t_check);
  int failed_runs = 0;
  for (const auto& r : all) failed_runs += !r.failure.empty();

  {
    Outcome o;
    o.pass = matrix_error.empty() && extra_error.empty() && check_error.empty() && checks.stages > 0 &&
             checks.worst_residual <= 1e-6 && checks.worst_closure <= 1e-5;
    o.detail = fmt("%d converged stages over %zu runs, max residual %.2e (%s), max closure %.2e (%s)", checks.stages,
                   all.size(), checks.worst_residual, checks.worst_residual_at.c_str(), checks.worst_closure,
                   checks.worst_closure_at.c_str());
    if (failed_runs) o.detail += fmt(", %d runs aborted", failed_runs);
    for (const auto* e : {&matrix_error, &extra_error, &check_error})
      if (!e->empty()) o.detail += ", error: " + *e;
    report(3, "feasibility and balance closure", o);
  }
  {
    // solving plus the power-flow cross-checks
    const double secs = solve_secs + check_secs;
    Outcome o;
    o.pass = check_error.empty() && checks.stages > 0 && checks.pf_errors.empty() &&
             checks.worst_discrepancy <= 1e-6 && secs < 30.0;
    o.detail = fmt("max OPF/power-flow gap %.2e (%s), %zu power-flow failures, %.2f s", checks.worst_discrepancy,
                   checks.worst_discrepancy_at.c_str(), checks.pf_errors.size(), secs);
    if (!checks.pf_errors.empty()) o.detail += ", " + checks.pf_errors.front();
    report(4, "Newton power flow reproduces OPF states", o);
  }

  criterion(5, "droop gain bounds and freeze", [&] { return droop_bounds(all); });

  criterion(6, "mode orderings on the nordic-like case", [&] {
    if (!matrix_error.empty()) return Outcome{false, "matrix error: " + matrix_error};
    bool ok = true;
    std::string d;
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& ap = matrix[3 * s];
      const auto& ad = matrix[3 * s + 1];
      const auto& pd = matrix[3 * s + 2];
      if (!ap.failure.empty() || !ad.failure.empty() || !pd.failure.empty()) {
        ok = false;
        d += " " + ap.scenario + " has an aborted run;";
        continue;
      }
      const auto le = [](double a, double b) { return a <= b + 1e-6 * std::max(std::abs(a), std::abs(b)); };
      const bool vdev = le(pd.report.final_vdev, ad.report.final_vdev) && le(ad.report.final_vdev, ap.report.final_vdev);
      const bool cost = le(ap.report.final_cost, ad.report.final_cost) && le(ap.report.final_cost, pd.report.final_cost);
      ok = ok && vdev && cost;
      const double gap = 100.0 * (ad.report.final_cost - pd.report.final_cost) / std::abs(pd.report.final_cost);
      d += fmt(" %s: vdev %s, cost %s, AD-vs-P cost gap %+.4f%%;", ap.scenario.c_str(), vdev ? "ok" : "VIOLATED",
               cost ? "ok" : "VIOLATED", gap);
    }
    if (!d.empty()) d.pop_back();
    return Outcome{ok, d.empty() ? d : d.substr(1)};
  });

  criterion(7, "infeasibility fallback", [&] {
    if (!matrix_error.empty()) return Outcome{false, "matrix error: " + matrix_error};
    const auto& r = matrix[8];  // scenario3, proposed droop
    const auto& st = r.report.stages;
    const auto stage1_passes = std::count_if(st.begin(), st.end(), [](const auto& s) { return s.stage == 1; });
    const bool ok = r.failure.empty() && r.report.fallback_triggered && stage1_passes == 2 && !st.empty() &&
                    st.back().converged();
    return Outcome{ok, fmt("%s: fallback_triggered=%s, %ld stage-1 passes, %zu stages, last stage %s",
                           label(r).c_str(), r.report.fallback_triggered ? "true" : "false",
                           static_cast<long>(stage1_passes), st.size(),
                           st.empty() ? "-" : std::string(nlp::to_string(st.back().solution.status)).c_str())};
  });

  criterion(8, "loss model and coefficient round trip", [&] {
    const grid::LossCoefficients rect{0.011, 0.003, 0.004}, inv{0.011, 0.003, 0.007};
    const double l0 = eq::converter_loss(0.0, grid::FlowDirection::Rectifier, rect);
    bool ok = l0 == 0.011;
    int checked = 0;
    for (const char* name : {"three_terminal", "nordic_like"}) {
      const auto net = load_case(name);
      const auto back = grid::parse_case_text(grid::serialize_case(net));
      if (back.converters.size() != net.converters.size()) ok = false;
      for (std::size_t i = 0; i < net.converters.size() && i < back.converters.size(); ++i) {
        ok = ok && net.converters[i].rectifier_loss == rect && net.converters[i].inverter_loss == inv;
        ok = ok && back.converters[i].rectifier_loss == rect && back.converters[i].inverter_loss == inv;
        ok = ok && eq::converter_loss(0.0, grid::FlowDirection::Rectifier, back.converters[i]) == 0.011;
        ++checked;
      }
    }
    return Outcome{ok, fmt("loss(0, rectifier) = %.9g, %d converters round-tripped exactly", l0, checked)};
  });

  criterion(9, "byte-identical solve outputs", determinism);

  criterion(10, "3 x 3 matrix runtime", [&] {
    if (!matrix_error.empty()) return Outcome{false, "matrix error: " + matrix_error};
    return Outcome{matrix_secs < 120.0, fmt("%zu runs in %.2f s", matrix.size(), matrix_secs)};
  });

  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAILED" : "OK", failures);
  return failures ? 1 : 0;
}
