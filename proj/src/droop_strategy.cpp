#include "hvdc/droop_strategy.hpp"

#include <cmath>

namespace hvdc::strategy {

using eq::ConverterFormulation;
using eq::ConverterLaw;
using grid::NetworkCase;

std::string_view to_string(ControlMode mode) {
  switch (mode) {
    case ControlMode::ActivePowerControl: return "active-power";
    case ControlMode::AdaptiveDroop: return "adaptive-droop";
    case ControlMode::ProposedDroop: return "proposed-droop";
  }
  return "?";
}

ControlMode control_mode_from_string(std::string_view text) {
  if (text == "active-power") return ControlMode::ActivePowerControl;
  if (text == "adaptive-droop") return ControlMode::AdaptiveDroop;
  if (text == "proposed-droop") return ControlMode::ProposedDroop;
  throw Error("unknown control mode '" + std::string(text) +
              "' (expected active-power, adaptive-droop or proposed-droop)");
}

namespace {

ConverterFormulation base_formulation(const grid::ConverterStation& conv, ConverterLaw law) {
  ConverterFormulation f;
  f.converter_id = conv.id;
  f.law = law;
  f.p_ref = conv.control.p_ref;
  f.u_ref = conv.control.u_ref;
  f.k = conv.control.k_droop;
  f.k_min = conv.control.k_min;
  f.k_max = conv.control.k_max;
  return f;
}

const ConverterSetting* find_setting(const std::vector<ConverterSetting>& settings, int id) {
  for (const auto& s : settings)
    if (s.converter_id == id) return &s;
  return nullptr;
}

std::string stage_failure(const StageResult& r) {
  return "stage " + std::to_string(r.stage) + " on the " + r.network_label + " network did not converge (" +
         std::string(nlp::to_string(r.solution.status)) + "): " + r.solution.message +
         "; max residual " + std::to_string(r.solution.max_residual) + " at " + r.solution.worst_constraint;
}

StageResult solve_stage(int stage, const std::string& label, std::shared_ptr<const NetworkCase> network,
                        std::vector<ConverterFormulation> formulation, ObjectiveKind objective,
                        const StageResult* warm, const nlp::SolverOptions& options, double proximal_weight = 0.0) {
  std::optional<std::vector<double>> start;
  if (warm) {
    const OpfProblem flat(network, formulation, objective);
    const auto& from = warm->solution.x;
    const eq::ResidualSet warm_set(warm->network, warm->formulation);
    start = eq::transfer_state(warm_set.layout(), from, flat.layout(), flat.flat_start());
  }
  OpfProblem problem(network, formulation, objective, start);
  if (proximal_weight > 0.0 && start) problem.set_proximal({*start, proximal_weight});
  auto solution = nlp::solve(problem, options);
  return make_stage_result(stage, label, std::move(network), std::move(formulation), objective, std::move(solution));
}

}  // namespace

StageResult make_stage_result(int stage, std::string label, std::shared_ptr<const NetworkCase> network,
                              std::vector<ConverterFormulation> formulation, ObjectiveKind objective,
                              nlp::OpfSolution solution) {
  StageResult r;
  r.stage = stage;
  r.network_label = std::move(label);
  r.objective_kind = objective;
  r.network = std::move(network);
  r.formulation = std::move(formulation);
  r.solution = std::move(solution);

  const eq::ResidualSet set(r.network, r.formulation);
  const auto& x = r.solution.x;
  const auto& L = set.layout();
  r.cost = eq::objective_cost(x, set);
  r.vdev = eq::objective_vdev(x, set);
  const auto& n = *r.network;
  for (std::size_t c = 0; c < n.converters.size(); ++c) {
    const auto& f = set.law(c);
    ConverterSetting s;
    s.converter_id = n.converters[c].id;
    s.control.k_min = f.k_min;
    s.control.k_max = f.k_max;
    const auto dc = *n.dc_bus_index(n.converters[c].dc_bus);
    const double p_dc = x[L.pdc(c)];
    const double u_dc = x[L.vdc(dc)];
    switch (f.law) {
      case ConverterLaw::Free:
        // Stage-1 output: the optimizer's transfers become P set points.
        s.control.mode = grid::ControlMode::PControl;
        s.control.p_ref = p_dc;
        s.control.u_ref = u_dc;
        s.control.k_droop = f.k;
        break;
      case ConverterLaw::DroopVariableGain:
        s.control.mode = grid::ControlMode::Droop;
        s.control.k_droop = x[L.k(c)];
        s.control.p_ref = p_dc;
        s.control.u_ref = u_dc;
        break;
      case ConverterLaw::Droop:
        s.control.mode = grid::ControlMode::Droop;
        s.control.k_droop = f.k;
        s.control.p_ref = f.p_ref;
        s.control.u_ref = f.u_ref;
        break;
      case ConverterLaw::PControl:
        s.control.mode = grid::ControlMode::PControl;
        s.control.p_ref = f.p_ref;
        s.control.u_ref = u_dc;
        s.control.k_droop = f.k;
        break;
      case ConverterLaw::VControl:
        s.control.mode = grid::ControlMode::VControl;
        s.control.p_ref = p_dc;
        s.control.u_ref = f.u_ref;
        s.control.k_droop = f.k;
        break;
    }
    r.control_snapshot.push_back(s);
  }
  return r;
}

StageResult run_stage1(std::shared_ptr<const NetworkCase> network, const std::string& label,
                       const StrategyOptions& options, bool anchor) {
  std::vector<ConverterFormulation> formulation;
  for (const auto& conv : network->converters) formulation.push_back(base_formulation(conv, ConverterLaw::Free));
  auto solver = options.solver;
  if (anchor) solver.bound_relax = -options.anchor_margin;
  auto r = solve_stage(1, label, std::move(network), std::move(formulation), ObjectiveKind::Cost, nullptr, solver);
  if (!r.converged()) throw StageInfeasible(r, stage_failure(r));
  return r;
}

StageResult run_stage2(const StageResult& stage1, const StrategyOptions& options) {
  if (!stage1.converged()) throw Error("stage 2 requires a converged stage 1");
  std::vector<ConverterFormulation> formulation;
  for (const auto& conv : stage1.network->converters) {
    auto f = base_formulation(conv, ConverterLaw::DroopVariableGain);
    const auto* anchor = find_setting(stage1.control_snapshot, conv.id);
    f.p_ref = anchor->control.p_ref;
    f.u_ref = anchor->control.u_ref;
    f.k = std::sqrt(f.k_min * f.k_max);
    formulation.push_back(f);
  }
  auto solver = options.solver;
  solver.mu_init = options.stage2_mu_init;
  solver.bound_push = options.warm_bound_push;
  auto r = solve_stage(2, stage1.network_label, stage1.network, std::move(formulation), ObjectiveKind::Vdev, &stage1,
                       solver, options.proximal_weight);
  if (!r.converged()) throw StageInfeasible(r, stage_failure(r));
  return r;
}

StageResult run_stage3(std::shared_ptr<const NetworkCase> post, const std::string& label, const StageResult& stage2,
                       const StrategyOptions& options) {
  if (!stage2.converged()) throw Error("stage 3 requires a converged stage 2");
  std::vector<ConverterFormulation> formulation;
  for (const auto& conv : post->converters) {
    const auto* frozen = find_setting(stage2.control_snapshot, conv.id);
    if (!frozen) throw InvariantError("converter " + std::to_string(conv.id) + " has no stage-2 setting");
    auto f = base_formulation(conv, ConverterLaw::Droop);
    f.k = frozen->control.k_droop;
    f.k_min = frozen->control.k_min;
    f.k_max = frozen->control.k_max;
    f.p_ref = frozen->control.p_ref;
    f.u_ref = frozen->control.u_ref;
    formulation.push_back(f);
  }
  auto solver = options.solver;
  solver.mu_init = options.stage3_mu_init;
  solver.bound_push = options.warm_bound_push;
  return solve_stage(3, label, std::move(post), std::move(formulation), ObjectiveKind::Cost, &stage2, solver);
}

StrategyReport run_strategy(const NetworkCase& base, const grid::Scenario& scenario, ControlMode mode,
                            const StrategyOptions& options) {
  StrategyReport report;
  report.case_name = base.name;
  report.scenario = scenario;
  report.mode = mode;
  auto base_ptr = std::make_shared<const NetworkCase>(base);
  auto post_ptr = std::make_shared<const NetworkCase>(grid::apply_scenario(base, scenario));

  try {
    switch (mode) {
      case ControlMode::ActivePowerControl:
        report.stages.push_back(run_stage1(post_ptr, "post", options, false));
        break;
      case ControlMode::AdaptiveDroop:
        report.stages.push_back(run_stage1(post_ptr, "post", options));
        report.stages.push_back(run_stage2(report.stages.back(), options));
        break;
      case ControlMode::ProposedDroop: {
        report.stages.push_back(run_stage1(base_ptr, "base", options));
        report.stages.push_back(run_stage2(report.stages.back(), options));
        report.stages.push_back(run_stage3(post_ptr, "post", report.stages.back(), options));
        if (!report.stages.back().converged()) {
          // The frozen gains cannot absorb the disturbance: recompute the gains
          // from scratch on the disturbed network and re-anchor once.
          report.fallback_triggered = true;
          report.stages.push_back(run_stage1(post_ptr, "post", options));
          report.stages.push_back(run_stage2(report.stages.back(), options));
          report.stages.push_back(run_stage3(post_ptr, "post", report.stages.back(), options));
          if (!report.stages.back().converged()) {
            const std::string what = "fallback " + stage_failure(report.stages.back());
            report.final_cost = report.stages.back().cost;
            report.final_vdev = report.stages.back().vdev;
            throw StrategyFailure(std::move(report), what);
          }
        }
        break;
      }
    }
  } catch (const StageInfeasible& e) {
    report.stages.push_back(e.stage());
    report.final_cost = report.stages.back().cost;
    report.final_vdev = report.stages.back().vdev;
    throw StrategyFailure(std::move(report), e.what());
  }
  report.final_cost = report.stages.back().cost;
  report.final_vdev = report.stages.back().vdev;
  return report;
}

}  // namespace hvdc::strategy
