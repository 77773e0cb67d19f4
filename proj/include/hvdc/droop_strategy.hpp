#pragma once

// Staged droop-setting strategy:
//   stage 1  cost-optimal dispatch with free converter transfers,
//   stage 2  DC voltage-deviation minimization with variable droop gains,
//            references anchored at the stage-1 set points,
//   stage 3  cost re-optimization on the disturbed network with the stage-2
//            gains frozen and references updated to the stage-2 solution.

#include <memory>
#include <string>
#include <vector>

#include "hvdc/case_model.hpp"
#include "hvdc/equations.hpp"
#include "hvdc/error.hpp"
#include "hvdc/nlp_solver.hpp"
#include "hvdc/opf_problem.hpp"

namespace hvdc::strategy {

enum class ControlMode { ActivePowerControl, AdaptiveDroop, ProposedDroop };

std::string_view to_string(ControlMode mode);
/// Accepts "active-power", "adaptive-droop", "proposed-droop".
ControlMode control_mode_from_string(std::string_view text);

struct ConverterSetting {
  int converter_id = 0;
  grid::ConverterControl control;
};

struct StageResult {
  int stage = 0;
  /// "base" or "post": which network the stage was solved on.
  std::string network_label;
  ObjectiveKind objective_kind = ObjectiveKind::Cost;
  std::shared_ptr<const grid::NetworkCase> network;
  /// Formulation the stage was solved with.
  std::vector<eq::ConverterFormulation> formulation;
  nlp::OpfSolution solution;
  /// Control settings implied by the solution.
  std::vector<ConverterSetting> control_snapshot;
  /// Recomputed from solution.x by the equations module.
  double cost = 0.0;
  double vdev = 0.0;

  bool converged() const { return solution.status == nlp::SolveStatus::Converged; }
};

struct StrategyReport {
  std::string case_name;
  grid::Scenario scenario;
  ControlMode mode = ControlMode::ProposedDroop;
  std::vector<StageResult> stages;
  double final_cost = 0.0;
  double final_vdev = 0.0;
  bool fallback_triggered = false;
};

struct StrategyOptions {
  nlp::SolverOptions solver;
  /// Stage 1 solves with every bound pulled in by this relative margin so the
  /// anchor it hands to stage 2 sits strictly inside the stage-2 bounds.
  double anchor_margin = 1e-6;
  /// Proximal weight on the stage-1 state in stage 2. The Vdev objective is
  /// flat in most AC directions (reactive dispatch, angles).
  double proximal_weight = 1.0;
  /// Initial barrier parameters of the warm-started stages. Both start at or
  /// next to a solution, and a large barrier would drag them to the center.
  double stage2_mu_init = 1e-8;
  double stage3_mu_init = 1e-8;
  /// Bound push for the warm-started stages 2 and 3. The default push would
  /// move pinned anchor variables off the droop lines.
  double warm_bound_push = 1e-9;
};

/// A stage that must succeed did not converge.
class StageInfeasible : public SolverError {
 public:
  StageInfeasible(StageResult stage, const std::string& what) : SolverError(what), stage_(std::move(stage)) {}
  const StageResult& stage() const { return stage_; }

 private:
  StageResult stage_;
};

/// run_strategy gave up. `partial` holds every stage that was solved,
/// including the failed ones with their least-violation certificates.
class StrategyFailure : public SolverError {
 public:
  StrategyFailure(StrategyReport partial, const std::string& what) : SolverError(what), partial_(std::move(partial)) {}
  const StrategyReport& partial() const { return partial_; }

 private:
  StrategyReport partial_;
};

/// Builds the snapshot/metrics part of a stage from a finished solve.
StageResult make_stage_result(int stage, std::string label, std::shared_ptr<const grid::NetworkCase> network,
                              std::vector<eq::ConverterFormulation> formulation, ObjectiveKind objective,
                              nlp::OpfSolution solution);

/// `anchor` pulls the bounds in by options.anchor_margin; pass false when the
/// result is final and no stage 2 follows.
StageResult run_stage1(std::shared_ptr<const grid::NetworkCase> network, const std::string& label,
                       const StrategyOptions& options = {}, bool anchor = true);
StageResult run_stage2(const StageResult& stage1, const StrategyOptions& options = {});
/// Does not throw on a non-converged solve; the caller decides on fallback.
StageResult run_stage3(std::shared_ptr<const grid::NetworkCase> post, const std::string& label,
                       const StageResult& stage2, const StrategyOptions& options = {});

/// Throws StrategyFailure when a required stage does not converge.
StrategyReport run_strategy(const grid::NetworkCase& base, const grid::Scenario& scenario, ControlMode mode,
                            const StrategyOptions& options = {});

}  // namespace hvdc::strategy
