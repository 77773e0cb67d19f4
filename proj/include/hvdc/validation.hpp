#pragma once

// Independent Newton-Raphson AC/DC power flow used as an oracle for OPF
// results. It reads the case model directly and evaluates the network with
// complex arithmetic; the residual code of the equations module is only used
// by verify_solution for the first of its two checks.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hvdc/case_model.hpp"
#include "hvdc/equations.hpp"
#include "hvdc/error.hpp"

namespace hvdc::validation {

class PowerFlowError : public Error {
 public:
  using Error::Error;
};

struct PinnedConverter {
  int converter_id = 0;
  grid::ConverterControl control;
  /// Reactive power withdrawn from the AC bus, fixed during the power flow.
  double q_c = 0.0;
};

struct PowerFlowSetup {
  std::shared_ptr<const grid::NetworkCase> network;
  /// Active dispatch per generator position; generators at the slack bus are free.
  std::vector<double> p_gen;
  /// Voltage magnitude per AC bus, held at buses with generators.
  std::vector<double> v_set;
  /// One entry per converter, in case order.
  std::vector<PinnedConverter> converters;
  std::size_t slack_bus = 0;
  /// Converter switched to VControl to anchor the DC voltage, if any.
  std::optional<int> promoted_converter;
};

struct PowerFlowOptions {
  int max_iter = 50;
  double tol = 1e-10;
};

struct PowerFlowState {
  std::vector<double> vm, va;           // per AC bus
  std::vector<double> p_gen_bus;        // total generation per AC bus
  std::vector<double> q_gen_bus;
  std::vector<double> vdc;              // per DC bus
  std::vector<double> p_dc, p_c, q_c, i_c, p_loss;  // per converter
  int iterations = 0;
  double max_residual = 0.0;
  /// Max-norm residual before each Newton step and after the last one.
  std::vector<double> residual_history;
};

/// Solves the square AC/DC system. Throws PowerFlowError on a singular
/// Jacobian (naming the bus) or when max_iter is reached.
PowerFlowState newton_powerflow(const PowerFlowSetup& setup, const PowerFlowOptions& options = {});

/// Controls implied by an OPF point: dispatch, PV voltages, converter laws and
/// Q_c. When no converter fixes the DC voltage, the one with the widest P_dc
/// range (lowest id on ties) is promoted to VControl at its solved voltage.
PowerFlowSetup pin_controls(std::shared_ptr<const grid::NetworkCase> network,
                            std::span<const eq::ConverterFormulation> formulation, std::span<const double> x);

/// Network-wide balance closure computed from branch flows.
struct BalanceClosure {
  /// sum P_G - sum P_D - sum P_c - AC losses (series, shunt and charging).
  double ac_active = 0.0;
  double ac_reactive = 0.0;
  /// sum P_dc - DC line losses.
  double dc = 0.0;
  /// max over converters of |P_c - P_dc - (a + b I + c I^2)|.
  double converter = 0.0;
};

BalanceClosure balance_closure(const grid::NetworkCase& network, std::span<const eq::ConverterFormulation> formulation,
                               std::span<const double> x);

struct Verdict {
  /// Max residual of the OPF equalities, via the equations module.
  double max_residual = 0.0;
  std::string worst_residual;
  /// Max per-variable gap between the OPF point and the power flow.
  double max_discrepancy = 0.0;
  std::string worst_variable;
  int powerflow_iterations = 0;
  double powerflow_residual = 0.0;
  BalanceClosure closure;
  std::optional<int> promoted_converter;
  /// Set when the power flow itself failed.
  std::string powerflow_error;
  bool passed = false;
};

struct VerifyTolerances {
  double residual = 1e-6;
  double discrepancy = 1e-6;
  double closure = 1e-5;
};

Verdict verify_solution(std::shared_ptr<const grid::NetworkCase> network,
                        std::span<const eq::ConverterFormulation> formulation, std::span<const double> x,
                        const VerifyTolerances& tol = {});

}  // namespace hvdc::validation
