#include "hvdc/validation.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <sstream>

namespace hvdc::validation {

using cplx = std::complex<double>;
using grid::NetworkCase;

namespace {

// Y-bus as complex rows, built straight from the branch list.
std::vector<std::vector<std::pair<std::size_t, cplx>>> build_ybus(const NetworkCase& n) {
  std::vector<std::vector<std::pair<std::size_t, cplx>>> rows(n.ac_buses.size());
  auto add = [&](std::size_t i, std::size_t j, cplx v) {
    for (auto& [col, y] : rows[i]) {
      if (col == j) {
        y += v;
        return;
      }
    }
    rows[i].emplace_back(j, v);
  };
  for (std::size_t i = 0; i < n.ac_buses.size(); ++i) {
    add(i, i, cplx(n.ac_buses[i].shunt_g, n.ac_buses[i].shunt_b));
  }
  for (const auto& br : n.ac_branches) {
    const std::size_t f = *n.ac_bus_index(br.from);
    const std::size_t t = *n.ac_bus_index(br.to);
    const cplx ys = 1.0 / cplx(br.r, br.x);
    const cplx half_charge(0.0, 0.5 * br.charging_b);
    const double tap = br.tap_ratio;
    add(f, f, (ys + half_charge) / (tap * tap));
    add(t, t, ys + half_charge);
    add(f, t, -ys / tap);
    add(t, f, -ys / tap);
  }
  return rows;
}

double loss_of(const grid::ConverterStation& st, double p_dc, double i_c) {
  const auto& k = p_dc >= 0.0 ? st.rectifier_loss : st.inverter_loss;
  return k.a + k.b * i_c + k.c * i_c * i_c;
}

// Unknown/equation bookkeeping of the square system.
class System {
 public:
  explicit System(const PowerFlowSetup& s) : s_(s), n_(*s.network), ybus_(build_ybus(n_)) {
    const std::size_t nb = n_.ac_buses.size();
    has_gen_.assign(nb, false);
    for (const auto& g : n_.generators) has_gen_[*n_.ac_bus_index(g.bus)] = true;
    if (nb && !has_gen_[s.slack_bus]) throw PowerFlowError("slack bus hosts no generator");
    va_.assign(nb, -1);
    vm_.assign(nb, -1);
    qg_.assign(nb, -1);
    for (std::size_t i = 0; i < nb; ++i) {
      if (i != s.slack_bus) va_[i] = push("angle at AC bus " + std::to_string(n_.ac_buses[i].id));
      if (!has_gen_[i]) vm_[i] = push("voltage at AC bus " + std::to_string(n_.ac_buses[i].id));
      if (has_gen_[i]) qg_[i] = push("reactive generation at AC bus " + std::to_string(n_.ac_buses[i].id));
    }
    pg_slack_ = nb ? push("slack generation at AC bus " + std::to_string(n_.ac_buses[s.slack_bus].id)) : -1;
    for (const auto& b : n_.dc_buses) vdc_.push_back(push("voltage at DC bus " + std::to_string(b.id)));
    for (const auto& c : n_.converters) {
      const std::string tag = " of converter " + std::to_string(c.id);
      pdc_.push_back(push("P_dc" + tag));
      pc_.push_back(push("P_c" + tag));
      ic_.push_back(push("I_c" + tag));
      pl_.push_back(push("P_loss" + tag));
    }
    for (std::size_t i = 0; i < nb; ++i) rows_.push_back("active balance at AC bus " + std::to_string(n_.ac_buses[i].id));
    for (std::size_t i = 0; i < nb; ++i) rows_.push_back("reactive balance at AC bus " + std::to_string(n_.ac_buses[i].id));
    for (const auto& b : n_.dc_buses) rows_.push_back("balance at DC bus " + std::to_string(b.id));
    for (const auto& c : n_.converters) {
      const std::string tag = " of converter " + std::to_string(c.id);
      rows_.push_back("power balance" + tag);
      rows_.push_back("coupling" + tag);
      rows_.push_back("loss" + tag);
      rows_.push_back("control law" + tag);
    }
    if (rows_.size() != names_.size()) {
      throw PowerFlowError("power flow system is not square: " + std::to_string(rows_.size()) + " equations, " +
                           std::to_string(names_.size()) + " unknowns");
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::string& unknown(std::size_t j) const { return names_[j]; }
  const std::string& equation(std::size_t r) const { return rows_[r]; }

  Eigen::VectorXd start() const {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size()));
    for (std::size_t i = 0; i < vm_.size(); ++i)
      if (vm_[i] >= 0) z[vm_[i]] = 1.0;
    for (int v : vdc_) z[v] = 1.0;
    // Voltage-controlled stations start from the DC balance estimate. Zero is
    // where the loss triple switches, which would spoil the difference quotient.
    double scheduled = 0.0;
    for (const auto& pin : s_.converters)
      if (pin.control.mode != grid::ControlMode::VControl) scheduled += pin.control.p_ref;
    const double balancing = std::abs(scheduled) > 1e-3 ? -scheduled : 1e-3;
    for (std::size_t c = 0; c < n_.converters.size(); ++c) {
      const auto& pin = s_.converters[c];
      const double p = pin.control.mode == grid::ControlMode::VControl ? balancing : pin.control.p_ref;
      z[pdc_[c]] = p;
      z[pc_[c]] = p;
      // I_c = 0 makes the coupling row singular, so start from |S|.
      z[ic_[c]] = std::max(std::hypot(p, pin.q_c), 0.1);
      z[pl_[c]] = loss_of(n_.converters[c], p, z[ic_[c]]);
    }
    return z;
  }

  void unpack(const Eigen::VectorXd& z, std::vector<cplx>& v, std::vector<double>& vdc) const {
    const std::size_t nb = n_.ac_buses.size();
    v.resize(nb);
    for (std::size_t i = 0; i < nb; ++i) {
      const double mag = vm_[i] >= 0 ? z[vm_[i]] : s_.v_set[i];
      const double ang = va_[i] >= 0 ? z[va_[i]] : 0.0;
      v[i] = std::polar(mag, ang);
    }
    vdc.resize(vdc_.size());
    for (std::size_t d = 0; d < vdc_.size(); ++d) vdc[d] = z[vdc_[d]];
  }

  Eigen::VectorXd residual(const Eigen::VectorXd& z) const {
    std::vector<cplx> v;
    std::vector<double> vdc;
    unpack(z, v, vdc);
    const std::size_t nb = n_.ac_buses.size();
    Eigen::VectorXd r(static_cast<Eigen::Index>(size()));
    // Net withdrawal per AC bus: load + converters - generation.
    std::vector<cplx> net(nb);
    for (std::size_t i = 0; i < nb; ++i) net[i] = cplx(n_.ac_buses[i].load_p, n_.ac_buses[i].load_q);
    for (std::size_t g = 0; g < n_.generators.size(); ++g) {
      const std::size_t b = *n_.ac_bus_index(n_.generators[g].bus);
      if (b != s_.slack_bus) net[b] -= s_.p_gen[g];
    }
    for (std::size_t i = 0; i < nb; ++i) {
      if (qg_[i] >= 0) net[i] -= cplx(0.0, z[qg_[i]]);
    }
    if (pg_slack_ >= 0) net[s_.slack_bus] -= z[pg_slack_];
    for (std::size_t c = 0; c < n_.converters.size(); ++c) {
      const std::size_t b = *n_.ac_bus_index(n_.converters[c].ac_bus);
      net[b] += cplx(z[pc_[c]], s_.converters[c].q_c);
    }
    for (std::size_t i = 0; i < nb; ++i) {
      cplx current = 0.0;
      for (const auto& [j, y] : ybus_[i]) current += y * v[j];
      const cplx inj = v[i] * std::conj(current);
      // Injection into the network must equal generation minus withdrawal.
      const cplx mismatch = -net[i] - inj;
      r[static_cast<Eigen::Index>(i)] = mismatch.real();
      r[static_cast<Eigen::Index>(nb + i)] = mismatch.imag();
    }
    std::size_t row = 2 * nb;
    std::vector<double> dc_inj(vdc.size(), 0.0);
    for (std::size_t c = 0; c < n_.converters.size(); ++c) dc_inj[*n_.dc_bus_index(n_.converters[c].dc_bus)] += z[pdc_[c]];
    std::vector<double> dc_cur(vdc.size(), 0.0);
    for (const auto& br : n_.dc_branches) {
      const std::size_t f = *n_.dc_bus_index(br.from);
      const std::size_t t = *n_.dc_bus_index(br.to);
      const double i_ft = (vdc[f] - vdc[t]) / br.resistance;
      dc_cur[f] += i_ft;
      dc_cur[t] -= i_ft;
    }
    for (std::size_t d = 0; d < vdc.size(); ++d) r[static_cast<Eigen::Index>(row++)] = dc_inj[d] - 2.0 * vdc[d] * dc_cur[d];
    for (std::size_t c = 0; c < n_.converters.size(); ++c) {
      const auto& st = n_.converters[c];
      const auto& pin = s_.converters[c];
      const double p_dc = z[pdc_[c]];
      const double p_c = z[pc_[c]];
      const double i_c = z[ic_[c]];
      const double u_ac = std::abs(v[*n_.ac_bus_index(st.ac_bus)]);
      const double u_dc = vdc[*n_.dc_bus_index(st.dc_bus)];
      r[static_cast<Eigen::Index>(row++)] = p_c - p_dc - z[pl_[c]];
      r[static_cast<Eigen::Index>(row++)] = p_c * p_c + pin.q_c * pin.q_c - u_ac * u_ac * i_c * i_c;
      r[static_cast<Eigen::Index>(row++)] = z[pl_[c]] - loss_of(st, p_dc, i_c);
      double law = 0.0;
      switch (pin.control.mode) {
        case grid::ControlMode::PControl: law = p_dc - pin.control.p_ref; break;
        case grid::ControlMode::VControl: law = u_dc - pin.control.u_ref; break;
        case grid::ControlMode::Droop:
          law = p_dc - pin.control.p_ref + (u_dc - pin.control.u_ref) / pin.control.k_droop;
          break;
      }
      r[static_cast<Eigen::Index>(row++)] = law;
    }
    return r;
  }

  PowerFlowState state(const Eigen::VectorXd& z) const {
    PowerFlowState out;
    std::vector<cplx> v;
    unpack(z, v, out.vdc);
    const std::size_t nb = n_.ac_buses.size();
    for (const auto& vi : v) {
      out.vm.push_back(std::abs(vi));
      out.va.push_back(std::arg(vi));
    }
    out.p_gen_bus.assign(nb, 0.0);
    out.q_gen_bus.assign(nb, 0.0);
    for (std::size_t g = 0; g < n_.generators.size(); ++g) {
      const std::size_t b = *n_.ac_bus_index(n_.generators[g].bus);
      if (b != s_.slack_bus) out.p_gen_bus[b] += s_.p_gen[g];
    }
    if (pg_slack_ >= 0) out.p_gen_bus[s_.slack_bus] += z[pg_slack_];
    for (std::size_t i = 0; i < nb; ++i)
      if (qg_[i] >= 0) out.q_gen_bus[i] = z[qg_[i]];
    for (std::size_t c = 0; c < n_.converters.size(); ++c) {
      out.p_dc.push_back(z[pdc_[c]]);
      out.p_c.push_back(z[pc_[c]]);
      out.q_c.push_back(s_.converters[c].q_c);
      out.i_c.push_back(z[ic_[c]]);
      out.p_loss.push_back(z[pl_[c]]);
    }
    return out;
  }

 private:
  int push(std::string name) {
    names_.push_back(std::move(name));
    return static_cast<int>(names_.size() - 1);
  }

  const PowerFlowSetup& s_;
  const NetworkCase& n_;
  std::vector<std::vector<std::pair<std::size_t, cplx>>> ybus_;
  std::vector<bool> has_gen_;
  std::vector<int> va_, vm_, qg_, vdc_, pdc_, pc_, ic_, pl_;
  int pg_slack_ = -1;
  std::vector<std::string> names_, rows_;
};

Eigen::MatrixXd fd_jacobian(const System& sys, const Eigen::VectorXd& z, const Eigen::VectorXd& r0) {
  const auto n = z.size();
  Eigen::MatrixXd j(r0.size(), n);
  Eigen::VectorXd zp = z;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double h = 1e-7 * std::max(1.0, std::abs(z[k]));
    zp[k] = z[k] + h;
    const Eigen::VectorXd rp = sys.residual(zp);
    zp[k] = z[k] - h;
    const Eigen::VectorXd rm = sys.residual(zp);
    zp[k] = z[k];
    j.col(k) = (rp - rm) / (2.0 * h);
  }
  return j;
}

std::string singular_location(const System& sys, const Eigen::MatrixXd& j, const Eigen::FullPivLU<Eigen::MatrixXd>& lu) {
  const double scale = std::max(1.0, j.cwiseAbs().maxCoeff());
  for (Eigen::Index r = 0; r < j.rows(); ++r) {
    if (j.row(r).cwiseAbs().maxCoeff() <= 1e-12 * scale) return sys.equation(static_cast<std::size_t>(r));
  }
  const Eigen::MatrixXd kernel = lu.kernel();
  Eigen::Index worst = 0;
  kernel.col(0).cwiseAbs().maxCoeff(&worst);
  return sys.unknown(static_cast<std::size_t>(worst));
}

}  // namespace

PowerFlowState newton_powerflow(const PowerFlowSetup& setup, const PowerFlowOptions& options) {
  if (!setup.network) throw PowerFlowError("power flow setup has no network");
  const auto& n = *setup.network;
  if (setup.p_gen.size() != n.generators.size() || setup.v_set.size() != n.ac_buses.size() ||
      setup.converters.size() != n.converters.size()) {
    throw PowerFlowError("power flow setup does not match the network dimensions");
  }
  const System sys(setup);
  Eigen::VectorXd z = sys.start();
  Eigen::VectorXd r = sys.residual(z);
  std::vector<double> history;
  int iter = 0;
  while (true) {
    const double norm = r.size() ? r.lpNorm<Eigen::Infinity>() : 0.0;
    if (!std::isfinite(norm)) throw PowerFlowError("power flow diverged: non-finite residual");
    history.push_back(norm);
    if (norm <= options.tol) break;
    if (iter >= options.max_iter) {
      std::ostringstream msg;
      msg << "power flow did not converge in " << options.max_iter << " iterations (residual " << norm << ")";
      throw PowerFlowError(msg.str());
    }
    const Eigen::MatrixXd j = fd_jacobian(sys, z, r);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(j);
    lu.setThreshold(1e-13);
    if (!lu.isInvertible()) {
      throw PowerFlowError("singular power flow Jacobian at " + singular_location(sys, j, lu));
    }
    z -= lu.solve(r);
    r = sys.residual(z);
    ++iter;
  }
  PowerFlowState out = sys.state(z);
  out.iterations = iter;
  out.max_residual = history.back();
  out.residual_history = std::move(history);
  return out;
}

PowerFlowSetup pin_controls(std::shared_ptr<const NetworkCase> network,
                            std::span<const eq::ConverterFormulation> formulation, std::span<const double> x) {
  const auto& n = *network;
  const eq::VariableLayout layout(n, formulation);
  if (x.size() != layout.size()) throw Error("solution vector does not match the stage layout");
  PowerFlowSetup s;
  s.network = network;
  s.slack_bus = n.ac_buses.empty() ? 0 : grid::reference_bus_index(n);
  for (std::size_t g = 0; g < n.generators.size(); ++g) s.p_gen.push_back(x[layout.pg(g)]);
  for (std::size_t i = 0; i < n.ac_buses.size(); ++i) s.v_set.push_back(x[layout.vm(i)]);
  bool anchored = false;
  for (std::size_t c = 0; c < n.converters.size(); ++c) {
    const auto& f = formulation[c];
    const double u_dc = x[layout.vdc(*n.dc_bus_index(n.converters[c].dc_bus))];
    PinnedConverter p;
    p.converter_id = n.converters[c].id;
    p.q_c = x[layout.qc(c)];
    p.control.k_min = f.k_min;
    p.control.k_max = f.k_max;
    p.control.k_droop = f.k;
    p.control.p_ref = f.p_ref;
    p.control.u_ref = f.u_ref;
    switch (f.law) {
      case eq::ConverterLaw::Free:
        p.control.mode = grid::ControlMode::PControl;
        p.control.p_ref = x[layout.pdc(c)];
        p.control.u_ref = u_dc;
        break;
      case eq::ConverterLaw::PControl: p.control.mode = grid::ControlMode::PControl; break;
      case eq::ConverterLaw::VControl: p.control.mode = grid::ControlMode::VControl; break;
      case eq::ConverterLaw::Droop: p.control.mode = grid::ControlMode::Droop; break;
      case eq::ConverterLaw::DroopVariableGain:
        p.control.mode = grid::ControlMode::Droop;
        p.control.k_droop = x[layout.k(c)];
        break;
    }
    if (p.control.mode != grid::ControlMode::PControl) anchored = true;
    if (p.control.mode == grid::ControlMode::PControl) p.control.u_ref = u_dc;
    s.converters.push_back(p);
  }
  if (!anchored && !s.converters.empty()) {
    std::size_t pick = 0;
    for (std::size_t c = 1; c < n.converters.size(); ++c) {
      const double w = n.converters[c].p_dc_max - n.converters[c].p_dc_min;
      const double wp = n.converters[pick].p_dc_max - n.converters[pick].p_dc_min;
      if (w > wp || (w == wp && n.converters[c].id < n.converters[pick].id)) pick = c;
    }
    s.converters[pick].control.mode = grid::ControlMode::VControl;
    s.promoted_converter = n.converters[pick].id;
  }
  return s;
}

BalanceClosure balance_closure(const NetworkCase& n, std::span<const eq::ConverterFormulation> formulation,
                               std::span<const double> x) {
  const eq::VariableLayout L(n, formulation);
  BalanceClosure out;
  std::vector<cplx> v(n.ac_buses.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::polar(x[L.vm(i)], L.va(i) >= 0 ? x[L.va(i)] : 0.0);
  cplx gen = 0.0, load = 0.0, conv = 0.0, loss = 0.0;
  for (std::size_t g = 0; g < n.generators.size(); ++g) gen += cplx(x[L.pg(g)], x[L.qg(g)]);
  for (std::size_t i = 0; i < v.size(); ++i) {
    load += cplx(n.ac_buses[i].load_p, n.ac_buses[i].load_q);
    loss += std::norm(v[i]) * std::conj(cplx(n.ac_buses[i].shunt_g, n.ac_buses[i].shunt_b));
  }
  for (std::size_t c = 0; c < n.converters.size(); ++c) conv += cplx(x[L.pc(c)], x[L.qc(c)]);
  for (const auto& br : n.ac_branches) {
    const cplx vf = v[*n.ac_bus_index(br.from)];
    const cplx vt = v[*n.ac_bus_index(br.to)];
    const cplx ys = 1.0 / cplx(br.r, br.x);
    const cplx yc(0.0, 0.5 * br.charging_b);
    const double tap = br.tap_ratio;
    const cplx i_f = (ys + yc) / (tap * tap) * vf - ys / tap * vt;
    const cplx i_t = -ys / tap * vf + (ys + yc) * vt;
    loss += vf * std::conj(i_f) + vt * std::conj(i_t);
  }
  const cplx ac = gen - load - conv - loss;
  out.ac_active = ac.real();
  out.ac_reactive = ac.imag();
  double dc_inj = 0.0, dc_loss = 0.0;
  for (std::size_t c = 0; c < n.converters.size(); ++c) dc_inj += x[L.pdc(c)];
  for (const auto& br : n.dc_branches) {
    const double du = x[L.vdc(*n.dc_bus_index(br.from))] - x[L.vdc(*n.dc_bus_index(br.to))];
    dc_loss += 2.0 * du * du / br.resistance;
  }
  out.dc = dc_inj - dc_loss;
  for (std::size_t c = 0; c < n.converters.size(); ++c) {
    const double p_dc = x[L.pdc(c)];
    const double gap = x[L.pc(c)] - p_dc - loss_of(n.converters[c], p_dc, x[L.ic(c)]);
    out.converter = std::max(out.converter, std::abs(gap));
  }
  return out;
}

Verdict verify_solution(std::shared_ptr<const NetworkCase> network,
                        std::span<const eq::ConverterFormulation> formulation, std::span<const double> x,
                        const VerifyTolerances& tol) {
  Verdict v;
  const std::vector<eq::ConverterFormulation> form(formulation.begin(), formulation.end());
  const eq::ResidualSet set(network, form);
  const auto& L = set.layout();
  if (x.size() != L.size()) throw Error("solution vector does not match the stage layout");
  const auto res = set.evaluate(x);
  for (std::size_t r = 0; r < res.size(); ++r) {
    if (std::abs(res[r]) > v.max_residual || v.worst_residual.empty()) {
      v.max_residual = std::abs(res[r]);
      v.worst_residual = set.describe(r);
    }
  }
  v.closure = balance_closure(*network, form, x);

  const auto& n = *network;
  try {
    const PowerFlowSetup setup = pin_controls(network, form, x);
    v.promoted_converter = setup.promoted_converter;
    const PowerFlowState pf = newton_powerflow(setup);
    v.powerflow_iterations = pf.iterations;
    v.powerflow_residual = pf.max_residual;
    auto compare = [&](const std::string& name, double opf, double oracle) {
      const double gap = std::abs(opf - oracle);
      if (gap > v.max_discrepancy || v.worst_variable.empty()) {
        v.max_discrepancy = gap;
        v.worst_variable = name;
      }
    };
    std::vector<double> pg_bus(n.ac_buses.size(), 0.0), qg_bus(n.ac_buses.size(), 0.0);
    for (std::size_t g = 0; g < n.generators.size(); ++g) {
      const std::size_t b = *n.ac_bus_index(n.generators[g].bus);
      pg_bus[b] += x[L.pg(g)];
      qg_bus[b] += x[L.qg(g)];
    }
    std::vector<bool> has_gen(n.ac_buses.size(), false);
    for (const auto& g : n.generators) has_gen[*n.ac_bus_index(g.bus)] = true;
    for (std::size_t i = 0; i < n.ac_buses.size(); ++i) {
      const std::string id = std::to_string(n.ac_buses[i].id);
      compare("vm[" + id + "]", x[L.vm(i)], pf.vm[i]);
      compare("va[" + id + "]", L.va(i) >= 0 ? x[L.va(i)] : 0.0, pf.va[i]);
      compare("pg-bus[" + id + "]", pg_bus[i], pf.p_gen_bus[i]);
      if (has_gen[i]) compare("qg-bus[" + id + "]", qg_bus[i], pf.q_gen_bus[i]);
    }
    for (std::size_t d = 0; d < n.dc_buses.size(); ++d) {
      compare("vdc[" + std::to_string(n.dc_buses[d].id) + "]", x[L.vdc(d)], pf.vdc[d]);
    }
    for (std::size_t c = 0; c < n.converters.size(); ++c) {
      const std::string id = std::to_string(n.converters[c].id);
      compare("pdc[" + id + "]", x[L.pdc(c)], pf.p_dc[c]);
      compare("pc[" + id + "]", x[L.pc(c)], pf.p_c[c]);
      compare("ic[" + id + "]", x[L.ic(c)], pf.i_c[c]);
      compare("ploss[" + id + "]", x[L.ploss(c)], pf.p_loss[c]);
    }
  } catch (const Error& e) {
    v.powerflow_error = e.what();
  }
  v.passed = v.powerflow_error.empty() && v.max_residual <= tol.residual && v.max_discrepancy <= tol.discrepancy &&
             std::abs(v.closure.ac_active) <= tol.closure && std::abs(v.closure.ac_reactive) <= tol.closure &&
             std::abs(v.closure.dc) <= tol.closure && v.closure.converter <= tol.closure;
  return v;
}

}  // namespace hvdc::validation
