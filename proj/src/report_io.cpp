#include "hvdc/report_io.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace hvdc::report {

using json = nlohmann::ordered_json;

namespace {

json verdict_json(const validation::Verdict& v) {
  json j;
  j["passed"] = v.passed;
  j["max_residual"] = v.max_residual;
  j["worst_residual"] = v.worst_residual;
  j["max_discrepancy"] = v.max_discrepancy;
  j["worst_variable"] = v.worst_variable;
  j["powerflow_iterations"] = v.powerflow_iterations;
  j["powerflow_residual"] = v.powerflow_residual;
  j["closure"] = {{"ac_active", v.closure.ac_active},
                  {"ac_reactive", v.closure.ac_reactive},
                  {"dc", v.closure.dc},
                  {"converter", v.closure.converter}};
  j["promoted_converter"] = v.promoted_converter ? json(*v.promoted_converter) : json(nullptr);
  if (!v.powerflow_error.empty()) j["powerflow_error"] = v.powerflow_error;
  return j;
}

json stage_json(const strategy::StageResult& s, const std::optional<validation::Verdict>& verdict) {
  json j;
  j["stage"] = s.stage;
  j["network"] = s.network_label;
  j["objective"] = std::string(to_string(s.objective_kind));
  j["status"] = std::string(nlp::to_string(s.solution.status));
  j["message"] = s.solution.message;
  j["iterations"] = s.solution.iterations;
  j["max_residual"] = s.solution.max_residual;
  j["worst_constraint"] = s.solution.worst_constraint;
  j["kkt_stationarity"] = s.solution.kkt_stationarity;
  j["cost"] = s.cost;
  j["vdev"] = s.vdev;
  json form = json::array();
  for (const auto& f : s.formulation) {
    form.push_back({{"converter", f.converter_id},
                    {"law", std::string(eq::to_string(f.law))},
                    {"p_ref", f.p_ref},
                    {"u_ref", f.u_ref},
                    {"k", f.k},
                    {"k_min", f.k_min},
                    {"k_max", f.k_max}});
  }
  j["formulation"] = form;
  json controls = json::array();
  for (const auto& c : s.control_snapshot) {
    controls.push_back({{"converter", c.converter_id},
                        {"mode", std::string(grid::to_string(c.control.mode))},
                        {"p_ref", c.control.p_ref},
                        {"u_ref", c.control.u_ref},
                        {"k_droop", c.control.k_droop}});
  }
  j["controls"] = controls;
  const eq::VariableLayout layout(*s.network, s.formulation);
  json x = json::object();
  for (std::size_t i = 0; i < layout.size(); ++i) x[layout.slot_name(i)] = s.solution.x[i];
  j["x"] = x;
  j["validation"] = verdict ? verdict_json(*verdict) : json(nullptr);
  return j;
}

ObjectiveKind objective_from(const std::string& text) {
  if (text == "cost") return ObjectiveKind::Cost;
  if (text == "vdev") return ObjectiveKind::Vdev;
  throw Error("unknown objective '" + text + "'");
}

template <class T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(where + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

std::string serialize_run(const RunRecord& run) {
  const auto& r = run.report;
  json j;
  j["schema"] = kReportSchema;
  j["schema_version"] = kReportSchemaVersion;
  j["case"] = {{"name", r.case_name}, {"text", run.case_text}};
  j["scenario"] = {{"name", r.scenario.name},
                   {"generator_outages", r.scenario.generator_outages},
                   {"converter_outages", r.scenario.converter_outages}};
  j["mode"] = std::string(strategy::to_string(r.mode));
  j["failed"] = run.failed;
  j["error"] = run.error;
  j["fallback_triggered"] = r.fallback_triggered;
  j["final_cost"] = r.final_cost;
  j["final_vdev"] = r.final_vdev;
  json stages = json::array();
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    stages.push_back(stage_json(r.stages[i], i < run.verdicts.size() ? run.verdicts[i] : std::nullopt));
  }
  j["stages"] = stages;
  return j.dump(2) + "\n";
}

LoadedReport parse_run(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(source + ": not a JSON report (" + e.what() + ")");
  }
  if (!j.is_object() || j.value("schema", "") != kReportSchema) throw Error(source + ": not an " + kReportSchema + " file");
  if (field<int>(j, "schema_version", source) != kReportSchemaVersion) {
    throw Error(source + ": unsupported schema version " + std::to_string(field<int>(j, "schema_version", source)));
  }
  LoadedReport out;
  const json& cj = j.at("case");
  out.case_name = field<std::string>(cj, "name", source);
  auto base = std::make_shared<const grid::NetworkCase>(
      grid::parse_case_text(field<std::string>(cj, "text", source), source + " (embedded case)"));
  const json& sj = j.at("scenario");
  out.scenario.name = field<std::string>(sj, "name", source);
  out.scenario.generator_outages = field<std::set<int>>(sj, "generator_outages", source);
  out.scenario.converter_outages = field<std::set<int>>(sj, "converter_outages", source);
  auto post = std::make_shared<const grid::NetworkCase>(grid::apply_scenario(*base, out.scenario));
  out.mode = strategy::control_mode_from_string(field<std::string>(j, "mode", source));
  out.failed = field<bool>(j, "failed", source);
  out.error = field<std::string>(j, "error", source);
  out.fallback_triggered = field<bool>(j, "fallback_triggered", source);
  out.final_cost = field<double>(j, "final_cost", source);
  out.final_vdev = field<double>(j, "final_vdev", source);

  for (const json& st : j.at("stages")) {
    LoadedStage s;
    s.stage = field<int>(st, "stage", source);
    const std::string where = source + " stage " + std::to_string(s.stage);
    s.network_label = field<std::string>(st, "network", where);
    if (s.network_label == "base") s.network = base;
    else if (s.network_label == "post") s.network = post;
    else throw Error(where + ": unknown network '" + s.network_label + "'");
    s.objective = objective_from(field<std::string>(st, "objective", where));
    s.status = field<std::string>(st, "status", where);
    s.cost = field<double>(st, "cost", where);
    s.vdev = field<double>(st, "vdev", where);
    for (const json& f : st.at("formulation")) {
      eq::ConverterFormulation cf;
      cf.converter_id = field<int>(f, "converter", where);
      cf.law = eq::converter_law_from_string(field<std::string>(f, "law", where));
      cf.p_ref = field<double>(f, "p_ref", where);
      cf.u_ref = field<double>(f, "u_ref", where);
      cf.k = field<double>(f, "k", where);
      cf.k_min = field<double>(f, "k_min", where);
      cf.k_max = field<double>(f, "k_max", where);
      s.formulation.push_back(cf);
    }
    for (const json& c : st.at("controls")) {
      strategy::ConverterSetting cs;
      cs.converter_id = field<int>(c, "converter", where);
      cs.control.mode = grid::control_mode_from_string(field<std::string>(c, "mode", where));
      cs.control.p_ref = field<double>(c, "p_ref", where);
      cs.control.u_ref = field<double>(c, "u_ref", where);
      cs.control.k_droop = field<double>(c, "k_droop", where);
      s.controls.push_back(cs);
    }
    if (s.formulation.size() != s.network->converters.size()) {
      throw Error(where + ": formulation lists " + std::to_string(s.formulation.size()) + " converters, network has " +
                  std::to_string(s.network->converters.size()));
    }
    const eq::VariableLayout layout(*s.network, s.formulation);
    const json& xj = st.at("x");
    if (xj.size() != layout.size()) throw Error(where + ": state has the wrong number of variables");
    s.x.resize(layout.size());
    for (std::size_t i = 0; i < layout.size(); ++i) {
      const std::string name = layout.slot_name(i);
      if (!xj.contains(name)) throw Error(where + ": state is missing variable " + name);
      s.x[i] = field<double>(xj, name.c_str(), where);
    }
    out.stages.push_back(std::move(s));
  }
  return out;
}

LoadedReport load_run(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read report " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run(buf.str(), path.string());
}

std::string report_file_name(const std::string& scenario, strategy::ControlMode mode) {
  std::string name = scenario + "__" + std::string(strategy::to_string(mode)) + ".json";
  for (char& ch : name) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '.' ||
                    ch == '_' || ch == '-';
    if (!ok) ch = '_';
  }
  return name;
}

}  // namespace hvdc::report
