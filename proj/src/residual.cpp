#include "noderes/residual.hpp"

#include <algorithm>
#include <set>

#include "noderes/errors.hpp"
#include "noderes/io.hpp"
#include "noderes/rng.hpp"

namespace noderes {

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t comma = s.find(',', pos);
    if (comma == std::string_view::npos) comma = s.size();
    std::string item = trim(s.substr(pos, comma - pos));
    if (!item.empty()) out.push_back(item);
    pos = comma + 1;
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + v[i];
  return out;
}

std::string default_estimate(const std::string& state) {
  const std::string candidate = "y_" + state;
  return is_signal(candidate) ? candidate : std::string();
}

}  // namespace

void ResidualSpec::validate() const {
  const std::string who = "residual '" + name + "': ";
  if (states.empty()) throw SpecError(who + "at least one state is required");
  std::set<std::string> seen;
  for (const auto& s : states) {
    if (s.empty()) throw SpecError(who + "empty state name");
    if (is_signal(s)) throw SpecError(who + "state '" + s + "' clashes with a signal name");
    if (!seen.insert(s).second) throw SpecError(who + "state '" + s + "' declared twice");
  }
  if (g_inputs.size() != states.size())
    throw SpecError(who + "every state needs a g_inputs entry");
  if (estimates.size() != states.size())
    throw SpecError(who + "every state needs an estimate signal");
  const auto resolvable = [&](const std::string& n) {
    return contains(states, n) || (is_signal(n) && n != "t");
  };
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (g_inputs[i].empty()) throw SpecError(who + "g_inputs." + states[i] + " is empty");
    for (const auto& n : g_inputs[i])
      if (!resolvable(n))
        throw SpecError(who + "g_inputs." + states[i] + " names unknown signal or state '" + n + "'");
    if (!is_signal(estimates[i]) || estimates[i] == "t")
      throw SpecError(who + "estimate." + states[i] + " must name a measured signal, got '" +
                      estimates[i] + "'");
  }
  if (h_inputs.empty()) throw SpecError(who + "h_inputs is empty");
  for (const auto& n : h_inputs)
    if (!resolvable(n)) throw SpecError(who + "h_inputs names unknown signal or state '" + n + "'");
  if (!is_signal(reference) || reference == "t")
    throw SpecError(who + "reference must name a measured signal, got '" + reference + "'");
  if (contains(h_inputs, reference))
    throw SpecError(who + "reference '" + reference + "' must not be an input to h");
}

nlohmann::json ResidualSpec::to_json() const {
  nlohmann::json g = nlohmann::json::object(), est = nlohmann::json::object();
  for (std::size_t i = 0; i < states.size(); ++i) {
    g[states[i]] = g_inputs[i];
    est[states[i]] = estimates[i];
  }
  return {{"name", name},   {"states", states},     {"g_inputs", g},
          {"estimate", est}, {"h_inputs", h_inputs}, {"reference", reference}};
}

ResidualSpec ResidualSpec::from_json(const nlohmann::json& j) {
  ResidualSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    s.states = j.at("states").get<std::vector<std::string>>();
    for (const auto& st : s.states) {
      s.g_inputs.push_back(j.at("g_inputs").at(st).get<std::vector<std::string>>());
      s.estimates.push_back(j.at("estimate").at(st).get<std::string>());
    }
    s.h_inputs = j.at("h_inputs").get<std::vector<std::string>>();
    s.reference = j.at("reference").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed residual spec: ") + e.what());
  }
  s.validate();
  return s;
}

std::vector<ResidualSpec> builtin_specs() {
  ResidualSpec r1{"r1", {"p_du"}, {{"p_du", "y_p_ap", "DC"}}, {"y_p_du"}, {"p_du"}, "y_p_du"};
  ResidualSpec r2{"r2",
                  {"p_ap", "p_bp"},
                  {{"p_ap", "p_bp", "y_p_du", "n_p"}, {"p_ap", "p_bp", "y_p_tp", "n_p"}},
                  {"y_p_ap", "y_p_tp"},
                  {"p_ap"},
                  "y_p_ap"};
  ResidualSpec r3{"r3",
                  {"p_du", "p_ap", "p_bp"},
                  {{"p_du", "y_p_ap", "DC"},
                   {"p_ap", "p_bp", "p_du", "n_p"},
                   {"p_ap", "p_bp", "y_p_tp", "n_p"}},
                  {"y_p_du", "y_p_ap", "y_p_tp"},
                  {"p_du"},
                  "y_p_du"};
  return {r1, r2, r3};
}

ResidualSpec builtin_spec(std::string_view id) {
  for (auto& s : builtin_specs())
    if (s.name == id) return s;
  throw SpecError("unknown built-in residual '" + std::string(id) + "' (expected r1, r2 or r3)");
}

ResidualSpec parse_spec(std::string_view text, const std::string& source) {
  ResidualSpec spec;
  std::map<std::string, std::vector<std::string>> g_by_state;
  std::map<std::string, std::string> est_by_state;
  std::set<std::string> keys;
  bool have_states = false, have_h = false, have_ref = false;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    if (auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw SpecError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (!keys.insert(key).second) throw SpecError(where + "duplicate key '" + key + "'");
    if (key == "name") {
      spec.name = value;
    } else if (key == "states") {
      spec.states = split_list(value);
      have_states = true;
    } else if (key.rfind("g_inputs.", 0) == 0) {
      g_by_state[key.substr(9)] = split_list(value);
    } else if (key.rfind("estimate.", 0) == 0) {
      est_by_state[key.substr(9)] = value;
    } else if (key == "h_inputs") {
      spec.h_inputs = split_list(value);
      have_h = true;
    } else if (key == "reference") {
      spec.reference = value;
      have_ref = true;
    } else {
      throw SpecError(where + "unknown key '" + key +
                      "' (allowed: name, states, g_inputs.<state>, estimate.<state>, h_inputs, "
                      "reference)");
    }
  }
  if (!have_states) throw SpecError(source + ": missing key 'states'");
  if (!have_h) throw SpecError(source + ": missing key 'h_inputs'");
  if (!have_ref) throw SpecError(source + ": missing key 'reference'");
  if (spec.name.empty()) spec.name = std::filesystem::path(source).stem().string();
  for (const auto& [state, _] : g_by_state)
    if (!contains(spec.states, state))
      throw SpecError(source + ": g_inputs." + state + " refers to an undeclared state");
  for (const auto& [state, _] : est_by_state)
    if (!contains(spec.states, state))
      throw SpecError(source + ": estimate." + state + " refers to an undeclared state");
  for (const auto& st : spec.states) {
    auto it = g_by_state.find(st);
    if (it == g_by_state.end()) throw SpecError(source + ": missing key 'g_inputs." + st + "'");
    spec.g_inputs.push_back(it->second);
    auto est = est_by_state.find(st);
    std::string e = est != est_by_state.end() ? est->second : default_estimate(st);
    if (e.empty())
      throw SpecError(source + ": state '" + st + "' has no measured counterpart; add 'estimate." +
                      st + " = <signal>'");
    spec.estimates.push_back(e);
  }
  try {
    spec.validate();
  } catch (const SpecError& e) {
    throw SpecError(source + ": " + e.what());
  }
  return spec;
}

std::string format_spec(const ResidualSpec& spec) {
  std::string out = "name = " + spec.name + "\nstates = " + join(spec.states) + "\n";
  for (std::size_t i = 0; i < spec.states.size(); ++i) {
    out += "g_inputs." + spec.states[i] + " = " + join(spec.g_inputs[i]) + "\n";
    out += "estimate." + spec.states[i] + " = " + spec.estimates[i] + "\n";
  }
  out += "h_inputs = " + join(spec.h_inputs) + "\nreference = " + spec.reference + "\n";
  return out;
}

ResidualSpec resolve_spec(const std::string& id_or_path) {
  if (id_or_path == "r1" || id_or_path == "r2" || id_or_path == "r3") return builtin_spec(id_or_path);
  if (!std::filesystem::exists(id_or_path))
    throw SpecError("residual '" + id_or_path + "' is neither r1/r2/r3 nor an existing spec file");
  return parse_spec(read_file(id_or_path), id_or_path);
}

Wiring compile_wiring(const ResidualSpec& spec) {
  spec.validate();
  Wiring w;
  const auto source = [&](const std::string& n) {
    auto st = std::find(spec.states.begin(), spec.states.end(), n);
    if (st != spec.states.end())
      return InputSource{true, static_cast<std::size_t>(st - spec.states.begin())};
    auto sig = std::find(w.signals.begin(), w.signals.end(), n);
    if (sig == w.signals.end()) {
      w.signals.push_back(n);
      sig = w.signals.end() - 1;
    }
    return InputSource{false, static_cast<std::size_t>(sig - w.signals.begin())};
  };
  for (const auto& inputs : spec.g_inputs) {
    std::vector<InputSource> srcs;
    for (const auto& n : inputs) srcs.push_back(source(n));
    w.g.push_back(std::move(srcs));
  }
  for (const auto& n : spec.h_inputs) w.h.push_back(source(n));
  return w;
}

std::vector<const MlpParams*> ResidualModel::networks() const {
  std::vector<const MlpParams*> out;
  for (const auto& n : g) out.push_back(&n);
  out.push_back(&h);
  return out;
}

std::vector<MlpParams*> ResidualModel::networks() {
  std::vector<MlpParams*> out;
  for (auto& n : g) out.push_back(&n);
  out.push_back(&h);
  return out;
}

std::size_t ResidualModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : networks()) n += p->parameter_count();
  return n;
}

SignalStats ResidualModel::stats_for(const std::string& signal) const {
  auto it = normalization.find(signal);
  if (it == normalization.end()) return {};
  SignalStats s = it->second;
  if (!(s.stddev > 0.0)) s.stddev = 1.0;
  return s;
}

ResidualModel build_model(const ResidualSpec& spec, std::span<const std::size_t> hidden,
                          std::uint64_t seed) {
  if (hidden.empty()) throw ParameterError("hidden layout must contain at least one layer");
  ResidualModel m;
  m.spec = spec;
  m.wiring = compile_wiring(spec);
  Rng rng(seed);
  const auto widths = [&](std::size_t in) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(1);
    return w;
  };
  // Derivative heads start at a tenth of the Glorot scale: near-neutral initial
  // dynamics keep coupled multi-state models from blowing up in the first windows.
  for (const auto& inputs : m.wiring.g) {
    MlpParams net = MlpParams::glorot(widths(inputs.size()), rng);
    for (double& w : net.weight(net.layers().size() - 1)) w *= kDerivativeHeadScale;
    m.g.push_back(std::move(net));
  }
  m.h = MlpParams::glorot(widths(m.wiring.h.size()), rng);
  return m;
}

PreparedData prepare(const ResidualModel& model, const Dataset& data) {
  PreparedData p;
  p.rows = data.size();
  p.width = model.wiring.signals.size();
  p.inputs.resize(p.rows * p.width);
  for (std::size_t c = 0; c < p.width; ++c) {
    const auto& name = model.wiring.signals[c];
    const auto& col = data.column(name);
    const SignalStats s = model.stats_for(name);
    for (std::size_t k = 0; k < p.rows; ++k) p.inputs[k * p.width + c] = (col[k] - s.mean) / s.stddev;
  }
  const auto& ref = data.column(model.spec.reference);
  const SignalStats rs = model.reference_stats();
  p.reference_raw = ref;
  p.reference.resize(p.rows);
  for (std::size_t k = 0; k < p.rows; ++k) p.reference[k] = (ref[k] - rs.mean) / rs.stddev;
  return p;
}

namespace {

double eval_network(const MlpParams& net, const std::vector<InputSource>& srcs,
                    std::span<const double> x, std::span<const double> u) {
  double in[16];
  std::vector<double> big;
  double* buf = in;
  if (srcs.size() > 16) {
    big.resize(srcs.size());
    buf = big.data();
  }
  for (std::size_t i = 0; i < srcs.size(); ++i) buf[i] = srcs[i].from_state ? x[srcs[i].index] : u[srcs[i].index];
  std::vector<double> record(net.record_size());
  forward_record(net, std::span<const double>(buf, srcs.size()), record);
  return record_output(net, record)[0];
}

}  // namespace

Vec model_derivative(const ResidualModel& model, std::span<const double> x,
                     std::span<const double> u) {
  Vec dx(model.g.size());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = eval_network(model.g[i], model.wiring.g[i], x, u);
  return dx;
}

double model_output(const ResidualModel& model, std::span<const double> x,
                    std::span<const double> u) {
  return eval_network(model.h, model.wiring.h, x, u);
}

ResidualRun residual_sequence(const ResidualModel& model, const SolverKind& solver,
                              const Dataset& data, std::optional<std::vector<double>> x0,
                              int substeps) {
  for (const auto& s : model.wiring.signals)
    if (!is_signal(s)) throw SpecError("dataset lacks signal '" + s + "'");
  const PreparedData p = prepare(model, data);
  std::vector<Vec> inputs(p.rows);
  for (std::size_t k = 0; k < p.rows; ++k) inputs[k].assign(p.row(k).begin(), p.row(k).end());
  std::vector<double> start = x0 ? *x0 : std::vector<double>(model.state_count(), 0.0);
  if (start.size() != model.state_count())
    throw StructuralError("initial state width does not match the model's state count");

  const Derivative f = [&](std::span<const double> x, std::span<const double> u) {
    return model_derivative(model, x, u);
  };
  const OutputMap h = [&](std::span<const double> x, std::span<const double> u) {
    return Vec{model_output(model, x, u)};
  };
  Trajectory traj = simulate(f, h, solver, start, inputs, substeps);

  const SignalStats rs = model.reference_stats();
  ResidualRun run;
  run.diverged_at = traj.diverged_at;
  run.states = std::move(traj.states);
  run.r.resize(traj.outputs.size());
  run.predicted.resize(traj.outputs.size());
  for (std::size_t k = 0; k < traj.outputs.size(); ++k) {
    run.predicted[k] = rs.mean + rs.stddev * traj.outputs[k][0];
    run.r[k] = run.predicted[k] - p.reference_raw[k];
  }
  return run;
}

nlohmann::json model_to_json(const ResidualModel& model) {
  nlohmann::json g = nlohmann::json::array();
  for (const auto& net : model.g) g.push_back(mlp_to_json(net));
  nlohmann::json norm = nlohmann::json::object();
  for (const auto& [name, s] : model.normalization) norm[name] = {{"mean", s.mean}, {"std", s.stddev}};
  nlohmann::json j = {{"format", "noderes.residual-model"},
                      {"version", 1},
                      {"spec", model.spec.to_json()},
                      {"networks", {{"g", g}, {"h", mlp_to_json(model.h)}}},
                      {"normalization", norm}};
  if (model.provenance) {
    const auto& p = *model.provenance;
    j["provenance"] = {{"solver", p.solver},
                       {"step", p.step},
                       {"seed", p.seed},
                       {"normalization", p.normalization},
                       {"config", p.config}};
  }
  return j;
}

ResidualModel model_from_json(const nlohmann::json& j) {
  ResidualModel m;
  try {
    if (j.at("format").get<std::string>() != "noderes.residual-model")
      throw StructuralError("not a residual model archive");
    m.spec = ResidualSpec::from_json(j.at("spec"));
    m.wiring = compile_wiring(m.spec);
    for (const auto& net : j.at("networks").at("g")) m.g.push_back(mlp_from_json(net));
    m.h = mlp_from_json(j.at("networks").at("h"));
    for (const auto& [name, s] : j.at("normalization").items())
      m.normalization[name] = {s.at("mean").get<double>(), s.at("std").get<double>()};
    if (j.contains("provenance")) {
      const auto& p = j.at("provenance");
      m.provenance = Provenance{p.at("solver").get<std::string>(), p.at("step").get<double>(),
                                p.at("seed").get<std::uint64_t>(),
                                p.at("normalization").get<std::string>(), p.at("config")};
    }
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("malformed model archive: ") + e.what());
  }
  if (m.g.size() != m.spec.states.size())
    throw StructuralError("model archive has " + std::to_string(m.g.size()) +
                          " derivative networks for " + std::to_string(m.spec.states.size()) + " states");
  for (std::size_t i = 0; i < m.g.size(); ++i)
    if (m.g[i].input_width() != m.wiring.g[i].size() || m.g[i].output_width() != 1)
      throw StructuralError("network g." + m.spec.states[i] + " does not match its wiring");
  if (m.h.input_width() != m.wiring.h.size() || m.h.output_width() != 1)
    throw StructuralError("network h does not match its wiring");
  return m;
}

void save_model(const std::filesystem::path& path, const ResidualModel& model) {
  write_json(path, model_to_json(model));
}

ResidualModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("model archive not found: " + path.string());
  return model_from_json(read_json(path));
}

}  // namespace noderes
