#include "noderes/experiment.hpp"

#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "noderes/errors.hpp"
#include "noderes/io.hpp"
#include "noderes/rng.hpp"

namespace noderes {

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw ParameterError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ParameterError(where + ": unknown key '" + key + "'");
  }
}

std::string residual_name(const std::string& id) { return resolve_spec(id).name; }

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;
  c.faults = {{FaultKind::ClogBeforeDosing, 0.5, 0},
              {FaultKind::ClogOrifice, 0.5, 0},
              {FaultKind::ClogPump, 0.5, 0}};
  c.training.learning_rate = 1e-2;
  c.training.batches_per_epoch = 16;
  return c;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json faults_j = nlohmann::json::array();
  for (const auto& f : faults)
    faults_j.push_back({{"fault", to_string(f.kind)}, {"magnitude", f.magnitude}, {"onset", f.onset}});
  nlohmann::json training_j = training.to_json();
  training_j.erase("solver");
  training_j.erase("step");
  training_j.erase("seed");
  nlohmann::json solvers_j = nlohmann::json::array();
  for (Method m : solvers) solvers_j.push_back(to_string(m));
  nlohmann::json factors = analysis.step_factors;
  return {{"seed", seed},
          {"paths", {{"data", data_dir}, {"models", model_dir}, {"reports", report_dir}}},
          {"plant", plant.to_json()},
          {"step", step},
          {"lengths", {{"train", train_length}, {"val", val_length}, {"fault", fault_length}}},
          {"faults", faults_j},
          {"model", {{"hidden", hidden}}},
          {"training", training_j},
          {"seeds", seeds},
          {"residuals", residuals},
          {"solvers", solvers_j},
          {"analysis",
           {{"settle", analysis.settle},
            {"step_factors", factors},
            {"step_study_residual", analysis.step_study_residual},
            {"step_study_solver", to_string(analysis.step_study_solver)},
            {"stability_angles", analysis.stability_angles},
            {"cross_eval", analysis.cross_eval},
            {"step_study", analysis.step_study},
            {"stability", analysis.stability},
            {"scatter", analysis.scatter}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c = defaults();
  reject_unknown(j, {"seed", "paths", "plant", "step", "lengths", "faults", "model", "training",
                     "seeds", "residuals", "solvers", "analysis"},
                 "experiment config");
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      reject_unknown(p, {"data", "models", "reports"}, "paths");
      c.data_dir = p.value("data", c.data_dir);
      c.model_dir = p.value("models", c.model_dir);
      c.report_dir = p.value("reports", c.report_dir);
    }
    if (j.contains("plant")) c.plant = PlantConfig::from_json(j["plant"]);
    if (j.contains("step")) c.step = j["step"].get<double>();
    if (j.contains("lengths")) {
      const auto& l = j["lengths"];
      reject_unknown(l, {"train", "val", "fault"}, "lengths");
      c.train_length = l.value("train", c.train_length);
      c.val_length = l.value("val", c.val_length);
      c.fault_length = l.value("fault", c.fault_length);
    }
    if (j.contains("faults")) {
      c.faults.clear();
      for (const auto& f : j["faults"]) {
        reject_unknown(f, {"fault", "magnitude", "onset"}, "faults[]");
        c.faults.push_back({fault_from_string(f.at("fault").get<std::string>()),
                            f.value("magnitude", 0.5), f.value("onset", std::size_t{0})});
      }
    }
    if (j.contains("model")) {
      reject_unknown(j["model"], {"hidden"}, "model");
      c.hidden = j["model"].value("hidden", c.hidden);
    }
    if (j.contains("training")) {
      const auto& t = j["training"];
      for (const char* k : {"solver", "step", "seed"})
        if (t.contains(k))
          throw ParameterError(std::string("training.") + k +
                               " is set per run; use the top-level seed/step or --solver");
      nlohmann::json merged = c.training.to_json();
      for (const auto& [k, v] : t.items()) merged[k] = v;
      TrainConfig parsed = TrainConfig::from_json(merged);
      c.training = parsed;
    }
    if (j.contains("seeds")) c.seeds = j["seeds"].get<std::size_t>();
    if (j.contains("residuals")) c.residuals = j["residuals"].get<std::vector<std::string>>();
    if (j.contains("solvers")) {
      c.solvers.clear();
      for (const auto& s : j["solvers"]) c.solvers.push_back(method_from_string(s.get<std::string>()));
    }
    if (j.contains("analysis")) {
      const auto& a = j["analysis"];
      reject_unknown(a, {"settle", "step_factors", "step_study_residual", "step_study_solver",
                         "stability_angles", "cross_eval", "step_study", "stability", "scatter"},
                     "analysis");
      auto& o = c.analysis;
      o.settle = a.value("settle", o.settle);
      o.step_factors = a.value("step_factors", o.step_factors);
      o.step_study_residual = a.value("step_study_residual", o.step_study_residual);
      if (a.contains("step_study_solver"))
        o.step_study_solver = method_from_string(a["step_study_solver"].get<std::string>());
      o.stability_angles = a.value("stability_angles", o.stability_angles);
      o.cross_eval = a.value("cross_eval", o.cross_eval);
      o.step_study = a.value("step_study", o.step_study);
      o.stability = a.value("stability", o.stability);
      o.scatter = a.value("scatter", o.scatter);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (!(step > 0.0)) throw ParameterError("step must be positive");
  if (hidden.empty()) throw ParameterError("model.hidden needs at least one layer");
  for (auto h : hidden)
    if (h == 0) throw ParameterError("model.hidden widths must be positive");
  if (seeds == 0) throw ParameterError("seeds must be at least 1");
  if (residuals.empty()) throw ParameterError("no residuals configured");
  if (solvers.empty()) throw ParameterError("no solvers configured");
  for (const auto& f : faults)
    if (f.kind == FaultKind::None) throw ParameterError("fault list may not contain 'none'");
  for (double f : analysis.step_factors) substeps_for_factor(f);
  TrainConfig t = training;
  t.solver = SolverKind::make(Method::EF, step);
  t.validate(train_length);
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  try {
    return ExperimentConfig::from_json(read_json(path));
  } catch (const ParameterError& e) {
    throw ParameterError(path.string() + ": " + e.what());
  }
}

std::uint64_t dataset_seed(const ExperimentConfig& cfg, const std::string& role) {
  return derive_seed(cfg.seed, "data:" + role);
}

DatasetSet generate_datasets(const ExperimentConfig& cfg) {
  DatasetSet set;
  set.train = generate(cfg.plant, {}, cfg.train_length, cfg.step, dataset_seed(cfg, "train"));
  set.val = generate(cfg.plant, {}, cfg.val_length, cfg.step, dataset_seed(cfg, "val"));
  for (const auto& f : cfg.faults)
    set.faults.push_back(
        generate(cfg.plant, f, cfg.fault_length, cfg.step, dataset_seed(cfg, "fault:" + f.label())));
  return set;
}

std::filesystem::path train_path(const std::filesystem::path& d) { return d / "train.csv"; }
std::filesystem::path val_path(const std::filesystem::path& d) { return d / "val.csv"; }
std::filesystem::path fault_path(const std::filesystem::path& d, const FaultScenario& s) {
  return d / ("fault_" + s.label() + ".csv");
}

std::vector<std::filesystem::path> write_datasets(const std::filesystem::path& data_dir,
                                                  const ExperimentConfig& cfg,
                                                  const DatasetSet& set) {
  std::vector<std::filesystem::path> out{train_path(data_dir), val_path(data_dir)};
  write_dataset(out[0], set.train);
  write_dataset(out[1], set.val);
  for (std::size_t i = 0; i < cfg.faults.size(); ++i) {
    out.push_back(fault_path(data_dir, cfg.faults[i]));
    write_dataset(out.back(), set.faults[i]);
  }
  return out;
}

DatasetSet load_datasets(const std::filesystem::path& data_dir, const ExperimentConfig& cfg) {
  DatasetSet set;
  set.train = read_dataset(train_path(data_dir));
  set.val = read_dataset(val_path(data_dir));
  for (const auto& f : cfg.faults) set.faults.push_back(read_dataset(fault_path(data_dir, f)));
  return set;
}

TrainConfig train_config_for(const ExperimentConfig& cfg, const std::string& residual,
                             Method solver) {
  TrainConfig t = cfg.training;
  t.solver = SolverKind::make(solver, cfg.step);
  t.seed = derive_seed(cfg.seed, "train:" + residual_name(residual) + ":" + to_string(solver));
  return t;
}

BestOfSeeds train_combination(const ExperimentConfig& cfg, const std::string& residual,
                              Method solver, const DatasetSet& data) {
  return train_best_of(resolve_spec(residual), cfg.hidden, data.train, data.val,
                       train_config_for(cfg, residual, solver), cfg.seeds);
}

std::filesystem::path model_path(const std::filesystem::path& d, const std::string& residual,
                                 Method solver) {
  return d / (residual_name(residual) + "_" + to_string(solver) + ".json");
}

std::filesystem::path history_path(const std::filesystem::path& d, const std::string& residual,
                                   Method solver) {
  return d / (residual_name(residual) + "_" + to_string(solver) + ".history.csv");
}

void save_training(const std::filesystem::path& model_dir, const std::string& residual,
                   Method solver, const BestOfSeeds& result) {
  save_model(model_path(model_dir, residual, solver), result.best.model);
  write_file_atomic(history_path(model_dir, residual, solver), history_to_csv(result.best.history));
}

std::string table_row(const std::string& residual, Method solver, const TrainResult& r) {
  const double tl = r.history.empty() ? std::numeric_limits<double>::quiet_NaN() : r.history.back().train_loss;
  const double vl = r.history.empty() ? r.initial_val_loss : r.history.back().val_loss;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-4s %-4s train %.3e  val %.3e", residual_name(residual).c_str(),
                to_string(solver), tl, vl);
  return buf;
}

ModelGrid load_models(const std::filesystem::path& model_dir, const ExperimentConfig& cfg) {
  ModelGrid grid;
  std::vector<std::string> missing;
  for (const auto& r : cfg.residuals)
    for (Method m : cfg.solvers) {
      const auto p = model_path(model_dir, r, m);
      if (!std::filesystem::exists(p)) {
        missing.push_back(residual_name(r) + "/" + to_string(m));
        continue;
      }
      grid.emplace(std::make_pair(residual_name(r), m), load_model(p));
    }
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
    throw IoError("missing trained models in " + model_dir.string() + ": " + list +
                  " (run `noderes train` first)");
  }
  return grid;
}

std::pair<double, double> read_history_tail(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line, last;
  std::getline(in, line);  // header
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  if (last.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const auto c1 = last.find(','), c2 = last.find(',', c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos)
    throw IoError(path.string() + ": malformed history row '" + last + "'");
  return {std::stod(last.substr(c1 + 1, c2 - c1 - 1)), std::stod(last.substr(c2 + 1))};
}

Report build_report(const ExperimentConfig& cfg, const ModelGrid& models, const DatasetSet& data,
                    const std::map<std::pair<std::string, Method>, std::pair<double, double>>& histories) {
  Report rep;
  const std::size_t settle = cfg.analysis.settle;
  for (const auto& r : cfg.residuals) {
    const std::string name = residual_name(r);
    for (Method m : cfg.solvers) {
      const auto& model = models.at({name, m});
      TrainingSummaryRow row;
      row.residual = name;
      row.solver = m;
      row.seed = model.provenance ? model.provenance->seed : 0;
      if (auto it = histories.find({name, m}); it != histories.end()) {
        row.train_loss = it->second.first;
        row.val_loss = it->second.second;
      }
      row.val_mse = evaluate(model, SolverKind::make(m, data.val.step()), data.val, settle);
      rep.training.push_back(row);
    }
    if (cfg.analysis.cross_eval) {
      std::map<Method, ResidualModel> per;
      for (Method m : cfg.solvers) per.emplace(m, models.at({name, m}));
      rep.cross_eval.push_back(cross_eval(per, data.val, settle));
    }
  }
  if (cfg.analysis.step_study) {
    auto it = models.find({residual_name(cfg.analysis.step_study_residual), cfg.analysis.step_study_solver});
    if (it == models.end())
      throw AnalysisError("step study model " + cfg.analysis.step_study_residual + "/" +
                          to_string(cfg.analysis.step_study_solver) + " is not part of the experiment");
    rep.step_study = step_size_study(it->second, data.val, cfg.analysis.step_factors, Method::EF, settle);
  }
  if (cfg.analysis.stability)
    for (Method m : kAllMethods) rep.stability.push_back(stability_region(m, cfg.analysis.stability_angles));
  if (cfg.analysis.scatter) {
    std::vector<ScatterScenario> scenarios{{"nominal", &data.val}};
    for (std::size_t i = 0; i < cfg.faults.size(); ++i)
      scenarios.push_back({cfg.faults[i].label(), &data.faults[i]});
    for (Method m : cfg.solvers) {
      std::vector<ResidualModel> ms;
      for (const auto& r : cfg.residuals) ms.push_back(models.at({residual_name(r), m}));
      rep.scatter.emplace(m, fault_scatter(ms, SolverKind::make(m, data.val.step()), scenarios, settle));
    }
  }
  return rep;
}

std::string training_summary_csv(std::span<const TrainingSummaryRow> rows) {
  std::string out = "residual,solver,seed,train_loss,val_loss,val_mse,diverged\n";
  for (const auto& r : rows)
    out += r.residual + "," + to_string(r.solver) + "," + std::to_string(r.seed) + "," +
           format_double(r.train_loss) + "," + format_double(r.val_loss) + "," +
           (r.val_mse.diverged ? std::string() : format_double(r.val_mse.mse)) + "," +
           (r.val_mse.diverged ? "1" : "0") + "\n";
  return out;
}

nlohmann::json write_report(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                            const Report& report, const ModelGrid& models) {
  nlohmann::json files = nlohmann::json::array();
  const auto put = [&](const std::string& name, const std::string& kind, const std::string& text) {
    write_file_atomic(dir / name, text);
    files.push_back({{"path", name}, {"kind", kind}});
  };
  put("training_summary.csv", "training-summary", training_summary_csv(report.training));
  if (!report.cross_eval.empty()) put("cross_eval.csv", "cross-eval", cross_eval_csv(report.cross_eval));
  if (!report.step_study.empty())
    put("step_study.csv", "step-study",
        step_study_csv(residual_name(cfg.analysis.step_study_residual), report.step_study));
  if (!report.stability.empty()) {
    put("stability.csv", "stability", stability_csv(report.stability));
    put("stability_boundary.csv", "stability-boundary", stability_boundary_csv(report.stability));
  }
  for (const auto& [m, fs] : report.scatter) {
    put(std::string("scatter_") + to_string(m) + ".csv", "scatter", scatter_csv(fs));
    put(std::string("scatter_summary_") + to_string(m) + ".csv", "scatter-summary", scatter_summary_csv(fs));
  }
  nlohmann::json models_j = nlohmann::json::array();
  for (const auto& [key, model] : models) {
    nlohmann::json entry = {{"residual", key.first},
                            {"solver", to_string(key.second)},
                            {"path", model_path(cfg.model_dir, key.first, key.second).generic_string()}};
    if (model.provenance) {
      entry["seed"] = model.provenance->seed;
      entry["config_hash"] = config_hash(model.provenance->config);
    }
    models_j.push_back(entry);
  }
  nlohmann::json datasets = nlohmann::json::array();
  datasets.push_back({{"role", "train"}, {"seed", dataset_seed(cfg, "train")}});
  datasets.push_back({{"role", "val"}, {"seed", dataset_seed(cfg, "val")}});
  for (const auto& f : cfg.faults)
    datasets.push_back({{"role", "fault:" + f.label()}, {"seed", dataset_seed(cfg, "fault:" + f.label())}});
  nlohmann::json manifest = {{"seed", cfg.seed},
                             {"config_hash", cfg.hash()},
                             {"config", cfg.to_json()},
                             {"datasets", datasets},
                             {"models", models_j},
                             {"files", files}};
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

}  // namespace noderes
