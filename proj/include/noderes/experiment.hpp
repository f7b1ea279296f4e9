#pragma once

// Experiment orchestration shared by the command-line tool and the acceptance
// suite: one JSON config, one global seed, named per-stage seed derivations.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "noderes/analysis.hpp"
#include "noderes/dataset.hpp"
#include "noderes/io.hpp"
#include "noderes/plant.hpp"
#include "noderes/residual.hpp"
#include "noderes/training.hpp"

namespace noderes {

struct AnalysisOptions {
  std::size_t settle = kDefaultSettle;
  std::vector<double> step_factors{1.0, 0.5};
  std::string step_study_residual = "r1";
  Method step_study_solver = Method::RK4;  // training solver of the studied model
  std::size_t stability_angles = 360;
  bool cross_eval = true;
  bool step_study = true;
  bool stability = true;
  bool scatter = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 20240601;
  std::string data_dir = "data";
  std::string model_dir = "models";
  std::string report_dir = "reports";
  PlantConfig plant;
  double step = 0.2;
  std::size_t train_length = 4600;
  std::size_t val_length = 2300;
  std::size_t fault_length = 2300;
  std::vector<FaultScenario> faults;
  std::vector<std::size_t> hidden{128, 128};
  TrainConfig training;  // solver and seed are filled in per run
  std::size_t seeds = 3;
  std::vector<std::string> residuals{"r1", "r2", "r3"};
  std::vector<Method> solvers{Method::EF, Method::MP, Method::RK4};
  AnalysisOptions analysis;

  static ExperimentConfig defaults();
  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;
  std::string hash() const { return config_hash(to_json()); }
};

ExperimentConfig load_experiment(const std::filesystem::path& path);

// --- data -------------------------------------------------------------------

struct DatasetSet {
  Dataset train;
  Dataset val;
  std::vector<Dataset> faults;  // same order as config.faults
};

std::uint64_t dataset_seed(const ExperimentConfig& cfg, const std::string& role);
DatasetSet generate_datasets(const ExperimentConfig& cfg);

std::filesystem::path train_path(const std::filesystem::path& data_dir);
std::filesystem::path val_path(const std::filesystem::path& data_dir);
std::filesystem::path fault_path(const std::filesystem::path& data_dir, const FaultScenario& s);

// Returns the written CSV paths.
std::vector<std::filesystem::path> write_datasets(const std::filesystem::path& data_dir,
                                                  const ExperimentConfig& cfg,
                                                  const DatasetSet& set);
DatasetSet load_datasets(const std::filesystem::path& data_dir, const ExperimentConfig& cfg);

// --- training ---------------------------------------------------------------

TrainConfig train_config_for(const ExperimentConfig& cfg, const std::string& residual,
                             Method solver);

BestOfSeeds train_combination(const ExperimentConfig& cfg, const std::string& residual,
                              Method solver, const DatasetSet& data);

std::filesystem::path model_path(const std::filesystem::path& model_dir, const std::string& residual,
                                 Method solver);
std::filesystem::path history_path(const std::filesystem::path& model_dir,
                                   const std::string& residual, Method solver);

// Archive plus loss-history CSV.
void save_training(const std::filesystem::path& model_dir, const std::string& residual,
                   Method solver, const BestOfSeeds& result);

// One formatted line: residual, solver, final train loss, final validation loss.
std::string table_row(const std::string& residual, Method solver, const TrainResult& r);

// --- report -----------------------------------------------------------------

using ModelGrid = std::map<std::pair<std::string, Method>, ResidualModel>;

// Throws IoError listing every absent (residual, solver) archive.
ModelGrid load_models(const std::filesystem::path& model_dir, const ExperimentConfig& cfg);

struct TrainingSummaryRow {
  std::string residual;
  Method solver = Method::EF;
  std::uint64_t seed = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  EvalOutcome val_mse;
};

struct Report {
  std::vector<TrainingSummaryRow> training;
  std::vector<CrossEvalMatrix> cross_eval;
  std::vector<StepStudyRow> step_study;
  std::vector<StabilityRegion> stability;
  std::map<Method, FaultScatter> scatter;  // keyed by the shared training/evaluation solver
};

// `histories` maps a combination to its final-epoch train and validation losses.
Report build_report(const ExperimentConfig& cfg, const ModelGrid& models, const DatasetSet& data,
                    const std::map<std::pair<std::string, Method>, std::pair<double, double>>& histories);

std::string training_summary_csv(std::span<const TrainingSummaryRow> rows);

// Writes every CSV plus manifest.json; returns the manifest.
nlohmann::json write_report(const std::filesystem::path& report_dir, const ExperimentConfig& cfg,
                            const Report& report, const ModelGrid& models);

// Final-epoch (train_loss, val_loss) from a history CSV.
std::pair<double, double> read_history_tail(const std::filesystem::path& path);

}  // namespace noderes
