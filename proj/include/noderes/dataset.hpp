#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace noderes {

// Canonical column order of every dataset file.
inline const std::array<std::string, 6> kSignalNames{"t",   "y_p_tp", "y_p_ap",
                                                     "y_p_du", "n_p", "DC"};

enum class FaultKind { None, ClogBeforeDosing, ClogOrifice, ClogPump, ClogDosing, SensorAp, SensorDu };

// Labels used in files and on the command line: none, f_A_du, f_A_ori, f_A_p,
// f_A_dose, f_y_ap, f_p_du.
const char* to_string(FaultKind kind);
FaultKind fault_from_string(const std::string& name);
bool is_clogging(FaultKind kind);

struct FaultScenario {
  FaultKind kind = FaultKind::None;
  double magnitude = 0.0;  // area fraction for clogging, kPa offset for sensor faults
  std::size_t onset = 0;   // first affected sample

  std::string label() const;
  bool nominal() const { return kind == FaultKind::None || magnitude == 0.0; }

  friend bool operator==(const FaultScenario&, const FaultScenario&) = default;
};

struct SignalStats {
  double mean = 0.0;
  double stddev = 1.0;
  friend bool operator==(const SignalStats&, const SignalStats&) = default;
};

struct SignalFrame {
  double t, y_p_tp, y_p_ap, y_p_du, n_p, DC;
};

// Uniformly sampled signal frames stored column-wise in kSignalNames order.
class Dataset {
 public:
  Dataset() = default;
  Dataset(double step, std::array<std::vector<double>, 6> columns, FaultScenario scenario,
          std::uint64_t seed);

  double step() const { return step_; }
  std::size_t size() const { return columns_[0].size(); }
  const FaultScenario& scenario() const { return scenario_; }
  std::uint64_t seed() const { return seed_; }

  // Throws SpecError for an unknown signal name.
  const std::vector<double>& column(std::string_view name) const;
  std::vector<double>& mutable_column(std::string_view name);
  SignalFrame frame(std::size_t k) const;

  // Per-signal population mean/std of every column except t.
  const std::map<std::string, SignalStats>& stats() const { return stats_; }
  void recompute_stats();

  // Contiguous rows [begin, begin + length).
  Dataset slice(std::size_t begin, std::size_t length) const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  double step_ = 0.0;
  std::array<std::vector<double>, 6> columns_{};
  std::map<std::string, SignalStats> stats_;
  FaultScenario scenario_{};
  std::uint64_t seed_ = 0;
};

std::size_t signal_index(std::string_view name);  // throws SpecError if unknown
bool is_signal(std::string_view name);

// First index of the trailing run of DC == 0 samples (size() if the last sample doses).
std::size_t dosing_off_start(const Dataset& data);

// CSV: header "t,y_p_tp,y_p_ap,y_p_du,n_p,DC", one frame per row, %.17g values.
std::string dataset_to_csv(const Dataset& data);
Dataset dataset_from_csv(std::string_view text, const std::string& source = "<memory>");

nlohmann::json dataset_sidecar(const Dataset& data);

// Writes <path> and <path minus .csv>.stats.json atomically.
void write_dataset(const std::filesystem::path& csv_path, const Dataset& data);
// Reads the CSV and, when present, scenario metadata from the sidecar.
Dataset read_dataset(const std::filesystem::path& csv_path);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

}  // namespace noderes
