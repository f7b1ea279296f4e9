#include "noderes/dataset.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "noderes/errors.hpp"
#include "noderes/io.hpp"

namespace noderes {

const char* to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::None: return "none";
    case FaultKind::ClogBeforeDosing: return "f_A_du";
    case FaultKind::ClogOrifice: return "f_A_ori";
    case FaultKind::ClogPump: return "f_A_p";
    case FaultKind::ClogDosing: return "f_A_dose";
    case FaultKind::SensorAp: return "f_y_ap";
    case FaultKind::SensorDu: return "f_p_du";
  }
  return "?";
}

FaultKind fault_from_string(const std::string& name) {
  for (FaultKind k : {FaultKind::None, FaultKind::ClogBeforeDosing, FaultKind::ClogOrifice,
                      FaultKind::ClogPump, FaultKind::ClogDosing, FaultKind::SensorAp,
                      FaultKind::SensorDu})
    if (name == to_string(k)) return k;
  throw ParameterError("unknown fault '" + name +
                       "' (expected none, f_A_du, f_A_ori, f_A_p, f_A_dose, f_y_ap or f_p_du)");
}

bool is_clogging(FaultKind kind) {
  return kind == FaultKind::ClogBeforeDosing || kind == FaultKind::ClogOrifice ||
         kind == FaultKind::ClogPump || kind == FaultKind::ClogDosing;
}

std::string FaultScenario::label() const {
  return nominal() ? std::string("nominal") : std::string(to_string(kind));
}

std::size_t signal_index(std::string_view name) {
  for (std::size_t i = 0; i < kSignalNames.size(); ++i)
    if (kSignalNames[i] == name) return i;
  throw SpecError("unknown signal '" + std::string(name) + "'");
}

bool is_signal(std::string_view name) {
  for (const auto& s : kSignalNames)
    if (s == name) return true;
  return false;
}

Dataset::Dataset(double step, std::array<std::vector<double>, 6> columns, FaultScenario scenario,
                 std::uint64_t seed)
    : step_(step), columns_(std::move(columns)), scenario_(scenario), seed_(seed) {
  for (const auto& c : columns_)
    if (c.size() != columns_[0].size()) throw StructuralError("dataset columns differ in length");
  if (columns_[0].empty()) throw ParameterError("dataset must contain at least one frame");
  recompute_stats();
}

const std::vector<double>& Dataset::column(std::string_view name) const {
  return columns_[signal_index(name)];
}

std::vector<double>& Dataset::mutable_column(std::string_view name) {
  return columns_[signal_index(name)];
}

SignalFrame Dataset::frame(std::size_t k) const {
  return {columns_[0].at(k), columns_[1][k], columns_[2][k], columns_[3][k], columns_[4][k],
          columns_[5][k]};
}

void Dataset::recompute_stats() {
  stats_.clear();
  for (std::size_t c = 1; c < columns_.size(); ++c) {
    const auto& col = columns_[c];
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    var /= static_cast<double>(col.size());
    stats_[kSignalNames[c]] = {mean, std::sqrt(var)};
  }
}

Dataset Dataset::slice(std::size_t begin, std::size_t length) const {
  if (begin + length > size() || length == 0) throw ParameterError("slice outside dataset");
  std::array<std::vector<double>, 6> cols;
  for (std::size_t c = 0; c < cols.size(); ++c)
    cols[c].assign(columns_[c].begin() + static_cast<std::ptrdiff_t>(begin),
                   columns_[c].begin() + static_cast<std::ptrdiff_t>(begin + length));
  FaultScenario sc = scenario_;
  sc.onset = sc.onset > begin ? sc.onset - begin : 0;
  return Dataset(step_, std::move(cols), sc, seed_);
}

std::size_t dosing_off_start(const Dataset& data) {
  const auto& dc = data.column("DC");
  std::size_t k = dc.size();
  while (k > 0 && dc[k - 1] == 0.0) --k;
  return k;
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out;
  out.reserve(data.size() * 6 * 20 + 64);
  for (std::size_t c = 0; c < kSignalNames.size(); ++c) {
    if (c) out += ',';
    out += kSignalNames[c];
  }
  out += '\n';
  for (std::size_t k = 0; k < data.size(); ++k) {
    for (std::size_t c = 0; c < kSignalNames.size(); ++c) {
      if (c) out += ',';
      out += format_double(data.column(kSignalNames[c])[k]);
    }
    out += '\n';
  }
  return out;
}

Dataset dataset_from_csv(std::string_view text, const std::string& source) {
  std::array<std::vector<double>, 6> cols;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool header_seen = false;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      std::string expected;
      for (std::size_t c = 0; c < kSignalNames.size(); ++c) expected += (c ? "," : "") + kSignalNames[c];
      if (line != expected)
        throw IoError(source + ": header must be '" + expected + "', found '" + std::string(line) + "'");
      header_seen = true;
      continue;
    }
    std::size_t c = 0;
    std::size_t fpos = 0;
    while (true) {
      std::size_t comma = line.find(',', fpos);
      std::string_view field = line.substr(fpos, comma == std::string_view::npos ? line.size() - fpos : comma - fpos);
      if (c >= cols.size())
        throw IoError(source + ":" + std::to_string(line_no) + ": too many fields");
      double v = 0.0;
      auto [p, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
      if (ec != std::errc() || p != field.data() + field.size())
        throw IoError(source + ":" + std::to_string(line_no) + ": cannot parse '" + std::string(field) + "'");
      cols[c++].push_back(v);
      if (comma == std::string_view::npos) break;
      fpos = comma + 1;
    }
    if (c != cols.size())
      throw IoError(source + ":" + std::to_string(line_no) + ": expected 6 fields, found " + std::to_string(c));
  }
  if (!header_seen || cols[0].empty()) throw IoError(source + ": no data rows");
  const auto& t = cols[0];
  const double step = t.size() > 1 ? t[1] - t[0] : 1.0;
  if (!(step > 0.0)) throw IoError(source + ": timestamps must increase");
  for (std::size_t k = 1; k < t.size(); ++k)
    if (std::abs((t[k] - t[0]) - static_cast<double>(k) * step) > 1e-6 * step * static_cast<double>(k + 1))
      throw IoError(source + ": timestamps are not uniformly sampled at row " + std::to_string(k + 2));
  for (double dc : cols[5])
    if (!(dc >= 0.0 && dc <= 1.0)) throw IoError(source + ": DC outside [0, 1]");
  return Dataset(step, std::move(cols), FaultScenario{}, 0);
}

nlohmann::json dataset_sidecar(const Dataset& data) {
  nlohmann::json signals = nlohmann::json::object();
  for (const auto& [name, s] : data.stats()) signals[name] = {{"mean", s.mean}, {"std", s.stddev}};
  return {{"step", data.step()},
          {"length", data.size()},
          {"seed", data.seed()},
          {"scenario",
           {{"fault", to_string(data.scenario().kind)},
            {"magnitude", data.scenario().magnitude},
            {"onset", data.scenario().onset},
            {"label", data.scenario().label()}}},
          {"signals", signals}};
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_extension(".stats.json");
  return p;
}

void write_dataset(const std::filesystem::path& csv_path, const Dataset& data) {
  write_file_atomic(csv_path, dataset_to_csv(data));
  write_json(sidecar_path(csv_path), dataset_sidecar(data));
}

Dataset read_dataset(const std::filesystem::path& csv_path) {
  if (!std::filesystem::exists(csv_path))
    throw IoError("dataset not found: " + csv_path.string() + " (run `noderes generate` first)");
  Dataset d = dataset_from_csv(read_file(csv_path), csv_path.string());
  const auto side = sidecar_path(csv_path);
  if (std::filesystem::exists(side)) {
    const auto j = read_json(side);
    FaultScenario sc;
    std::uint64_t seed = 0;
    try {
      sc.kind = fault_from_string(j.at("scenario").at("fault").get<std::string>());
      sc.magnitude = j.at("scenario").at("magnitude").get<double>();
      sc.onset = j.at("scenario").at("onset").get<std::size_t>();
      seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(side.string() + ": " + e.what());
    }
    std::array<std::vector<double>, 6> cols;
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = d.column(kSignalNames[c]);
    d = Dataset(d.step(), std::move(cols), sc, seed);
  }
  return d;
}

}  // namespace noderes
