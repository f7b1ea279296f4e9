#include <doctest.h>

#include <filesystem>

#include "noderes/errors.hpp"
#include "noderes/experiment.hpp"
#include "noderes/io.hpp"

using namespace noderes;
namespace fs = std::filesystem;

TEST_CASE("shipped config equals the built-in defaults") {
  const auto shipped = load_experiment(fs::path(NODERES_SOURCE_DIR) / "configs" / "default.json");
  CHECK(shipped.to_json() == ExperimentConfig::defaults().to_json());
  CHECK(shipped.hash() == ExperimentConfig::defaults().hash());
  CHECK(shipped.faults.size() == 3);
}

TEST_CASE("shipped example spec parses") {
  const auto spec = resolve_spec((fs::path(NODERES_SOURCE_DIR) / "specs" / "r1_hose.spec").string());
  CHECK_NOTHROW(spec.validate());
}

TEST_CASE("config parsing") {
  auto j = ExperimentConfig::defaults().to_json();
  CHECK(ExperimentConfig::from_json(j).to_json() == j);
  j["seed"] = 7;
  j["model"]["hidden"] = {8, 8};
  const auto c = ExperimentConfig::from_json(j);
  CHECK(c.seed == 7);
  CHECK(c.hidden == std::vector<std::size_t>{8, 8});
  CHECK(c.hash() != ExperimentConfig::defaults().hash());

  auto bad = ExperimentConfig::defaults().to_json();
  bad["colour"] = "red";
  CHECK_THROWS(ExperimentConfig::from_json(bad));
  bad = ExperimentConfig::defaults().to_json();
  bad["training"]["solver"] = "ef";
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ParameterError);
  bad = ExperimentConfig::defaults().to_json();
  bad["analysis"]["step_factors"] = {1.0, 0.3};
  CHECK_THROWS_AS(ExperimentConfig::from_json(bad), ParameterError);
  CHECK_THROWS_AS(load_experiment("/nonexistent/config.json"), IoError);
}

TEST_CASE("seed derivation") {
  const auto cfg = ExperimentConfig::defaults();
  CHECK(dataset_seed(cfg, "train") != dataset_seed(cfg, "val"));
  CHECK(train_config_for(cfg, "r1", Method::EF).seed != train_config_for(cfg, "r1", Method::MP).seed);
  CHECK(train_config_for(cfg, "r1", Method::EF).seed == train_config_for(cfg, "r1", Method::EF).seed);
  CHECK(train_config_for(cfg, "r2", Method::RK4).solver.method == Method::RK4);
}

TEST_CASE("dataset files and missing models") {
  auto cfg = ExperimentConfig::defaults();
  cfg.train_length = cfg.val_length = cfg.fault_length = 500;
  cfg.training.seq_len = 100;
  const auto dir = fs::temp_directory_path() / "noderes_test_experiment";
  fs::remove_all(dir);
  const auto set = generate_datasets(cfg);
  const auto written = write_datasets(dir / "data", cfg, set);
  CHECK(written.size() == 5);
  const auto back = load_datasets(dir / "data", cfg);
  CHECK(back.val.column("y_p_du") == set.val.column("y_p_du"));
  CHECK(back.faults[1].scenario().kind == FaultKind::ClogOrifice);
  try {
    load_models(dir / "models", cfg);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string what = e.what();
    CHECK(what.find("r1/ef") != std::string::npos);
    CHECK(what.find("r3/rk4") != std::string::npos);
  }
  write_file_atomic(dir / "h.csv", "epoch,train_loss,val_loss\n1,0.5,0.25\n2,0.125,0.0625\n");
  CHECK(read_history_tail(dir / "h.csv") == std::pair<double, double>{0.125, 0.0625});
  fs::remove_all(dir);
}

TEST_CASE("table row format") {
  TrainResult r;
  r.history.push_back({1, 1.25e-3, 6.5e-5, 0});
  CHECK(table_row("r1", Method::RK4, r) == "r1   rk4  train 1.250e-03  val 6.500e-05");
}
