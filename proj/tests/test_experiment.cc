#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gbohe/experiment.h"

using namespace gbohe;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.name = "small";
  c.dataset.synthetic = "square";
  c.dataset.n = 400;
  c.dataset.seed = 5;
  c.split_seed = 6;
  c.gbdt.n_estimators = 25;
  c.gbdt.tree.max_depth = 3;
  c.gbdt.learning_rate = 0.2;
  TreeParams reg = c.gbdt.tree;
  reg.reg_lambda = 1.0;
  reg.reg_alpha = 0.5;
  c.gbdt_reg = reg;
  c.refits = {{"ridge", RefitMethod::kRidge, 1.0, std::nullopt},
              {"lasso", RefitMethod::kLasso, std::nullopt, 1e-3}};
  c.perturbations = {0.0, 0.05, 0.2};
  c.repeats = 3;
  c.perturbation_seed = 7;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("lasso alpha converts to the unscaled penalty") {
  RefitPreset p{"l", RefitMethod::kLasso, std::nullopt, 1e-4};
  CHECK(p.resolve_lambda(1202) == doctest::Approx(2.0 * 1202 * 1e-4));
  RefitPreset q{"r", RefitMethod::kRidge, 3.0, std::nullopt};
  CHECK(q.resolve_lambda(10) == 3.0);
  RefitPreset none{"x", RefitMethod::kRidge, std::nullopt, std::nullopt};
  CHECK_THROWS_AS(none.resolve_lambda(10), ValidationError);
}

TEST_CASE("config JSON round trip") {
  const ExperimentConfig c = small_config();
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.gbdt_reg->reg_alpha == 0.5);
  CHECK(back.gbdt_reg->max_depth == 3);
  CHECK(back.refits[1].alpha == 1e-3);
}

TEST_CASE("presets") {
  for (const char* name : {"airfoil", "chp", "bs"}) {
    const ExperimentConfig c = preset_config(name);
    CHECK(c.refits.size() == 6);
    CHECK(c.gbdt_reg.has_value());
    CHECK(c.dataset.seed == 2023);
  }
  CHECK(preset_config("airfoil").gbdt.tree.max_depth == 7);
  CHECK(preset_config("chp").gbdt.n_estimators == 600);
  CHECK(preset_config("bs").dataset.target == "cnt");
  CHECK_THROWS_AS(preset_config("mnist"), ValidationError);
}

TEST_CASE("config validation") {
  auto bad = [](auto mutate) {
    ExperimentConfig c = small_config();
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.train_fraction = 1.0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.perturbations = {-0.1}; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.repeats = 0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.refits[0].lambda = -1.0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](ExperimentConfig& c) { c.dataset.synthetic.clear(); }).validate(), ValidationError);
  nlohmann::json j = small_config().to_json();
  j["refits"][0]["method"] = "elastic";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ValidationError);
  j = small_config().to_json();
  j["repeats"] = "many";
  CHECK_THROWS_AS(ExperimentConfig::from_json(j), ValidationError);
  CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/config.json"), ValidationError);
}

TEST_CASE("evaluate_models shares perturbation draws across models") {
  const auto [train, test] = split(synth_square(300, 1), 0.7, 2);
  auto first = [](const Matrix& x) -> Vector { return x.col(0); };
  const std::vector<NamedPredictor> models = {{"a", first}, {"b", first}};
  const ResultTable t = evaluate_models(models, test, train.column_std(), {0.0, 0.1}, 4, 3);
  CHECK(t.rows.size() == 4);
  CHECK(t.at("a", 0.0).perturbation_term == 0.0);
  CHECK(t.at("a", 0.1).perturbation_term == t.at("b", 0.1).perturbation_term);
  CHECK(t.at("a", 0.1).perturbation_term > 0.0);
  CHECK_THROWS_AS(t.at("c", 0.0), ValidationError);
  std::ostringstream csv;
  t.write_csv(csv);
  CHECK(csv.str().rfind("model,perturbation,test_mse,perturbation_term\n", 0) == 0);
}

TEST_CASE("pipeline on a small config") {
  ExperimentConfig c = small_config();
  const auto dir = std::filesystem::temp_directory_path() / "gbohe_test_pipeline";
  std::filesystem::remove_all(dir);
  c.output_dir = dir;
  const ResultTable t = run_pipeline(c);
  CHECK(t.nonconverged.empty());
  CHECK(t.rows.size() == 4 * 3);
  for (const char* model : {"XGB", "XGB_reg", "ridge", "lasso"}) {
    CHECK(t.at(model, 0.0).perturbation_term == 0.0);
    CHECK(t.at(model, 0.05).perturbation_term < t.at(model, 0.2).perturbation_term);
    CHECK(t.at(model, 0.0).test_mse > 0.0);
  }
  for (const char* file : {"gbdt_xgb.json", "gbdt_xgb_reg.json", "encoder.json", "design_train.mtx",
                           "refit_ridge.json", "refit_lasso.json", "results.csv", "results.json",
                           "config.json"}) {
    CHECK(std::filesystem::exists(dir / file));
  }
  const std::string first = slurp(dir / "results.csv");
  run_pipeline(c);
  CHECK(slurp(dir / "results.csv") == first);
  std::filesystem::remove_all(dir);
}

TEST_CASE("grid search") {
  const auto [train, test] = split(synth_square(400, 11), 0.8, 12);
  GbdtGrid one;
  one.n_estimators = {20};
  const GridSearchResult single = grid_search(train, one, 3, 1);
  CHECK(single.scores.size() == 1);
  CHECK(single.best.n_estimators == 20);

  GbdtGrid grid;
  grid.n_estimators = {5, 40};
  grid.max_depth = {1, 3};
  grid.learning_rate = {0.2};
  CHECK(grid.size() == 4);
  const GridSearchResult r = grid_search(train, grid, 4, 2);
  REQUIRE(r.scores.size() == 4);
  double best = r.scores[0].cv_mse;
  for (const auto& s : r.scores) best = std::min(best, s.cv_mse);
  const auto winner = std::find_if(r.scores.begin(), r.scores.end(), [&](const GridScore& s) {
    return s.params.n_estimators == r.best.n_estimators && s.params.tree.max_depth == r.best.tree.max_depth;
  });
  REQUIRE(winner != r.scores.end());
  CHECK(winner->cv_mse == best);
  // Five depth-1 rounds cannot fit x^2 as well as forty depth-3 rounds.
  CHECK(r.best.n_estimators == 40);
  const GridSearchResult again = grid_search(train, grid, 4, 2);
  for (std::size_t k = 0; k < 4; ++k) CHECK(again.scores[k].cv_mse == r.scores[k].cv_mse);

  GbdtGrid empty;
  empty.max_depth.clear();
  CHECK_THROWS_AS(grid_search(train, empty, 3, 1), ValidationError);
  CHECK_THROWS_AS(grid_search(train, one, 1, 1), ValidationError);
}

TEST_CASE("plot data") {
  std::vector<RiskReport> reports(3);
  for (int k = 0; k < 3; ++k) {
    reports[k].index = k + 1;
    reports[k].variance = 0.5 * k;
  }
  std::ostringstream out;
  emit_plot_data(reports, PlotKind::kLambdaSweep, out);
  std::istringstream lines(out.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  CHECK(count == 2 + 3);
  CHECK(out.str().rfind("# lambda_sweep", 0) == 0);
  CHECK(out.str().find("\n1,0,0,0,0,0,0,0,0\n") != std::string::npos);
  CHECK(parse_plot_kind("complexity_sweep") == PlotKind::kComplexitySweep);
  CHECK(parse_plot_kind("decomposition_stack") == PlotKind::kDecompositionStack);
  CHECK_THROWS_AS(parse_plot_kind("pie"), ValidationError);
}
