#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbohe/boosting.h"
#include "gbohe/data.h"
#include "gbohe/decompose.h"
#include "gbohe/refit.h"

namespace gbohe {

struct DatasetSource {
  std::string path;        // CSV file, or empty for synthetic data
  std::string target;
  std::string synthetic;   // "square", "airfoil" or "chp"
  std::size_t n = 0;
  std::uint64_t seed = 0;

  void validate() const;
  Dataset load() const;
  nlohmann::json to_json() const;
  static DatasetSource from_json(const nlohmann::json& j);
};

// A named refit. Lasso presets may be given as `alpha` on the
// 1/(2n)-scaled objective; they are converted to lambda = 2 * n_train * alpha
// for the unscaled objective used here.
struct RefitPreset {
  std::string name;
  RefitMethod method = RefitMethod::kRidge;
  std::optional<double> lambda;
  std::optional<double> alpha;

  double resolve_lambda(std::size_t n_train) const;
};

struct ExperimentConfig {
  std::string name = "experiment";
  DatasetSource dataset;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  GbdtParams gbdt;                 // XGB: structure tuned, regularizers zero
  std::optional<TreeParams> gbdt_reg;  // XGB_reg: same structure plus these regularizers
  std::vector<RefitPreset> refits;
  std::vector<double> perturbations = {0.0, 0.02, 0.05};
  int repeats = 5;
  int bootstrap_B = 20;
  std::uint64_t perturbation_seed = 0;
  double refit_tol = 1e-7;
  int refit_max_sweeps = 10000;
  std::filesystem::path output_dir;

  void validate() const;
  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
};

// Tuned settings shipped for "airfoil", "chp" and "bs" (synthetic stand-ins
// for the first two; "bs" expects a CSV path to be filled in).
ExperimentConfig preset_config(const std::string& dataset);

struct ResultRow {
  std::string model;
  double perturbation = 0.0;
  double test_mse = 0.0;
  double perturbation_term = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<std::string> nonconverged;  // refits that hit max_sweeps

  const ResultRow& at(const std::string& model, double perturbation) const;
  void write_csv(std::ostream& out) const;
  nlohmann::json to_json() const;
};

using NamedPredictor = std::pair<std::string, std::function<Vector(const Matrix&)>>;

// Test MSE and perturbation term (mean of (F(x~) - F(x))^2) for every model
// and perturbation size, averaged over `repeats` draws. All models see the
// same draws.
ResultTable evaluate_models(const std::vector<NamedPredictor>& models, const Dataset& test,
                            const Vector& reference_std, const std::vector<double>& perturbations,
                            int repeats, std::uint64_t seed);

// Fit XGB (and XGB_reg), encode and deduplicate, refit every preset, evaluate.
// Writes artifacts when config.output_dir is set.
ResultTable run_pipeline(const ExperimentConfig& config);

struct GbdtGrid {
  std::vector<int> n_estimators = {100};
  std::vector<int> max_depth = {3};
  std::vector<double> learning_rate = {0.1};
  std::vector<double> gamma = {0.0};
  std::vector<double> reg_lambda = {0.0};
  std::vector<double> reg_alpha = {0.0};

  std::size_t size() const;
};

struct GridScore {
  GbdtParams params;
  double cv_mse = 0.0;
};

struct GridSearchResult {
  GbdtParams best;
  std::vector<GridScore> scores;  // grid order
};

// Exhaustive k-fold search minimizing pooled CV MSE. Ties go to fewer trees,
// then shallower trees, then grid order.
GridSearchResult grid_search(const Dataset& train, const GbdtGrid& grid, int folds,
                             std::uint64_t seed);

enum class PlotKind { kComplexitySweep, kLambdaSweep, kDecompositionStack };

PlotKind parse_plot_kind(const std::string& name);
void emit_plot_data(const std::vector<RiskReport>& reports, PlotKind kind, std::ostream& out);
void emit_plot_data(const std::vector<RiskReport>& reports, PlotKind kind,
                    const std::filesystem::path& path);

}  // namespace gbohe
