#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbohe/common.h"
#include "gbohe/data.h"
#include "gbohe/tree.h"

namespace gbohe {

struct GbdtParams {
  int n_estimators = 100;
  double learning_rate = 0.1;
  std::optional<double> base_score;  // training-response mean when unset
  TreeParams tree;

  void validate() const;
  nlohmann::json to_json() const;
  static GbdtParams from_json(const nlohmann::json& j);
};

// F(x) = gamma0 + learning_rate * sum_m tree_m(x), squared loss.
class GbdtModel {
 public:
  GbdtModel(double gamma0, double learning_rate, std::vector<Tree> trees, GbdtParams params);

  double gamma0() const { return gamma0_; }
  double learning_rate() const { return learning_rate_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const GbdtParams& params() const { return params_; }
  std::size_t size() const { return trees_.size(); }

  double predict(std::span<const double> x) const;
  Vector predict(const Matrix& x) const;

  // Entry m uses the first m trees; entry 0 is gamma0.
  std::vector<double> staged_predict(std::span<const double> x) const;
  // Row i, column k: prediction of row i using the first stages[k] trees.
  Matrix staged_predict(const Matrix& x, std::span<const int> stages) const;

  // The model formed by the first m trees.
  GbdtModel truncated(std::size_t m) const;

  nlohmann::json to_json() const;
  static GbdtModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static GbdtModel load(const std::filesystem::path& path);

  static constexpr const char* kFormatVersion = "gbdt-v1";

 private:
  double gamma0_;
  double learning_rate_;
  std::vector<Tree> trees_;
  GbdtParams params_;
};

// Stagewise residual fitting with unit hessians. When `training_mse` is given
// it receives the training MSE after each stage (entry 0 = before any tree).
GbdtModel fit_gbdt(const Dataset& train, const GbdtParams& params,
                   std::vector<double>* training_mse = nullptr);

double mean_squared_error(const Vector& y, const Vector& prediction);

}  // namespace gbohe
