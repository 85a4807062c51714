#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbohe/common.h"

namespace gbohe {

// Immutable table of real-valued predictors and a continuous response.
// Synthetic datasets additionally carry the noiseless regression function
// evaluated at each row (`truth`).
class Dataset {
 public:
  Dataset(Matrix features, Vector response, std::vector<std::string> column_names,
          std::optional<Vector> truth = std::nullopt);

  std::size_t rows() const { return static_cast<std::size_t>(features_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(features_.cols()); }

  const Matrix& features() const { return features_; }
  const Vector& response() const { return response_; }
  const std::vector<std::string>& column_names() const { return column_names_; }
  const std::optional<Vector>& truth() const { return truth_; }

  // Population standard deviation of every predictor, computed once at
  // construction.
  const Vector& column_std() const { return column_std_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * cols(), cols()};
  }

  // Rows in the given order; indices may repeat (bootstrap resamples).
  Dataset subset(std::span<const std::size_t> indices) const;

  // Same response, names and truth with replaced predictors.
  Dataset with_features(Matrix features) const;

  nlohmann::json summary() const;

 private:
  Matrix features_;
  Vector response_;
  std::vector<std::string> column_names_;
  std::optional<Vector> truth_;
  Vector column_std_;
};

struct PerturbationSpec {
  double sigma_fraction = 0.0;  // noise sd as a fraction of each column's reference sd
  std::uint64_t seed = 0;
  int repeats = 1;
};

// Population standard deviation of each column (one-pass Welford).
Vector column_stats(const Matrix& features);
inline Vector column_stats(const Dataset& ds) { return ds.column_std(); }

// Comma-delimited text with a header row. Every non-target column becomes a
// predictor, in file order.
Dataset load_csv(const std::filesystem::path& path, const std::string& target_column);
void save_csv(const Dataset& ds, const std::filesystem::path& path,
              const std::string& target_column = "y");

// Seeded shuffle, then the first floor(train_fraction * n) rows train.
std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed);

// Adds independent N(0, (sigma_fraction * reference_std[j])^2) noise to every
// predictor cell. `reference_std` is the training set's column_std, also when
// perturbing test data.
Dataset perturb(const Dataset& ds, const Vector& reference_std, const PerturbationSpec& spec);

// n draws with replacement.
Dataset bootstrap_sample(const Dataset& ds, std::uint64_t seed);

// Seeded k-fold assignment: fold id per row, balanced to within one row.
std::vector<int> kfold_assignment(std::size_t n, int folds, std::uint64_t seed);

// y = x^2 + eps with x, eps ~ N(0, 1); truth holds x^2.
Dataset synth_square(std::size_t n, std::uint64_t seed);

// Airfoil self-noise stand-in: five predictors on the wind-tunnel grids
// (frequency, angle of attack, chord, velocity, displacement thickness) and a
// standardized sound-pressure-like response.
Dataset synth_airfoil_like(std::size_t n, std::uint64_t seed);

// California-housing stand-in: eight census-block predictors and a
// standardized house-value-like response: broad coastal and income effects
// plus neighbourhood-scale price bumps around the metro areas.
Dataset synth_chp_like(std::size_t n, std::uint64_t seed);

}  // namespace gbohe
