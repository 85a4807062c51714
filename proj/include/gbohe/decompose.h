#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbohe/boosting.h"
#include "gbohe/data.h"
#include "gbohe/encode.h"
#include "gbohe/refit.h"

namespace gbohe {

// A GBDT rewritten as a linear model over its leaf indicators.
struct LinearizedModel {
  LeafEncoder encoder;
  Coefficients coefficients;

  Vector predict(const Matrix& x) const { return encoder.dot(x, coefficients.beta); }
};

// Fits one linearized model on a training set; must be deterministic given
// the seed.
using Pipeline = std::function<LinearizedModel(const Dataset& train, std::uint64_t seed)>;

// Predictions of every member of a fitted model family: rows x members.
using FamilyPredictor = std::function<Matrix(const Matrix& features)>;
// Fits a whole family (e.g. one refit per lambda, or every boosting stage).
using PipelineFamily = std::function<FamilyPredictor(const Dataset& train, std::uint64_t seed)>;

// Risk of a perturbed test set split into
//   (i)+(iv)  mean over test rows of (y - m(x))^2, m = mean fit prediction
//   (ii)      mean over rows and fits of (F_b(x) - m(x))^2
//   (iii)     mean over draws, fits and rows of (F_b(x~) - F_b(x))^2
// with direct_risk the mean of (y - F_b(x~))^2 and sum_gap = direct_risk -
// ((i)+(iv) + (ii) + (iii)). E_D is approximated by bootstrap resamples.
struct RiskReport {
  double index = 0.0;  // sweep coordinate (lambda or boosting rounds); 0 for single runs
  double bias_sq_plus_irreducible = 0.0;
  double variance = 0.0;
  double perturbation = 0.0;
  double direct_risk = 0.0;
  double direct_risk_se = 0.0;  // standard error across fits
  double clean_risk = 0.0;      // mean of (y - F_b(x))^2 on unperturbed rows
  double clean_risk_se = 0.0;
  double sum_gap = 0.0;
  int bootstrap_B = 0;
  int perturb_R = 0;
  double sigma_fraction = 0.0;
  std::vector<std::uint64_t> seeds;  // bootstrap resample seeds actually used
  int failed_resamples = 0;

  double sum_of_terms() const { return bias_sq_plus_irreducible + variance + perturbation; }
  nlohmann::json to_json() const;
};

struct BiasSplitReport {
  double misspecification_bias = 0.0;
  double in_class_bias = 0.0;
  Coefficients reference_beta;
  Coefficients mean_beta;

  nlohmann::json to_json() const;
};

// spec.repeats is R, the number of perturbation draws of the test set.
RiskReport estimate_risk_decomposition(const Dataset& train, const Dataset& test,
                                       const Pipeline& pipeline, const PerturbationSpec& spec,
                                       int B);

// One report per family member; `index_values` labels the rows.
std::vector<RiskReport> decomposition_sweep(const Dataset& train, const Dataset& test,
                                            const PipelineFamily& family,
                                            std::span<const double> index_values,
                                            const PerturbationSpec& spec, int B);

PipelineFamily single_member_family(Pipeline pipeline);

// GBDT fit once per resample; member k predicts with the first stages[k] trees.
PipelineFamily boosting_rounds_family(const GbdtParams& params, std::vector<int> stages);

// GBDT fit and encoded once per resample, then a warm-started refit path over
// `lambdas` (descending).
PipelineFamily refit_path_family(const GbdtParams& params, RefitMethod method,
                                 std::vector<double> lambdas, double tol = 1e-7,
                                 int max_sweeps = 10000);

// Pipelines for single runs.
Pipeline original_gbdt_pipeline(const GbdtParams& params);
Pipeline refit_pipeline(const GbdtParams& params, const RefitSpec& spec);

// Refits coefficients over a fixed leaf design.
using CoefficientPipeline =
    std::function<Coefficients(const SparseDesign& design, const Vector& y, std::uint64_t seed)>;

// (v) = mean over test rows of (f(x) - Phi(x)^T beta0)^2,
// (vi) = mean over test rows of (Phi(x)^T beta0 - Phi(x)^T mean_b(beta_b))^2,
// with beta_b refit on B bootstrap resamples of `train` through the fixed encoder.
BiasSplitReport bias_split(const LeafEncoder& encoder, const Dataset& train, const Dataset& test,
                           const CoefficientPipeline& pipeline, const Coefficients& reference,
                           int B, std::uint64_t seed);

// Stand-in for the best in-class coefficients: a ridge refit over the encoder's
// design on a large sample.
Coefficients reference_coefficients(const LeafEncoder& encoder, const Dataset& large_sample,
                                    double lambda);

}  // namespace gbohe
