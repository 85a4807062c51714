#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbohe/common.h"
#include "gbohe/encode.h"
#include "gbohe/tree.h"

namespace gbohe {

enum class RefitMethod { kRidge, kLasso };

std::string to_string(RefitMethod method);
RefitMethod parse_refit_method(const std::string& name);

// Objective: sum_i (y_i - Phi_i^T beta)^2 + lambda * sum_{k>=1} pen(b_k), with
// pen = b^2 (ridge) or |b| (lasso). No 1/n or 1/2 factor; b_0 is unpenalized.
struct RefitSpec {
  RefitMethod method = RefitMethod::kRidge;
  double lambda = 0.0;
  double tol = 1e-7;  // max absolute coefficient change in a sweep
  int max_sweeps = 10000;
  // Start the sweeps from a direct solve (conjugate gradients on the ridge
  // normal equations, or the lasso homotopy path) when that beats the given
  // start. Leaf designs have thousands of strongly correlated columns, where
  // cyclic updates alone crawl. Sweeps still decide convergence.
  bool direct_start = true;

  void validate() const;
};

struct RefitResult {
  Coefficients coefficients;
  int sweeps_used = 0;
  bool converged = false;

  nlohmann::json to_json(const RefitSpec& spec) const;
};

// Cyclic coordinate descent. Column 0 must be the all-ones intercept column.
// All-zero columns keep a zero coefficient. On non-convergence the last
// iterate is returned with converged == false. Lasso alternates full passes
// with passes over the nonzero set; sweeps_used counts both.
RefitResult refit(const SparseDesign& design, const Vector& y, const RefitSpec& spec,
                  const Vector* warm_start = nullptr);

double objective(const SparseDesign& design, const Vector& y, const Vector& beta,
                 const RefitSpec& spec);

// Warm-started sequence over lambdas sorted in descending order. For lasso a
// single homotopy pass supplies the direct start of every lambda.
std::vector<RefitResult> regularization_path(const SparseDesign& design, const Vector& y,
                                             RefitMethod method, std::span<const double> lambdas,
                                             double tol = 1e-7, int max_sweeps = 10000,
                                             bool direct_start = true);

}  // namespace gbohe
