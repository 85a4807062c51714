#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

namespace gbohe {

// Dense column-major algebra for the small robust-regression problems.
using DenseMatrix = Eigen::MatrixXd;
using DenseVector = Eigen::VectorXd;

enum class UncertaintyKind {
  kPerColumnBound,      // ||dPhi_i||_2 <= c_i
  kGlobalBetaScaled,    // ||dPhi||_2 (spectral) <= c ||beta||_2
  kPerColumnBetaScaled  // ||dPhi_i||_2 <= c |beta_i|
};

struct UncertaintySet {
  UncertaintyKind kind = UncertaintyKind::kGlobalBetaScaled;
  double c = 0.0;          // beta-scaled sets
  DenseVector bounds;      // per-column bounds c_1..c_p

  static UncertaintySet per_column(DenseVector bounds);
  static UncertaintySet global_beta_scaled(double c);
  static UncertaintySet per_column_beta_scaled(double c);

  void validate(Eigen::Index p) const;
  // Whether dPhi satisfies the set's bound at beta, up to a relative slack.
  bool contains(const DenseMatrix& delta, const DenseVector& beta, double rel_tol = 1e-10) const;
};

// Largest singular value by power iteration on A^T A.
double spectral_norm(const DenseMatrix& a, double tol = 1e-10, int max_iter = 1000);

// Worst-case design perturbation: column i is -s_i * u with
// u = (y - Phi beta) / ||y - Phi beta||_2 and s_i = c * beta_i for the
// beta-scaled sets, c_i * sgn(beta_i) for per-column bounds. Zero matrix when
// the residual vanishes.
DenseMatrix worst_case_perturbation(const DenseMatrix& design, const DenseVector& y,
                                    const DenseVector& beta, const UncertaintySet& set);

// Closed form of max_{dPhi in U} ||y - (Phi + dPhi) beta||_2:
// ||y - Phi beta|| + c ||beta||^2 for beta-scaled sets, ||y - Phi beta|| +
// sum_i c_i |beta_i| for per-column bounds.
double robust_objective(const DenseMatrix& design, const DenseVector& y, const DenseVector& beta,
                        const UncertaintySet& set);

struct RobustSearchResult {
  double best_sampled = 0.0;     // max over random boundary samples
  double best_ascent = 0.0;      // max after projected-gradient ascent
  double constructed = 0.0;      // value at the worst-case construction
  double closed_form = 0.0;
  double max_violation = 0.0;    // max(found - closed_form, 0)
};

// Brute-force inner maximization: `samples` random feasible perturbations on
// the boundary of the set, plus projected-gradient ascent from the best few.
RobustSearchResult robust_objective_search(const DenseMatrix& design, const DenseVector& y,
                                           const DenseVector& beta, const UncertaintySet& set,
                                           int samples, std::uint64_t seed, int ascent_steps = 200);

// Residual norm under an explicit perturbation.
double perturbed_residual_norm(const DenseMatrix& design, const DenseVector& y,
                               const DenseVector& beta, const DenseMatrix& delta);

struct Theorem1Report {
  int trials = 0;
  int failures = 0;
  double max_identity_residual = 0.0;   // |worst-case value - closed form|
  double max_bound_violation = 0.0;     // max(sampled - closed form, 0)
  double max_minimizer_gap = 0.0;       // coordinate-wise, robust vs regularized minimizer
  std::vector<std::string> failure_messages;

  nlohmann::json to_json() const;
};

struct Theorem1Options {
  int samples_per_trial = 10000;
  double identity_tol = 1e-10;
  double bound_tol = 1e-10;
  double minimizer_tol = 1e-4;
};

// Random instances (n <= 12, p <= 5, c in {0.1, 1, 10}) over both beta-scaled
// sets: (a) sampled perturbations never beat the closed form, (b) the
// construction attains it, (c) minimizing the attained worst case with a
// derivative-free search agrees with Newton's method on the L2-regularized
// objective.
Theorem1Report verify_theorem1(int trials, std::uint64_t seed, const Theorem1Options& options = {});

// argmin_beta ||y - Phi beta||_2 + c ||beta||_2^2 by damped Newton.
DenseVector minimize_l2_regularized(const DenseMatrix& design, const DenseVector& y, double c);

// argmin_beta of the worst case ||y - (Phi + dPhi*(beta)) beta||_2 by
// Nelder-Mead with restarts; never evaluates the closed form.
DenseVector minimize_worst_case(const DenseMatrix& design, const DenseVector& y,
                                const UncertaintySet& set, const DenseVector& start);

}  // namespace gbohe
