// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "gbohe/experiment.h"
#include "gbohe/robust.h"

using namespace gbohe;

namespace {

// Pinned tolerances.
constexpr double kEquivalenceTol = 1e-9;
constexpr double kEquivalenceSeconds = 60.0;
constexpr int kTheoremTrials = 100;
constexpr int kTheoremSamples = 10000;
constexpr double kTheoremSeconds = 120.0;
constexpr double kNormalEquationTol = 1e-8;
constexpr double kKktTol = 1e-6;
constexpr double kMonotoneSlack = 1e-12;  // relative, for rounding in the objective
constexpr double kAdditivityTol = 0.05;
constexpr double kAdditivitySeconds = 600.0;
constexpr int kTrendSeeds = 5;
constexpr int kTrendRequired = 4;
constexpr double kTrendSigma = 0.05;
constexpr int kUShapeMax = 500;
constexpr double kMisspecInversion = 0.02;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

// 1. Leaf encoding reproduces the ensemble's predictions.
Outcome prediction_equivalence() {
  const auto start = Clock::now();
  const ExperimentConfig c = preset_config("airfoil");
  const auto [train, test] = split(c.dataset.load(), c.train_fraction, c.split_seed);
  const GbdtModel model = fit_gbdt(train, c.gbdt);
  const LeafEncoder enc = build_encoder(model, train, DedupMode::kPatternAndValue);
  const Coefficients beta = original_coefficients(model, enc);
  const double gap = (enc.dot(test.features(), beta.beta) - model.predict(test.features()))
                         .cwiseAbs()
                         .maxCoeff();
  const double elapsed = seconds_since(start);
  return {gap <= kEquivalenceTol && elapsed < kEquivalenceSeconds,
          "max |Phi beta - F| = " + fmt(gap) + " over " + std::to_string(test.rows()) +
              " test rows, p = " + std::to_string(enc.p()) + ", " + fmt(elapsed) + " s"};
}

// 2. Robust-regression identity on random instances.
Outcome theorem_verifier() {
  const auto start = Clock::now();
  Theorem1Options opts;
  opts.samples_per_trial = kTheoremSamples;
  const Theorem1Report r = verify_theorem1(kTheoremTrials, 2023, opts);
  const double elapsed = seconds_since(start);
  std::string detail = std::to_string(r.failures) + " failures in " + std::to_string(r.trials) +
                       " trials, identity residual " + fmt(r.max_identity_residual) +
                       ", bound violation " + fmt(r.max_bound_violation) + ", minimizer gap " +
                       fmt(r.max_minimizer_gap) + ", " + fmt(elapsed) + " s";
  if (!r.failure_messages.empty()) detail += "; first: " + r.failure_messages.front();
  return {r.failures == 0 && elapsed < kTheoremSeconds, detail};
}

Matrix gaussian_design(int n, int p, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Matrix x(n, p + 1);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int j = 1; j <= p; ++j) x(i, j) = normal(rng);
  }
  return x;
}

Vector noisy_response(const Matrix& x, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector beta(x.cols());
  for (Eigen::Index j = 0; j < beta.size(); ++j) beta[j] = normal(rng);
  Vector y = x * beta;
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += normal(rng);
  return y;
}

// 3. Solver oracles.
Outcome solver_oracles() {
  std::mt19937_64 rng(3);
  double normal_gap = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = gaussian_design(20, 4, rng);
    const Vector y = noisy_response(x, rng);
    const Vector oracle = (x.transpose() * x).ldlt().solve(x.transpose() * y);
    RefitSpec spec;
    spec.lambda = 0.0;
    const RefitResult r = refit(SparseDesign::from_dense(x), y, spec);
    normal_gap = std::max(normal_gap, (r.coefficients.beta - oracle).cwiseAbs().maxCoeff());
  }

  double kkt = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix x = gaussian_design(50, 19, rng);
    const Vector y = noisy_response(x, rng);
    const Vector xty = 2.0 * x.transpose() * y;
    const double scale = std::max(1.0, xty.cwiseAbs().maxCoeff());
    const double lambda = 0.05 * scale * (1 + trial % 4);
    RefitSpec spec;
    spec.method = RefitMethod::kLasso;
    spec.lambda = lambda;
    const RefitResult r = refit(SparseDesign::from_dense(x), y, spec);
    const Vector grad = 2.0 * x.transpose() * (y - x * r.coefficients.beta);
    double worst = std::abs(grad[0]);
    for (Eigen::Index k = 1; k < grad.size(); ++k) {
      const double b = r.coefficients.beta[k];
      worst = std::max(worst, b != 0.0 ? std::abs(grad[k] - lambda * (b > 0 ? 1.0 : -1.0))
                                       : std::max(0.0, std::abs(grad[k]) - lambda));
    }
    kkt = std::max(kkt, worst / scale);
  }

  // Monotone descent per sweep on a real leaf design, from a cold start.
  const auto [train, test] = split(synth_airfoil_like(800, 4), 0.8, 5);
  GbdtParams gp;
  gp.n_estimators = 60;
  gp.tree.max_depth = 4;
  gp.learning_rate = 0.15;
  const GbdtModel model = fit_gbdt(train, gp);
  const SparseDesign design = encode_rows(build_encoder(model, train, DedupMode::kPattern), train);
  int increases = 0;
  for (const auto method : {RefitMethod::kRidge, RefitMethod::kLasso}) {
    RefitSpec spec;
    spec.method = method;
    spec.lambda = 1.0;
    spec.direct_start = false;
    double previous = objective(design, train.response(),
                                Vector::Zero(static_cast<Eigen::Index>(design.cols)), spec);
    for (int k = 1; k <= 40; ++k) {
      spec.max_sweeps = k;
      const RefitResult r = refit(design, train.response(), spec);
      const double now = objective(design, train.response(), r.coefficients.beta, spec);
      if (now > previous * (1.0 + kMonotoneSlack)) ++increases;
      previous = now;
    }
  }
  return {normal_gap <= kNormalEquationTol && kkt <= kKktTol && increases == 0,
          "normal-equation gap " + fmt(normal_gap) + ", scaled KKT violation " + fmt(kkt) +
              ", objective increases " + std::to_string(increases) + " of 80 sweeps"};
}

// 4. The three terms add up to the directly estimated perturbed risk.
Outcome additivity() {
  const auto start = Clock::now();
  const ExperimentConfig c = preset_config("chp");
  const auto [train, test] = split(c.dataset.load(), c.train_fraction, c.split_seed);
  GbdtParams params = c.gbdt;
  params.n_estimators = 100;
  const RiskReport r = estimate_risk_decomposition(train, test, original_gbdt_pipeline(params),
                                                   {0.05, 4, 5}, 20);
  const double rel = std::abs(r.sum_gap) / r.direct_risk;
  const double elapsed = seconds_since(start);
  return {rel <= kAdditivityTol && elapsed < kAdditivitySeconds,
          "direct " + fmt(r.direct_risk) + ", terms " + fmt(r.bias_sq_plus_irreducible) + " + " +
              fmt(r.variance) + " + " + fmt(r.perturbation) + ", relative gap " + fmt(rel) + ", " +
              fmt(elapsed) + " s"};
}

// Which parts of the table trend hold for one dataset and split seed.
struct TrendCheck {
  bool ridge_order = false;
  bool beats_xgb = false;
  bool sigma_monotone = false;
  bool converged = false;
  bool ok() const { return ridge_order && beats_xgb && sigma_monotone && converged; }
};

TrendCheck trend_once(const std::string& dataset, std::uint64_t split_seed, std::string& note) {
  ExperimentConfig c = preset_config(dataset);
  c.split_seed = split_seed;
  c.perturbations = {0.0, 0.02, kTrendSigma};
  c.perturbation_seed = split_seed;
  const ResultTable t = run_pipeline(c);
  TrendCheck out;
  const double s = t.at("OHE_Ridge_s", kTrendSigma).perturbation_term;
  const double m = t.at("OHE_Ridge_m", kTrendSigma).perturbation_term;
  const double l = t.at("OHE_Ridge_l", kTrendSigma).perturbation_term;
  out.ridge_order = s > m && m > l;
  const double ridge_mse = t.at("OHE_Ridge_l", kTrendSigma).test_mse;
  const double xgb_mse = t.at("XGB", kTrendSigma).test_mse;
  out.beats_xgb = ridge_mse < xgb_mse;
  out.sigma_monotone = true;
  for (const auto& row : t.rows) {
    if (row.perturbation == 0.0) continue;
    const double lower = row.perturbation == kTrendSigma ? 0.02 : 0.0;
    if (!(row.perturbation_term > t.at(row.model, lower).perturbation_term)) {
      out.sigma_monotone = false;
    }
  }
  out.converged = t.nonconverged.empty();
  note += " " + dataset + "@" + std::to_string(split_seed) + ": ridge s/m/l " + fmt(s) + "/" +
          fmt(m) + "/" + fmt(l) + ", mse ridge_l " + fmt(ridge_mse) + " vs xgb " + fmt(xgb_mse) +
          (out.sigma_monotone ? "" : ", sigma order broken") +
          (out.converged ? "" : ", refit not converged") + ";";
  return out;
}

// 5. Orderings of the comparison table over several split seeds.
Outcome table_trends() {
  int good = 0;
  std::string note;
  for (int seed = 1; seed <= kTrendSeeds; ++seed) {
    const bool ok = trend_once("chp", static_cast<std::uint64_t>(seed), note).ok() &
                    trend_once("airfoil", static_cast<std::uint64_t>(seed), note).ok();
    good += ok;
  }
  return {good >= kTrendRequired,
          std::to_string(good) + " of " + std::to_string(kTrendSeeds) + " seeds hold;" + note};
}

// 6. Perturbed risk over boosting rounds bottoms out before the last round,
// while the clean risk keeps falling in the tail.
Outcome u_shape() {
  const ExperimentConfig c = preset_config("chp");
  const auto [train, test] = split(c.dataset.load(), c.train_fraction, c.split_seed);
  GbdtParams params = c.gbdt;
  params.learning_rate = 0.1;
  params.n_estimators = kUShapeMax;
  const std::vector<int> stages = {25, 50, 100, 150, 200, 250, 300, 350, 400, 450, 500};
  std::vector<double> index(stages.begin(), stages.end());
  const auto reports = decomposition_sweep(train, test, boosting_rounds_family(params, stages),
                                           index, {0.05, 6, 5}, 5);
  std::size_t best = 0;
  for (std::size_t k = 1; k < reports.size(); ++k) {
    if (reports[k].direct_risk < reports[best].direct_risk) best = k;
  }
  // Tail: the second half of the sweep. Each point may sit at most one
  // standard error above the running minimum.
  bool tail_ok = true;
  double running = reports.front().clean_risk;
  for (std::size_t k = 0; k < reports.size(); ++k) {
    running = std::min(running, reports[k].clean_risk);
    if (stages[k] >= kUShapeMax / 2 && reports[k].clean_risk > running + reports[k].clean_risk_se) {
      tail_ok = false;
    }
  }
  std::string curve;
  for (const auto& r : reports) curve += " " + fmt(r.index) + ":" + fmt(r.direct_risk) + "/" + fmt(r.clean_risk);
  return {stages[best] < kUShapeMax && tail_ok,
          "argmin perturbed risk at M = " + std::to_string(stages[best]) +
              (tail_ok ? ", clean tail non-increasing" : ", clean tail rises") +
              "; M:perturbed/clean" + curve};
}

// 7. Misspecification bias falls as trees are added.
Outcome misspecification() {
  const Dataset data = synth_square(2000, 7);
  const auto [train, test] = split(data, 0.8, 7);
  const Dataset large = synth_square(100000, 8);
  GbdtParams params;
  params.n_estimators = 20;
  params.tree.max_depth = 3;
  params.learning_rate = 0.1;
  const GbdtModel full = fit_gbdt(train, params);
  std::vector<double> bias;
  for (const std::size_t m : {1, 2, 5, 10, 20}) {
    const GbdtModel model = full.truncated(m);
    const LeafEncoder enc = build_encoder(model, train, DedupMode::kPattern);
    const Coefficients ref = reference_coefficients(enc, large, 1e-3);
    const Vector best = enc.dot(test.features(), ref.beta);
    bias.push_back((*test.truth() - best).squaredNorm() / static_cast<double>(test.rows()));
  }
  int inversions = 0;
  bool small = true;
  std::string curve;
  for (std::size_t k = 0; k < bias.size(); ++k) {
    curve += " " + fmt(bias[k]);
    if (k > 0 && bias[k] > bias[k - 1]) {
      ++inversions;
      if (bias[k] > bias[k - 1] * (1.0 + kMisspecInversion)) small = false;
    }
  }
  return {inversions <= 1 && small,
          "bias over M = 1,2,5,10,20:" + curve + "; " + std::to_string(inversions) + " inversions"};
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 8. Two CLI runs of the same config produce identical CSVs.
Outcome determinism() {
  const std::filesystem::path root = std::filesystem::current_path() / "determinism";
  std::filesystem::remove_all(root);
  std::string outputs[2];
  std::string files[2];
  for (int run = 0; run < 2; ++run) {
    const auto dir = root / ("run" + std::to_string(run));
    std::filesystem::create_directories(dir);
    const std::string cmd = std::string(GBOHE_CLI) + " reproduce --config " + GBOHE_CONFIG_DIR +
                            "/determinism.json --output-dir " + dir.string() + " > " +
                            (dir / "stdout.csv").string();
    if (std::system(cmd.c_str()) != 0) return {false, "reproduce failed: " + cmd};
    outputs[run] = read_file(dir / "stdout.csv");
    files[run] = read_file(dir / "results.csv");
  }
  const bool same = !outputs[0].empty() && outputs[0] == outputs[1] && files[0] == files[1];
  return {same, std::string(same ? "identical" : "different") + " CSVs (" +
                    std::to_string(outputs[0].size()) + " bytes on stdout)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"prediction equivalence", prediction_equivalence},
      {"robust regression verifier", theorem_verifier},
      {"solver oracles", solver_oracles},
      {"decomposition additivity", additivity},
      {"table trends", table_trends},
      {"u-shape over boosting rounds", u_shape},
      {"misspecification bias trend", misspecification},
      {"determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << id << "] " << criteria[k].first << ": "
              << o.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
