#include "gbohe/robust.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <functional>
#include <numeric>
#include <sstream>

#include "gbohe/common.h"

namespace gbohe {

UncertaintySet UncertaintySet::per_column(DenseVector bounds) {
  UncertaintySet s;
  s.kind = UncertaintyKind::kPerColumnBound;
  s.bounds = std::move(bounds);
  return s;
}

UncertaintySet UncertaintySet::global_beta_scaled(double c) {
  UncertaintySet s;
  s.kind = UncertaintyKind::kGlobalBetaScaled;
  s.c = c;
  return s;
}

UncertaintySet UncertaintySet::per_column_beta_scaled(double c) {
  UncertaintySet s;
  s.kind = UncertaintyKind::kPerColumnBetaScaled;
  s.c = c;
  return s;
}

void UncertaintySet::validate(Eigen::Index p) const {
  if (kind == UncertaintyKind::kPerColumnBound) {
    if (bounds.size() != p) throw ValidationError("uncertainty set needs one bound per column");
    if ((bounds.array() < 0.0).any()) throw ValidationError("uncertainty bounds must be >= 0");
  } else if (!(c >= 0.0)) {
    throw ValidationError("uncertainty scale c must be >= 0");
  }
}

namespace {

// Column radii for the column-wise sets.
DenseVector column_radii(const UncertaintySet& set, const DenseVector& beta) {
  if (set.kind == UncertaintyKind::kPerColumnBound) return set.bounds;
  return set.c * beta.cwiseAbs();
}

double set_radius(const UncertaintySet& set, const DenseVector& beta) {
  switch (set.kind) {
    case UncertaintyKind::kGlobalBetaScaled:
      return set.c * beta.norm();
    case UncertaintyKind::kPerColumnBetaScaled:
      return set.c * beta.cwiseAbs().maxCoeff();
    case UncertaintyKind::kPerColumnBound:
      return set.bounds.size() ? set.bounds.maxCoeff() : 0.0;
  }
  return 0.0;
}

// Euclidean projection onto the set (at fixed beta).
void project(DenseMatrix& delta, const UncertaintySet& set, const DenseVector& beta) {
  if (set.kind == UncertaintyKind::kGlobalBetaScaled) {
    const double radius = set.c * beta.norm();
    Eigen::JacobiSVD<DenseMatrix> svd(delta, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const DenseVector clipped = svd.singularValues().cwiseMin(radius);
    delta = svd.matrixU() * clipped.asDiagonal() * svd.matrixV().transpose();
    return;
  }
  const DenseVector radii = column_radii(set, beta);
  for (Eigen::Index j = 0; j < delta.cols(); ++j) {
    const double norm = delta.col(j).norm();
    if (norm > radii[j]) delta.col(j) *= norm > 0.0 ? radii[j] / norm : 0.0;
  }
}

}  // namespace

bool UncertaintySet::contains(const DenseMatrix& delta, const DenseVector& beta,
                              double rel_tol) const {
  validate(beta.size());
  if (delta.cols() != beta.size()) return false;
  if (kind == UncertaintyKind::kGlobalBetaScaled) {
    const double bound = c * beta.norm();
    return spectral_norm(delta) <= bound * (1.0 + rel_tol) + 1e-300;
  }
  const DenseVector radii = column_radii(*this, beta);
  for (Eigen::Index j = 0; j < delta.cols(); ++j) {
    if (delta.col(j).norm() > radii[j] * (1.0 + rel_tol) + 1e-300) return false;
  }
  return true;
}

double spectral_norm(const DenseMatrix& a, double tol, int max_iter) {
  if (a.size() == 0) return 0.0;
  const DenseMatrix gram = a.transpose() * a;
  DenseVector v(gram.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < max_iter; ++it) {
    DenseVector w = gram * v;
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    v = w / next;
    const bool done = std::abs(next - lambda) <= tol * next;
    lambda = next;
    if (done) break;
  }
  // Rayleigh quotient is the sharper eigenvalue estimate at the final vector.
  return std::sqrt(std::max(lambda, v.dot(gram * v)));
}

double perturbed_residual_norm(const DenseMatrix& design, const DenseVector& y,
                               const DenseVector& beta, const DenseMatrix& delta) {
  return (y - design * beta - delta * beta).norm();
}

DenseMatrix worst_case_perturbation(const DenseMatrix& design, const DenseVector& y,
                                    const DenseVector& beta, const UncertaintySet& set) {
  if (design.rows() != y.size() || design.cols() != beta.size()) {
    throw ValidationError("worst_case_perturbation: shape mismatch");
  }
  set.validate(beta.size());
  DenseMatrix delta = DenseMatrix::Zero(design.rows(), design.cols());
  const DenseVector residual = y - design * beta;
  const double norm = residual.norm();
  if (!(norm > 0.0)) return delta;
  const DenseVector u = residual / norm;

  DenseVector scale(beta.size());
  if (set.kind == UncertaintyKind::kPerColumnBound) {
    for (Eigen::Index i = 0; i < beta.size(); ++i) {
      const double sgn = beta[i] > 0.0 ? 1.0 : (beta[i] < 0.0 ? -1.0 : 0.0);
      scale[i] = set.bounds[i] * sgn;
    }
  } else {
    scale = set.c * beta;
  }
  delta = -u * scale.transpose();
  return delta;
}

double robust_objective(const DenseMatrix& design, const DenseVector& y, const DenseVector& beta,
                        const UncertaintySet& set) {
  if (design.rows() != y.size() || design.cols() != beta.size()) {
    throw ValidationError("robust_objective: shape mismatch");
  }
  set.validate(beta.size());
  const double residual = (y - design * beta).norm();
  if (set.kind == UncertaintyKind::kPerColumnBound) {
    return residual + set.bounds.dot(beta.cwiseAbs());
  }
  return residual + set.c * beta.squaredNorm();
}

RobustSearchResult robust_objective_search(const DenseMatrix& design, const DenseVector& y,
                                           const DenseVector& beta, const UncertaintySet& set,
                                           int samples, std::uint64_t seed, int ascent_steps) {
  set.validate(beta.size());
  RobustSearchResult result;
  result.closed_form = robust_objective(design, y, beta, set);
  result.constructed = perturbed_residual_norm(
      design, y, beta, worst_case_perturbation(design, y, beta, set));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Eigen::Index n = design.rows();
  const Eigen::Index p = design.cols();
  const DenseVector radii = set.kind == UncertaintyKind::kGlobalBetaScaled
                                ? DenseVector()
                                : column_radii(set, beta);
  const double global_radius = set.c * beta.norm();

  struct Candidate {
    double value;
    DenseMatrix delta;
  };
  constexpr std::size_t kKeep = 4;
  std::vector<Candidate> best;

  DenseMatrix g(n, p);
  result.best_sampled = (y - design * beta).norm();
  for (int s = 0; s < samples; ++s) {
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
    }
    if (set.kind == UncertaintyKind::kGlobalBetaScaled) {
      const double sn = spectral_norm(g);
      g *= sn > 0.0 ? global_radius / sn : 0.0;
    } else {
      for (Eigen::Index j = 0; j < p; ++j) {
        const double cn = g.col(j).norm();
        g.col(j) *= cn > 0.0 ? radii[j] / cn : 0.0;
      }
    }
    const double value = perturbed_residual_norm(design, y, beta, g);
    result.best_sampled = std::max(result.best_sampled, value);
    if (best.size() < kKeep || value > best.back().value) {
      if (best.size() == kKeep) best.pop_back();
      best.push_back({value, g});
      std::sort(best.begin(), best.end(),
                [](const Candidate& a, const Candidate& b) { return a.value > b.value; });
    }
  }

  // Projected gradient ascent on ||r - dPhi beta|| from the best samples.
  result.best_ascent = result.best_sampled;
  const double radius = set_radius(set, beta);
  const DenseVector residual = y - design * beta;
  for (auto& cand : best) {
    DenseMatrix delta = cand.delta;
    for (int step = 0; step < ascent_steps; ++step) {
      const DenseVector r = residual - delta * beta;
      const double rn = r.norm();
      if (rn == 0.0) break;
      const DenseMatrix grad = -(r / rn) * beta.transpose();
      const double gn = grad.norm();
      if (gn == 0.0) break;
      delta += (radius / std::sqrt(1.0 + step)) * grad / gn;
      project(delta, set, beta);
      result.best_ascent = std::max(result.best_ascent, perturbed_residual_norm(design, y, beta, delta));
    }
  }
  const double found = std::max(result.best_sampled, result.best_ascent);
  result.max_violation = std::max(0.0, found - result.closed_form);
  return result;
}

DenseVector minimize_l2_regularized(const DenseMatrix& design, const DenseVector& y, double c) {
  const Eigen::Index p = design.cols();
  auto value = [&](const DenseVector& b) { return (y - design * b).norm() + c * b.squaredNorm(); };

  DenseVector beta = DenseVector::Zero(p);
  for (int it = 0; it < 200; ++it) {
    const DenseVector r = y - design * beta;
    const double rn = r.norm();
    if (rn == 0.0) break;
    const DenseVector u = r / rn;
    const DenseVector grad = -design.transpose() * u + 2.0 * c * beta;
    const DenseVector pu = design.transpose() * u;
    DenseMatrix hess = (design.transpose() * design - pu * pu.transpose()) / rn;
    hess.diagonal().array() += 2.0 * c + 1e-14;
    const DenseVector step = hess.ldlt().solve(-grad);

    const double f0 = value(beta);
    double t = 1.0;
    while (t > 1e-12 && value(beta + t * step) > f0 + 1e-4 * t * grad.dot(step)) t *= 0.5;
    beta += t * step;
    if ((t * step).norm() < 1e-15 * (1.0 + beta.norm())) break;
  }
  return beta;
}

namespace {

DenseVector nelder_mead(const std::function<double(const DenseVector&)>& f, DenseVector start,
                        double step, int max_iter, double x_tol) {
  const Eigen::Index dim = start.size();
  std::vector<DenseVector> simplex(static_cast<std::size_t>(dim) + 1, start);
  std::vector<double> values(simplex.size());
  for (Eigen::Index i = 0; i < dim; ++i) simplex[static_cast<std::size_t>(i) + 1][i] += step;
  for (std::size_t i = 0; i < simplex.size(); ++i) values[i] = f(simplex[i]);

  // Dimension-adaptive coefficients (Gao & Han).
  const double d = static_cast<double>(dim);
  const double alpha = 1.0;
  const double gamma = 1.0 + 2.0 / d;
  const double rho = 0.75 - 1.0 / (2.0 * d);
  const double sigma = 1.0 - 1.0 / d;

  std::vector<std::size_t> order(simplex.size());
  for (int it = 0; it < max_iter; ++it) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    const auto best = order.front();
    const auto worst = order.back();
    const auto second_worst = order[order.size() - 2];

    double spread = 0.0;
    for (const auto& v : simplex) spread = std::max(spread, (v - simplex[best]).cwiseAbs().maxCoeff());
    if (spread < x_tol) break;

    DenseVector centroid = DenseVector::Zero(dim);
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i != worst) centroid += simplex[i];
    }
    centroid /= d;

    const DenseVector reflected = centroid + alpha * (centroid - simplex[worst]);
    const double fr = f(reflected);
    if (fr < values[best]) {
      const DenseVector expanded = centroid + gamma * (reflected - centroid);
      const double fe = f(expanded);
      if (fe < fr) {
        simplex[worst] = expanded;
        values[worst] = fe;
      } else {
        simplex[worst] = reflected;
        values[worst] = fr;
      }
      continue;
    }
    if (fr < values[second_worst]) {
      simplex[worst] = reflected;
      values[worst] = fr;
      continue;
    }
    const bool outside = fr < values[worst];
    const DenseVector contracted = outside ? DenseVector(centroid + rho * (reflected - centroid))
                                           : DenseVector(centroid + rho * (simplex[worst] - centroid));
    const double fc = f(contracted);
    if (fc < (outside ? fr : values[worst])) {
      simplex[worst] = contracted;
      values[worst] = fc;
      continue;
    }
    for (std::size_t i = 0; i < simplex.size(); ++i) {
      if (i == best) continue;
      simplex[i] = simplex[best] + sigma * (simplex[i] - simplex[best]);
      values[i] = f(simplex[i]);
    }
  }
  const auto best = static_cast<std::size_t>(std::min_element(values.begin(), values.end()) - values.begin());
  return simplex[best];
}

}  // namespace

DenseVector minimize_worst_case(const DenseMatrix& design, const DenseVector& y,
                                const UncertaintySet& set, const DenseVector& start) {
  auto worst_case = [&](const DenseVector& b) {
    return perturbed_residual_norm(design, y, b, worst_case_perturbation(design, y, b, set));
  };
  DenseVector beta = start;
  double step = 1.0;
  for (int restart = 0; restart < 6; ++restart) {
    beta = nelder_mead(worst_case, beta, step, 20000, 1e-12);
    step = std::max(step * 0.1, 1e-6);
  }
  return beta;
}

nlohmann::json Theorem1Report::to_json() const {
  return {{"trials", trials},
          {"failures", failures},
          {"max_identity_residual", max_identity_residual},
          {"max_bound_violation", max_bound_violation},
          {"max_minimizer_gap", max_minimizer_gap},
          {"failure_messages", failure_messages}};
}

Theorem1Report verify_theorem1(int trials, std::uint64_t seed, const Theorem1Options& options) {
  if (trials < 1) throw ValidationError("verify_theorem1 needs at least one trial");
  static constexpr double kScales[] = {0.1, 1.0, 10.0};

  Theorem1Report report;
  report.trials = trials;
  for (int trial = 0; trial < trials; ++trial) {
    std::mt19937_64 rng(derive_seed(seed, 0x7e01, static_cast<std::uint64_t>(trial)));
    std::normal_distribution<double> normal(0.0, 1.0);
    const int p = std::uniform_int_distribution<int>(1, 5)(rng);
    const int n = std::uniform_int_distribution<int>(p + 1, 12)(rng);
    const double c = kScales[trial % 3];

    DenseMatrix design(n, p);
    DenseVector y(n);
    DenseVector beta(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      for (Eigen::Index i = 0; i < n; ++i) design(i, j) = normal(rng);
    }
    for (Eigen::Index i = 0; i < n; ++i) y[i] = normal(rng);
    for (Eigen::Index j = 0; j < p; ++j) beta[j] = normal(rng);

    bool failed = false;
    std::ostringstream why;
    for (const auto& set : {UncertaintySet::global_beta_scaled(c),
                            UncertaintySet::per_column_beta_scaled(c)}) {
      const char* name = set.kind == UncertaintyKind::kGlobalBetaScaled ? "U1" : "U2";
      const auto search = robust_objective_search(
          design, y, beta, set, options.samples_per_trial,
          derive_seed(seed, 0x7e02, static_cast<std::uint64_t>(trial)));

      const DenseMatrix star = worst_case_perturbation(design, y, beta, set);
      const double identity = std::abs(search.constructed - search.closed_form);
      report.max_identity_residual = std::max(report.max_identity_residual, identity);
      report.max_bound_violation = std::max(report.max_bound_violation, search.max_violation);

      const DenseVector regularized = minimize_l2_regularized(design, y, c);
      const DenseVector robust = minimize_worst_case(design, y, set, DenseVector::Zero(p));
      const double gap = (regularized - robust).cwiseAbs().maxCoeff();
      report.max_minimizer_gap = std::max(report.max_minimizer_gap, gap);

      if (identity > options.identity_tol) {
        failed = true;
        why << ' ' << name << " attainment residual " << identity;
      }
      if (!set.contains(star, beta)) {
        failed = true;
        why << ' ' << name << " construction infeasible";
      }
      if (search.max_violation > options.bound_tol) {
        failed = true;
        why << ' ' << name << " sampled value exceeds bound by " << search.max_violation;
      }
      if (gap > options.minimizer_tol) {
        failed = true;
        why << ' ' << name << " minimizer gap " << gap;
      }
    }
    if (failed) {
      ++report.failures;
      report.failure_messages.push_back("trial " + std::to_string(trial) + ":" + why.str());
    }
  }
  return report;
}

}  // namespace gbohe
