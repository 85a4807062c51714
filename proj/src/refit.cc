#include "gbohe/refit.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <unordered_map>

namespace gbohe {

std::string to_string(RefitMethod method) {
  return method == RefitMethod::kRidge ? "ridge" : "lasso";
}

RefitMethod parse_refit_method(const std::string& name) {
  if (name == "ridge") return RefitMethod::kRidge;
  if (name == "lasso") return RefitMethod::kLasso;
  throw ValidationError("unknown refit method '" + name + "' (expected ridge or lasso)");
}

void RefitSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ValidationError("lambda must be >= 0");
  if (!(tol > 0.0)) throw ValidationError("tol must be > 0");
  if (max_sweeps < 1) throw ValidationError("max_sweeps must be >= 1");
}

nlohmann::json RefitResult::to_json(const RefitSpec& spec) const {
  const Vector& b = coefficients.beta;
  nlohmann::json pairs = nlohmann::json::array();
  for (Eigen::Index k = 1; k < b.size(); ++k) {
    if (b[k] != 0.0) pairs.push_back({k, b[k]});
  }
  return {{"method", to_string(spec.method)},
          {"lambda", spec.lambda},
          {"intercept", b.size() > 0 ? b[0] : 0.0},
          {"p", coefficients.p()},
          {"coefficients", std::move(pairs)},
          {"sweeps_used", sweeps_used},
          {"converged", converged}};
}

namespace {

void check_design(const SparseDesign& design, const Vector& y) {
  if (static_cast<std::size_t>(y.size()) != design.rows) {
    throw ValidationError("design rows do not match response length");
  }
  if (design.cols < 1 || design.col_ptr.size() != design.cols + 1) {
    throw ValidationError("design has no intercept column");
  }
  const std::size_t ones = design.col_ptr[1] - design.col_ptr[0];
  bool intercept_ok = ones == design.rows;
  for (std::size_t e = 0; intercept_ok && e < ones; ++e) intercept_ok = design.values[e] == 1.0;
  if (!intercept_ok) throw ValidationError("design column 0 must be all ones");
}

double column_dot(const SparseDesign& design, std::size_t k, const Vector& v) {
  double acc = 0.0;
  for (std::size_t e = design.col_ptr[k]; e < design.col_ptr[k + 1]; ++e) {
    acc += design.values[e] * v[design.row_idx[e]];
  }
  return acc;
}

void column_axpy(const SparseDesign& design, std::size_t k, double a, Vector& v) {
  for (std::size_t e = design.col_ptr[k]; e < design.col_ptr[k + 1]; ++e) {
    v[design.row_idx[e]] += a * design.values[e];
  }
}

std::vector<double> column_sq_norms(const SparseDesign& design) {
  std::vector<double> out(design.cols, 0.0);
  for (std::size_t k = 0; k < design.cols; ++k) {
    for (std::size_t e = design.col_ptr[k]; e < design.col_ptr[k + 1]; ++e) {
      out[k] += design.values[e] * design.values[e];
    }
  }
  return out;
}

double penalty(const Vector& beta, RefitMethod method) {
  const auto penalized = beta.tail(beta.size() - 1);
  return method == RefitMethod::kRidge ? penalized.squaredNorm() : penalized.lpNorm<1>();
}

// Ridge by Jacobi-preconditioned conjugate gradients with the intercept
// profiled out: solve (Phi_c^T Phi_c + lambda I) b = Phi_c^T y over centered
// columns, then b_0 = mean(y) - sum_k mean_k b_k. Centering removes the stiff
// all-ones direction that every tree's indicators sum to.
Vector ridge_direct(const SparseDesign& design, const Vector& y, double lambda,
                    const std::vector<double>& sq_norm, const Vector& start) {
  const auto p = static_cast<Eigen::Index>(design.cols);
  const double nn = static_cast<double>(design.rows);
  Vector mean = Vector::Zero(p);
  Vector diag = Vector::Ones(p);
  Vector mask = Vector::Zero(p);
  for (Eigen::Index k = 1; k < p; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    for (std::size_t e = design.col_ptr[kk]; e < design.col_ptr[kk + 1]; ++e) mean[k] += design.values[e];
    mean[k] /= nn;
    const double centered = sq_norm[kk] - nn * mean[k] * mean[k];
    if (sq_norm[kk] > 0.0 && centered + lambda > 0.0) {
      mask[k] = 1.0;
      diag[k] = std::max(centered, 0.0) + lambda;
    }
  }
  // Phi_c^T Phi_c v with column 0 unused.
  auto apply = [&](const Vector& v) {
    Vector u = design.multiply(v);
    u.array() -= u.mean();
    Vector out = design.transpose_multiply(u) + lambda * v;
    return Vector(out.cwiseProduct(mask));
  };

  const Vector yc = y.array() - y.mean();
  const Vector rhs = design.transpose_multiply(yc).cwiseProduct(mask);
  Vector x = start.cwiseProduct(mask);
  Vector res = rhs - apply(x);
  const double target = 1e-9 * rhs.norm();
  Vector z = res.cwiseQuotient(diag);
  Vector dir = z;
  double rz = res.dot(z);
  const int max_iter = static_cast<int>(std::min<std::size_t>(design.cols, 20000));
  for (int it = 0; it < max_iter && res.norm() > target; ++it) {
    const Vector ad = apply(dir);
    const double curvature = dir.dot(ad);
    if (!(curvature > 0.0)) break;
    const double step = rz / curvature;
    x += step * dir;
    res -= step * ad;
    z = res.cwiseQuotient(diag);
    const double rz_next = res.dot(z);
    dir = z + (rz_next / rz) * dir;
    rz = rz_next;
  }
  x[0] = y.mean() - mean.dot(x);
  return x;
}

// Every leaf column is a constant times an indicator. After centering, two
// such columns on the same support, or on complementary supports, are
// collinear; the homotopy cannot keep signs consistent across them. Only the
// one with the largest centered norm stays eligible, which leaves the lasso
// optimum unchanged: it buys the same fit for the least penalty.
void drop_collinear_indicators(const SparseDesign& design, const std::vector<double>& sq_norm,
                               const std::vector<double>& mean, std::vector<char>& eligible) {
  const std::size_t n = design.rows;
  std::vector<std::uint64_t> weight(n);
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    weight[i] = derive_seed(0x1eaf, 0, i);
    total += weight[i];
  }
  auto constant = [&](std::size_t k) {
    for (std::size_t e = design.col_ptr[k] + 1; e < design.col_ptr[k + 1]; ++e) {
      if (design.values[e] != design.values[design.col_ptr[k]]) return false;
    }
    return true;
  };
  // Same support, or disjoint supports that cover every row.
  auto same_or_complement = [&](std::size_t a, std::size_t b) {
    const std::size_t na = design.col_ptr[a + 1] - design.col_ptr[a];
    const std::size_t nb = design.col_ptr[b + 1] - design.col_ptr[b];
    const auto ra = design.row_idx.begin() + static_cast<std::ptrdiff_t>(design.col_ptr[a]);
    const auto rb = design.row_idx.begin() + static_cast<std::ptrdiff_t>(design.col_ptr[b]);
    if (na == nb && std::equal(ra, ra + static_cast<std::ptrdiff_t>(na), rb)) return true;
    if (na + nb != n) return false;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < na && j < nb) {
      if (ra[static_cast<std::ptrdiff_t>(i)] == rb[static_cast<std::ptrdiff_t>(j)]) return false;
      ra[static_cast<std::ptrdiff_t>(i)] < rb[static_cast<std::ptrdiff_t>(j)] ? ++i : ++j;
    }
    return true;
  };
  auto centered_norm = [&](std::size_t k) {
    return sq_norm[k] - static_cast<double>(n) * mean[k] * mean[k];
  };

  std::unordered_map<std::uint64_t, std::size_t> keeper;
  for (std::size_t k = 1; k < design.cols; ++k) {
    if (!eligible[k] || !constant(k)) continue;
    std::uint64_t h = 0;
    for (std::size_t e = design.col_ptr[k]; e < design.col_ptr[k + 1]; ++e) h += weight[design.row_idx[e]];
    const std::uint64_t key = std::min(h, total - h);
    const auto [it, fresh] = keeper.emplace(key, k);
    if (fresh || !same_or_complement(it->second, k)) continue;
    if (centered_norm(k) > centered_norm(it->second)) {
      eligible[it->second] = 0;
      it->second = k;
    } else {
      eligible[k] = 0;
    }
  }
}

// Lasso homotopy (LARS with drops) on the centered problem. The intercept is
// profiled out by centering, so correlations reduce to Phi_k^T r. Returns one
// coefficient vector per entry of `lambdas` (descending). Columns that are
// numerically dependent on the active set are skipped; the sweeps that follow
// repair any such shortfall.
std::vector<Vector> lasso_direct(const SparseDesign& design, const Vector& y,
                                 const std::vector<double>& sq_norm,
                                 std::span<const double> lambdas) {
  const auto n = static_cast<Eigen::Index>(design.rows);
  const std::size_t p = design.cols;
  const double nn = static_cast<double>(n);
  const double ybar = y.mean();

  std::vector<double> mean(p, 0.0);
  std::vector<char> eligible(p, 0);
  for (std::size_t k = 1; k < p; ++k) {
    for (std::size_t e = design.col_ptr[k]; e < design.col_ptr[k + 1]; ++e) mean[k] += design.values[e];
    mean[k] /= nn;
    const double centered = sq_norm[k] - nn * mean[k] * mean[k];
    eligible[k] = centered > 1e-9 * std::max(sq_norm[k], 1.0);
  }
  drop_collinear_indicators(design, sq_norm, mean, eligible);

  Vector b = Vector::Zero(static_cast<Eigen::Index>(p));
  auto full_coefficients = [&] {
    Vector out = b;
    double shift = 0.0;
    for (std::size_t k = 1; k < p; ++k) shift += mean[k] * b[static_cast<Eigen::Index>(k)];
    out[0] = ybar - shift;
    return out;
  };
  auto refresh = [&](Vector& r, Vector& c) {
    r = y - design.multiply(full_coefficients());
    c = design.transpose_multiply(r);
  };
  Vector r;
  Vector c;
  refresh(r, c);

  std::vector<std::size_t> active;
  std::vector<double> sign;
  std::vector<char> in_active(p, 0);
  Eigen::MatrixXd chol(16, 16);
  Eigen::Index m = 0;
  Vector scatter = Vector::Zero(n);

  // Appends column k to the factor of the centered Gram matrix; false when it
  // is numerically dependent on the active columns.
  auto add = [&](std::size_t k) {
    for (std::size_t e = design.col_ptr[k]; e < design.col_ptr[k + 1]; ++e) {
      scatter[design.row_idx[e]] = design.values[e];
    }
    Vector g(m);
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto a = active[static_cast<std::size_t>(i)];
      g[i] = column_dot(design, a, scatter) - nn * mean[a] * mean[k];
    }
    for (std::size_t e = design.col_ptr[k]; e < design.col_ptr[k + 1]; ++e) {
      scatter[design.row_idx[e]] = 0.0;
    }
    const double gkk = sq_norm[k] - nn * mean[k] * mean[k];
    Vector z = m > 0 ? Vector(chol.topLeftCorner(m, m).triangularView<Eigen::Lower>().solve(g))
                     : Vector();
    const double pivot = gkk - (m > 0 ? z.squaredNorm() : 0.0);
    if (!(pivot > 1e-10 * gkk)) return false;
    if (m + 1 > chol.rows()) chol.conservativeResize(2 * (m + 1), 2 * (m + 1));
    if (m > 0) chol.row(m).head(m) = z.transpose();
    chol(m, m) = std::sqrt(pivot);
    ++m;
    active.push_back(k);
    sign.push_back(c[static_cast<Eigen::Index>(k)] > 0.0 ? 1.0 : -1.0);
    in_active[k] = 1;
    return true;
  };
  // Deletes active entry j and restores a triangular factor with Givens
  // rotations.
  auto remove = [&](Eigen::Index j) {
    for (Eigen::Index i = j; i + 1 < m; ++i) chol.row(i).head(m) = chol.row(i + 1).head(m);
    for (Eigen::Index i = j; i + 1 < m; ++i) {
      const double a = chol(i, i);
      const double bb = chol(i, i + 1);
      const double rr = std::hypot(a, bb);
      const double cs = a / rr;
      const double sn = bb / rr;
      for (Eigen::Index k = i; k + 1 < m; ++k) {
        const double x0 = chol(k, i);
        const double x1 = chol(k, i + 1);
        chol(k, i) = cs * x0 + sn * x1;
        chol(k, i + 1) = -sn * x0 + cs * x1;
      }
    }
    --m;
    in_active[active[static_cast<std::size_t>(j)]] = 0;
    active.erase(active.begin() + j);
    sign.erase(sign.begin() + j);
  };

  std::vector<char> skipped(p, 0);
  double t = 0.0;
  for (std::size_t k = 1; k < p; ++k) {
    if (eligible[k]) t = std::max(t, std::abs(c[static_cast<Eigen::Index>(k)]));
  }

  std::vector<Vector> out;
  std::size_t next = 0;
  const std::size_t max_steps = 20 * (p + design.rows);
  std::vector<std::size_t> blocked;
  std::vector<char> in_blocked(p, 0);
  for (std::size_t step = 0; next < lambdas.size(); ++step) {
    const double goal = lambdas[next] / 2.0;
    if (goal >= t || step >= max_steps) {
      out.push_back(full_coefficients());
      ++next;
      continue;
    }
    if (m == 0) {
      std::size_t best = p;
      for (std::size_t k = 1; k < p; ++k) {
        if (eligible[k] && !skipped[k] &&
            (best == p || std::abs(c[static_cast<Eigen::Index>(k)]) >
                              std::abs(c[static_cast<Eigen::Index>(best)]))) {
          best = k;
        }
      }
      if (best == p || !add(best)) {
        t = 0.0;
      }
      continue;
    }

    const Vector s = Eigen::Map<const Vector>(sign.data(), m);
    const auto factor = chol.topLeftCorner(m, m);
    const Vector w =
        factor.transpose().triangularView<Eigen::Upper>().solve(
            factor.triangularView<Eigen::Lower>().solve(s));
    Vector u = Vector::Zero(n);
    for (Eigen::Index i = 0; i < m; ++i) column_axpy(design, active[static_cast<std::size_t>(i)], w[i], u);
    u.array() -= u.mean();
    const Vector a = design.transpose_multiply(u);

    double delta = t - goal;
    std::size_t join = p;
    Eigen::Index drop = -1;
    const double floor = 1e-12 * t;
    for (std::size_t k = 1; k < p; ++k) {
      if (!eligible[k] || in_active[k] || skipped[k] || in_blocked[k]) continue;
      const double ck = c[static_cast<Eigen::Index>(k)];
      const double ak = a[static_cast<Eigen::Index>(k)];
      if (1.0 - ak > 1e-12) {
        const double d1 = (t - ck) / (1.0 - ak);
        if (d1 > floor && d1 < delta) {
          delta = d1;
          join = k;
        }
      }
      if (1.0 + ak > 1e-12) {
        const double d2 = (t + ck) / (1.0 + ak);
        if (d2 > floor && d2 < delta) {
          delta = d2;
          join = k;
        }
      }
    }
    for (Eigen::Index i = 0; i < m; ++i) {
      const double bi = b[static_cast<Eigen::Index>(active[static_cast<std::size_t>(i)])];
      if (w[i] == 0.0) continue;
      if (bi == 0.0) {
        // Joined on a tie but would grow against its sign: leave at once.
        if (w[i] * sign[static_cast<std::size_t>(i)] < 0.0) {
          delta = 0.0;
          drop = i;
          join = p;
          break;
        }
        continue;
      }
      if (w[i] * bi > 0.0) continue;
      const double di = -bi / w[i];
      if (di > 0.0 && di < delta) {
        delta = di;
        drop = i;
        join = p;
      }
    }

    for (Eigen::Index i = 0; i < m; ++i) {
      b[static_cast<Eigen::Index>(active[static_cast<std::size_t>(i)])] += delta * w[i];
    }
    r -= delta * u;
    c -= delta * a;
    t -= delta;
    if (delta > 0.0) {
      for (const std::size_t k : blocked) in_blocked[k] = 0;
      blocked.clear();
    }

    if (drop >= 0) {
      const auto k = active[static_cast<std::size_t>(drop)];
      b[static_cast<Eigen::Index>(k)] = 0.0;
      remove(drop);
      // Blocked from rejoining until the path moves again.
      blocked.push_back(k);
      in_blocked[k] = 1;
      // A smaller active set can make skipped columns independent again.
      std::fill(skipped.begin(), skipped.end(), 0);
    } else if (join != p) {
      if (!add(join)) skipped[join] = 1;
    }
    if (step % 64 == 63) refresh(r, c);
    // Leaf designs are full of exact ties; every column that has reached the
    // bound joins now, or it would slip past on the next step.
    for (std::size_t k = 1; k < p; ++k) {
      if (!eligible[k] || in_active[k] || skipped[k] || in_blocked[k]) continue;
      if (std::abs(c[static_cast<Eigen::Index>(k)]) >= t * (1.0 - 1e-10)) {
        if (!add(k)) skipped[k] = 1;
      }
    }
  }
  return out;
}

// Cyclic passes from `beta` until the largest change in a full pass is below
// tol.
RefitResult coordinate_descent(const SparseDesign& design, const Vector& y, const RefitSpec& spec,
                               const std::vector<double>& sq_norm, Vector beta) {
  Vector residual = y - design.multiply(beta);
  const bool lasso = spec.method == RefitMethod::kLasso;

  auto sweep_over = [&](const std::vector<std::size_t>& order) {
    double max_change = 0.0;
    for (const std::size_t k : order) {
      const double old = beta[static_cast<Eigen::Index>(k)];
      const double rho = column_dot(design, k, residual) + old * sq_norm[k];
      double updated = 0.0;
      if (k == 0) {
        updated = rho / sq_norm[k];
      } else if (lasso) {
        updated = soft_threshold(rho, spec.lambda / 2.0) / sq_norm[k];
      } else {
        updated = rho / (sq_norm[k] + spec.lambda);
      }
      const double change = updated - old;
      if (change != 0.0) {
        column_axpy(design, k, -change, residual);
        beta[static_cast<Eigen::Index>(k)] = updated;
        max_change = std::max(max_change, std::abs(change));
      }
    }
    return max_change;
  };

  std::vector<std::size_t> all;
  for (std::size_t k = 0; k < design.cols; ++k) {
    if (sq_norm[k] != 0.0) all.push_back(k);
  }

  // Full passes alternate with passes over the current nonzero set until
  // that set settles; only a full pass can certify convergence. Ridge
  // solutions are dense, so every pass there is a full one.
  RefitResult result;
  while (result.sweeps_used < spec.max_sweeps) {
    const double full_change = sweep_over(all);
    ++result.sweeps_used;
    if (full_change < spec.tol) {
      result.converged = true;
      break;
    }
    if (!lasso) continue;
    std::vector<std::size_t> active;
    for (const std::size_t k : all) {
      if (k == 0 || beta[static_cast<Eigen::Index>(k)] != 0.0) active.push_back(k);
    }
    while (result.sweeps_used < spec.max_sweeps) {
      const double change = sweep_over(active);
      ++result.sweeps_used;
      if (change < spec.tol) break;
    }
  }
  result.coefficients = Coefficients{std::move(beta)};
  return result;
}

Vector initial_point(const SparseDesign& design, const Vector* warm_start,
                     const std::vector<double>& sq_norm) {
  Vector beta = Vector::Zero(static_cast<Eigen::Index>(design.cols));
  if (warm_start) {
    if (static_cast<std::size_t>(warm_start->size()) != design.cols) {
      throw ValidationError("warm start length does not match design columns");
    }
    beta = *warm_start;
  }
  for (std::size_t k = 0; k < design.cols; ++k) {
    if (sq_norm[k] == 0.0) beta[static_cast<Eigen::Index>(k)] = 0.0;
  }
  return beta;
}

// The lower-objective of two candidate starting points.
Vector better_start(const SparseDesign& design, const Vector& y, const RefitSpec& spec,
                    Vector current, Vector proposal) {
  if (!proposal.allFinite()) return current;
  const double now = (y - design.multiply(current)).squaredNorm() +
                     spec.lambda * penalty(current, spec.method);
  const double then = (y - design.multiply(proposal)).squaredNorm() +
                      spec.lambda * penalty(proposal, spec.method);
  return then < now ? proposal : current;
}

}  // namespace

RefitResult refit(const SparseDesign& design, const Vector& y, const RefitSpec& spec,
                  const Vector* warm_start) {
  spec.validate();
  check_design(design, y);
  const auto sq_norm = column_sq_norms(design);
  Vector beta = initial_point(design, warm_start, sq_norm);
  if (spec.direct_start) {
    Vector proposal;
    if (spec.method == RefitMethod::kRidge) {
      proposal = ridge_direct(design, y, spec.lambda, sq_norm, beta);
    } else {
      const double lambdas[] = {spec.lambda};
      proposal = lasso_direct(design, y, sq_norm, lambdas).front();
    }
    beta = better_start(design, y, spec, std::move(beta), std::move(proposal));
  }
  return coordinate_descent(design, y, spec, sq_norm, std::move(beta));
}

double objective(const SparseDesign& design, const Vector& y, const Vector& beta,
                 const RefitSpec& spec) {
  check_design(design, y);
  if (static_cast<std::size_t>(beta.size()) != design.cols) {
    throw ValidationError("coefficient length does not match design columns");
  }
  return (y - design.multiply(beta)).squaredNorm() + spec.lambda * penalty(beta, spec.method);
}

std::vector<RefitResult> regularization_path(const SparseDesign& design, const Vector& y,
                                             RefitMethod method, std::span<const double> lambdas,
                                             double tol, int max_sweeps, bool direct_start) {
  if (lambdas.empty()) throw ValidationError("regularization path needs at least one lambda");
  if (!std::is_sorted(lambdas.begin(), lambdas.end(), std::greater<>())) {
    throw ValidationError("regularization path lambdas must be sorted in descending order");
  }
  check_design(design, y);
  for (const double lambda : lambdas) RefitSpec{method, lambda, tol, max_sweeps}.validate();

  std::vector<Vector> homotopy;
  if (direct_start && method == RefitMethod::kLasso) {
    homotopy = lasso_direct(design, y, column_sq_norms(design), lambdas);
  }
  std::vector<RefitResult> path;
  path.reserve(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    RefitSpec spec{method, lambdas[i], tol, max_sweeps};
    const Vector* warm = path.empty() ? nullptr : &path.back().coefficients.beta;
    if (method == RefitMethod::kLasso) {
      // The homotopy point already is the direct start for this lambda.
      spec.direct_start = false;
      if (direct_start) {
        const auto sq_norm = column_sq_norms(design);
        Vector start = warm ? *warm : Vector(Vector::Zero(static_cast<Eigen::Index>(design.cols)));
        start = better_start(design, y, spec, std::move(start), homotopy[i]);
        path.push_back(refit(design, y, spec, &start));
        continue;
      }
    } else {
      spec.direct_start = direct_start;
    }
    path.push_back(refit(design, y, spec, warm));
  }
  return path;
}

}  // namespace gbohe
