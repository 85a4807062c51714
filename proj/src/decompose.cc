#include "gbohe/decompose.h"

#include <cmath>
#include <memory>
#include <optional>

namespace gbohe {

namespace {

constexpr std::uint64_t kBootstrapStream = 1;
constexpr std::uint64_t kFitStream = 2;
constexpr std::uint64_t kPerturbStream = 3;

double standard_error(const std::vector<double>& values) {
  const auto n = static_cast<double>(values.size());
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / (n - 1.0) / n);
}

}  // namespace

nlohmann::json RiskReport::to_json() const {
  return {{"index", index},
          {"bias_sq_plus_irreducible", bias_sq_plus_irreducible},
          {"variance", variance},
          {"perturbation", perturbation},
          {"sum_of_terms", sum_of_terms()},
          {"direct_risk", direct_risk},
          {"direct_risk_se", direct_risk_se},
          {"clean_risk", clean_risk},
          {"clean_risk_se", clean_risk_se},
          {"sum_gap", sum_gap},
          {"bootstrap_B", bootstrap_B},
          {"perturb_R", perturb_R},
          {"sigma_fraction", sigma_fraction},
          {"seeds", seeds},
          {"failed_resamples", failed_resamples}};
}

nlohmann::json BiasSplitReport::to_json() const {
  return {{"misspecification_bias", misspecification_bias},
          {"in_class_bias", in_class_bias},
          {"p", reference_beta.p()}};
}

std::vector<RiskReport> decomposition_sweep(const Dataset& train, const Dataset& test,
                                            const PipelineFamily& family,
                                            std::span<const double> index_values,
                                            const PerturbationSpec& spec, int B) {
  if (B < 2) throw ValidationError("risk decomposition needs B >= 2 bootstrap fits");
  if (spec.repeats < 1) throw ValidationError("perturbation repeats must be >= 1");
  if (train.cols() != test.cols()) throw ValidationError("train/test predictor counts differ");

  const auto K = static_cast<Eigen::Index>(index_values.size());
  const auto n_test = static_cast<Eigen::Index>(test.rows());
  const Vector& y = test.response();

  std::vector<Matrix> perturbed;
  perturbed.reserve(static_cast<std::size_t>(spec.repeats));
  for (int r = 0; r < spec.repeats; ++r) {
    PerturbationSpec draw = spec;
    draw.seed = derive_seed(spec.seed, kPerturbStream, static_cast<std::uint64_t>(r));
    perturbed.push_back(perturb(test, train.column_std(), draw).features());
  }

  struct FitOutcome {
    bool ok = false;
    std::uint64_t seed = 0;
    Matrix clean;            // n_test x K
    Vector perturbation_sum;  // per member, summed over draws and rows
    Vector direct_sum;
  };
  std::vector<FitOutcome> fits(static_cast<std::size_t>(B));

  parallel_for(fits.size(), [&](std::size_t b) {
    auto& out = fits[b];
    out.seed = derive_seed(spec.seed, kBootstrapStream, b);
    try {
      const Dataset resample = bootstrap_sample(train, out.seed);
      const FamilyPredictor predictor =
          family(resample, derive_seed(spec.seed, kFitStream, b));
      out.clean = predictor(test.features());
      if (out.clean.rows() != n_test || out.clean.cols() != K) {
        throw ValidationError("pipeline returned predictions of the wrong shape");
      }
      out.perturbation_sum = Vector::Zero(K);
      out.direct_sum = Vector::Zero(K);
      for (const auto& x_tilde : perturbed) {
        const Matrix moved = predictor(x_tilde);
        for (Eigen::Index k = 0; k < K; ++k) {
          out.perturbation_sum[k] += (moved.col(k) - out.clean.col(k)).squaredNorm();
          out.direct_sum[k] += (y - moved.col(k)).squaredNorm();
        }
      }
      out.ok = true;
    } catch (const std::exception&) {
      out.ok = false;
    }
  });

  std::vector<const FitOutcome*> good;
  for (const auto& f : fits) {
    if (f.ok) good.push_back(&f);
  }
  if (good.size() < 2) {
    throw ValidationError("fewer than two bootstrap fits succeeded");
  }
  const double fits_used = static_cast<double>(good.size());
  const double rows = static_cast<double>(n_test);
  const double draws = static_cast<double>(spec.repeats);

  Matrix mean = Matrix::Zero(n_test, K);
  for (const auto* f : good) mean += f->clean;
  mean /= fits_used;

  std::vector<RiskReport> reports(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    auto& rep = reports[static_cast<std::size_t>(k)];
    rep.index = index_values[static_cast<std::size_t>(k)];
    rep.bootstrap_B = static_cast<int>(good.size());
    rep.perturb_R = spec.repeats;
    rep.sigma_fraction = spec.sigma_fraction;
    rep.failed_resamples = B - static_cast<int>(good.size());
    for (const auto* f : good) rep.seeds.push_back(f->seed);

    rep.bias_sq_plus_irreducible = (y - mean.col(k)).squaredNorm() / rows;
    double variance = 0.0;
    double perturbation = 0.0;
    double direct = 0.0;
    std::vector<double> per_fit_direct;
    std::vector<double> per_fit_clean;
    for (const auto* f : good) {
      variance += (f->clean.col(k) - mean.col(k)).squaredNorm();
      perturbation += f->perturbation_sum[k];
      direct += f->direct_sum[k];
      per_fit_direct.push_back(f->direct_sum[k] / (rows * draws));
      per_fit_clean.push_back((y - f->clean.col(k)).squaredNorm() / rows);
    }
    rep.variance = variance / (rows * fits_used);
    rep.perturbation = perturbation / (rows * fits_used * draws);
    rep.direct_risk = direct / (rows * fits_used * draws);
    rep.direct_risk_se = standard_error(per_fit_direct);
    double clean = 0.0;
    for (const double c : per_fit_clean) clean += c;
    rep.clean_risk = clean / fits_used;
    rep.clean_risk_se = standard_error(per_fit_clean);
    rep.sum_gap = rep.direct_risk - rep.sum_of_terms();
  }
  return reports;
}

RiskReport estimate_risk_decomposition(const Dataset& train, const Dataset& test,
                                       const Pipeline& pipeline, const PerturbationSpec& spec,
                                       int B) {
  const double index = 0.0;
  return decomposition_sweep(train, test, single_member_family(pipeline),
                             std::span<const double>(&index, 1), spec, B)
      .front();
}

PipelineFamily single_member_family(Pipeline pipeline) {
  return [pipeline = std::move(pipeline)](const Dataset& train, std::uint64_t seed) {
    auto model = std::make_shared<LinearizedModel>(pipeline(train, seed));
    return FamilyPredictor([model](const Matrix& x) -> Matrix { return model->predict(x); });
  };
}

PipelineFamily boosting_rounds_family(const GbdtParams& params, std::vector<int> stages) {
  for (const int s : stages) {
    if (s < 0 || s > params.n_estimators) throw ValidationError("stage outside [0, n_estimators]");
  }
  return [params, stages = std::move(stages)](const Dataset& train, std::uint64_t) {
    auto model = std::make_shared<GbdtModel>(fit_gbdt(train, params));
    return FamilyPredictor(
        [model, stages](const Matrix& x) { return model->staged_predict(x, stages); });
  };
}

PipelineFamily refit_path_family(const GbdtParams& params, RefitMethod method,
                                 std::vector<double> lambdas, double tol, int max_sweeps) {
  return [=](const Dataset& train, std::uint64_t) {
    const GbdtModel model = fit_gbdt(train, params);
    auto encoder = std::make_shared<LeafEncoder>(build_encoder(model, train, DedupMode::kPattern));
    const SparseDesign design = encode_rows(*encoder, train);
    auto path = std::make_shared<std::vector<RefitResult>>(
        regularization_path(design, train.response(), method, lambdas, tol, max_sweeps));
    return FamilyPredictor([encoder, path](const Matrix& x) {
      Matrix out(x.rows(), static_cast<Eigen::Index>(path->size()));
      for (std::size_t k = 0; k < path->size(); ++k) {
        out.col(static_cast<Eigen::Index>(k)) = encoder->dot(x, (*path)[k].coefficients.beta);
      }
      return out;
    });
  };
}

Pipeline original_gbdt_pipeline(const GbdtParams& params) {
  return [params](const Dataset& train, std::uint64_t) {
    const GbdtModel model = fit_gbdt(train, params);
    LeafEncoder encoder = build_encoder(model, train, DedupMode::kPatternAndValue);
    Coefficients beta = original_coefficients(model, encoder);
    return LinearizedModel{std::move(encoder), std::move(beta)};
  };
}

Pipeline refit_pipeline(const GbdtParams& params, const RefitSpec& spec) {
  return [params, spec](const Dataset& train, std::uint64_t) {
    const GbdtModel model = fit_gbdt(train, params);
    LeafEncoder encoder = build_encoder(model, train, DedupMode::kPattern);
    const SparseDesign design = encode_rows(encoder, train);
    RefitResult fit = refit(design, train.response(), spec);
    return LinearizedModel{std::move(encoder), std::move(fit.coefficients)};
  };
}

BiasSplitReport bias_split(const LeafEncoder& encoder, const Dataset& train, const Dataset& test,
                           const CoefficientPipeline& pipeline, const Coefficients& reference,
                           int B, std::uint64_t seed) {
  if (!test.truth()) throw ValidationError("bias split needs test data with the noiseless truth");
  if (B < 1) throw ValidationError("bias split needs B >= 1");
  if (reference.beta.size() != encoder.p() + 1) {
    throw ValidationError("reference coefficients do not match the encoder");
  }

  std::vector<Vector> betas(static_cast<std::size_t>(B));
  parallel_for(betas.size(), [&](std::size_t b) {
    const Dataset resample = bootstrap_sample(train, derive_seed(seed, kBootstrapStream, b));
    const SparseDesign design = encode_rows(encoder, resample);
    betas[b] = pipeline(design, resample.response(), derive_seed(seed, kFitStream, b)).beta;
  });
  Vector mean_beta = Vector::Zero(reference.beta.size());
  for (const auto& beta : betas) {
    if (beta.size() != mean_beta.size()) throw ValidationError("pipeline returned wrong width");
    mean_beta += beta;
  }
  mean_beta /= static_cast<double>(B);

  const Vector best = encoder.dot(test.features(), reference.beta);
  const Vector fitted = encoder.dot(test.features(), mean_beta);
  const double rows = static_cast<double>(test.rows());

  BiasSplitReport report;
  report.misspecification_bias = (*test.truth() - best).squaredNorm() / rows;
  report.in_class_bias = (best - fitted).squaredNorm() / rows;
  report.reference_beta = reference;
  report.mean_beta = Coefficients{std::move(mean_beta)};
  return report;
}

Coefficients reference_coefficients(const LeafEncoder& encoder, const Dataset& large_sample,
                                    double lambda) {
  const SparseDesign design = encode_rows(encoder, large_sample);
  RefitSpec spec;
  spec.method = RefitMethod::kRidge;
  spec.lambda = lambda;
  return refit(design, large_sample.response(), spec).coefficients;
}

}  // namespace gbohe
