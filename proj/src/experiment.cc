#include "gbohe/experiment.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include "gbohe/encode.h"

namespace gbohe {

namespace {

constexpr std::uint64_t kEvaluationStream = 11;

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace

Dataset DatasetSource::load() const {
  if (!path.empty()) return load_csv(path, target);
  if (synthetic == "square") return synth_square(n, seed);
  if (synthetic == "airfoil") return synth_airfoil_like(n, seed);
  if (synthetic == "chp") return synth_chp_like(n, seed);
  throw ValidationError("dataset needs a CSV path or synthetic kind square|airfoil|chp, got '" +
                        synthetic + "'");
}

nlohmann::json DatasetSource::to_json() const {
  if (!path.empty()) return {{"path", path}, {"target", target}};
  return {{"synthetic", synthetic}, {"n", n}, {"seed", seed}};
}

DatasetSource DatasetSource::from_json(const nlohmann::json& j) {
  DatasetSource s;
  s.path = j.value("path", std::string());
  s.target = j.value("target", std::string());
  s.synthetic = j.value("synthetic", std::string());
  s.n = j.value("n", std::size_t{0});
  s.seed = j.value("seed", std::uint64_t{0});
  s.validate();
  return s;
}

void DatasetSource::validate() const {
  if (!path.empty()) {
    if (target.empty()) throw ValidationError("dataset 'target' missing");
    return;
  }
  if (synthetic.empty()) {
    throw ValidationError("dataset needs either 'path' and 'target' or 'synthetic'");
  }
  if (synthetic != "square" && synthetic != "airfoil" && synthetic != "chp") {
    throw ValidationError("unknown synthetic dataset '" + synthetic + "'");
  }
  if (n < 2) throw ValidationError("synthetic dataset needs n >= 2");
}

double RefitPreset::resolve_lambda(std::size_t n_train) const {
  if (lambda) return *lambda;
  if (alpha) return 2.0 * static_cast<double>(n_train) * *alpha;
  throw ValidationError("refit preset '" + name + "' needs lambda or alpha");
}

void ExperimentConfig::validate() const {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0, 1)");
  }
  dataset.validate();
  gbdt.validate();
  if (gbdt_reg) gbdt_reg->validate();
  for (const auto& r : refits) {
    if (r.name.empty()) throw ValidationError("refit preset without a name");
    if (!r.lambda && !r.alpha) throw ValidationError("refit '" + r.name + "' needs lambda or alpha");
    if ((r.lambda && *r.lambda < 0.0) || (r.alpha && *r.alpha < 0.0)) {
      throw ValidationError("refit '" + r.name + "' has a negative penalty");
    }
  }
  if (perturbations.empty()) throw ValidationError("at least one perturbation size is required");
  for (const double s : perturbations) {
    if (!(s >= 0.0)) throw ValidationError("perturbation sizes must be >= 0");
  }
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  if (bootstrap_B < 2) throw ValidationError("bootstrap_B must be >= 2");
  if (!(refit_tol > 0.0) || refit_max_sweeps < 1) throw ValidationError("invalid refit tolerance");
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json refit_list = nlohmann::json::array();
  for (const auto& r : refits) {
    nlohmann::json e{{"name", r.name}, {"method", to_string(r.method)}};
    if (r.lambda) e["lambda"] = *r.lambda;
    if (r.alpha) e["alpha"] = *r.alpha;
    refit_list.push_back(std::move(e));
  }
  nlohmann::json j{{"name", name},
                   {"dataset", dataset.to_json()},
                   {"split", {{"train_fraction", train_fraction}, {"seed", split_seed}}},
                   {"gbdt", gbdt.to_json()},
                   {"refits", std::move(refit_list)},
                   {"perturbations", perturbations},
                   {"repeats", repeats},
                   {"bootstrap_B", bootstrap_B},
                   {"perturbation_seed", perturbation_seed},
                   {"refit_tol", refit_tol},
                   {"refit_max_sweeps", refit_max_sweeps},
                   {"output_dir", output_dir.string()}};
  if (gbdt_reg) {
    j["gbdt_reg"] = {{"gamma", gbdt_reg->gamma},
                     {"reg_lambda", gbdt_reg->reg_lambda},
                     {"reg_alpha", gbdt_reg->reg_alpha}};
  }
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  try {
    ExperimentConfig c;
    c.name = j.value("name", c.name);
    c.dataset = DatasetSource::from_json(j.at("dataset"));
    if (j.contains("split")) {
      c.train_fraction = j["split"].value("train_fraction", c.train_fraction);
      c.split_seed = j["split"].value("seed", c.split_seed);
    }
    if (j.contains("gbdt")) c.gbdt = GbdtParams::from_json(j["gbdt"]);
    if (j.contains("gbdt_reg") && !j["gbdt_reg"].is_null()) {
      TreeParams reg = c.gbdt.tree;
      reg.gamma = j["gbdt_reg"].value("gamma", 0.0);
      reg.reg_lambda = j["gbdt_reg"].value("reg_lambda", 0.0);
      reg.reg_alpha = j["gbdt_reg"].value("reg_alpha", 0.0);
      c.gbdt_reg = reg;
    }
    for (const auto& r : j.value("refits", nlohmann::json::array())) {
      RefitPreset p;
      p.name = r.at("name").get<std::string>();
      p.method = parse_refit_method(r.at("method").get<std::string>());
      if (r.contains("lambda")) p.lambda = r["lambda"].get<double>();
      if (r.contains("alpha")) p.alpha = r["alpha"].get<double>();
      c.refits.push_back(std::move(p));
    }
    c.perturbations = j.value("perturbations", c.perturbations);
    c.repeats = j.value("repeats", c.repeats);
    c.bootstrap_B = j.value("bootstrap_B", c.bootstrap_B);
    c.perturbation_seed = j.value("perturbation_seed", c.perturbation_seed);
    c.refit_tol = j.value("refit_tol", c.refit_tol);
    c.refit_max_sweeps = j.value("refit_max_sweeps", c.refit_max_sweeps);
    c.output_dir = j.value("output_dir", std::string());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("invalid experiment config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

ExperimentConfig preset_config(const std::string& dataset) {
  ExperimentConfig c;
  c.name = dataset;
  auto refits = [&](double rs, double rm, double rl, double ls, double lm, double ll) {
    c.refits = {{"OHE_Ridge_s", RefitMethod::kRidge, rs, std::nullopt},
                {"OHE_Ridge_m", RefitMethod::kRidge, rm, std::nullopt},
                {"OHE_Ridge_l", RefitMethod::kRidge, rl, std::nullopt},
                {"OHE_Lasso_s", RefitMethod::kLasso, std::nullopt, ls},
                {"OHE_Lasso_m", RefitMethod::kLasso, std::nullopt, lm},
                {"OHE_Lasso_l", RefitMethod::kLasso, std::nullopt, ll}};
  };
  TreeParams reg;
  if (dataset == "airfoil") {
    c.dataset.synthetic = "airfoil";
    c.dataset.n = 1503;
    c.gbdt.n_estimators = 500;
    c.gbdt.tree.max_depth = 7;
    c.gbdt.learning_rate = 0.15;
    reg.reg_alpha = 0.3;
    reg.reg_lambda = 0.2;
    reg.gamma = 0.0;
    refits(0.1, 1.0, 10.0, 6e-5, 8e-5, 10e-5);
  } else if (dataset == "chp") {
    c.dataset.synthetic = "chp";
    c.dataset.n = 20640;
    c.gbdt.n_estimators = 600;
    c.gbdt.tree.max_depth = 6;
    c.gbdt.learning_rate = 0.1;
    reg.reg_alpha = 1.75;
    reg.reg_lambda = 1.0;
    reg.gamma = 0.0;
    refits(100.0, 400.0, 1000.0, 4e-4, 7e-4, 2e-3);
  } else if (dataset == "bs") {
    c.dataset.path = "bike_sharing.csv";
    c.dataset.target = "cnt";
    c.gbdt.n_estimators = 500;
    c.gbdt.tree.max_depth = 6;
    c.gbdt.learning_rate = 0.07;
    reg.reg_alpha = 1.55;
    reg.reg_lambda = 0.5;
    reg.gamma = 0.07;
    refits(200.0, 400.0, 600.0, 2e-4, 3e-4, 4e-4);
    c.perturbations = {0.0, 0.05, 0.10};
  } else {
    throw ValidationError("unknown preset '" + dataset + "' (expected airfoil, chp or bs)");
  }
  reg.max_depth = c.gbdt.tree.max_depth;
  reg.min_samples_leaf = c.gbdt.tree.min_samples_leaf;
  c.gbdt_reg = reg;
  c.dataset.seed = 2023;
  return c;
}

const ResultRow& ResultTable::at(const std::string& model, double perturbation) const {
  for (const auto& r : rows) {
    if (r.model == model && r.perturbation == perturbation) return r;
  }
  throw ValidationError("no result for " + model + " at perturbation " + format_number(perturbation));
}

void ResultTable::write_csv(std::ostream& out) const {
  out << "model,perturbation,test_mse,perturbation_term\n";
  for (const auto& r : rows) {
    out << r.model << ',' << format_number(r.perturbation) << ',' << format_number(r.test_mse)
        << ',' << format_number(r.perturbation_term) << '\n';
  }
}

nlohmann::json ResultTable::to_json() const {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& r : rows) {
    list.push_back({{"model", r.model},
                    {"perturbation", r.perturbation},
                    {"test_mse", r.test_mse},
                    {"perturbation_term", r.perturbation_term}});
  }
  return {{"rows", std::move(list)}, {"nonconverged", nonconverged}};
}

ResultTable evaluate_models(const std::vector<NamedPredictor>& models, const Dataset& test,
                            const Vector& reference_std, const std::vector<double>& perturbations,
                            int repeats, std::uint64_t seed) {
  if (repeats < 1) throw ValidationError("repeats must be >= 1");
  std::vector<Vector> clean;
  for (const auto& [name, predict] : models) clean.push_back(predict(test.features()));

  ResultTable table;
  for (const auto& [name, predict] : models) {
    for (const double sigma : perturbations) table.rows.push_back({name, sigma, 0.0, 0.0});
  }
  const double rows = static_cast<double>(test.rows());
  for (std::size_t s = 0; s < perturbations.size(); ++s) {
    for (int r = 0; r < repeats; ++r) {
      PerturbationSpec spec;
      spec.sigma_fraction = perturbations[s];
      spec.seed = derive_seed(seed, kEvaluationStream + s, static_cast<std::uint64_t>(r));
      const Dataset moved = perturb(test, reference_std, spec);
      for (std::size_t m = 0; m < models.size(); ++m) {
        const Vector pred = models[m].second(moved.features());
        auto& row = table.rows[m * perturbations.size() + s];
        row.test_mse += (test.response() - pred).squaredNorm() / rows / repeats;
        row.perturbation_term += (pred - clean[m]).squaredNorm() / rows / repeats;
      }
    }
  }
  return table;
}

ResultTable run_pipeline(const ExperimentConfig& config) {
  config.validate();
  const Dataset data = config.dataset.load();
  const auto [train, test] = split(data, config.train_fraction, config.split_seed);
  const bool write = !config.output_dir.empty();
  if (write) std::filesystem::create_directories(config.output_dir);

  // Step 1: the tuned ensembles.
  auto xgb = std::make_shared<GbdtModel>(fit_gbdt(train, config.gbdt));
  std::vector<NamedPredictor> models;
  models.emplace_back("XGB", [xgb](const Matrix& x) { return xgb->predict(x); });
  if (config.gbdt_reg) {
    GbdtParams reg = config.gbdt;
    reg.tree = *config.gbdt_reg;
    auto xgb_reg = std::make_shared<GbdtModel>(fit_gbdt(train, reg));
    models.emplace_back("XGB_reg", [xgb_reg](const Matrix& x) { return xgb_reg->predict(x); });
    if (write) xgb_reg->save(config.output_dir / "gbdt_xgb_reg.json");
  }
  if (write) xgb->save(config.output_dir / "gbdt_xgb.json");

  // Step 2: one-hot encode XGB's leaves and drop duplicate columns.
  ResultTable nonconverged_holder;
  if (!config.refits.empty()) {
    auto encoder = std::make_shared<LeafEncoder>(build_encoder(*xgb, train, DedupMode::kPattern));
    const SparseDesign design = encode_rows(*encoder, train);
    if (write) {
      write_json(config.output_dir / "encoder.json", encoder->to_json());
      std::ofstream mtx(config.output_dir / "design_train.mtx");
      design.write_matrix_market(mtx);
    }

    // Step 3: refit per preset; presets of one method are solved as a
    // warm-started path from the largest penalty down.
    std::vector<std::pair<std::string, RefitResult>> fits;
    for (const RefitMethod method : {RefitMethod::kRidge, RefitMethod::kLasso}) {
      std::vector<std::pair<double, const RefitPreset*>> group;
      for (const auto& preset : config.refits) {
        if (preset.method == method) group.emplace_back(preset.resolve_lambda(train.rows()), &preset);
      }
      std::stable_sort(group.begin(), group.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<double> lambdas;
      for (const auto& g : group) lambdas.push_back(g.first);
      if (lambdas.empty()) continue;
      auto path = regularization_path(design, train.response(), method, lambdas, config.refit_tol,
                                      config.refit_max_sweeps);
      for (std::size_t k = 0; k < group.size(); ++k) {
        const RefitSpec spec{method, lambdas[k], config.refit_tol, config.refit_max_sweeps};
        if (!path[k].converged) nonconverged_holder.nonconverged.push_back(group[k].second->name);
        if (write) {
          write_json(config.output_dir / ("refit_" + group[k].second->name + ".json"),
                     path[k].to_json(spec));
        }
        fits.emplace_back(group[k].second->name, std::move(path[k]));
      }
    }
    for (const auto& preset : config.refits) {
      const auto it = std::find_if(fits.begin(), fits.end(),
                                   [&](const auto& f) { return f.first == preset.name; });
      auto beta = std::make_shared<Vector>(it->second.coefficients.beta);
      models.emplace_back(preset.name,
                          [encoder, beta](const Matrix& x) { return encoder->dot(x, *beta); });
    }
  }

  ResultTable table = evaluate_models(models, test, train.column_std(), config.perturbations,
                                      config.repeats, config.perturbation_seed);
  table.nonconverged = std::move(nonconverged_holder.nonconverged);
  if (write) {
    std::ofstream csv(config.output_dir / "results.csv");
    table.write_csv(csv);
    write_json(config.output_dir / "results.json", table.to_json());
    write_json(config.output_dir / "config.json", config.to_json());
  }
  return table;
}

std::size_t GbdtGrid::size() const {
  return n_estimators.size() * max_depth.size() * learning_rate.size() * gamma.size() *
         reg_lambda.size() * reg_alpha.size();
}

GridSearchResult grid_search(const Dataset& train, const GbdtGrid& grid, int folds,
                             std::uint64_t seed) {
  if (grid.size() == 0) throw ValidationError("grid search needs a non-empty grid");
  if (folds < 2) throw ValidationError("grid search needs at least two folds");
  const auto fold_of = kfold_assignment(train.rows(), folds, seed);

  std::vector<Dataset> fit_parts;
  std::vector<Dataset> hold_parts;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::size_t> in;
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < train.rows(); ++i) (fold_of[i] == f ? out : in).push_back(i);
    fit_parts.push_back(train.subset(in));
    hold_parts.push_back(train.subset(out));
  }

  const int max_trees = *std::max_element(grid.n_estimators.begin(), grid.n_estimators.end());
  GridSearchResult result;
  // Boosting is sequential, so one fit with the largest tree count scores
  // every n_estimators value through staged predictions.
  for (const int depth : grid.max_depth) {
    for (const double lr : grid.learning_rate) {
      for (const double gamma : grid.gamma) {
        for (const double lambda : grid.reg_lambda) {
          for (const double alpha : grid.reg_alpha) {
            GbdtParams params;
            params.n_estimators = max_trees;
            params.learning_rate = lr;
            params.tree.max_depth = depth;
            params.tree.gamma = gamma;
            params.tree.reg_lambda = lambda;
            params.tree.reg_alpha = alpha;
            params.validate();
            std::vector<double> sse(grid.n_estimators.size(), 0.0);
            for (int f = 0; f < folds; ++f) {
              const GbdtModel model = fit_gbdt(fit_parts[static_cast<std::size_t>(f)], params);
              const auto& hold = hold_parts[static_cast<std::size_t>(f)];
              const Matrix staged = model.staged_predict(hold.features(), grid.n_estimators);
              for (std::size_t k = 0; k < grid.n_estimators.size(); ++k) {
                sse[k] += (hold.response() - staged.col(static_cast<Eigen::Index>(k))).squaredNorm();
              }
            }
            for (std::size_t k = 0; k < grid.n_estimators.size(); ++k) {
              GbdtParams p = params;
              p.n_estimators = grid.n_estimators[k];
              result.scores.push_back({p, sse[k] / static_cast<double>(train.rows())});
            }
          }
        }
      }
    }
  }
  const auto best = std::min_element(
      result.scores.begin(), result.scores.end(), [](const GridScore& a, const GridScore& b) {
        return std::tie(a.cv_mse, a.params.n_estimators, a.params.tree.max_depth) <
               std::tie(b.cv_mse, b.params.n_estimators, b.params.tree.max_depth);
      });
  result.best = best->params;
  return result;
}

PlotKind parse_plot_kind(const std::string& name) {
  if (name == "complexity_sweep") return PlotKind::kComplexitySweep;
  if (name == "lambda_sweep") return PlotKind::kLambdaSweep;
  if (name == "decomposition_stack") return PlotKind::kDecompositionStack;
  throw ValidationError("unknown plot kind '" + name + "'");
}

void emit_plot_data(const std::vector<RiskReport>& reports, PlotKind kind, std::ostream& out) {
  switch (kind) {
    case PlotKind::kComplexitySweep:
      out << "# complexity_sweep: risk terms per boosting round count\n";
      out << "rounds,bias_sq_plus_irreducible,variance,perturbation,sum_of_terms,"
             "perturbed_risk,clean_risk,clean_risk_se,sum_gap\n";
      break;
    case PlotKind::kLambdaSweep:
      out << "# lambda_sweep: risk terms per refit penalty\n";
      out << "lambda,bias_sq_plus_irreducible,variance,perturbation,sum_of_terms,"
             "perturbed_risk,clean_risk,clean_risk_se,sum_gap\n";
      break;
    case PlotKind::kDecompositionStack:
      out << "# decomposition_stack: stacked terms (i)+(iv), (ii), (iii) against the direct risk\n";
      out << "index,bias_sq_plus_irreducible,variance,perturbation,sum_of_terms,direct_risk,"
             "sum_gap\n";
      break;
  }
  for (const auto& r : reports) {
    out << format_number(r.index) << ',' << format_number(r.bias_sq_plus_irreducible) << ','
        << format_number(r.variance) << ',' << format_number(r.perturbation) << ','
        << format_number(r.sum_of_terms()) << ',' << format_number(r.direct_risk);
    if (kind != PlotKind::kDecompositionStack) {
      out << ',' << format_number(r.clean_risk) << ',' << format_number(r.clean_risk_se);
    }
    out << ',' << format_number(r.sum_gap) << '\n';
  }
}

void emit_plot_data(const std::vector<RiskReport>& reports, PlotKind kind,
                    const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  emit_plot_data(reports, kind, out);
}

}  // namespace gbohe
