// gbohe: boosting, leaf encoding, refits and perturbation-risk experiments.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gbohe/boosting.h"
#include "gbohe/data.h"
#include "gbohe/decompose.h"
#include "gbohe/encode.h"
#include "gbohe/experiment.h"
#include "gbohe/refit.h"
#include "gbohe/robust.h"

namespace {

using namespace gbohe;

// Flags shared by the subcommands that work on a dataset. Anything given on
// the command line overrides the config file or preset.
struct DataOptions {
  std::string config;
  std::string preset;
  std::string csv;
  std::string target;
  std::string synthetic;
  std::size_t n = 0;
  std::uint64_t data_seed = 0;
  double train_fraction = -1.0;
  std::uint64_t split_seed = 0;
  bool split_seed_set = false;

  int n_estimators = -1;
  int max_depth = -1;
  double learning_rate = -1.0;
  double gamma = -1.0;
  double reg_lambda = -1.0;
  double reg_alpha = -1.0;
  int min_samples_leaf = -1;
};

void add_data_options(CLI::App* cmd, DataOptions& o, bool with_gbdt) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)");
  cmd->add_option("--preset", o.preset, "Shipped preset: airfoil, chp or bs");
  cmd->add_option("--data", o.csv, "CSV file with a header row");
  cmd->add_option("--target", o.target, "Response column of --data");
  cmd->add_option("--synthetic", o.synthetic, "square, airfoil or chp");
  cmd->add_option("--n", o.n, "Rows of the synthetic dataset");
  cmd->add_option("--data-seed", o.data_seed, "Seed of the synthetic dataset");
  cmd->add_option("--train-fraction", o.train_fraction, "Share of rows used for training");
  cmd->add_option_function<std::uint64_t>(
      "--split-seed",
      [&o](const std::uint64_t& s) {
        o.split_seed = s;
        o.split_seed_set = true;
      },
      "Seed of the train/test shuffle");
  if (!with_gbdt) return;
  cmd->add_option("--n-estimators", o.n_estimators, "Boosting rounds");
  cmd->add_option("--max-depth", o.max_depth, "Maximum tree depth");
  cmd->add_option("--learning-rate", o.learning_rate, "Shrinkage per tree");
  cmd->add_option("--gamma", o.gamma, "Minimum split gain");
  cmd->add_option("--reg-lambda", o.reg_lambda, "L2 penalty on leaf values");
  cmd->add_option("--reg-alpha", o.reg_alpha, "L1 penalty on leaf values");
  cmd->add_option("--min-samples-leaf", o.min_samples_leaf, "Minimum rows per leaf");
}

ExperimentConfig resolve_config(const DataOptions& o) {
  ExperimentConfig c;
  if (!o.config.empty()) {
    c = ExperimentConfig::load(o.config);
  } else if (!o.preset.empty()) {
    c = preset_config(o.preset);
  }
  if (!o.csv.empty()) {
    c.dataset = DatasetSource{};
    c.dataset.path = o.csv;
    c.dataset.target = o.target;
  } else if (!o.synthetic.empty()) {
    c.dataset = DatasetSource{};
    c.dataset.synthetic = o.synthetic;
    c.dataset.n = o.n;
    c.dataset.seed = o.data_seed;
  } else {
    if (o.n > 0) c.dataset.n = o.n;
    if (o.data_seed != 0) c.dataset.seed = o.data_seed;
  }
  if (c.dataset.path.empty() && c.dataset.synthetic.empty()) {
    throw ValidationError("no dataset: give --config, --preset, --data/--target or --synthetic");
  }
  if (!c.dataset.path.empty() && c.dataset.target.empty()) {
    throw ValidationError("--data needs --target");
  }
  if (!c.dataset.synthetic.empty() && c.dataset.n == 0) {
    throw ValidationError("synthetic data needs --n");
  }
  if (o.train_fraction >= 0.0) c.train_fraction = o.train_fraction;
  if (o.split_seed_set) c.split_seed = o.split_seed;
  if (o.n_estimators >= 0) c.gbdt.n_estimators = o.n_estimators;
  if (o.max_depth >= 0) c.gbdt.tree.max_depth = o.max_depth;
  if (o.learning_rate >= 0.0) c.gbdt.learning_rate = o.learning_rate;
  if (o.gamma >= 0.0) c.gbdt.tree.gamma = o.gamma;
  if (o.reg_lambda >= 0.0) c.gbdt.tree.reg_lambda = o.reg_lambda;
  if (o.reg_alpha >= 0.0) c.gbdt.tree.reg_alpha = o.reg_alpha;
  if (o.min_samples_leaf >= 0) c.gbdt.tree.min_samples_leaf = o.min_samples_leaf;
  c.validate();
  return c;
}

std::pair<Dataset, Dataset> load_split(const ExperimentConfig& c) {
  return split(c.dataset.load(), c.train_fraction, c.split_seed);
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

Coefficients load_coefficients(const std::string& path, int p) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
    if (j.at("p").get<int>() != p) {
      throw ValidationError(path + ": coefficient count does not match the encoder");
    }
    Coefficients c{Vector::Zero(p + 1)};
    c.beta[0] = j.at("intercept").get<double>();
    for (const auto& pair : j.at("coefficients")) {
      const auto k = pair.at(0).get<Eigen::Index>();
      if (k < 1 || k > p) throw ValidationError(path + ": coefficient index out of range");
      c.beta[k] = pair.at(1).get<double>();
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path + ": " + e.what());
  }
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos
                                                                            : comma - start);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ValidationError("not a number list: '" + text + "'");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

RefitSpec make_spec(const std::string& method, double lambda, double alpha, std::size_t n_train,
                    const ExperimentConfig& c) {
  RefitSpec spec;
  spec.method = parse_refit_method(method);
  if (lambda >= 0.0 && alpha >= 0.0) throw ValidationError("give --lambda or --alpha, not both");
  if (lambda >= 0.0) {
    spec.lambda = lambda;
  } else if (alpha >= 0.0) {
    spec.lambda = 2.0 * static_cast<double>(n_train) * alpha;
  } else {
    throw ValidationError("refit needs --lambda or --alpha");
  }
  spec.tol = c.refit_tol;
  spec.max_sweeps = c.refit_max_sweeps;
  spec.validate();
  return spec;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient boosting with leaf one-hot refits and perturbation-risk analysis"};
  app.require_subcommand(1);

  // train
  DataOptions train_opts;
  std::string model_out = "model.json";
  auto* train_cmd = app.add_subcommand("train", "Fit a boosted ensemble on the training split");
  add_data_options(train_cmd, train_opts, true);
  train_cmd->add_option("--out", model_out, "Where to write the model JSON");

  // encode
  DataOptions encode_opts;
  std::string encode_model;
  std::string encode_dir = ".";
  std::string dedup = "pattern";
  auto* encode_cmd = app.add_subcommand("encode", "One-hot encode the leaves of a trained model");
  add_data_options(encode_cmd, encode_opts, false);
  encode_cmd->add_option("--model", encode_model, "Model JSON")->required();
  encode_cmd->add_option("--out-dir", encode_dir, "Directory for encoder.json and design_train.mtx");
  encode_cmd->add_option("--dedup", dedup, "pattern or pattern-and-value");

  // refit
  DataOptions refit_opts;
  std::string refit_model;
  std::string refit_method = "ridge";
  double refit_lambda = -1.0;
  double refit_alpha = -1.0;
  std::string refit_out = "refit.json";
  auto* refit_cmd = app.add_subcommand("refit", "Refit leaf coefficients with ridge or lasso");
  add_data_options(refit_cmd, refit_opts, false);
  refit_cmd->add_option("--model", refit_model, "Model JSON")->required();
  refit_cmd->add_option("--method", refit_method, "ridge or lasso");
  refit_cmd->add_option("--lambda", refit_lambda, "Penalty on the unscaled objective");
  refit_cmd->add_option("--alpha", refit_alpha, "Penalty on the 1/(2n)-scaled objective");
  refit_cmd->add_option("--out", refit_out, "Where to write the coefficients");

  // evaluate
  DataOptions eval_opts;
  std::string eval_model;
  std::vector<std::string> eval_coefs;
  std::string eval_sigmas;
  int eval_repeats = -1;
  std::uint64_t eval_seed = 0;
  auto* eval_cmd = app.add_subcommand("evaluate", "Test MSE and perturbation term under noise");
  add_data_options(eval_cmd, eval_opts, false);
  eval_cmd->add_option("--model", eval_model, "Model JSON")->required();
  eval_cmd->add_option("--coefficients", eval_coefs, "Refit JSON files to evaluate as well");
  eval_cmd->add_option("--sigmas", eval_sigmas, "Comma-separated noise fractions");
  eval_cmd->add_option("--repeats", eval_repeats, "Noise draws per size");
  eval_cmd->add_option("--seed", eval_seed, "Noise seed");

  // decompose
  DataOptions dec_opts;
  std::string dec_method = "none";
  double dec_lambda = -1.0;
  double dec_alpha = -1.0;
  double dec_sigma = 0.05;
  int dec_B = -1;
  int dec_R = -1;
  std::uint64_t dec_seed = 0;
  auto* dec_cmd = app.add_subcommand("decompose", "Four-term decomposition of the perturbed risk");
  add_data_options(dec_cmd, dec_opts, true);
  dec_cmd->add_option("--method", dec_method, "none (original GBDT), ridge or lasso");
  dec_cmd->add_option("--lambda", dec_lambda, "Refit penalty");
  dec_cmd->add_option("--alpha", dec_alpha, "Refit penalty on the scaled objective");
  dec_cmd->add_option("--sigma", dec_sigma, "Noise fraction");
  dec_cmd->add_option("--bootstrap", dec_B, "Bootstrap fits");
  dec_cmd->add_option("--repeats", dec_R, "Noise draws");
  dec_cmd->add_option("--seed", dec_seed, "Seed for resamples and noise");

  // sweep
  DataOptions sweep_opts;
  std::string sweep_kind = "complexity_sweep";
  std::string sweep_stages;
  std::string sweep_lambdas;
  std::string sweep_method = "ridge";
  std::string sweep_out;
  double sweep_sigma = 0.05;
  int sweep_B = -1;
  int sweep_R = -1;
  std::uint64_t sweep_seed = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "Decomposition over boosting rounds or penalties");
  add_data_options(sweep_cmd, sweep_opts, true);
  sweep_cmd->add_option("--kind", sweep_kind,
                        "complexity_sweep, lambda_sweep or decomposition_stack");
  sweep_cmd->add_option("--stages", sweep_stages, "Comma-separated boosting rounds");
  sweep_cmd->add_option("--lambdas", sweep_lambdas, "Comma-separated penalties");
  sweep_cmd->add_option("--method", sweep_method, "ridge or lasso for penalty sweeps");
  sweep_cmd->add_option("--sigma", sweep_sigma, "Noise fraction");
  sweep_cmd->add_option("--bootstrap", sweep_B, "Bootstrap fits");
  sweep_cmd->add_option("--repeats", sweep_R, "Noise draws");
  sweep_cmd->add_option("--seed", sweep_seed, "Seed for resamples and noise");
  sweep_cmd->add_option("--out", sweep_out, "CSV path (stdout when omitted)");

  // verify-theorem1
  int trials = 100;
  std::uint64_t theorem_seed = 1;
  Theorem1Options theorem_opts;
  auto* theorem_cmd =
      app.add_subcommand("verify-theorem1", "Check the robust-regression/ridge equivalence");
  theorem_cmd->add_option("--trials", trials, "Random instances");
  theorem_cmd->add_option("--seed", theorem_seed, "Instance seed");
  theorem_cmd->add_option("--samples", theorem_opts.samples_per_trial,
                          "Sampled perturbations per instance");

  // reproduce
  DataOptions repro_opts;
  std::string repro_dir;
  auto* repro_cmd =
      app.add_subcommand("reproduce", "Full comparison table: XGB, XGB_reg and the refits");
  add_data_options(repro_cmd, repro_opts, true);
  repro_cmd->add_option("--output-dir", repro_dir, "Artifact directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) {
      const auto config = resolve_config(train_opts);
      const auto [train, test] = load_split(config);
      std::vector<double> curve;
      const GbdtModel model = fit_gbdt(train, config.gbdt, &curve);
      model.save(model_out);
      nlohmann::json out{{"dataset", train.summary()},
                         {"trees", model.size()},
                         {"train_mse", curve.back()},
                         {"test_mse", mean_squared_error(test.response(),
                                                         model.predict(test.features()))},
                         {"model", model_out}};
      std::cout << out.dump(2) << '\n';
    } else if (*encode_cmd) {
      const auto config = resolve_config(encode_opts);
      const auto [train, test] = load_split(config);
      const GbdtModel model = GbdtModel::load(encode_model);
      DedupMode mode;
      if (dedup == "pattern") {
        mode = DedupMode::kPattern;
      } else if (dedup == "pattern-and-value") {
        mode = DedupMode::kPatternAndValue;
      } else {
        throw ValidationError("--dedup must be pattern or pattern-and-value");
      }
      const LeafEncoder encoder = build_encoder(model, train, mode);
      const SparseDesign design = encode_rows(encoder, train);
      std::filesystem::create_directories(encode_dir);
      write_file(encode_dir + "/encoder.json", encoder.to_json().dump(2) + "\n");
      std::ofstream mtx(encode_dir + "/design_train.mtx");
      design.write_matrix_market(mtx);
      std::size_t leaves = 0;
      for (const auto& t : model.trees()) leaves += static_cast<std::size_t>(t.leaf_count());
      std::cout << nlohmann::json{{"leaves", leaves},
                                  {"p", encoder.p()},
                                  {"rows", design.rows},
                                  {"nnz", design.nnz()}}
                       .dump(2)
                << '\n';
    } else if (*refit_cmd) {
      const auto config = resolve_config(refit_opts);
      const auto [train, test] = load_split(config);
      const GbdtModel model = GbdtModel::load(refit_model);
      const LeafEncoder encoder = build_encoder(model, train, DedupMode::kPattern);
      const SparseDesign design = encode_rows(encoder, train);
      const RefitSpec spec = make_spec(refit_method, refit_lambda, refit_alpha, train.rows(), config);
      const RefitResult result = refit(design, train.response(), spec);
      write_file(refit_out, result.to_json(spec).dump(2) + "\n");
      const Vector pred = encoder.dot(test.features(), result.coefficients.beta);
      std::cout << nlohmann::json{{"lambda", spec.lambda},
                                  {"sweeps_used", result.sweeps_used},
                                  {"converged", result.converged},
                                  {"test_mse", mean_squared_error(test.response(), pred)}}
                       .dump(2)
                << '\n';
      if (!result.converged) {
        throw ConvergenceError("coordinate descent stopped after " +
                               std::to_string(result.sweeps_used) + " sweeps");
      }
    } else if (*eval_cmd) {
      auto config = resolve_config(eval_opts);
      if (!eval_sigmas.empty()) config.perturbations = parse_list(eval_sigmas);
      if (eval_repeats > 0) config.repeats = eval_repeats;
      if (eval_seed != 0) config.perturbation_seed = eval_seed;
      config.validate();
      const auto [train, test] = load_split(config);
      auto model = std::make_shared<GbdtModel>(GbdtModel::load(eval_model));
      std::vector<NamedPredictor> models;
      models.emplace_back("model", [model](const Matrix& x) { return model->predict(x); });
      if (!eval_coefs.empty()) {
        auto encoder =
            std::make_shared<LeafEncoder>(build_encoder(*model, train, DedupMode::kPattern));
        for (const auto& path : eval_coefs) {
          auto beta = std::make_shared<Vector>(load_coefficients(path, encoder->p()).beta);
          models.emplace_back(std::filesystem::path(path).stem().string(),
                              [encoder, beta](const Matrix& x) { return encoder->dot(x, *beta); });
        }
      }
      const ResultTable table = evaluate_models(models, test, train.column_std(),
                                                config.perturbations, config.repeats,
                                                config.perturbation_seed);
      table.write_csv(std::cout);
    } else if (*dec_cmd) {
      const auto config = resolve_config(dec_opts);
      const auto [train, test] = load_split(config);
      PerturbationSpec spec{dec_sigma, dec_seed, dec_R > 0 ? dec_R : config.repeats};
      const int B = dec_B > 0 ? dec_B : config.bootstrap_B;
      Pipeline pipeline;
      if (dec_method == "none") {
        pipeline = original_gbdt_pipeline(config.gbdt);
      } else {
        pipeline = refit_pipeline(config.gbdt,
                                  make_spec(dec_method, dec_lambda, dec_alpha, train.rows(), config));
      }
      const RiskReport report = estimate_risk_decomposition(train, test, pipeline, spec, B);
      std::cout << report.to_json().dump(2) << '\n';
    } else if (*sweep_cmd) {
      const auto config = resolve_config(sweep_opts);
      const auto [train, test] = load_split(config);
      const PlotKind kind = parse_plot_kind(sweep_kind);
      PerturbationSpec spec{sweep_sigma, sweep_seed, sweep_R > 0 ? sweep_R : config.repeats};
      const int B = sweep_B > 0 ? sweep_B : config.bootstrap_B;
      std::vector<double> index;
      PipelineFamily family;
      if (!sweep_lambdas.empty()) {
        index = parse_list(sweep_lambdas);
        family = refit_path_family(config.gbdt, parse_refit_method(sweep_method), index,
                                   config.refit_tol, config.refit_max_sweeps);
      } else if (!sweep_stages.empty()) {
        std::vector<int> stages;
        for (const double s : parse_list(sweep_stages)) {
          if (s < 0 || s != static_cast<int>(s)) throw ValidationError("--stages must be integers");
          stages.push_back(static_cast<int>(s));
        }
        index.assign(stages.begin(), stages.end());
        family = boosting_rounds_family(config.gbdt, stages);
      } else {
        throw ValidationError("sweep needs --stages or --lambdas");
      }
      const auto reports = decomposition_sweep(train, test, family, index, spec, B);
      if (sweep_out.empty()) {
        emit_plot_data(reports, kind, std::cout);
      } else {
        emit_plot_data(reports, kind, std::filesystem::path(sweep_out));
      }
    } else if (*theorem_cmd) {
      const Theorem1Report report = verify_theorem1(trials, theorem_seed, theorem_opts);
      std::cout << report.to_json().dump(2) << '\n';
      return report.failures == 0 ? 0 : 1;
    } else if (*repro_cmd) {
      auto config = resolve_config(repro_opts);
      if (!repro_dir.empty()) config.output_dir = repro_dir;
      const ResultTable table = run_pipeline(config);
      table.write_csv(std::cout);
      if (!table.nonconverged.empty()) {
        std::string names;
        for (const auto& n : table.nonconverged) names += " " + n;
        throw ConvergenceError("refits hit max_sweeps:" + names);
      }
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConvergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
