#include "gbohe/boosting.h"

#include <fstream>

namespace gbohe {

void GbdtParams::validate() const {
  if (n_estimators < 1) throw ValidationError("n_estimators must be >= 1");
  if (!(learning_rate > 0.0 && learning_rate <= 1.0)) {
    throw ValidationError("learning_rate must lie in (0, 1]");
  }
  tree.validate();
}

nlohmann::json GbdtParams::to_json() const {
  nlohmann::json j{{"n_estimators", n_estimators},
                   {"learning_rate", learning_rate},
                   {"max_depth", tree.max_depth},
                   {"min_samples_leaf", tree.min_samples_leaf},
                   {"gamma", tree.gamma},
                   {"reg_lambda", tree.reg_lambda},
                   {"reg_alpha", tree.reg_alpha}};
  j["base_score"] = base_score ? nlohmann::json(*base_score) : nlohmann::json(nullptr);
  return j;
}

GbdtParams GbdtParams::from_json(const nlohmann::json& j) {
  GbdtParams p;
  p.n_estimators = j.value("n_estimators", p.n_estimators);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.tree.max_depth = j.value("max_depth", p.tree.max_depth);
  p.tree.min_samples_leaf = j.value("min_samples_leaf", p.tree.min_samples_leaf);
  p.tree.gamma = j.value("gamma", p.tree.gamma);
  p.tree.reg_lambda = j.value("reg_lambda", p.tree.reg_lambda);
  p.tree.reg_alpha = j.value("reg_alpha", p.tree.reg_alpha);
  if (j.contains("base_score") && !j["base_score"].is_null()) {
    p.base_score = j["base_score"].get<double>();
  }
  return p;
}

GbdtModel::GbdtModel(double gamma0, double learning_rate, std::vector<Tree> trees,
                     GbdtParams params)
    : gamma0_(gamma0),
      learning_rate_(learning_rate),
      trees_(std::move(trees)),
      params_(std::move(params)) {}

double GbdtModel::predict(std::span<const double> x) const {
  double sum = 0.0;
  for (const auto& tree : trees_) sum += tree.predict(x);
  return gamma0_ + learning_rate_ * sum;
}

Vector GbdtModel::predict(const Matrix& x) const {
  Vector out(x.rows());
  const auto q = static_cast<std::size_t>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out[i] = predict(std::span<const double>(x.data() + i * x.cols(), q));
  }
  return out;
}

std::vector<double> GbdtModel::staged_predict(std::span<const double> x) const {
  std::vector<double> out;
  out.reserve(trees_.size() + 1);
  out.push_back(gamma0_ + learning_rate_ * 0.0);
  double sum = 0.0;
  for (const auto& tree : trees_) {
    sum += tree.predict(x);
    out.push_back(gamma0_ + learning_rate_ * sum);
  }
  return out;
}

Matrix GbdtModel::staged_predict(const Matrix& x, std::span<const int> stages) const {
  for (const int s : stages) {
    if (s < 0 || static_cast<std::size_t>(s) > trees_.size()) {
      throw ValidationError("stage " + std::to_string(s) + " outside [0, " +
                            std::to_string(trees_.size()) + "]");
    }
  }
  Matrix out(x.rows(), static_cast<Eigen::Index>(stages.size()));
  const auto q = static_cast<std::size_t>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto staged = staged_predict(std::span<const double>(x.data() + i * x.cols(), q));
    for (std::size_t k = 0; k < stages.size(); ++k) {
      out(i, static_cast<Eigen::Index>(k)) = staged[static_cast<std::size_t>(stages[k])];
    }
  }
  return out;
}

GbdtModel GbdtModel::truncated(std::size_t m) const {
  if (m > trees_.size()) throw ValidationError("cannot truncate beyond the ensemble size");
  GbdtParams p = params_;
  p.n_estimators = static_cast<int>(m);
  return GbdtModel(gamma0_, learning_rate_,
                   std::vector<Tree>(trees_.begin(), trees_.begin() + static_cast<std::ptrdiff_t>(m)),
                   p);
}

nlohmann::json GbdtModel::to_json() const {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : trees_) trees.push_back(t.to_json());
  return {{"version", kFormatVersion},
          {"gamma0", gamma0_},
          {"learning_rate", learning_rate_},
          {"trees", std::move(trees)},
          {"params", params_.to_json()}};
}

GbdtModel GbdtModel::from_json(const nlohmann::json& j) {
  if (j.value("version", std::string()) != kFormatVersion) {
    throw ValidationError(std::string("model file is not ") + kFormatVersion);
  }
  std::vector<Tree> trees;
  for (const auto& t : j.at("trees")) trees.push_back(Tree::from_json(t));
  return GbdtModel(j.at("gamma0").get<double>(), j.at("learning_rate").get<double>(),
                   std::move(trees), GbdtParams::from_json(j.at("params")));
}

void GbdtModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

GbdtModel GbdtModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

GbdtModel fit_gbdt(const Dataset& train, const GbdtParams& params,
                   std::vector<double>* training_mse) {
  params.validate();
  if (train.rows() < 2) throw ValidationError("fit_gbdt needs at least two rows");

  const Vector& y = train.response();
  const double gamma0 = params.base_score.value_or(y.mean());
  const auto n = static_cast<std::size_t>(y.size());

  const SortedColumns columns(train.features());
  std::vector<double> prediction(n, gamma0);
  std::vector<double> gradients(n);
  const std::vector<double> hessians(n, 1.0);

  auto mse = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double r = y[static_cast<Eigen::Index>(i)] - prediction[i];
      s += r * r;
    }
    return s / static_cast<double>(n);
  };
  if (training_mse) {
    training_mse->clear();
    training_mse->push_back(mse());
  }

  std::vector<Tree> trees;
  trees.reserve(static_cast<std::size_t>(params.n_estimators));
  std::vector<double> tree_sum(n, 0.0);
  for (int m = 0; m < params.n_estimators; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      gradients[i] = prediction[i] - y[static_cast<Eigen::Index>(i)];
    }
    Tree tree = fit_tree(columns, gradients, hessians, params.tree);
    for (std::size_t i = 0; i < n; ++i) {
      tree_sum[i] += tree.predict(train.row(i));
      // Same association as GbdtModel::predict so training predictions match bit for bit.
      prediction[i] = gamma0 + params.learning_rate * tree_sum[i];
    }
    trees.push_back(std::move(tree));
    if (training_mse) training_mse->push_back(mse());
  }
  return GbdtModel(gamma0, params.learning_rate, std::move(trees), params);
}

double mean_squared_error(const Vector& y, const Vector& prediction) {
  if (y.size() != prediction.size() || y.size() == 0) {
    throw ValidationError("mean_squared_error: length mismatch or empty input");
  }
  return (y - prediction).squaredNorm() / static_cast<double>(y.size());
}

}  // namespace gbohe
