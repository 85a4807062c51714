#include "gbohe/data.h"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

namespace gbohe {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  s = s.substr(first, last - first + 1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

// Population mean/sd of a vector; used to standardize synthetic responses.
std::pair<double, double> mean_sd(const Vector& v) {
  const double mean = v.mean();
  const double var = (v.array() - mean).square().mean();
  return {mean, std::sqrt(var)};
}

template <std::size_t N>
double pick(const std::array<double, N>& grid, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> index(0, N - 1);
  return grid[index(rng)];
}

}  // namespace

Dataset::Dataset(Matrix features, Vector response, std::vector<std::string> column_names,
                 std::optional<Vector> truth)
    : features_(std::move(features)),
      response_(std::move(response)),
      column_names_(std::move(column_names)),
      truth_(std::move(truth)) {
  if (features_.rows() < 1 || features_.cols() < 1) {
    throw ValidationError("dataset needs at least one row and one predictor");
  }
  if (response_.size() != features_.rows()) {
    throw ValidationError("response length does not match the number of rows");
  }
  if (column_names_.size() != cols()) {
    throw ValidationError("column name count does not match the number of predictors");
  }
  if (truth_ && truth_->size() != features_.rows()) {
    throw ValidationError("truth vector length does not match the number of rows");
  }
  if (!features_.allFinite() || !response_.allFinite()) {
    throw ValidationError("dataset contains missing or non-finite values");
  }
  column_std_ = column_stats(features_);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  const auto n = static_cast<Eigen::Index>(indices.size());
  Matrix x(n, features_.cols());
  Vector y(n);
  std::optional<Vector> t;
  if (truth_) t = Vector(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto src = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(i)]);
    if (src >= features_.rows()) throw ValidationError("subset index out of range");
    x.row(i) = features_.row(src);
    y[i] = response_[src];
    if (t) (*t)[i] = (*truth_)[src];
  }
  return Dataset(std::move(x), std::move(y), column_names_, std::move(t));
}

Dataset Dataset::with_features(Matrix features) const {
  return Dataset(std::move(features), response_, column_names_, truth_);
}

nlohmann::json Dataset::summary() const {
  nlohmann::json j;
  j["n"] = rows();
  j["q"] = cols();
  j["column_names"] = column_names_;
  j["column_std"] = std::vector<double>(column_std_.data(), column_std_.data() + column_std_.size());
  return j;
}

Vector column_stats(const Matrix& features) {
  const auto q = features.cols();
  Vector mean = Vector::Zero(q);
  Vector m2 = Vector::Zero(q);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double count = static_cast<double>(i + 1);
    for (Eigen::Index j = 0; j < q; ++j) {
      const double delta = features(i, j) - mean[j];
      mean[j] += delta / count;
      m2[j] += delta * (features(i, j) - mean[j]);
    }
  }
  return (m2 / static_cast<double>(features.rows())).cwiseMax(0.0).cwiseSqrt();
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + ": missing header row");
  const auto header = split_fields(line);
  const auto target_it = std::find(header.begin(), header.end(), target_column);
  if (target_it == header.end()) {
    throw ValidationError(path.string() + ": target column '" + target_column + "' not found");
  }
  const auto target = static_cast<std::size_t>(target_it - header.begin());

  std::vector<std::string> names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j != target) names.push_back(header[j]);
  }
  if (names.empty()) throw ValidationError(path.string() + ": no predictor columns");

  std::vector<double> cells;
  std::vector<double> response;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw ValidationError(path.string() + ": row " + std::to_string(line_no) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < fields.size(); ++j) {
      const auto& cell = fields[j];
      double value = 0.0;
      const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() ||
          !std::isfinite(value)) {
        throw ValidationError(path.string() + ": non-numeric cell '" + cell + "' at row " +
                              std::to_string(line_no) + ", column '" + header[j] + "'");
      }
      if (j == target) {
        response.push_back(value);
      } else {
        cells.push_back(value);
      }
    }
  }
  if (response.empty()) throw ValidationError(path.string() + ": no data rows");

  const auto n = static_cast<Eigen::Index>(response.size());
  const auto q = static_cast<Eigen::Index>(names.size());
  Matrix x = Eigen::Map<const Matrix>(cells.data(), n, q);
  Vector y = Eigen::Map<const Vector>(response.data(), n);
  return Dataset(std::move(x), std::move(y), std::move(names));
}

void save_csv(const Dataset& ds, const std::filesystem::path& path,
              const std::string& target_column) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.precision(17);
  for (const auto& name : ds.column_names()) out << name << ',';
  out << target_column << '\n';
  for (std::size_t i = 0; i < ds.rows(); ++i) {
    for (const double v : ds.row(i)) out << v << ',';
    out << ds.response()[static_cast<Eigen::Index>(i)] << '\n';
  }
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.rows();
  const auto n_train =
      static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  if (n_train < 1 || n_train >= n) {
    throw ValidationError("train fraction " + std::to_string(train_fraction) +
                          " leaves an empty part for n = " + std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::span<const std::size_t> all(order);
  return {ds.subset(all.first(n_train)), ds.subset(all.subspan(n_train))};
}

Dataset perturb(const Dataset& ds, const Vector& reference_std, const PerturbationSpec& spec) {
  if (static_cast<std::size_t>(reference_std.size()) != ds.cols()) {
    throw ValidationError("reference std has " + std::to_string(reference_std.size()) +
                          " entries, dataset has " + std::to_string(ds.cols()) + " predictors");
  }
  if (spec.sigma_fraction < 0.0) throw ValidationError("perturbation size must be >= 0");
  Matrix x = ds.features();
  if (spec.sigma_fraction == 0.0) return ds.with_features(std::move(x));

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Vector scale = spec.sigma_fraction * reference_std;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double z = normal(rng);
      if (scale[j] > 0.0) x(i, j) += scale[j] * z;
    }
  }
  return ds.with_features(std::move(x));
}

Dataset bootstrap_sample(const Dataset& ds, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_row(0, ds.rows() - 1);
  std::vector<std::size_t> idx(ds.rows());
  for (auto& i : idx) i = pick_row(rng);
  return ds.subset(idx);
}

std::vector<int> kfold_assignment(std::size_t n, int folds, std::uint64_t seed) {
  if (folds < 2 || static_cast<std::size_t>(folds) > n) {
    throw ValidationError("fold count must lie in [2, n]");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold(n);
  for (std::size_t k = 0; k < n; ++k) fold[order[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
  return fold;
}

Dataset synth_square(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("synthetic sample size must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix x(rows, 1);
  Vector y(rows);
  Vector f(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    x(i, 0) = normal(rng);
    f[i] = x(i, 0) * x(i, 0);
    y[i] = f[i] + normal(rng);
  }
  return Dataset(std::move(x), std::move(y), {"x"}, std::move(f));
}

Dataset synth_airfoil_like(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("synthetic sample size must be >= 1");
  static constexpr std::array<double, 21> kFrequency = {
      200, 250, 315, 400, 500, 630, 800, 1000, 1250, 1600, 2000,
      2500, 3150, 4000, 5000, 6300, 8000, 10000, 12500, 16000, 20000};
  static constexpr std::array<double, 13> kAngle = {0,    1.5,  2,    3,    4,    5.3, 7.3,
                                                    9.9, 12.3, 15.6, 17.4, 19.7, 22.2};
  static constexpr std::array<double, 6> kChord = {0.0254, 0.0508, 0.1016,
                                                   0.1524, 0.2286, 0.3048};
  static constexpr std::array<double, 4> kVelocity = {31.7, 39.6, 55.5, 71.3};

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto rows = static_cast<Eigen::Index>(n);
  Matrix x(rows, 5);
  Vector f(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double freq = pick(kFrequency, rng);
    const double angle = pick(kAngle, rng);
    const double chord = pick(kChord, rng);
    const double velocity = pick(kVelocity, rng);
    // Boundary-layer thickness is fixed by the tunnel configuration.
    const double thickness = 0.0004 * std::exp(0.14 * angle) * std::sqrt(chord / 0.0254) *
                             std::pow(71.3 / velocity, 0.2);
    x.row(i) << freq, angle, chord, velocity, thickness;

    const double log_strouhal = std::log10(freq * thickness / velocity);
    f[i] = 132.0 - 6.0 * (log_strouhal + 0.6) * (log_strouhal + 0.6) +
           8.0 * std::log10(velocity / 31.7) - 25.0 * chord - 0.15 * angle +
           std::sin(3.0 * log_strouhal) * std::log10(freq / 100.0);
  }
  Vector y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) y[i] = f[i] + 0.5 * normal(rng);

  const auto [mean, sd] = mean_sd(y);
  const double scale = sd > 0.0 ? sd : 1.0;
  y = (y.array() - mean) / scale;
  f = (f.array() - mean) / scale;
  return Dataset(std::move(x), std::move(y),
                 {"frequency", "angle_of_attack", "chord_length", "free_stream_velocity",
                  "suction_side_displacement_thickness"},
                 std::move(f));
}

Dataset synth_chp_like(std::size_t n, std::uint64_t seed) {
  if (n < 1) throw ValidationError("synthetic sample size must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> age_dist(1, 52);

  auto location = [&](std::mt19937_64& gen) {
    const double u = unit(gen);
    if (u < 0.45) {  // Los Angeles basin
      const double lat = 34.05 + 0.45 * normal(gen);
      return std::pair{lat, -118.25 + 0.6 * normal(gen)};
    }
    if (u < 0.75) {  // Bay Area
      const double lat = 37.75 + 0.4 * normal(gen);
      return std::pair{lat, -122.25 + 0.35 * normal(gen)};
    }
    const double lat = 35.0 + 5.0 * unit(gen);  // Central Valley and inland
    return std::pair{lat, -119.2 - 0.45 * (lat - 35.0) + 0.7 * normal(gen)};
  };

  // Neighbourhood effects: many small price bumps at block-group scale. The
  // field is part of the population, so its seed is fixed.
  struct Bump {
    double lat, lon, width, height;
  };
  std::vector<Bump> bumps(3000);
  std::mt19937_64 field(0x5eed0f1e1dULL);
  for (auto& b : bumps) {
    std::tie(b.lat, b.lon) = location(field);
    b.width = 0.0005 * std::pow(16.0, unit(field));
    b.height = 0.5 * normal(field);
  }

  const auto rows = static_cast<Eigen::Index>(n);
  Matrix x(rows, 8);
  Vector f(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto [lat, lon] = location(rng);
    const double age = age_dist(rng);
    const double income = std::clamp(std::exp(1.25 + 0.45 * normal(rng)), 0.5, 15.0);
    const double households = std::exp(std::log(400.0) + 0.6 * normal(rng));
    const double population = households * std::exp(std::log(2.8) + 0.25 * normal(rng));
    const double rooms_per_household = std::max(1.5, 4.0 + 0.35 * income + 0.8 * normal(rng));
    const double rooms = households * rooms_per_household;
    const double bedrooms = rooms * std::max(0.1, 0.2 + 0.03 * normal(rng));
    x.row(i) << lon, lat, age, income, population, rooms, bedrooms, households;

    const double coast_lon = -117.2 - 0.93 * (lat - 32.5);
    const double inland = std::max(0.0, lon - coast_lon);
    const auto bump = [&](double clat, double clon, double width) {
      const double d2 = (lat - clat) * (lat - clat) + (lon - clon) * (lon - clon);
      return std::exp(-d2 / width);
    };
    f[i] = 0.45 * income + 1.2 * std::exp(-inland / 0.3) + 0.6 * bump(34.05, -118.45, 0.05) +
           0.7 * bump(37.45, -122.15, 0.08) + 0.004 * age +
           0.05 * std::log(rooms_per_household) - 0.1 * std::log(population / households);
    for (const auto& b : bumps) {
      const double d2 = (lat - b.lat) * (lat - b.lat) + (lon - b.lon) * (lon - b.lon);
      if (d2 < 20.0 * b.width) f[i] += b.height * std::exp(-d2 / b.width);
    }
  }
  Vector y(rows);
  for (Eigen::Index i = 0; i < rows; ++i) y[i] = f[i] + 0.3 * normal(rng);

  const auto [mean, sd] = mean_sd(y);
  const double scale = sd > 0.0 ? sd : 1.0;
  y = (y.array() - mean) / scale;
  f = (f.array() - mean) / scale;
  return Dataset(std::move(x), std::move(y),
                 {"longitude", "latitude", "housing_median_age", "median_income", "population",
                  "total_rooms", "total_bedrooms", "households"},
                 std::move(f));
}

}  // namespace gbohe
