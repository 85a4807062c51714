#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <vector>

#include "gbohe/tree.h"

using namespace gbohe;

namespace {

// Gain of splitting `rows` at (feature, threshold) from first principles.
double brute_gain(const Matrix& x, const std::vector<double>& g, int feature, double threshold,
                  const TreeParams& p) {
  double gl = 0, hl = 0, gr = 0, hr = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (x(i, feature) < threshold) {
      gl += g[static_cast<std::size_t>(i)];
      hl += 1;
    } else {
      gr += g[static_cast<std::size_t>(i)];
      hr += 1;
    }
  }
  if (hl < p.min_samples_leaf || hr < p.min_samples_leaf) return -INFINITY;
  auto score = [&](double G, double H) {
    const double t = std::copysign(std::max(std::abs(G) - p.reg_alpha, 0.0), G);
    return t * t / (H + p.reg_lambda);
  };
  return 0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - p.gamma;
}

struct Best {
  int feature = -1;
  double threshold = 0;
  double gain = -INFINITY;
};

Best brute_best(const Matrix& x, const std::vector<double>& g, const TreeParams& p) {
  Best best;
  for (int j = 0; j < x.cols(); ++j) {
    std::set<double> values(x.col(j).begin(), x.col(j).end());
    std::vector<double> v(values.begin(), values.end());
    for (std::size_t k = 0; k + 1 < v.size(); ++k) {
      const double thr = 0.5 * (v[k] + v[k + 1]);
      const double gain = brute_gain(x, g, j, thr, p);
      if (gain > best.gain + 1e-12) best = {j, thr, gain};
    }
  }
  return best;
}

std::vector<double> residual_gradients(const Vector& y) {
  std::vector<double> g(static_cast<std::size_t>(y.size()));
  for (Eigen::Index i = 0; i < y.size(); ++i) g[static_cast<std::size_t>(i)] = -y[i];
  return g;
}

double sse_of(const Tree& t, const Matrix& x, const Vector& y) {
  double s = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double d = y[i] - t.predict({x.row(i).data(), static_cast<std::size_t>(x.cols())});
    s += d * d;
  }
  return s;
}

}  // namespace

TEST_CASE("four-point step: threshold 1.5 with leaves 0 and 1") {
  Matrix x(4, 1);
  x << 0, 1, 2, 3;
  Vector y(4);
  y << 0, 0, 1, 1;
  TreeParams p;
  p.max_depth = 1;
  const auto g = residual_gradients(y);
  const std::vector<double> h(4, 1.0);
  const Tree t = fit_tree(x, g, h, p);
  REQUIRE(t.nodes().size() == 3);
  CHECK(t.nodes()[0].feature == 0);
  CHECK(t.nodes()[0].threshold == 1.5);
  CHECK(t.leaf_count() == 2);
  const double lo[] = {0.0};
  const double hi[] = {3.0};
  CHECK(t.predict(lo) == 0.0);
  CHECK(t.predict(hi) == 1.0);
}

TEST_CASE("root split matches exhaustive search") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> small(0, 4);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 12 + trial;
    Matrix x(n, 3);
    Vector y(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = normal(rng);
      x(i, 1) = small(rng);  // many ties
      x(i, 2) = std::round(normal(rng) * 3) / 3;
      y[i] = x(i, 1) + normal(rng);
    }
    TreeParams p;
    p.max_depth = 1;
    p.reg_lambda = trial % 3 == 0 ? 1.0 : 0.0;
    p.reg_alpha = trial % 4 == 0 ? 0.5 : 0.0;
    p.min_samples_leaf = 1 + trial % 3;
    const auto g = residual_gradients(y);
    const Tree t = fit_tree(x, g, std::vector<double>(static_cast<std::size_t>(n), 1.0), p);
    const Best best = brute_best(x, g, p);
    if (best.gain <= 0.0) {
      CHECK(t.leaf_count() == 1);
      continue;
    }
    REQUIRE(t.leaf_count() == 2);
    const auto& root = t.nodes()[0];
    CHECK(brute_gain(x, g, root.feature, root.threshold, p) == doctest::Approx(best.gain));
    CHECK(root.feature == best.feature);
    CHECK(root.threshold == best.threshold);
  }
}

TEST_CASE("equal gains resolve to the lowest feature") {
  Matrix x(6, 3);
  x << 5, 0, 0, 5, 0, 0, 5, 0, 0, 7, 1, 1, 7, 1, 1, 7, 1, 1;
  Vector y(6);
  y << 0, 0, 0, 1, 1, 1;
  TreeParams p;
  p.max_depth = 1;
  const Tree t = fit_tree(x, residual_gradients(y), std::vector<double>(6, 1.0), p);
  CHECK(t.nodes()[0].feature == 0);
  CHECK(t.nodes()[0].threshold == 6.0);
}

TEST_CASE("leaves partition the rows and hold mean residuals") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  const int n = 300;
  Matrix x(n, 4);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) x(i, j) = normal(rng);
    y[i] = std::sin(x(i, 0)) + x(i, 1) * x(i, 2) + 0.1 * normal(rng);
  }
  TreeParams p;
  p.max_depth = 4;
  const Tree t = fit_tree(x, residual_gradients(y), std::vector<double>(n, 1.0), p);
  std::vector<double> sum(static_cast<std::size_t>(t.leaf_count()), 0.0);
  std::vector<int> count(static_cast<std::size_t>(t.leaf_count()), 0);
  for (int i = 0; i < n; ++i) {
    const int leaf = t.assign_leaf({x.row(i).data(), 4});
    REQUIRE(leaf >= 0);
    REQUIRE(leaf < t.leaf_count());
    sum[static_cast<std::size_t>(leaf)] += y[i];
    count[static_cast<std::size_t>(leaf)]++;
  }
  int total = 0;
  for (int l = 0; l < t.leaf_count(); ++l) {
    REQUIRE(count[static_cast<std::size_t>(l)] > 0);
    total += count[static_cast<std::size_t>(l)];
    CHECK(t.leaf_value(l) ==
          doctest::Approx(sum[static_cast<std::size_t>(l)] / count[static_cast<std::size_t>(l)]));
  }
  CHECK(total == n);
  CHECK(t.depth() <= 4);
}

TEST_CASE("deeper trees never fit the training data worse") {
  const Matrix x = Matrix::Random(200, 3);
  Vector y = (x.col(0).array() * 3).sin().matrix() + x.col(1);
  double previous = INFINITY;
  for (int depth = 1; depth <= 6; ++depth) {
    TreeParams p;
    p.max_depth = depth;
    const Tree t = fit_tree(x, residual_gradients(y), std::vector<double>(200, 1.0), p);
    const double sse = sse_of(t, x, y);
    CHECK(sse <= previous + 1e-9);
    previous = sse;
  }
}

TEST_CASE("min_samples_leaf and gamma limit growth") {
  const Matrix x = Matrix::Random(64, 2);
  const Vector y = x.col(0);
  TreeParams p;
  p.max_depth = 6;
  p.min_samples_leaf = 10;
  const Tree t = fit_tree(x, residual_gradients(y), std::vector<double>(64, 1.0), p);
  std::vector<int> count(static_cast<std::size_t>(t.leaf_count()), 0);
  for (int i = 0; i < 64; ++i) count[static_cast<std::size_t>(t.assign_leaf({x.row(i).data(), 2}))]++;
  for (const int c : count) CHECK(c >= 10);

  p.min_samples_leaf = 1;
  p.gamma = 1e9;
  CHECK(fit_tree(x, residual_gradients(y), std::vector<double>(64, 1.0), p).leaf_count() == 1);
}

TEST_CASE("regularized leaf weights") {
  TreeParams p;
  p.reg_lambda = 1.0;
  p.reg_alpha = 0.5;
  CHECK(soft_threshold(2.0, 0.5) == 1.5);
  CHECK(soft_threshold(-2.0, 0.5) == -1.5);
  CHECK(soft_threshold(0.3, 0.5) == 0.0);
  CHECK(leaf_weight(-4.0, 3.0, p) == doctest::Approx(3.5 / 4.0));
  CHECK(structure_score(-4.0, 3.0, p) == doctest::Approx(3.5 * 3.5 / 4.0));
}

TEST_CASE("constant features give a single leaf") {
  Matrix x = Matrix::Constant(10, 2, 1.0);
  Vector y = Vector::LinSpaced(10, 0, 9);
  TreeParams p;
  const Tree t = fit_tree(x, residual_gradients(y), std::vector<double>(10, 1.0), p);
  CHECK(t.leaf_count() == 1);
  CHECK(t.leaf_value(0) == doctest::Approx(4.5));
}

TEST_CASE("json round trip preserves routing") {
  const Matrix x = Matrix::Random(100, 3);
  const Vector y = x.col(2).array().square();
  TreeParams p;
  p.max_depth = 3;
  const Tree t = fit_tree(x, residual_gradients(y), std::vector<double>(100, 1.0), p);
  const Tree back = Tree::from_json(t.to_json());
  for (int i = 0; i < 100; ++i) {
    std::span<const double> row(x.row(i).data(), 3);
    CHECK(back.predict(row) == t.predict(row));
    CHECK(back.assign_leaf(row) == t.assign_leaf(row));
  }
}

TEST_CASE("invalid input is rejected") {
  Matrix x = Matrix::Random(4, 1);
  TreeParams p;
  CHECK_THROWS_AS(fit_tree(x, std::vector<double>(3, 0.0), std::vector<double>(4, 1.0), p),
                  ValidationError);
  CHECK_THROWS_AS(fit_tree(x, std::vector<double>(4, 0.0), std::vector<double>(4, 0.0), p),
                  ValidationError);
  p.max_depth = 0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  std::vector<TreeNode> nodes(1);
  nodes[0].leaf_id = 3;
  CHECK_THROWS_AS(Tree{nodes}, ValidationError);
}
