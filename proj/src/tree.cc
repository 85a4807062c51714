#include "gbohe/tree.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

namespace gbohe {

void TreeParams::validate() const {
  if (max_depth < 1) throw ValidationError("max_depth must be >= 1");
  if (min_samples_leaf < 1) throw ValidationError("min_samples_leaf must be >= 1");
  if (!(gamma >= 0.0) || !(reg_lambda >= 0.0) || !(reg_alpha >= 0.0)) {
    throw ValidationError("gamma, reg_lambda and reg_alpha must be >= 0");
  }
}

Tree::Tree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {
  if (nodes_.empty()) throw ValidationError("tree has no nodes");
  std::vector<int> seen(nodes_.size(), 0);
  int leaves = 0;
  std::function<void(int)> visit = [&](int id) {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size() || seen[id]++) {
      throw ValidationError("tree node references are not a tree");
    }
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) {
      ++leaves;
      return;
    }
    visit(n.left);
    visit(n.right);
  };
  visit(0);
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) {
    throw ValidationError("tree has unreachable nodes");
  }
  leaf_values_.assign(static_cast<std::size_t>(leaves), 0.0);
  std::vector<bool> id_used(static_cast<std::size_t>(leaves), false);
  for (const auto& n : nodes_) {
    if (!n.is_leaf()) continue;
    if (n.leaf_id < 0 || n.leaf_id >= leaves || id_used[static_cast<std::size_t>(n.leaf_id)]) {
      throw ValidationError("leaf ids must be a permutation of 0..J-1");
    }
    id_used[static_cast<std::size_t>(n.leaf_id)] = true;
    leaf_values_[static_cast<std::size_t>(n.leaf_id)] = n.value;
  }
}

Tree Tree::single_leaf(double value) {
  TreeNode leaf;
  leaf.value = value;
  leaf.leaf_id = 0;
  return Tree({leaf});
}

int Tree::depth() const {
  std::function<int(int)> rec = [&](int id) -> int {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    return n.is_leaf() ? 0 : 1 + std::max(rec(n.left), rec(n.right));
  };
  return rec(0);
}

nlohmann::json Tree::to_json() const {
  std::function<nlohmann::json(int)> rec = [&](int id) {
    const auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.is_leaf()) return nlohmann::json{{"value", n.value}, {"leaf_id", n.leaf_id}};
    return nlohmann::json{{"feature", n.feature},
                          {"threshold", n.threshold},
                          {"left", rec(n.left)},
                          {"right", rec(n.right)}};
  };
  return rec(0);
}

Tree Tree::from_json(const nlohmann::json& j) {
  std::vector<TreeNode> nodes;
  std::function<int(const nlohmann::json&)> rec = [&](const nlohmann::json& node) -> int {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (node.contains("value")) {
      nodes[static_cast<std::size_t>(id)].value = node.at("value").get<double>();
      nodes[static_cast<std::size_t>(id)].leaf_id = node.at("leaf_id").get<int>();
      return id;
    }
    const int feature = node.at("feature").get<int>();
    if (feature < 0) throw ValidationError("negative feature index in tree JSON");
    const double threshold = node.at("threshold").get<double>();
    const int left = rec(node.at("left"));
    const int right = rec(node.at("right"));
    auto& n = nodes[static_cast<std::size_t>(id)];
    n.feature = feature;
    n.threshold = threshold;
    n.left = left;
    n.right = right;
    return id;
  };
  rec(j);
  return Tree(std::move(nodes));
}

double soft_threshold(double g, double alpha) {
  const double mag = std::abs(g) - alpha;
  if (mag <= 0.0) return 0.0;
  return g > 0.0 ? mag : -mag;
}

double leaf_weight(double grad_sum, double hess_sum, const TreeParams& params) {
  return -soft_threshold(grad_sum, params.reg_alpha) / (hess_sum + params.reg_lambda);
}

double structure_score(double grad_sum, double hess_sum, const TreeParams& params) {
  const double t = soft_threshold(grad_sum, params.reg_alpha);
  return t * t / (hess_sum + params.reg_lambda);
}

SortedColumns::SortedColumns(const Matrix& features)
    : rows_(static_cast<std::size_t>(features.rows())) {
  const auto q = static_cast<std::size_t>(features.cols());
  columns_.resize(q);
  orders_.resize(q);
  for (std::size_t j = 0; j < q; ++j) {
    auto& col = columns_[j];
    col.resize(rows_);
    for (std::size_t i = 0; i < rows_; ++i) {
      col[i] = features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    auto& order = orders_[j];
    order.resize(rows_);
    std::iota(order.begin(), order.end(), std::uint32_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&col](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
  }
}

namespace {

// Grows one tree over per-feature sorted index arrays. Every node owns the
// same [begin, end) segment in each array; splitting stable-partitions those
// segments so children stay sorted.
class TreeGrower {
 public:
  TreeGrower(const SortedColumns& columns, std::span<const double> gradients,
             std::span<const double> hessians, const TreeParams& params)
      : columns_(columns), grad_(gradients), hess_(hessians), params_(params) {
    orders_.reserve(columns.cols());
    for (std::size_t j = 0; j < columns.cols(); ++j) orders_.push_back(columns.order(j));
    go_left_.assign(columns.rows(), 0);
    scratch_.resize(columns.rows());
  }

  Tree grow() {
    build(0, columns_.rows(), 0);
    return Tree(std::move(nodes_));
  }

 private:
  struct Split {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
    std::size_t left_count = 0;
  };

  int build(std::size_t begin, std::size_t end, int depth) {
    const auto& ids = orders_[0];
    double g_sum = 0.0;
    double h_sum = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      g_sum += grad_[ids[k]];
      h_sum += hess_[ids[k]];
    }

    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    const std::size_t count = end - begin;
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);

    Split best;
    if (depth < params_.max_depth && count >= 2 * min_leaf) best = find_split(begin, end, g_sum, h_sum);
    if (best.feature < 0) {
      auto& leaf = nodes_[static_cast<std::size_t>(id)];
      leaf.value = leaf_weight(g_sum, h_sum, params_);
      leaf.leaf_id = next_leaf_id_++;
      return id;
    }

    const auto& col = columns_.column(static_cast<std::size_t>(best.feature));
    for (std::size_t k = begin; k < end; ++k) {
      go_left_[ids[k]] = col[ids[k]] < best.threshold ? 1 : 0;
    }
    for (auto& order : orders_) partition(order, begin, end);

    const std::size_t mid = begin + best.left_count;
    const int left = build(begin, mid, depth + 1);
    const int right = build(mid, end, depth + 1);
    auto& node = nodes_[static_cast<std::size_t>(id)];
    node.feature = best.feature;
    node.threshold = best.threshold;
    node.left = left;
    node.right = right;
    return id;
  }

  Split find_split(std::size_t begin, std::size_t end, double g_sum, double h_sum) const {
    const double parent = structure_score(g_sum, h_sum, params_);
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    Split best;
    for (std::size_t j = 0; j < orders_.size(); ++j) {
      const auto& order = orders_[j];
      const auto& col = columns_.column(j);
      double g_left = 0.0;
      double h_left = 0.0;
      for (std::size_t k = begin; k + 1 < end; ++k) {
        g_left += grad_[order[k]];
        h_left += hess_[order[k]];
        const double lo = col[order[k]];
        const double hi = col[order[k + 1]];
        if (!(lo < hi)) continue;
        const std::size_t n_left = k - begin + 1;
        if (n_left < min_leaf || (end - begin) - n_left < min_leaf) continue;
        const double gain = 0.5 * (structure_score(g_left, h_left, params_) +
                                   structure_score(g_sum - g_left, h_sum - h_left, params_) -
                                   parent) -
                            params_.gamma;
        if (gain > best.gain) {
          best.gain = gain;
          best.feature = static_cast<int>(j);
          best.threshold = midpoint(lo, hi);
          best.left_count = n_left;
        }
      }
    }
    return best;
  }

  // Midpoint strictly above lo, so lo routes left and hi routes right.
  static double midpoint(double lo, double hi) {
    const double mid = lo + (hi - lo) / 2.0;
    return mid > lo ? mid : hi;
  }

  void partition(std::vector<std::uint32_t>& order, std::size_t begin, std::size_t end) {
    std::size_t out = begin;
    std::size_t spill = 0;
    for (std::size_t k = begin; k < end; ++k) {
      const auto s = order[k];
      if (go_left_[s]) {
        order[out++] = s;
      } else {
        scratch_[spill++] = s;
      }
    }
    std::copy_n(scratch_.begin(), spill, order.begin() + static_cast<std::ptrdiff_t>(out));
  }

  const SortedColumns& columns_;
  std::span<const double> grad_;
  std::span<const double> hess_;
  const TreeParams& params_;
  std::vector<std::vector<std::uint32_t>> orders_;
  std::vector<char> go_left_;
  std::vector<std::uint32_t> scratch_;
  std::vector<TreeNode> nodes_;
  int next_leaf_id_ = 0;
};

}  // namespace

Tree fit_tree(const SortedColumns& columns, std::span<const double> gradients,
              std::span<const double> hessians, const TreeParams& params) {
  params.validate();
  if (columns.rows() == 0 || columns.cols() == 0) throw ValidationError("fit_tree: empty input");
  if (gradients.size() != columns.rows() || hessians.size() != columns.rows()) {
    throw ValidationError("fit_tree: gradient/hessian length does not match the row count");
  }
  for (const double h : hessians) {
    if (!(h > 0.0)) throw ValidationError("fit_tree: hessians must be strictly positive");
  }
  return TreeGrower(columns, gradients, hessians, params).grow();
}

Tree fit_tree(const Matrix& features, std::span<const double> gradients,
              std::span<const double> hessians, const TreeParams& params) {
  if (features.rows() == 0 || features.cols() == 0) throw ValidationError("fit_tree: empty input");
  return fit_tree(SortedColumns(features), gradients, hessians, params);
}

}  // namespace gbohe
