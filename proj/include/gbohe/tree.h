#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbohe/common.h"

namespace gbohe {

struct TreeParams {
  int max_depth = 6;
  int min_samples_leaf = 1;
  double gamma = 0.0;       // minimum gain required to keep a split
  double reg_lambda = 0.0;  // L2 penalty on leaf values
  double reg_alpha = 0.0;   // L1 penalty on leaf values

  void validate() const;
};

// Internal nodes have feature >= 0; leaves have feature == -1 and a leaf_id
// that is unique within the tree. A sample goes left iff x[feature] < threshold.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;
  int leaf_id = -1;

  bool is_leaf() const { return feature < 0; }
};

class Tree {
 public:
  // Root is nodes[0]. Leaf ids must be exactly 0..J-1.
  explicit Tree(std::vector<TreeNode> nodes);
  static Tree single_leaf(double value);

  double predict(std::span<const double> x) const { return nodes_[leaf_node(x)].value; }
  int assign_leaf(std::span<const double> x) const { return nodes_[leaf_node(x)].leaf_id; }

  int leaf_count() const { return static_cast<int>(leaf_values_.size()); }
  double leaf_value(int leaf_id) const { return leaf_values_.at(static_cast<std::size_t>(leaf_id)); }
  const std::vector<double>& leaf_values() const { return leaf_values_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int depth() const;

  nlohmann::json to_json() const;
  static Tree from_json(const nlohmann::json& j);

 private:
  std::size_t leaf_node(std::span<const double> x) const {
    std::size_t node = 0;
    while (!nodes_[node].is_leaf()) {
      const auto& n = nodes_[node];
      node = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left
                                                                                            : n.right);
    }
    return node;
  }

  std::vector<TreeNode> nodes_;
  std::vector<double> leaf_values_;  // indexed by leaf_id
};

// sign(g) * max(|g| - alpha, 0)
double soft_threshold(double g, double alpha);

// Regularized leaf value -T(G) / (H + lambda).
double leaf_weight(double grad_sum, double hess_sum, const TreeParams& params);

// Structure score T(G)^2 / (H + lambda).
double structure_score(double grad_sum, double hess_sum, const TreeParams& params);

// Per-feature sample orderings by ascending value, built once per training
// matrix and reused by every tree in a boosting run.
class SortedColumns {
 public:
  explicit SortedColumns(const Matrix& features);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return columns_.size(); }
  const std::vector<double>& column(std::size_t j) const { return columns_[j]; }
  const std::vector<std::uint32_t>& order(std::size_t j) const { return orders_[j]; }

 private:
  std::size_t rows_ = 0;
  std::vector<std::vector<double>> columns_;
  std::vector<std::vector<std::uint32_t>> orders_;
};

// Exact greedy growth. Candidate thresholds are midpoints between consecutive
// distinct values; equal-gain candidates resolve to the lowest feature index,
// then the lowest threshold.
Tree fit_tree(const SortedColumns& columns, std::span<const double> gradients,
              std::span<const double> hessians, const TreeParams& params);
Tree fit_tree(const Matrix& features, std::span<const double> gradients,
              std::span<const double> hessians, const TreeParams& params);

}  // namespace gbohe
