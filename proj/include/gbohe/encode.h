#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "gbohe/boosting.h"
#include "gbohe/common.h"
#include "gbohe/data.h"

namespace gbohe {

// Compressed sparse column matrix with non-negative integer-valued entries.
// Row indices are ascending within every column.
struct SparseDesign {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> col_ptr;  // cols + 1 offsets
  std::vector<std::uint32_t> row_idx;
  std::vector<double> values;

  std::size_t nnz() const { return row_idx.size(); }

  Vector multiply(const Vector& beta) const;
  Vector transpose_multiply(const Vector& r) const;
  Matrix to_dense() const;
  static SparseDesign from_dense(const Matrix& dense);

  void write_matrix_market(std::ostream& out) const;
};

// Leaf coefficients over a LeafEncoder's columns; index 0 is the intercept.
struct Coefficients {
  Vector beta;

  std::size_t p() const { return beta.size() > 0 ? static_cast<std::size_t>(beta.size() - 1) : 0; }
};

enum class DedupMode {
  // Merge leaves with identical training indicator patterns only when their
  // leaf values are also identical. Keeps Phi(x)^T beta_orig == predict(x).
  kPatternAndValue,
  // Merge every set of leaves with identical training patterns. The design
  // has no duplicate columns; original coefficients exist only if merged
  // leaves happen to share values.
  kPattern,
};

// Maps every (tree, leaf) of a model to a design column in [1, p]. Holds its
// own copy of the trees so it can route new rows.
class LeafEncoder {
 public:
  LeafEncoder(std::vector<Tree> trees, std::vector<std::vector<int>> columns, int p,
              DedupMode mode);

  std::size_t tree_count() const { return trees_.size(); }
  // Number of distinct leaf columns, excluding the intercept column.
  int p() const { return p_; }
  DedupMode mode() const { return mode_; }
  int column(std::size_t tree, int leaf_id) const {
    return columns_[tree][static_cast<std::size_t>(leaf_id)];
  }
  const std::vector<Tree>& trees() const { return trees_; }

  // Phi(x)^T beta without materializing Phi(x).
  double dot(std::span<const double> x, const Vector& beta) const;
  Vector dot(const Matrix& x, const Vector& beta) const;

  // Design columns hit by x, one per tree, in tree order.
  void active_columns(std::span<const double> x, std::vector<int>& out) const;

  nlohmann::json to_json() const;

 private:
  std::vector<Tree> trees_;
  std::vector<std::vector<int>> columns_;  // [tree][leaf_id] -> column
  int p_;
  DedupMode mode_;
};

// Enumerates all leaves in tree order; leaves whose indicator vectors on
// `train` coincide share the column of the first such leaf (subject to mode).
LeafEncoder build_encoder(const GbdtModel& model, const Dataset& train,
                          DedupMode mode = DedupMode::kPatternAndValue);

// n x (p + 1): column 0 is all ones; each tree adds 1 to the column of the
// leaf the row reaches, so merged columns can hold counts above 1.
SparseDesign encode_rows(const LeafEncoder& encoder, const Matrix& features);
inline SparseDesign encode_rows(const LeafEncoder& encoder, const Dataset& ds) {
  return encode_rows(encoder, ds.features());
}

// b0 = gamma0, b_k = learning_rate * (value of the leaf behind column k).
Coefficients original_coefficients(const GbdtModel& model, const LeafEncoder& encoder);

}  // namespace gbohe
