#include "gbohe/encode.h"

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace gbohe {

Vector SparseDesign::multiply(const Vector& beta) const {
  if (static_cast<std::size_t>(beta.size()) != cols) {
    throw ValidationError("coefficient length does not match design columns");
  }
  Vector out = Vector::Zero(static_cast<Eigen::Index>(rows));
  for (std::size_t k = 0; k < cols; ++k) {
    const double b = beta[static_cast<Eigen::Index>(k)];
    if (b == 0.0) continue;
    for (std::size_t e = col_ptr[k]; e < col_ptr[k + 1]; ++e) out[row_idx[e]] += values[e] * b;
  }
  return out;
}

Vector SparseDesign::transpose_multiply(const Vector& r) const {
  if (static_cast<std::size_t>(r.size()) != rows) {
    throw ValidationError("vector length does not match design rows");
  }
  Vector out(static_cast<Eigen::Index>(cols));
  for (std::size_t k = 0; k < cols; ++k) {
    double s = 0.0;
    for (std::size_t e = col_ptr[k]; e < col_ptr[k + 1]; ++e) s += values[e] * r[row_idx[e]];
    out[static_cast<Eigen::Index>(k)] = s;
  }
  return out;
}

Matrix SparseDesign::to_dense() const {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t k = 0; k < cols; ++k) {
    for (std::size_t e = col_ptr[k]; e < col_ptr[k + 1]; ++e) {
      out(row_idx[e], static_cast<Eigen::Index>(k)) = values[e];
    }
  }
  return out;
}

SparseDesign SparseDesign::from_dense(const Matrix& dense) {
  SparseDesign d;
  d.rows = static_cast<std::size_t>(dense.rows());
  d.cols = static_cast<std::size_t>(dense.cols());
  d.col_ptr.push_back(0);
  for (Eigen::Index k = 0; k < dense.cols(); ++k) {
    for (Eigen::Index i = 0; i < dense.rows(); ++i) {
      if (dense(i, k) != 0.0) {
        d.row_idx.push_back(static_cast<std::uint32_t>(i));
        d.values.push_back(dense(i, k));
      }
    }
    d.col_ptr.push_back(d.row_idx.size());
  }
  return d;
}

void SparseDesign::write_matrix_market(std::ostream& out) const {
  out << "%%MatrixMarket matrix coordinate integer general\n";
  out << rows << ' ' << cols << ' ' << nnz() << '\n';
  for (std::size_t k = 0; k < cols; ++k) {
    for (std::size_t e = col_ptr[k]; e < col_ptr[k + 1]; ++e) {
      out << row_idx[e] + 1 << ' ' << k + 1 << ' ' << static_cast<long long>(values[e]) << '\n';
    }
  }
}

LeafEncoder::LeafEncoder(std::vector<Tree> trees, std::vector<std::vector<int>> columns, int p,
                         DedupMode mode)
    : trees_(std::move(trees)), columns_(std::move(columns)), p_(p), mode_(mode) {
  if (trees_.size() != columns_.size()) throw ValidationError("encoder/tree count mismatch");
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    if (columns_[t].size() != static_cast<std::size_t>(trees_[t].leaf_count())) {
      throw ValidationError("encoder/leaf count mismatch");
    }
    for (const int c : columns_[t]) {
      if (c < 1 || c > p_) throw ValidationError("encoder column outside [1, p]");
    }
  }
}

double LeafEncoder::dot(std::span<const double> x, const Vector& beta) const {
  if (static_cast<int>(beta.size()) != p_ + 1) {
    throw ValidationError("coefficient length does not match encoder width");
  }
  double sum = beta[0];
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    sum += beta[columns_[t][static_cast<std::size_t>(trees_[t].assign_leaf(x))]];
  }
  return sum;
}

Vector LeafEncoder::dot(const Matrix& x, const Vector& beta) const {
  Vector out(x.rows());
  const auto q = static_cast<std::size_t>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    out[i] = dot(std::span<const double>(x.data() + i * x.cols(), q), beta);
  }
  return out;
}

void LeafEncoder::active_columns(std::span<const double> x, std::vector<int>& out) const {
  out.resize(trees_.size());
  for (std::size_t t = 0; t < trees_.size(); ++t) {
    out[t] = columns_[t][static_cast<std::size_t>(trees_[t].assign_leaf(x))];
  }
}

nlohmann::json LeafEncoder::to_json() const {
  nlohmann::json map = nlohmann::json::array();
  for (std::size_t t = 0; t < columns_.size(); ++t) {
    for (std::size_t leaf = 0; leaf < columns_[t].size(); ++leaf) {
      map.push_back({{"tree", t}, {"leaf_id", leaf}, {"column", columns_[t][leaf]}});
    }
  }
  return {{"p", p_},
          {"dedup", mode_ == DedupMode::kPattern ? "pattern" : "pattern_and_value"},
          {"columns", std::move(map)}};
}

namespace {

std::uint64_t hash_pattern(const std::vector<std::uint32_t>& rows) {
  std::uint64_t h = 0xcbf29ce484222325ULL ^ rows.size();
  for (const auto r : rows) {
    h ^= r + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return h;
}

}  // namespace

LeafEncoder build_encoder(const GbdtModel& model, const Dataset& train, DedupMode mode) {
  if (!model.trees().empty()) {
    // Trees index features directly; a narrower dataset would read past the row.
    int max_feature = -1;
    for (const auto& tree : model.trees()) {
      for (const auto& node : tree.nodes()) max_feature = std::max(max_feature, node.feature);
    }
    if (max_feature >= static_cast<int>(train.cols())) {
      throw ValidationError("model uses feature " + std::to_string(max_feature) +
                            " but the dataset has " + std::to_string(train.cols()) + " predictors");
    }
  }

  struct Representative {
    int column;
    double value;
    std::vector<std::uint32_t> pattern;
  };
  std::unordered_multimap<std::uint64_t, Representative> seen;
  std::vector<std::vector<int>> columns;
  columns.reserve(model.size());
  int p = 0;

  const auto n = train.rows();
  std::vector<std::vector<std::uint32_t>> patterns;
  for (const auto& tree : model.trees()) {
    patterns.assign(static_cast<std::size_t>(tree.leaf_count()), {});
    for (std::size_t i = 0; i < n; ++i) {
      patterns[static_cast<std::size_t>(tree.assign_leaf(train.row(i)))].push_back(
          static_cast<std::uint32_t>(i));
    }
    std::vector<int> tree_columns(patterns.size());
    for (std::size_t leaf = 0; leaf < patterns.size(); ++leaf) {
      const double value = tree.leaf_value(static_cast<int>(leaf));
      const auto h = hash_pattern(patterns[leaf]);
      int column = 0;
      const auto [first, last] = seen.equal_range(h);
      for (auto it = first; it != last; ++it) {
        const auto& rep = it->second;
        if (mode == DedupMode::kPatternAndValue && rep.value != value) continue;
        if (rep.pattern == patterns[leaf]) {
          column = rep.column;
          break;
        }
      }
      if (column == 0) {
        column = ++p;
        seen.emplace(h, Representative{column, value, std::move(patterns[leaf])});
      }
      tree_columns[leaf] = column;
    }
    columns.push_back(std::move(tree_columns));
  }
  return LeafEncoder(model.trees(), std::move(columns), p, mode);
}

SparseDesign encode_rows(const LeafEncoder& encoder, const Matrix& features) {
  const auto n = static_cast<std::size_t>(features.rows());
  const auto q = static_cast<std::size_t>(features.cols());
  const auto cols = static_cast<std::size_t>(encoder.p()) + 1;

  // Pass 1: per-row sorted active columns with multiplicities folded.
  std::vector<std::vector<std::pair<int, int>>> row_entries(n);
  std::vector<std::size_t> col_count(cols, 0);
  std::vector<int> active;
  for (std::size_t i = 0; i < n; ++i) {
    encoder.active_columns(
        std::span<const double>(features.data() + i * q, q), active);
    std::sort(active.begin(), active.end());
    auto& entries = row_entries[i];
    entries.emplace_back(0, 1);
    for (const int c : active) {
      if (entries.back().first == c) {
        ++entries.back().second;
      } else {
        entries.emplace_back(c, 1);
      }
    }
    for (const auto& [c, count] : entries) ++col_count[static_cast<std::size_t>(c)];
  }

  SparseDesign d;
  d.rows = n;
  d.cols = cols;
  d.col_ptr.assign(cols + 1, 0);
  for (std::size_t k = 0; k < cols; ++k) d.col_ptr[k + 1] = d.col_ptr[k] + col_count[k];
  d.row_idx.resize(d.col_ptr[cols]);
  d.values.resize(d.col_ptr[cols]);
  std::vector<std::size_t> fill(d.col_ptr.begin(), d.col_ptr.end() - 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& [c, count] : row_entries[i]) {
      const auto e = fill[static_cast<std::size_t>(c)]++;
      d.row_idx[e] = static_cast<std::uint32_t>(i);
      d.values[e] = count;
    }
  }
  return d;
}

Coefficients original_coefficients(const GbdtModel& model, const LeafEncoder& encoder) {
  if (model.size() != encoder.tree_count()) {
    throw ValidationError("encoder/model mismatch: tree counts differ");
  }
  Vector beta = Vector::Zero(encoder.p() + 1);
  std::vector<bool> assigned(static_cast<std::size_t>(encoder.p()) + 1, false);
  beta[0] = model.gamma0();
  for (std::size_t t = 0; t < model.size(); ++t) {
    const auto& tree = model.trees()[t];
    if (tree.leaf_count() != encoder.trees()[t].leaf_count()) {
      throw ValidationError("encoder/model mismatch: leaf counts differ in tree " +
                            std::to_string(t));
    }
    for (int leaf = 0; leaf < tree.leaf_count(); ++leaf) {
      const int k = encoder.column(t, leaf);
      const double b = model.learning_rate() * tree.leaf_value(leaf);
      if (!assigned[static_cast<std::size_t>(k)]) {
        beta[k] = b;
        assigned[static_cast<std::size_t>(k)] = true;
      } else if (beta[k] != b) {
        throw ValidationError(
            "encoder/model mismatch: column " + std::to_string(k) +
            " merges leaves with different values; rebuild the encoder with "
            "pattern-and-value deduplication");
      }
    }
  }
  return Coefficients{std::move(beta)};
}

}  // namespace gbohe
