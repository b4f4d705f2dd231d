#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corisk/forest.hpp"
#include "corisk/serialize.hpp"

namespace corisk {

enum class ColumnKind : std::uint8_t { Continuous = 0, Categorical = 1 };

struct FeatureColumn {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
  int n_categories = 0;  // categorical only; values are 0..n_categories-1
};

// N x P grid with an explicit missing mask. Missing cells hold 0.0 in
// `values` and are never read as data.
struct FeatureMatrix {
  std::vector<FeatureColumn> columns;
  std::size_t rows = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> missing;

  FeatureMatrix() = default;
  FeatureMatrix(std::vector<FeatureColumn> cols, std::size_t n_rows);

  std::size_t cols() const { return columns.size(); }
  bool is_missing(std::size_t r, std::size_t c) const { return missing[r * cols() + c] != 0; }
  std::optional<double> get(std::size_t r, std::size_t c) const {
    if (is_missing(r, c)) return std::nullopt;
    return values[r * cols() + c];
  }
  void set(std::size_t r, std::size_t c, double v) {
    values[r * cols() + c] = v;
    missing[r * cols() + c] = 0;
  }
  void set_missing(std::size_t r, std::size_t c) {
    values[r * cols() + c] = 0.0;
    missing[r * cols() + c] = 1;
  }
  std::size_t missing_count(std::size_t c) const;
  std::size_t total_missing() const;
  std::optional<std::size_t> column_index(std::string_view name) const;

  // Throws InputError if present values are non-finite or categories are out of range.
  void validate() const;
  DenseMatrix to_dense() const;  // requires no missing cells
};

struct ImputeConfig {
  std::size_t max_iters = 10;
  ForestConfig forest{.n_trees = 50, .max_depth = -1, .min_leaf = 5, .mtry = 0, .bootstrap = true, .n_threads = 0};
};

struct ImputeResult {
  FeatureMatrix completed;
  std::size_t iterations = 0;
};

// MissForest: mean/mode start, then repeated per-column forest re-prediction
// in ascending-missingness order until the change between successive
// iterates grows (for every variable type present) or max_iters is reached.
// Observed cells are never modified.
ImputeResult impute(const FeatureMatrix& matrix, const ImputeConfig& config, std::uint64_t seed);

// Column mean (continuous) / mode (categorical) fill.
FeatureMatrix mean_impute(const FeatureMatrix& matrix);

// sqrt(mean((truth - imputed)^2) / var(truth)) over cells missing in `masked`,
// pooled across continuous columns.
double normalized_rmse(const FeatureMatrix& truth, const FeatureMatrix& masked,
                       const FeatureMatrix& imputed);

// Imputation fitted on training data and applied unchanged to new rows.
class FittedImputer {
 public:
  // Runs impute() on `train`, then fits one forest per column with missing
  // training cells on the completed training matrix.
  static FittedImputer fit(const FeatureMatrix& train, const ImputeConfig& config,
                           const ForestConfig& column_forest, std::uint64_t seed,
                           ImputeResult* train_result = nullptr);

  // Fills the missing cells of one row in place and returns the indices of
  // the filled columns in ascending order.
  std::vector<std::size_t> apply_row(std::span<double> row, std::span<std::uint8_t> missing) const;
  FeatureMatrix apply(const FeatureMatrix& matrix) const;

  const std::vector<FeatureColumn>& columns() const { return columns_; }

  void save(BinaryWriter& out) const;
  static FittedImputer load(BinaryReader& in);

 private:
  std::vector<FeatureColumn> columns_;
  std::vector<double> initial_;  // mean or mode per column
  std::vector<std::size_t> order_;
  std::vector<std::optional<Forest>> forests_;
  std::size_t passes_ = 2;
};

}  // namespace corisk
