#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "corisk/serialize.hpp"

namespace corisk {

// Row-major matrix with no missing cells.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
};

enum class ForestTask : std::uint8_t { Regression = 0, Classification = 1 };

struct ForestConfig {
  std::size_t n_trees = 200;
  int max_depth = 12;          // negative: unlimited; 0: root is a leaf
  std::size_t min_leaf = 5;    // minimum (bootstrap-weighted) samples per child
  std::size_t mtry = 0;        // 0: ceil(sqrt(n_features))
  bool bootstrap = true;
  std::size_t n_threads = 0;   // 0: hardware concurrency

  std::size_t resolved_mtry(std::size_t n_features) const;
};

// Flat CART tree. Internal nodes route value <= threshold to `left`.
struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;         // regression: leaf mean; classification: majority class
};

struct Tree {
  std::vector<TreeNode> nodes;
  std::vector<double> class_counts;  // classification leaves: n_classes counts per node

  const TreeNode& leaf_for(std::span<const double> row) const;
};

class Forest {
 public:
  Forest() = default;

  // Regression on real targets: best split by variance reduction.
  static Forest fit_regression(const DenseMatrix& x, std::span<const double> y,
                               const ForestConfig& config, std::uint64_t seed);
  // Classification on labels 0..n_classes-1: best split by Gini decrease.
  static Forest fit_classification(const DenseMatrix& x, std::span<const int> y, int n_classes,
                                   const ForestConfig& config, std::uint64_t seed);

  // Mean of tree outputs. Throws InputError on a row of the wrong width.
  double predict(std::span<const double> row) const;
  // Majority vote of trees; ties go to the lowest class.
  int predict_class(std::span<const double> row) const;
  std::vector<double> predict(const DenseMatrix& x) const;

  ForestTask task() const { return task_; }
  int n_classes() const { return n_classes_; }
  std::size_t n_features() const { return n_features_; }
  const ForestConfig& config() const { return config_; }
  const std::vector<Tree>& trees() const { return trees_; }
  const std::vector<std::uint64_t>& per_tree_seeds() const { return seeds_; }

  void save(BinaryWriter& out) const;
  static Forest load(BinaryReader& in);

 private:
  void check_row(std::span<const double> row) const;

  ForestTask task_ = ForestTask::Regression;
  int n_classes_ = 0;
  std::size_t n_features_ = 0;
  ForestConfig config_;
  std::vector<Tree> trees_;
  std::vector<std::uint64_t> seeds_;
};

}  // namespace corisk
