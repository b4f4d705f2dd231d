#include "corisk/forest.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <thread>

#include "corisk/error.hpp"
#include "corisk/random.hpp"

namespace corisk {

std::size_t ForestConfig::resolved_mtry(std::size_t n_features) const {
  if (n_features == 0) return 0;
  if (mtry > 0) return std::min(mtry, n_features);
  return std::min(n_features,
                  static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n_features)))));
}

const TreeNode& Tree::leaf_for(std::span<const double> row) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    const TreeNode& n = nodes[i];
    i = static_cast<std::size_t>(row[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left
                                                                                          : n.right);
  }
  return nodes[i];
}

namespace {

using RowIndex = std::uint32_t;

struct Targets {
  ForestTask task;
  std::span<const double> reg;
  std::span<const int> cls;
  int n_classes = 0;
};

// Per-feature row lists sorted by feature value, shared by every tree.
std::vector<std::vector<RowIndex>> presort(const DenseMatrix& x) {
  std::vector<std::vector<RowIndex>> order(x.cols);
  for (std::size_t f = 0; f < x.cols; ++f) {
    auto& o = order[f];
    o.resize(x.rows);
    std::iota(o.begin(), o.end(), RowIndex{0});
    std::stable_sort(o.begin(), o.end(),
                     [&](RowIndex a, RowIndex b) { return x.at(a, f) < x.at(b, f); });
  }
  return order;
}

class TreeBuilder {
 public:
  TreeBuilder(const DenseMatrix& x, const Targets& t, const ForestConfig& cfg,
              const std::vector<std::vector<RowIndex>>& global_order, std::uint64_t seed)
      : x_(x), t_(t), cfg_(cfg), mtry_(cfg.resolved_mtry(x.cols)), rng_(seed) {
    std::vector<std::uint32_t> counts(x.rows, cfg.bootstrap ? 0u : 1u);
    if (cfg.bootstrap) {
      std::uniform_int_distribution<std::size_t> pick(0, x.rows - 1);
      for (std::size_t i = 0; i < x.rows; ++i) ++counts[pick(rng_)];
    }
    sorted_.resize(x.cols);
    for (std::size_t f = 0; f < x.cols; ++f) {
      auto& s = sorted_[f];
      s.reserve(x.rows);
      for (RowIndex r : global_order[f]) s.insert(s.end(), counts[r], r);
    }
    n_samples_ = x.cols > 0 ? sorted_[0].size() : 0;
    goes_left_.assign(x.rows, 0);
    scratch_.resize(n_samples_);
    features_.resize(x.cols);
    std::iota(features_.begin(), features_.end(), std::size_t{0});
  }

  Tree build() {
    if (x_.cols == 0 || n_samples_ == 0) {
      throw InputError("forest: no features or samples");
    }
    grow(0, n_samples_, 0);
    return std::move(tree_);
  }

 private:
  struct Split {
    double gain = 0.0;
    std::size_t feature = 0;
    double threshold = 0.0;
    bool found = false;
  };

  std::int32_t grow(std::size_t b, std::size_t e, int depth) {
    const auto node_index = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    const int k = t_.n_classes;
    if (t_.task == ForestTask::Classification) {
      tree_.class_counts.resize(tree_.nodes.size() * static_cast<std::size_t>(k), 0.0);
    }

    const std::size_t n = e - b;
    const auto& base = sorted_[0];
    double sum = 0.0, sum_sq = 0.0, lo = INFINITY, hi = -INFINITY;
    std::vector<double> counts(static_cast<std::size_t>(std::max(k, 0)), 0.0);
    for (std::size_t i = b; i < e; ++i) {
      if (t_.task == ForestTask::Regression) {
        const double y = t_.reg[base[i]];
        sum += y;
        sum_sq += y * y;
        lo = std::min(lo, y);
        hi = std::max(hi, y);
      } else {
        counts[static_cast<std::size_t>(t_.cls[base[i]])] += 1.0;
      }
    }

    auto make_leaf = [&] {
      TreeNode& leaf = tree_.nodes[static_cast<std::size_t>(node_index)];
      leaf.feature = -1;
      if (t_.task == ForestTask::Regression) {
        leaf.value = lo == hi ? lo : sum / static_cast<double>(n);
      } else {
        const auto best = std::max_element(counts.begin(), counts.end());
        leaf.value = static_cast<double>(best - counts.begin());
        std::copy(counts.begin(), counts.end(),
                  tree_.class_counts.begin() + static_cast<std::ptrdiff_t>(node_index) * k);
      }
      return node_index;
    };

    const bool pure = t_.task == ForestTask::Regression
                          ? !(hi > lo)
                          : std::count_if(counts.begin(), counts.end(), [](double c) { return c > 0; }) <= 1;
    if ((cfg_.max_depth >= 0 && depth >= cfg_.max_depth) || n < 2 * std::max<std::size_t>(cfg_.min_leaf, 1) || pure) {
      return make_leaf();
    }

    // Draw mtry candidate features, then scan them in ascending index order so
    // equal gains resolve to the lowest feature, then the lowest threshold.
    for (std::size_t i = 0; i < mtry_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, features_.size() - 1);
      std::swap(features_[i], features_[pick(rng_)]);
    }
    std::vector<std::size_t> candidates(features_.begin(), features_.begin() + static_cast<std::ptrdiff_t>(mtry_));
    std::sort(candidates.begin(), candidates.end());

    Split best;
    const double parent_score = t_.task == ForestTask::Regression
                                    ? sum * sum / static_cast<double>(n)
                                    : std::inner_product(counts.begin(), counts.end(), counts.begin(), 0.0) /
                                          static_cast<double>(n);
    const double tolerance =
        1e-12 * (t_.task == ForestTask::Regression ? std::max(sum_sq, 1e-300) : static_cast<double>(n));
    const std::size_t min_leaf = std::max<std::size_t>(cfg_.min_leaf, 1);
    std::vector<double> left_counts(counts.size());

    for (std::size_t f : candidates) {
      const auto& s = sorted_[f];
      double left_sum = 0.0;
      std::fill(left_counts.begin(), left_counts.end(), 0.0);
      double left_sq_counts = 0.0;
      for (std::size_t i = b; i + 1 < e; ++i) {
        const RowIndex r = s[i];
        if (t_.task == ForestTask::Regression) {
          left_sum += t_.reg[r];
        } else {
          auto& c = left_counts[static_cast<std::size_t>(t_.cls[r])];
          left_sq_counts += 2.0 * c + 1.0;
          c += 1.0;
        }
        const std::size_t n_left = i + 1 - b;
        const std::size_t n_right = n - n_left;
        if (n_left < min_leaf) continue;
        if (n_right < min_leaf) break;
        const double v = x_.at(r, f);
        const double v_next = x_.at(s[i + 1], f);
        if (!(v_next > v)) continue;

        double score;
        if (t_.task == ForestTask::Regression) {
          const double right_sum = sum - left_sum;
          score = left_sum * left_sum / static_cast<double>(n_left) +
                  right_sum * right_sum / static_cast<double>(n_right);
        } else {
          double right_sq = 0.0;
          for (std::size_t c = 0; c < counts.size(); ++c) {
            const double rc = counts[c] - left_counts[c];
            right_sq += rc * rc;
          }
          score = left_sq_counts / static_cast<double>(n_left) + right_sq / static_cast<double>(n_right);
        }
        const double gain = score - parent_score;
        if (gain > tolerance && (!best.found || gain > best.gain)) {
          double threshold = 0.5 * (v + v_next);
          if (!(threshold < v_next)) threshold = v;
          best = {gain, f, threshold, true};
        }
      }
    }
    if (!best.found) return make_leaf();

    // Partition every feature's list stably into left | right.
    for (std::size_t i = b; i < e; ++i) {
      const RowIndex r = sorted_[best.feature][i];
      goes_left_[r] = x_.at(r, best.feature) <= best.threshold ? 1 : 0;
    }
    std::size_t n_left = 0;
    for (auto& s : sorted_) {
      std::size_t l = b, rpos = 0;
      for (std::size_t i = b; i < e; ++i) {
        if (goes_left_[s[i]]) {
          s[l++] = s[i];
        } else {
          scratch_[rpos++] = s[i];
        }
      }
      std::copy(scratch_.begin(), scratch_.begin() + static_cast<std::ptrdiff_t>(rpos),
                s.begin() + static_cast<std::ptrdiff_t>(l));
      n_left = l - b;
    }

    {
      TreeNode& node = tree_.nodes[static_cast<std::size_t>(node_index)];
      node.feature = static_cast<std::int32_t>(best.feature);
      node.threshold = best.threshold;
      node.value = t_.task == ForestTask::Regression
                       ? sum / static_cast<double>(n)
                       : static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
    const std::int32_t left = grow(b, b + n_left, depth + 1);
    const std::int32_t right = grow(b + n_left, e, depth + 1);
    tree_.nodes[static_cast<std::size_t>(node_index)].left = left;
    tree_.nodes[static_cast<std::size_t>(node_index)].right = right;
    return node_index;
  }

  const DenseMatrix& x_;
  const Targets& t_;
  const ForestConfig& cfg_;
  std::size_t mtry_;
  Rng rng_;
  std::vector<std::vector<RowIndex>> sorted_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<RowIndex> scratch_;
  std::vector<std::size_t> features_;
  std::size_t n_samples_ = 0;
  Tree tree_;
};

std::vector<Tree> fit_trees(const DenseMatrix& x, const Targets& targets, const ForestConfig& cfg,
                            const std::vector<std::uint64_t>& seeds) {
  const auto order = presort(x);
  std::vector<Tree> trees(seeds.size());
  std::size_t n_threads = cfg.n_threads > 0 ? cfg.n_threads : std::thread::hardware_concurrency();
  n_threads = std::clamp<std::size_t>(n_threads, 1, std::max<std::size_t>(seeds.size(), 1));

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      try {
        trees[i] = TreeBuilder(x, targets, cfg, order, seeds[i]).build();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return trees;
}

void check_fit_inputs(const DenseMatrix& x, std::size_t n_targets, const ForestConfig& cfg) {
  if (x.rows == 0 || x.cols == 0) throw InputError("forest: empty training data");
  if (x.data.size() != x.rows * x.cols) throw InputError("forest: malformed matrix");
  if (n_targets != x.rows) throw InputError("forest: row count differs from target count");
  if (x.rows > std::numeric_limits<RowIndex>::max()) throw InputError("forest: too many rows");
  if (cfg.n_trees == 0) throw InputError("forest: n_trees must be positive");
  for (double v : x.data) {
    if (!std::isfinite(v)) throw InputError("forest: non-finite feature value");
  }
}

std::vector<std::uint64_t> tree_seeds(std::uint64_t seed, std::size_t n) {
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = derive_seed(seed, static_cast<std::uint64_t>(i));
  return seeds;
}

}  // namespace

Forest Forest::fit_regression(const DenseMatrix& x, std::span<const double> y,
                              const ForestConfig& config, std::uint64_t seed) {
  check_fit_inputs(x, y.size(), config);
  for (double v : y) {
    if (!std::isfinite(v)) throw InputError("forest: non-finite target");
  }
  Forest f;
  f.task_ = ForestTask::Regression;
  f.n_features_ = x.cols;
  f.config_ = config;
  f.seeds_ = tree_seeds(seed, config.n_trees);
  f.trees_ = fit_trees(x, Targets{ForestTask::Regression, y, {}, 0}, config, f.seeds_);
  return f;
}

Forest Forest::fit_classification(const DenseMatrix& x, std::span<const int> y, int n_classes,
                                  const ForestConfig& config, std::uint64_t seed) {
  check_fit_inputs(x, y.size(), config);
  if (n_classes < 1) throw InputError("forest: n_classes must be positive");
  for (int c : y) {
    if (c < 0 || c >= n_classes) throw InputError("forest: class label out of range");
  }
  Forest f;
  f.task_ = ForestTask::Classification;
  f.n_classes_ = n_classes;
  f.n_features_ = x.cols;
  f.config_ = config;
  f.seeds_ = tree_seeds(seed, config.n_trees);
  f.trees_ = fit_trees(x, Targets{ForestTask::Classification, {}, y, n_classes}, config, f.seeds_);
  return f;
}

void Forest::check_row(std::span<const double> row) const {
  if (trees_.empty()) throw InputError("forest: not fitted");
  if (row.size() != n_features_) {
    throw InputError("forest: row has " + std::to_string(row.size()) + " features, expected " +
                     std::to_string(n_features_));
  }
}

double Forest::predict(std::span<const double> row) const {
  check_row(row);
  double mean = 0.0;
  std::size_t k = 0;
  for (const Tree& t : trees_) mean += (t.leaf_for(row).value - mean) / static_cast<double>(++k);
  return mean;
}

int Forest::predict_class(std::span<const double> row) const {
  check_row(row);
  if (task_ != ForestTask::Classification) throw InputError("forest: not a classifier");
  std::vector<int> votes(static_cast<std::size_t>(n_classes_), 0);
  for (const Tree& t : trees_) ++votes[static_cast<std::size_t>(t.leaf_for(row).value)];
  return static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

std::vector<double> Forest::predict(const DenseMatrix& x) const {
  std::vector<double> out(x.rows);
  for (std::size_t r = 0; r < x.rows; ++r) out[r] = predict(x.row(r));
  return out;
}

void Forest::save(BinaryWriter& out) const {
  out.put_raw("FRST");
  out.put<std::uint32_t>(1);  // section version
  out.put<std::uint8_t>(static_cast<std::uint8_t>(task_));
  out.put<std::int32_t>(n_classes_);
  out.put_u64(n_features_);
  out.put_u64(config_.n_trees);
  out.put<std::int32_t>(config_.max_depth);
  out.put_u64(config_.min_leaf);
  out.put_u64(config_.mtry);
  out.put<std::uint8_t>(config_.bootstrap ? 1 : 0);
  out.put_vector(seeds_);
  out.put_u64(trees_.size());
  for (const Tree& t : trees_) {
    out.put_u64(t.nodes.size());
    for (const TreeNode& n : t.nodes) {
      out.put(n.feature);
      out.put(n.threshold);
      out.put(n.left);
      out.put(n.right);
      out.put(n.value);
    }
    out.put_vector(t.class_counts);
  }
}

Forest Forest::load(BinaryReader& in) {
  in.expect_tag("FRST");
  if (in.get<std::uint32_t>() != 1) throw BundleError("bundle: unsupported forest section version");
  Forest f;
  f.task_ = static_cast<ForestTask>(in.get<std::uint8_t>());
  f.n_classes_ = in.get<std::int32_t>();
  f.n_features_ = in.get_size();
  f.config_.n_trees = in.get_size();
  f.config_.max_depth = in.get<std::int32_t>();
  f.config_.min_leaf = in.get_size();
  f.config_.mtry = in.get_size();
  f.config_.bootstrap = in.get<std::uint8_t>() != 0;
  f.seeds_ = in.get_vector<std::uint64_t>();
  const std::size_t n_trees = in.get_size();
  if (n_trees != f.seeds_.size() || n_trees != f.config_.n_trees) {
    throw BundleError("bundle: forest tree count mismatch");
  }
  f.trees_.resize(n_trees);
  for (Tree& t : f.trees_) {
    t.nodes.resize(in.get_size());
    for (TreeNode& n : t.nodes) {
      n.feature = in.get<std::int32_t>();
      n.threshold = in.get<double>();
      n.left = in.get<std::int32_t>();
      n.right = in.get<std::int32_t>();
      n.value = in.get<double>();
      const auto limit = static_cast<std::int32_t>(t.nodes.size());
      if (n.feature >= static_cast<std::int32_t>(f.n_features_) ||
          (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= limit || n.right >= limit))) {
        throw BundleError("bundle: corrupt forest node");
      }
    }
    t.class_counts = in.get_vector<double>();
    if (t.nodes.empty()) throw BundleError("bundle: empty tree");
  }
  return f;
}

}  // namespace corisk
