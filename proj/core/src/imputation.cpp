#include "corisk/imputation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "corisk/error.hpp"
#include "corisk/random.hpp"

namespace corisk {

FeatureMatrix::FeatureMatrix(std::vector<FeatureColumn> cols, std::size_t n_rows)
    : columns(std::move(cols)), rows(n_rows), values(n_rows * columns.size(), 0.0),
      missing(n_rows * columns.size(), 1) {}

std::size_t FeatureMatrix::missing_count(std::size_t c) const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) n += is_missing(r, c) ? 1 : 0;
  return n;
}

std::size_t FeatureMatrix::total_missing() const {
  return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
}

std::optional<std::size_t> FeatureMatrix::column_index(std::string_view name) const {
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (columns[c].name == name) return c;
  }
  return std::nullopt;
}

void FeatureMatrix::validate() const {
  if (values.size() != rows * cols() || missing.size() != rows * cols()) {
    throw InputError("feature matrix: storage size mismatch");
  }
  for (std::size_t c = 0; c < cols(); ++c) {
    const FeatureColumn& col = columns[c];
    if (col.kind == ColumnKind::Categorical && col.n_categories < 1) {
      throw InputError("feature matrix: column '" + col.name + "' has no categories");
    }
    for (std::size_t r = 0; r < rows; ++r) {
      if (is_missing(r, c)) continue;
      const double v = values[r * cols() + c];
      if (!std::isfinite(v)) throw InputError("feature matrix: non-finite value in '" + col.name + "'");
      if (col.kind == ColumnKind::Categorical &&
          (v != std::floor(v) || v < 0 || v >= col.n_categories)) {
        throw InputError("feature matrix: category out of range in '" + col.name + "'");
      }
    }
  }
}

DenseMatrix FeatureMatrix::to_dense() const {
  if (total_missing() != 0) throw InputError("feature matrix: missing cells remain");
  DenseMatrix d(rows, cols());
  d.data = values;
  return d;
}

namespace {

std::vector<double> initial_fill(const FeatureMatrix& m) {
  std::vector<double> fill(m.cols(), 0.0);
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const FeatureColumn& col = m.columns[c];
    if (col.kind == ColumnKind::Continuous) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t r = 0; r < m.rows; ++r) {
        if (auto v = m.get(r, c)) {
          sum += *v;
          ++n;
        }
      }
      fill[c] = n > 0 ? sum / static_cast<double>(n) : 0.0;
    } else {
      std::vector<std::size_t> counts(static_cast<std::size_t>(col.n_categories), 0);
      for (std::size_t r = 0; r < m.rows; ++r) {
        if (auto v = m.get(r, c)) ++counts[static_cast<std::size_t>(*v)];
      }
      fill[c] = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
  }
  return fill;
}

// Columns with missing cells, ascending by missing count then index.
std::vector<std::size_t> imputation_order(const FeatureMatrix& m) {
  std::vector<std::pair<std::size_t, std::size_t>> keyed;
  for (std::size_t c = 0; c < m.cols(); ++c) {
    if (const std::size_t n = m.missing_count(c); n > 0) keyed.emplace_back(n, c);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> order;
  for (const auto& [n, c] : keyed) order.push_back(c);
  return order;
}

// Design matrix of all columns except `target` for the given rows.
DenseMatrix predictors(const FeatureMatrix& m, std::size_t target, const std::vector<std::size_t>& rows) {
  DenseMatrix x(rows.size(), m.cols() - 1);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::size_t k = 0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      if (c != target) x.at(i, k++) = m.values[rows[i] * m.cols() + c];
    }
  }
  return x;
}

Forest fit_column(const FeatureMatrix& current, const FeatureMatrix& original, std::size_t c,
                  const ForestConfig& config, std::uint64_t seed) {
  std::vector<std::size_t> observed;
  for (std::size_t r = 0; r < original.rows; ++r) {
    if (!original.is_missing(r, c)) observed.push_back(r);
  }
  const DenseMatrix x = predictors(current, c, observed);
  const FeatureColumn& col = current.columns[c];
  if (col.kind == ColumnKind::Continuous) {
    std::vector<double> y(observed.size());
    for (std::size_t i = 0; i < observed.size(); ++i) y[i] = original.values[observed[i] * original.cols() + c];
    return Forest::fit_regression(x, y, config, seed);
  }
  std::vector<int> y(observed.size());
  for (std::size_t i = 0; i < observed.size(); ++i) {
    y[i] = static_cast<int>(original.values[observed[i] * original.cols() + c]);
  }
  return Forest::fit_classification(x, y, col.n_categories, config, seed);
}

void check_imputable(const FeatureMatrix& m) {
  m.validate();
  if (m.cols() < 2 && m.total_missing() > 0) {
    throw ImputationError("imputation needs at least two columns");
  }
  for (std::size_t c = 0; c < m.cols(); ++c) {
    if (m.rows > 0 && m.missing_count(c) == m.rows) {
      throw ImputationError("column '" + m.columns[c].name + "' is entirely missing");
    }
  }
}

}  // namespace

ImputeResult impute(const FeatureMatrix& matrix, const ImputeConfig& config, std::uint64_t seed) {
  check_imputable(matrix);
  ImputeResult result{matrix, 0};
  if (matrix.total_missing() == 0) return result;

  FeatureMatrix& x = result.completed;
  const auto fill = initial_fill(matrix);
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      if (matrix.is_missing(r, c)) x.values[r * x.cols() + c] = fill[c];
    }
  }
  const auto order = imputation_order(matrix);

  bool has_cont = false, has_cat = false;
  std::size_t n_missing_cat = 0;
  for (std::size_t c : order) {
    if (matrix.columns[c].kind == ColumnKind::Continuous) {
      has_cont = true;
    } else {
      has_cat = true;
      n_missing_cat += matrix.missing_count(c);
    }
  }

  double prev_cont = std::numeric_limits<double>::infinity();
  double prev_cat = std::numeric_limits<double>::infinity();
  for (std::size_t iter = 1; iter <= config.max_iters; ++iter) {
    const std::vector<double> previous = x.values;
    for (std::size_t c : order) {
      const Forest forest = fit_column(x, matrix, c, config.forest,
                                       derive_seed(seed, static_cast<std::uint64_t>(iter * x.cols() + c)));
      std::vector<std::size_t> missing_rows;
      for (std::size_t r = 0; r < x.rows; ++r) {
        if (matrix.is_missing(r, c)) missing_rows.push_back(r);
      }
      const DenseMatrix px = predictors(x, c, missing_rows);
      for (std::size_t i = 0; i < missing_rows.size(); ++i) {
        const double v = matrix.columns[c].kind == ColumnKind::Continuous
                             ? forest.predict(px.row(i))
                             : static_cast<double>(forest.predict_class(px.row(i)));
        x.values[missing_rows[i] * x.cols() + c] = v;
      }
    }

    double num = 0.0, den = 0.0;
    std::size_t changed = 0;
    for (std::size_t r = 0; r < x.rows; ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const std::size_t k = r * x.cols() + c;
        if (matrix.columns[c].kind == ColumnKind::Continuous) {
          num += (x.values[k] - previous[k]) * (x.values[k] - previous[k]);
          den += x.values[k] * x.values[k];
        } else if (matrix.missing[k] && x.values[k] != previous[k]) {
          ++changed;
        }
      }
    }
    const double diff_cont = den > 0.0 ? num / den : 0.0;
    const double diff_cat = n_missing_cat > 0 ? static_cast<double>(changed) / static_cast<double>(n_missing_cat) : 0.0;
    result.iterations = iter;
    const bool cont_up = !has_cont || diff_cont > prev_cont;
    const bool cat_up = !has_cat || diff_cat > prev_cat;
    if (cont_up && cat_up) {
      x.values = previous;
      break;
    }
    prev_cont = diff_cont;
    prev_cat = diff_cat;
  }
  for (std::size_t k = 0; k < x.missing.size(); ++k) x.missing[k] = 0;
  return result;
}

FeatureMatrix mean_impute(const FeatureMatrix& matrix) {
  matrix.validate();
  FeatureMatrix out = matrix;
  const auto fill = initial_fill(matrix);
  for (std::size_t r = 0; r < out.rows; ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      if (out.is_missing(r, c)) out.set(r, c, fill[c]);
    }
  }
  return out;
}

double normalized_rmse(const FeatureMatrix& truth, const FeatureMatrix& masked,
                       const FeatureMatrix& imputed) {
  double sq = 0.0, sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < truth.rows; ++r) {
    for (std::size_t c = 0; c < truth.cols(); ++c) {
      if (truth.columns[c].kind != ColumnKind::Continuous || !masked.is_missing(r, c)) continue;
      const std::size_t k = r * truth.cols() + c;
      const double t = truth.values[k];
      sq += (t - imputed.values[k]) * (t - imputed.values[k]);
      sum += t;
      sum_sq += t * t;
      ++n;
    }
  }
  if (n < 2) throw InputError("normalized_rmse: fewer than two masked continuous cells");
  const double mean = sum / static_cast<double>(n);
  const double var = sum_sq / static_cast<double>(n) - mean * mean;
  if (!(var > 0.0)) throw InputError("normalized_rmse: masked truth has zero variance");
  return std::sqrt((sq / static_cast<double>(n)) / var);
}

// ---------------------------------------------------------------------------

FittedImputer FittedImputer::fit(const FeatureMatrix& train, const ImputeConfig& config,
                                 const ForestConfig& column_forest, std::uint64_t seed,
                                 ImputeResult* train_result) {
  ImputeResult result = impute(train, config, derive_seed(seed, "missforest"));
  FittedImputer imp;
  imp.columns_ = train.columns;
  imp.initial_ = initial_fill(train);
  imp.order_ = imputation_order(train);
  imp.forests_.resize(train.cols());
  for (std::size_t c : imp.order_) {
    imp.forests_[c] = fit_column(result.completed, train, c, column_forest,
                                 derive_seed(seed, static_cast<std::uint64_t>(c)));
  }
  if (train_result != nullptr) *train_result = std::move(result);
  return imp;
}

std::vector<std::size_t> FittedImputer::apply_row(std::span<double> row,
                                                  std::span<std::uint8_t> missing) const {
  const std::size_t p = columns_.size();
  if (row.size() != p || missing.size() != p) throw InputError("imputer: row width mismatch");
  std::vector<std::size_t> filled;
  for (std::size_t c = 0; c < p; ++c) {
    if (missing[c]) {
      row[c] = initial_[c];
      filled.push_back(c);
    }
  }
  if (filled.empty()) return filled;

  std::vector<double> others(p - 1);
  for (std::size_t pass = 0; pass < passes_; ++pass) {
    for (std::size_t c : order_) {
      if (!missing[c] || !forests_[c]) continue;
      std::size_t k = 0;
      for (std::size_t j = 0; j < p; ++j) {
        if (j != c) others[k++] = row[j];
      }
      row[c] = columns_[c].kind == ColumnKind::Continuous
                   ? forests_[c]->predict(others)
                   : static_cast<double>(forests_[c]->predict_class(others));
    }
  }
  std::fill(missing.begin(), missing.end(), std::uint8_t{0});
  return filled;
}

FeatureMatrix FittedImputer::apply(const FeatureMatrix& matrix) const {
  if (matrix.cols() != columns_.size()) throw InputError("imputer: column count mismatch");
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    if (matrix.columns[c].name != columns_[c].name) {
      throw SchemaError("imputer: column '" + matrix.columns[c].name + "' where '" +
                        columns_[c].name + "' expected");
    }
  }
  matrix.validate();
  FeatureMatrix out = matrix;
  const std::size_t p = columns_.size();
  for (std::size_t r = 0; r < out.rows; ++r) {
    apply_row(std::span<double>(out.values.data() + r * p, p),
              std::span<std::uint8_t>(out.missing.data() + r * p, p));
  }
  return out;
}

void FittedImputer::save(BinaryWriter& out) const {
  out.put_raw("IMPT");
  out.put<std::uint32_t>(1);
  out.put_u64(columns_.size());
  for (const FeatureColumn& c : columns_) {
    out.put_string(c.name);
    out.put<std::uint8_t>(static_cast<std::uint8_t>(c.kind));
    out.put<std::int32_t>(c.n_categories);
  }
  out.put_vector(initial_);
  std::vector<std::uint64_t> order(order_.begin(), order_.end());
  out.put_vector(order);
  out.put_u64(passes_);
  for (const auto& f : forests_) {
    out.put<std::uint8_t>(f ? 1 : 0);
    if (f) f->save(out);
  }
}

FittedImputer FittedImputer::load(BinaryReader& in) {
  in.expect_tag("IMPT");
  if (in.get<std::uint32_t>() != 1) throw BundleError("bundle: unsupported imputer version");
  FittedImputer imp;
  imp.columns_.resize(in.get_size(1 << 16));
  for (FeatureColumn& c : imp.columns_) {
    c.name = in.get_string();
    c.kind = static_cast<ColumnKind>(in.get<std::uint8_t>());
    c.n_categories = in.get<std::int32_t>();
  }
  imp.initial_ = in.get_vector<double>();
  for (auto o : in.get_vector<std::uint64_t>()) {
    if (o >= imp.columns_.size()) throw BundleError("bundle: corrupt imputer order");
    imp.order_.push_back(static_cast<std::size_t>(o));
  }
  imp.passes_ = in.get_size(100);
  imp.forests_.resize(imp.columns_.size());
  for (auto& f : imp.forests_) {
    if (in.get<std::uint8_t>()) f = Forest::load(in);
  }
  if (imp.initial_.size() != imp.columns_.size()) throw BundleError("bundle: corrupt imputer");
  return imp;
}

}  // namespace corisk
