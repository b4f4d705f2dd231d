#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corisk/forest.hpp"
#include "corisk/random.hpp"
#include "corisk/vocabulary.hpp"

namespace corisk {

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;  // score >= threshold is called positive; +inf at (0,0)
};

struct RocCurve {
  std::vector<RocPoint> points;  // descending threshold, (0,0) to (1,1)
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

// One point per distinct score. Throws EvaluationError unless both classes
// are present.
RocCurve roc(std::span<const double> scores, const std::vector<bool>& labels);
double roc_auc(std::span<const double> scores, const std::vector<bool>& labels);

// ---------------------------------------------------------------------------
// Bootstrap

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

// Draws n row indices for one replicate.
using Resampler = std::function<std::vector<std::size_t>(std::size_t n, Rng& rng)>;
std::vector<std::size_t> resample_with_replacement(std::size_t n, Rng& rng);

// Generic percentile bootstrap. `statistic` returns nullopt for a resample it
// cannot evaluate; that replicate is redrawn up to max_retries times before
// EvaluationError. Replicate b uses derive_seed(seed, b).
Interval bootstrap_interval(std::size_t n, const std::function<std::optional<double>(std::span<const std::size_t>)>& statistic,
                            std::size_t n_boot, std::uint64_t seed, const Resampler& resampler = resample_with_replacement,
                            std::size_t max_retries = 1000, double level = 0.95);

using ScoreStatistic = std::function<double(std::span<const double> scores, const std::vector<bool>& labels)>;

// Resamples (score, label) pairs; replicates lacking either class are redrawn.
Interval bootstrap_ci(std::span<const double> scores, const std::vector<bool>& labels, const ScoreStatistic& statistic,
                      std::size_t n_boot, std::uint64_t seed, const Resampler& resampler = resample_with_replacement,
                      std::size_t max_retries = 1000);

// ---------------------------------------------------------------------------
// Permutation importance

struct FeatureImportance {
  std::string feature;
  double mean_increase = 0.0;
};

using PredictFn = std::function<std::vector<double>(const DenseMatrix& x)>;
using ErrorFn = std::function<double(std::span<const double> predicted, std::span<const double> truth)>;

double mean_squared_error(std::span<const double> predicted, std::span<const double> truth);

// Sorted by descending mean increase, ties by feature name. Column j is
// shuffled with derive_seed(derive_seed(seed, j), repeat).
std::vector<FeatureImportance> permutation_importance(const PredictFn& predict, const DenseMatrix& x,
                                                      std::span<const double> y,
                                                      const std::vector<std::string>& feature_names,
                                                      std::size_t n_repeats, std::uint64_t seed,
                                                      const ErrorFn& error = mean_squared_error);

// ---------------------------------------------------------------------------
// Survival

struct KmStep {
  double time = 0.0;
  double survival = 1.0;
  std::size_t at_risk = 0;
  std::size_t events = 0;
};

struct KmCurve {
  std::vector<KmStep> steps;  // first step is (0, 1.0, n, 0)
  double horizon = 30.0;

  double survival_at(double t) const;
};

// Product-limit estimate over event times up to horizon.
KmCurve km_estimate(std::span<const double> times, const std::vector<bool>& events, double horizon = 30.0);

struct SurvivalGroup {
  std::vector<double> times;
  std::vector<bool> events;
};

struct LogRankResult {
  double chi_square = 0.0;
  std::size_t df = 0;
  double p_value = 1.0;
};

// k-group log-rank test. Groups never at risk at any event time are left out
// of the statistic and the degrees of freedom.
LogRankResult logrank_test(std::span<const SurvivalGroup> groups);

// ---------------------------------------------------------------------------
// Operating points

struct OperatingPoint {
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::optional<double> threshold;
};

// Sensitivity = P(icu | MV72), specificity = P(floor | no MV72). Discharged
// patients must be filtered out by the caller.
OperatingPoint physician_operating_point(std::span<const Disposition> dispositions, const std::vector<bool>& mv72);

struct ClosestPoint {
  double threshold = 0.0;
  OperatingPoint point;
  double distance = 0.0;
};

// Nearest curve point to `target` in (sensitivity, specificity) coordinates.
// Ties: higher tpr, then lower fpr.
ClosestPoint closest_roc_threshold(const RocCurve& curve, const OperatingPoint& target);

// First point, in descending-threshold order, whose tpr reaches target_sens.
OperatingPoint operating_point_at_sensitivity(const RocCurve& curve, double target_sens);

// ---------------------------------------------------------------------------
// Group statistics

// Nearest-rank percentile, p in [0,100]: element ceil(p/100 * n), 1-based,
// at least the first.
double nearest_rank_percentile(std::span<const double> values, double p);

struct Quartiles {
  std::size_t n = 0;
  double q25 = 0.0;
  double median = 0.0;
  double q75 = 0.0;
};
Quartiles summarize(std::span<const double> values);

struct MannWhitneyResult {
  double u = 0.0;  // for the first group
  double z = 0.0;
  double p_value = 1.0;
};

// Two-sided, normal approximation with tie correction, no continuity correction.
MannWhitneyResult mann_whitney(std::span<const double> a, std::span<const double> b);

struct GroupStats {
  std::vector<std::pair<std::string, Quartiles>> groups;  // order of first appearance
  std::optional<MannWhitneyResult> test;                 // exactly two groups
};
GroupStats group_stats(std::span<const double> values, std::span<const std::string> groups);

}  // namespace corisk
