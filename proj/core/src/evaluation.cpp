#include "corisk/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include <boost/math/special_functions/gamma.hpp>

#include "corisk/error.hpp"

namespace corisk {

namespace {

void check_lengths(std::size_t a, std::size_t b, std::string_view what) {
  if (a != b) {
    throw InputError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
  }
}

std::size_t nearest_rank_index(std::size_t n, double p) {
  const double rank = std::ceil(p / 100.0 * static_cast<double>(n) - 1e-9);
  const auto r = static_cast<std::size_t>(std::max(1.0, rank));
  return std::min(r, n) - 1;
}

}  // namespace

RocCurve roc(std::span<const double> scores, const std::vector<bool>& labels) {
  check_lengths(scores.size(), labels.size(), "roc");
  RocCurve curve;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw InputError("roc: non-finite score at index " + std::to_string(i));
    (labels[i] ? curve.positives : curve.negatives)++;
  }
  if (curve.positives == 0 || curve.negatives == 0) {
    throw EvaluationError("roc: labels contain a single class (" + std::to_string(curve.positives) + " positive, " +
                          std::to_string(curve.negatives) + " negative)");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double P = static_cast<double>(curve.positives);
  const double N = static_cast<double>(curve.negatives);
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  std::uint64_t tp = 0, fp = 0;
  std::uint64_t twice_area = 0;  // sum of dFP * (TP_prev + TP_cur)
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    const std::uint64_t tp_prev = tp, fp_prev = fp;
    while (k < order.size() && scores[order[k]] == s) {
      (labels[order[k]] ? tp : fp)++;
      ++k;
    }
    twice_area += (fp - fp_prev) * (tp + tp_prev);
    curve.points.push_back({static_cast<double>(fp) / N, static_cast<double>(tp) / P, s});
  }
  curve.auc = static_cast<double>(twice_area) / (2.0 * P * N);
  return curve;
}

double roc_auc(std::span<const double> scores, const std::vector<bool>& labels) { return roc(scores, labels).auc; }

std::vector<std::size_t> resample_with_replacement(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  if (n == 0) return idx;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

Interval bootstrap_interval(std::size_t n,
                            const std::function<std::optional<double>(std::span<const std::size_t>)>& statistic,
                            std::size_t n_boot, std::uint64_t seed, const Resampler& resampler,
                            std::size_t max_retries, double level) {
  if (n_boot == 0) throw InputError("bootstrap: n_boot must be positive");
  if (n == 0) throw InputError("bootstrap: empty sample");
  if (!(level > 0.0 && level < 1.0)) throw InputError("bootstrap: level must be in (0,1)");
  std::vector<double> values;
  values.reserve(n_boot);
  for (std::size_t b = 0; b < n_boot; ++b) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(b)));
    std::optional<double> v;
    for (std::size_t attempt = 0; attempt <= max_retries && !v; ++attempt) {
      const std::vector<std::size_t> idx = resampler(n, rng);
      v = statistic(idx);
    }
    if (!v) {
      throw EvaluationError("bootstrap: replicate " + std::to_string(b) + " not computable after " +
                            std::to_string(max_retries) + " retries");
    }
    values.push_back(*v);
  }
  std::sort(values.begin(), values.end());
  const double tail = (1.0 - level) / 2.0 * 100.0;
  return {values[nearest_rank_index(values.size(), tail)], values[nearest_rank_index(values.size(), 100.0 - tail)]};
}

Interval bootstrap_ci(std::span<const double> scores, const std::vector<bool>& labels, const ScoreStatistic& statistic,
                      std::size_t n_boot, std::uint64_t seed, const Resampler& resampler, std::size_t max_retries) {
  check_lengths(scores.size(), labels.size(), "bootstrap_ci");
  std::vector<double> s;
  std::vector<bool> l;
  auto stat = [&](std::span<const std::size_t> idx) -> std::optional<double> {
    s.clear();
    l.clear();
    bool pos = false, neg = false;
    for (std::size_t i : idx) {
      s.push_back(scores[i]);
      l.push_back(labels[i]);
      (labels[i] ? pos : neg) = true;
    }
    if (!pos || !neg) return std::nullopt;
    return statistic(s, l);
  };
  return bootstrap_interval(scores.size(), stat, n_boot, seed, resampler, max_retries);
}

double mean_squared_error(std::span<const double> predicted, std::span<const double> truth) {
  check_lengths(predicted.size(), truth.size(), "mean_squared_error");
  if (truth.empty()) throw InputError("mean_squared_error: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = predicted[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<double>(truth.size());
}

std::vector<FeatureImportance> permutation_importance(const PredictFn& predict, const DenseMatrix& x,
                                                      std::span<const double> y,
                                                      const std::vector<std::string>& feature_names,
                                                      std::size_t n_repeats, std::uint64_t seed, const ErrorFn& error) {
  check_lengths(x.rows, y.size(), "permutation_importance");
  check_lengths(x.cols, feature_names.size(), "permutation_importance feature names");
  if (n_repeats == 0) throw InputError("permutation_importance: n_repeats must be positive");
  const double baseline = error(predict(x), y);
  std::vector<FeatureImportance> out;
  DenseMatrix work = x;
  std::vector<double> column(x.rows);
  for (std::size_t j = 0; j < x.cols; ++j) {
    const std::uint64_t feature_seed = derive_seed(seed, static_cast<std::uint64_t>(j));
    double total = 0.0;
    for (std::size_t r = 0; r < n_repeats; ++r) {
      for (std::size_t i = 0; i < x.rows; ++i) column[i] = x.at(i, j);
      Rng rng(derive_seed(feature_seed, static_cast<std::uint64_t>(r)));
      std::shuffle(column.begin(), column.end(), rng);
      for (std::size_t i = 0; i < x.rows; ++i) work.at(i, j) = column[i];
      total += error(predict(work), y) - baseline;
    }
    for (std::size_t i = 0; i < x.rows; ++i) work.at(i, j) = x.at(i, j);
    out.push_back({feature_names[j], total / static_cast<double>(n_repeats)});
  }
  std::stable_sort(out.begin(), out.end(), [](const FeatureImportance& a, const FeatureImportance& b) {
    if (a.mean_increase != b.mean_increase) return a.mean_increase > b.mean_increase;
    return a.feature < b.feature;
  });
  return out;
}

double KmCurve::survival_at(double t) const {
  double s = 1.0;
  for (const auto& step : steps) {
    if (step.time > t) break;
    s = step.survival;
  }
  return s;
}

KmCurve km_estimate(std::span<const double> times, const std::vector<bool>& events, double horizon) {
  check_lengths(times.size(), events.size(), "km_estimate");
  for (double t : times) {
    if (!std::isfinite(t) || t < 0.0) throw InputError("km_estimate: times must be finite and non-negative");
  }
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });

  KmCurve curve;
  curve.horizon = horizon;
  curve.steps.push_back({0.0, 1.0, times.size(), 0});
  std::size_t at_risk = times.size();
  double s = 1.0;
  for (std::size_t k = 0; k < order.size();) {
    const double t = times[order[k]];
    std::size_t deaths = 0, leaving = 0;
    while (k < order.size() && times[order[k]] == t) {
      deaths += events[order[k]] ? 1 : 0;
      ++leaving;
      ++k;
    }
    if (deaths > 0 && t <= horizon) {
      s *= 1.0 - static_cast<double>(deaths) / static_cast<double>(at_risk);
      curve.steps.push_back({t, s, at_risk, deaths});
    }
    at_risk -= leaving;
  }
  return curve;
}

LogRankResult logrank_test(std::span<const SurvivalGroup> groups) {
  const std::size_t k = groups.size();
  if (k < 2) throw InputError("logrank_test: at least two groups required");
  struct Obs {
    double time;
    bool event;
    std::size_t group;
  };
  std::vector<Obs> obs;
  std::vector<double> at_risk(k, 0.0);
  for (std::size_t g = 0; g < k; ++g) {
    check_lengths(groups[g].times.size(), groups[g].events.size(), "logrank_test");
    if (groups[g].times.empty()) throw InputError("logrank_test: group " + std::to_string(g) + " is empty");
    for (std::size_t i = 0; i < groups[g].times.size(); ++i) {
      const double t = groups[g].times[i];
      if (!std::isfinite(t) || t < 0.0) throw InputError("logrank_test: times must be finite and non-negative");
      obs.push_back({t, groups[g].events[i], g});
    }
    at_risk[g] = static_cast<double>(groups[g].times.size());
  }
  std::sort(obs.begin(), obs.end(), [](const Obs& a, const Obs& b) { return a.time < b.time; });

  std::vector<double> o_minus_e(k, 0.0);
  std::vector<double> v(k * k, 0.0);
  std::size_t total_events = 0;
  std::vector<double> d(k), leaving(k);
  for (std::size_t i = 0; i < obs.size();) {
    const double t = obs[i].time;
    std::fill(d.begin(), d.end(), 0.0);
    std::fill(leaving.begin(), leaving.end(), 0.0);
    while (i < obs.size() && obs[i].time == t) {
      if (obs[i].event) d[obs[i].group] += 1.0;
      leaving[obs[i].group] += 1.0;
      ++i;
    }
    const double dt = std::accumulate(d.begin(), d.end(), 0.0);
    const double nt = std::accumulate(at_risk.begin(), at_risk.end(), 0.0);
    if (dt > 0.0) {
      total_events += static_cast<std::size_t>(dt);
      for (std::size_t g = 0; g < k; ++g) o_minus_e[g] += d[g] - dt * at_risk[g] / nt;
      if (nt > 1.0) {
        const double factor = dt * (nt - dt) / (nt - 1.0);
        for (std::size_t g = 0; g < k; ++g) {
          for (std::size_t h = 0; h < k; ++h) {
            const double delta = g == h ? 1.0 : 0.0;
            v[g * k + h] += factor * (at_risk[g] / nt) * (delta - at_risk[h] / nt);
          }
        }
      }
    }
    for (std::size_t g = 0; g < k; ++g) at_risk[g] -= leaving[g];
  }
  if (total_events == 0) throw EvaluationError("logrank_test: no events in any group, test undefined");

  std::vector<std::size_t> active;
  for (std::size_t g = 0; g < k; ++g) {
    if (v[g * k + g] > 0.0) active.push_back(g);
  }
  if (active.size() < 2) throw EvaluationError("logrank_test: fewer than two groups contribute information");
  const std::size_t m = active.size() - 1;
  std::vector<double> a(m * m), rhs(m);
  for (std::size_t r = 0; r < m; ++r) {
    rhs[r] = o_minus_e[active[r]];
    for (std::size_t c = 0; c < m; ++c) a[r * m + c] = v[active[r] * k + active[c]];
  }
  std::vector<double> sol = rhs;
  double scale = 0.0;
  for (std::size_t r = 0; r < m; ++r) scale = std::max(scale, std::abs(a[r * m + r]));
  for (std::size_t col = 0; col < m; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < m; ++r) {
      if (std::abs(a[r * m + col]) > std::abs(a[piv * m + col])) piv = r;
    }
    if (std::abs(a[piv * m + col]) <= 1e-12 * scale) throw EvaluationError("logrank_test: singular variance matrix");
    if (piv != col) {
      for (std::size_t c = 0; c < m; ++c) std::swap(a[col * m + c], a[piv * m + c]);
      std::swap(sol[col], sol[piv]);
    }
    for (std::size_t r = col + 1; r < m; ++r) {
      const double f = a[r * m + col] / a[col * m + col];
      for (std::size_t c = col; c < m; ++c) a[r * m + c] -= f * a[col * m + c];
      sol[r] -= f * sol[col];
    }
  }
  for (std::size_t r = m; r-- > 0;) {
    double acc = sol[r];
    for (std::size_t c = r + 1; c < m; ++c) acc -= a[r * m + c] * sol[c];
    sol[r] = acc / a[r * m + r];
  }
  double chi = 0.0;
  for (std::size_t r = 0; r < m; ++r) chi += rhs[r] * sol[r];
  chi = std::max(chi, 0.0);

  LogRankResult res;
  res.chi_square = chi;
  res.df = m;
  res.p_value = chi == 0.0 ? 1.0 : boost::math::gamma_q(static_cast<double>(m) / 2.0, chi / 2.0);
  return res;
}

OperatingPoint physician_operating_point(std::span<const Disposition> dispositions, const std::vector<bool>& mv72) {
  check_lengths(dispositions.size(), mv72.size(), "physician_operating_point");
  std::size_t pos = 0, tp = 0, neg = 0, tn = 0;
  for (std::size_t i = 0; i < dispositions.size(); ++i) {
    if (dispositions[i] == Disposition::Discharge) {
      throw InputError("physician_operating_point: discharged patient at index " + std::to_string(i));
    }
    if (mv72[i]) {
      ++pos;
      tp += dispositions[i] == Disposition::Icu;
    } else {
      ++neg;
      tn += dispositions[i] == Disposition::Floor;
    }
  }
  if (pos == 0) throw EvaluationError("physician_operating_point: no MV-positive patients, sensitivity undefined");
  if (neg == 0) throw EvaluationError("physician_operating_point: no MV-negative patients, specificity undefined");
  return {static_cast<double>(tp) / static_cast<double>(pos), static_cast<double>(tn) / static_cast<double>(neg),
          std::nullopt};
}

ClosestPoint closest_roc_threshold(const RocCurve& curve, const OperatingPoint& target) {
  if (curve.points.empty()) throw InputError("closest_roc_threshold: empty curve");
  const RocPoint* best = nullptr;
  double best_d = 0.0;
  for (const RocPoint& p : curve.points) {
    const double ds = p.tpr - target.sensitivity;
    const double dc = (1.0 - p.fpr) - target.specificity;
    const double dist = std::sqrt(ds * ds + dc * dc);
    const bool better = best == nullptr || dist < best_d ||
                        (dist == best_d && (p.tpr > best->tpr || (p.tpr == best->tpr && p.fpr < best->fpr)));
    if (better) {
      best = &p;
      best_d = dist;
    }
  }
  return {best->threshold, {best->tpr, 1.0 - best->fpr, best->threshold}, best_d};
}

OperatingPoint operating_point_at_sensitivity(const RocCurve& curve, double target_sens) {
  if (curve.points.empty()) throw InputError("operating_point_at_sensitivity: empty curve");
  for (const RocPoint& p : curve.points) {
    if (p.tpr >= target_sens) return {p.tpr, 1.0 - p.fpr, p.threshold};
  }
  throw EvaluationError("operating_point_at_sensitivity: sensitivity " + std::to_string(target_sens) +
                        " is not reachable on this curve");
}

double nearest_rank_percentile(std::span<const double> values, double p) {
  if (values.empty()) throw InputError("percentile: empty input");
  if (!(p >= 0.0 && p <= 100.0)) throw InputError("percentile: p outside [0,100]");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[nearest_rank_index(sorted.size(), p)];
}

Quartiles summarize(std::span<const double> values) {
  if (values.empty()) throw InputError("summarize: empty group");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  return {n, sorted[nearest_rank_index(n, 25.0)], sorted[nearest_rank_index(n, 50.0)],
          sorted[nearest_rank_index(n, 75.0)]};
}

MannWhitneyResult mann_whitney(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InputError("mann_whitney: empty group");
  struct Item {
    double v;
    bool first;
  };
  std::vector<Item> all;
  for (double v : a) all.push_back({v, true});
  for (double v : b) all.push_back({v, false});
  std::sort(all.begin(), all.end(), [](const Item& x, const Item& y) { return x.v < y.v; });
  const double n1 = static_cast<double>(a.size()), n2 = static_cast<double>(b.size());
  const double n = n1 + n2;
  double rank_sum = 0.0, tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].v == all[i].v) ++j;
    const double t = static_cast<double>(j - i);
    const double mid = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].first) rank_sum += mid;
    }
    tie_term += t * t * t - t;
    i = j;
  }
  MannWhitneyResult r;
  r.u = rank_sum - n1 * (n1 + 1.0) / 2.0;
  const double var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return r;
  r.z = (r.u - n1 * n2 / 2.0) / std::sqrt(var);
  r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  return r;
}

GroupStats group_stats(std::span<const double> values, std::span<const std::string> groups) {
  check_lengths(values.size(), groups.size(), "group_stats");
  std::vector<std::string> names;
  std::map<std::string, std::vector<double>> members;
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto [it, inserted] = members.try_emplace(groups[i]);
    if (inserted) names.push_back(groups[i]);
    it->second.push_back(values[i]);
  }
  GroupStats out;
  for (const auto& name : names) out.groups.emplace_back(name, summarize(members[name]));
  if (names.size() == 2) out.test = mann_whitney(members[names[0]], members[names[1]]);
  return out;
}

}  // namespace corisk
