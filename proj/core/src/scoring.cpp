#include "corisk/scoring.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "corisk/error.hpp"

namespace corisk {

std::string_view to_string(ScoreSource source) {
  return source == ScoreSource::FusionModel ? "fusion_model" : "forest";
}

std::string_view to_string(RiskBand band) {
  switch (band) {
    case RiskBand::Low: return "Low";
    case RiskBand::Medium: return "Medium";
    case RiskBand::High: return "High";
  }
  return "?";
}

std::optional<RiskBand> parse_risk_band(std::string_view text) {
  for (RiskBand b : {RiskBand::Low, RiskBand::Medium, RiskBand::High}) {
    if (text == to_string(b)) return b;
  }
  return std::nullopt;
}

CombinedPrediction combine(std::optional<double> dl_pred, double rf_pred, bool has_cxr) {
  if (has_cxr) {
    if (!dl_pred) throw ContractError("combine: image present but no fusion-model prediction");
    return {*dl_pred, ScoreSource::FusionModel};
  }
  return {rf_pred, ScoreSource::Forest};
}

double to_corisk(double raw) {
  if (!(raw >= 0.0 && raw <= 1.0)) throw InputError("to_corisk: raw prediction " + std::to_string(raw) + " outside [0,1]");
  // libm cbrt is not correctly rounded; pick the neighbour whose cube is closest.
  double c = std::cbrt(raw);
  for (double n : {std::nextafter(c, 0.0), std::nextafter(c, 2.0)}) {
    if (std::abs(n * n * n - raw) < std::abs(c * c * c - raw)) c = n;
  }
  return 100.0 * c;
}

void BandThresholds::validate() const {
  if (!(0.0 < t_low_med && t_low_med < t_med_high && t_med_high < 100.0)) {
    throw ConfigError("band thresholds must satisfy 0 < low/medium < medium/high < 100, got " +
                      std::to_string(t_low_med) + " and " + std::to_string(t_med_high));
  }
}

RiskBand assign_band(double score, const BandThresholds& t) {
  if (score < t.t_low_med) return RiskBand::Low;
  if (score >= t.t_med_high) return RiskBand::High;
  return RiskBand::Medium;
}

std::size_t band_agreement(std::span<const double> scores, std::span<const Disposition> dispositions,
                           const BandThresholds& t) {
  if (scores.size() != dispositions.size()) throw InputError("band_agreement: length mismatch");
  std::size_t n = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    n += static_cast<int>(assign_band(scores[i], t)) == static_cast<int>(dispositions[i]);
  }
  return n;
}

BandFit fit_band_thresholds(std::span<const double> scores, std::span<const Disposition> dispositions) {
  if (scores.size() != dispositions.size()) throw InputError("fit_band_thresholds: length mismatch");
  std::array<std::size_t, 3> present{};
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw InputError("fit_band_thresholds: non-finite score");
    ++present[static_cast<std::size_t>(dispositions[i])];
  }
  for (Disposition d : {Disposition::Discharge, Disposition::Floor, Disposition::Icu}) {
    if (present[static_cast<std::size_t>(d)] == 0) {
      throw FittingError("fit_band_thresholds: no '" + std::string(to_string(d)) + "' patients");
    }
  }

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Per distinct score: cumulative counts of each disposition up to and including it.
  std::vector<double> distinct;
  std::vector<std::array<std::size_t, 3>> cumulative;
  std::array<std::size_t, 3> running{};
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double s = scores[order[k]];
    ++running[static_cast<std::size_t>(dispositions[order[k]])];
    if (distinct.empty() || s != distinct.back()) {
      distinct.push_back(s);
      cumulative.push_back(running);
    } else {
      cumulative.back() = running;
    }
  }
  const std::size_t m = distinct.size();
  if (m < 3) throw FittingError("fit_band_thresholds: fewer than three distinct scores, no cutpoint pair exists");

  const std::size_t total_icu = running[2];
  BandFit best;
  best.total = scores.size();
  bool have = false;
  double best_margin = 0.0;
  // Cutpoint c_i lies between distinct[i] and distinct[i+1].
  for (std::size_t i = 0; i + 2 < m; ++i) {
    const double t1 = 0.5 * (distinct[i] + distinct[i + 1]);
    const std::size_t low_hits = cumulative[i][0];
    for (std::size_t j = i + 1; j + 1 < m; ++j) {
      const double t2 = 0.5 * (distinct[j] + distinct[j + 1]);
      const std::size_t agreement = low_hits + (cumulative[j][1] - cumulative[i][1]) + (total_icu - cumulative[j][2]);
      const double margin = t2 - t1;
      if (!have || agreement > best.agreement || (agreement == best.agreement && margin > best_margin)) {
        have = true;
        best.agreement = agreement;
        best.thresholds = {t1, t2};
        best_margin = margin;
      }
    }
  }
  return best;
}

}  // namespace corisk
