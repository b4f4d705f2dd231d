#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "corisk/vocabulary.hpp"

namespace corisk {

enum class ScoreSource { FusionModel, Forest };
enum class RiskBand { Low, Medium, High };

std::string_view to_string(ScoreSource source);
std::string_view to_string(RiskBand band);
std::optional<RiskBand> parse_risk_band(std::string_view text);

struct CombinedPrediction {
  double raw = 0.0;
  ScoreSource source = ScoreSource::Forest;
};

// The fusion output when a chest image exists, otherwise the forest output.
CombinedPrediction combine(std::optional<double> dl_pred, double rf_pred, bool has_cxr);

// 100 * raw^(1/3). Throws InputError outside [0,1].
double to_corisk(double raw);

struct BandThresholds {
  double t_low_med = 0.0;
  double t_med_high = 0.0;

  void validate() const;  // 0 < t_low_med < t_med_high < 100, else ConfigError
  friend bool operator==(const BandThresholds&, const BandThresholds&) = default;
};

// Low below t_low_med, High from t_med_high up; a score equal to a cutpoint
// belongs to the higher band.
RiskBand assign_band(double score, const BandThresholds& t);

// Number of patients whose band matches their disposition
// (Low/discharge, Medium/floor, High/icu).
std::size_t band_agreement(std::span<const double> scores, std::span<const Disposition> dispositions,
                           const BandThresholds& t);

struct BandFit {
  BandThresholds thresholds;
  std::size_t agreement = 0;
  std::size_t total = 0;
};

// Exhaustive search over pairs of midpoints between adjacent distinct
// scores. Ties: larger gap between cutpoints, then lower t_low_med, then
// lower t_med_high. Throws FittingError when a disposition is absent or
// fewer than three distinct scores exist.
BandFit fit_band_thresholds(std::span<const double> scores, std::span<const Disposition> dispositions);

}  // namespace corisk
