#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "corisk/cohort.hpp"

namespace corisk {

struct ClinicalScoreInputs {
  std::optional<bool> confusion;
  std::optional<double> urea;  // mmol/L
  std::optional<double> respiratory_rate;
  std::optional<double> systolic_bp;
  std::optional<double> diastolic_bp;
  std::optional<double> heart_rate;
  std::optional<double> temperature;
  double age = 0.0;
  std::optional<Avpu> avpu;

  // Raw, unimputed record values. Confusion is "AVPU other than alert".
  static ClinicalScoreInputs from_record(const PatientRecord& record);
};

// Either a score or the list of missing inputs, never a partial sum.
struct ClinicalScore {
  std::optional<int> value;
  std::vector<std::string> missing;

  bool computable() const { return value.has_value(); }
};

// One point each: confusion, urea > 7, RR >= 30, SBP < 90 or DBP <= 60,
// age >= 65. Values outside `bounds` throw ValidationError.
ClinicalScore curb65(const ClinicalScoreInputs& in,
                     std::span<const NumericFieldSpec> bounds = numeric_field_specs());

// Banded vital signs plus AVPU; the table is in docs/clinical_scores.md.
ClinicalScore mews(const ClinicalScoreInputs& in, std::span<const NumericFieldSpec> bounds = numeric_field_specs());

}  // namespace corisk
