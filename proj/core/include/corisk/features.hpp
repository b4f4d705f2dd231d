#pragma once

#include <span>
#include <vector>

#include "corisk/cohort.hpp"
#include "corisk/fusion_model.hpp"
#include "corisk/imputation.hpp"

namespace corisk {

// Column layout shared by imputation, the outcome forests and the fusion
// model: age, vitals and labs (continuous), then sex, race, smoking, the
// comorbidity flags, avpu and presenting oxygen therapy (categorical).
inline constexpr std::size_t kContinuousFeatureCount = 1 + kVitals.size() + kLabs.size();

std::vector<FeatureColumn> ehr_feature_columns();
FeatureSchema fusion_feature_schema(std::size_t image_feature_dim = 16);

// Missing vitals, labs and avpu become missing cells. Throws EncodingError
// for an unknown race or oxygen device.
void encode_record(const PatientRecord& record, std::span<double> values, std::span<std::uint8_t> missing);
FeatureMatrix encode_records(std::span<const PatientRecord> records);

// Splits a completed row into the fusion model's continuous/categorical parts.
EhrInput to_ehr_input(std::span<const double> completed_row);

}  // namespace corisk
