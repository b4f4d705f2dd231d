#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "corisk/cohort.hpp"
#include "corisk/error.hpp"

namespace corisk {

struct FieldError {
  std::string field;
  std::string message;
};

// Aggregates every field-level problem found in one record.
class RecordValidationError : public InputError {
 public:
  explicit RecordValidationError(std::vector<FieldError> errors);
  const std::vector<FieldError>& errors() const noexcept { return errors_; }

 private:
  std::vector<FieldError> errors_;
};

// Column names of the model-facing part of a record, in file order.
std::vector<std::string> feature_field_names();
// All cohort-file columns, in file order.
std::vector<std::string> cohort_columns();
std::vector<std::string> outcome_columns();

// Fills the model-facing fields of `out` from text values. An absent key or
// an empty value means missing. age and sex are required; race defaults to
// "unavailable", smoking and comorbidity flags to false, device to room air.
// Numeric values are range-checked against numeric_field_specs(). Problems
// are appended to `errors`; unknown keys are reported unless listed in
// `ignored_keys`.
void parse_feature_fields(const std::map<std::string, std::string>& fields, PatientRecord& out,
                          std::vector<FieldError>& errors,
                          const std::vector<std::string>& ignored_keys = {});

// Text form of one record's fields keyed by column name (missing = "").
std::map<std::string, std::string> record_fields(const PatientRecord& record);

std::string format_real(double v);

// Cohort files: a header row naming columns, one record per line, empty cell
// = missing. Images are written under <dir of cohort file>/images/.
void write_cohort(const Cohort& cohort, const std::filesystem::path& cohort_csv,
                  const std::filesystem::path& outcomes_csv);

std::vector<PatientRecord> read_patient_records(const std::filesystem::path& cohort_csv);
std::vector<OutcomeRecord> read_outcomes(const std::filesystem::path& outcomes_csv);

// Joins records with outcomes by patient_id and loads referenced images
// relative to `image_root`.
Cohort read_cohort(const std::filesystem::path& cohort_csv,
                   const std::filesystem::path& outcomes_csv,
                   const std::filesystem::path& image_root);

}  // namespace corisk
