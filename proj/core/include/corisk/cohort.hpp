#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "corisk/image.hpp"
#include "corisk/timestamp.hpp"
#include "corisk/vocabulary.hpp"

namespace corisk {

// Initial-presentation snapshot of one ED visit. Missing vitals/labs are
// std::nullopt; there are no sentinel values.
struct PatientRecord {
  std::string patient_id;
  int site_id = 1;
  Timestamp visit_time;
  Timestamp decision_time;
  Timestamp visit_end_time;
  double age = 0.0;
  Sex sex = Sex::Female;
  std::string race = "unavailable";
  bool smoking = false;
  bool covid_pcr_ordered = false;
  std::optional<PcrResult> covid_pcr_result;
  std::optional<Timestamp> pcr_time;
  std::array<bool, kComorbidities.size()> comorbidities{};
  std::array<std::optional<double>, kVitals.size()> vitals{};
  std::array<std::optional<double>, kLabs.size()> labs{};
  std::optional<Avpu> avpu;
  std::optional<std::string> presenting_device;
  std::optional<std::string> image_path;

  std::optional<double> vital(Vital v) const { return vitals[index_of(v)]; }
  std::optional<double> lab(Lab l) const { return labs[index_of(l)]; }
};

struct OutcomeRecord {
  std::string patient_id;
  TherapyLevel max_therapy_24h = TherapyLevel::RA;
  TherapyLevel max_therapy_72h = TherapyLevel::RA;
  bool died_24h = false;
  bool died_72h = false;
  std::optional<Timestamp> death_time;
  Disposition disposition = Disposition::Discharge;
  double followup_days = 30.0;
};

struct CohortEntry {
  PatientRecord record;
  OutcomeRecord outcome;
  std::optional<GrayImage> image;  // raw, before preprocessing
};
using Cohort = std::vector<CohortEntry>;

// ---------------------------------------------------------------------------
// Synthetic generation

// Marginal of one continuous feature. Normal features use (center, scale) as
// mean/SD. Log-normal features use center as the median and scale as the SD of
// the log. Reflected log-normal (SpO2) is 100 - lognormal(center, scale).
struct Marginal {
  enum class Shape { Normal, LogNormal, ReflectedLogNormal };
  Shape shape = Shape::Normal;
  double center = 0.0;
  double scale = 1.0;
};

struct GeneratorConfig {
  std::size_t n_patients = 1000;
  // Relative site sizes.
  std::array<double, 5> site_weights = {4556, 2401, 998, 1873, 1232};
  Timestamp period_start = make_timestamp(2020, 3, 1);
  Timestamp period_end = make_timestamp(2020, 6, 1);
  Timestamp followup_end = make_timestamp(2020, 7, 1);

  // Keyed by canonical feature name (age, vitals, labs).
  std::map<std::string, Marginal> marginals;
  // Base probability that a vital, lab or avpu is missing.
  std::map<std::string, double> missing_rates;
  // Missingness log-odds shift per unit of latent risk (negative: sicker
  // patients are more often fully worked up).
  double missing_risk_slope = -0.8;

  // Latent risk = intercept + sum(coef * standardized feature) + device_coef *
  // device level + noise. Must include spo2, respiratory_rate, presenting_device
  // and age.
  std::map<std::string, double> planted_coefficients;
  double planted_intercept = -1.6;
  double noise_sd = 0.45;

  double image_rate = 0.64;
  double image_risk_slope = 1.0;
  std::size_t image_width = 48;
  std::size_t image_height = 40;

  // Data-quality defects that the inclusion criteria must remove.
  double no_pcr_rate = 0.03;
  double prior_negative_rate = 0.02;
  double bad_timestamp_rate = 0.005;
  double bad_duration_rate = 0.005;

  static GeneratorConfig defaults();
  void validate() const;  // throws ConfigError
};

// Ground-truth latent risk per generated patient, exposed for tests.
struct PlantedTruth {
  std::vector<double> latent_risk;
  std::vector<double> severity;  // logistic(latent_risk)
};

Cohort generate_synthetic_cohort(const GeneratorConfig& config, std::uint64_t seed,
                                 PlantedTruth* truth = nullptr);

// ---------------------------------------------------------------------------
// Inclusion / exclusion

enum class ExclusionReason {
  Age,
  NoSuspicion,
  ConfirmedNegative,
  ContradictoryTimestamps,
  AbnormalVisitDuration
};
std::string_view to_string(ExclusionReason reason);

struct Exclusion {
  std::string patient_id;
  ExclusionReason reason;
};

struct InclusionResult {
  std::vector<PatientRecord> included;
  std::vector<Exclusion> exclusion_log;
};

// First failing criterion in the fixed order of ExclusionReason, or nullopt.
std::optional<ExclusionReason> exclusion_reason(const PatientRecord& record);
InclusionResult apply_inclusion_criteria(std::span<const PatientRecord> records);
// Same filter over full cohort entries; exclusions appended to log if given.
Cohort filter_cohort(const Cohort& cohort, std::vector<Exclusion>* log = nullptr);

// ---------------------------------------------------------------------------
// Devices and labels

// Case- and whitespace-insensitive lookup. "room air"/"none" map to RA.
// Unknown names yield nullopt; callers decide the policy.
std::optional<TherapyLevel> classify_oxygen_device(std::string_view device_name);
// Absent device means room air; unknown names throw EncodingError.
TherapyLevel presenting_therapy_level(const PatientRecord& record);

enum class Horizon { H24, H72 };

double therapy_encoding(TherapyLevel level);
double derive_outcome_label(const OutcomeRecord& outcome, Horizon horizon);

struct SurvivalObservation {
  double time_days = 0.0;
  bool event = false;
};
// Time to death (event) or censoring, truncated at horizon_days.
SurvivalObservation survival_within(const PatientRecord& record, const OutcomeRecord& outcome,
                                    double horizon_days = 30.0);

// ---------------------------------------------------------------------------
// Splits

enum class SplitKind { BySite, ByPeriod };

struct DateWindow {
  std::string name;
  Timestamp start;  // inclusive
  Timestamp end;    // exclusive
  bool contains(Timestamp t) const { return start <= t && t < end; }
};

struct SiteSplitParams {
  std::set<int> train_sites = {1, 2};
  std::set<int> test_sites = {3, 4, 5};
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct PeriodSplitParams {
  DateWindow training;
  std::vector<DateWindow> test_windows;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;

  // Train on March-April 2020; test on May 1-10, 11-20, 21-31.
  static PeriodSplitParams may_windows();
};

struct CohortSplit {
  SplitKind kind = SplitKind::BySite;
  std::vector<std::string> train_ids;
  std::vector<std::string> validation_ids;
  std::vector<std::string> test_ids;
  // Named partition of test_ids: one group per test site or per window.
  std::vector<std::pair<std::string, std::vector<std::string>>> test_groups;
};

CohortSplit split_by_site(std::span<const PatientRecord> records, const SiteSplitParams& params);
CohortSplit split_by_period(std::span<const PatientRecord> records,
                            const PeriodSplitParams& params);

}  // namespace corisk
