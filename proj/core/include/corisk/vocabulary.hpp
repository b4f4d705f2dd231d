#pragma once

// Canonical feature vocabulary. Column names in cohort files, bundle schemas
// and service payloads all come from here.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace corisk {

enum class TherapyLevel : int { RA = 0, LFO = 1, HFO_NIV = 2, MV = 3 };
inline constexpr int kTherapyLevelCount = 4;

enum class Avpu : int { Alert = 0, Voice = 1, Pain = 2, Unresponsive = 3 };
enum class Disposition : int { Discharge = 0, Floor = 1, Icu = 2 };
enum class Sex : int { Female = 0, Male = 1 };
enum class PcrResult : int { Negative = 0, Positive = 1 };

std::string_view to_string(TherapyLevel level);
std::string_view to_string(Avpu avpu);
std::string_view to_string(Disposition d);
std::string_view to_string(Sex s);
std::string_view to_string(PcrResult r);

std::optional<TherapyLevel> parse_therapy_level(std::string_view text);
std::optional<Avpu> parse_avpu(std::string_view text);
std::optional<Disposition> parse_disposition(std::string_view text);
std::optional<Sex> parse_sex(std::string_view text);
std::optional<PcrResult> parse_pcr_result(std::string_view text);

inline constexpr std::array<std::string_view, 6> kRaces = {
    "asian", "black", "hispanic", "other", "unavailable", "white"};

inline constexpr std::array<std::string_view, 12> kComorbidities = {
    "anemia",
    "cancer",
    "cardiovascular_disease",
    "cerebrovascular_disease",
    "chronic_kidney_disease",
    "respiratory_disease",
    "coagulopathy",
    "history_of_transplant",
    "liver_disease",
    "metabolic_disease",
    "neurodegenerative_disease",
    "pregnancy"};

enum class Vital : int {
  Temperature = 0,
  Spo2,
  RespiratoryRate,
  HeartRate,
  SystolicBp,
  DiastolicBp
};
inline constexpr std::array<std::string_view, 6> kVitals = {
    "temperature", "spo2", "respiratory_rate", "heart_rate", "systolic_bp", "diastolic_bp"};

// Urea is in mmol/L, the unit of the CURB-65 cut-off.
enum class Lab : int {
  Alt = 0,
  Ast,
  Crp,
  Creatinine,
  Ferritin,
  Gfr,
  Glucose,
  Hemoglobin,
  Lactate,
  Ldh,
  Lymphocyte,
  Neutrophils,
  Platelet,
  Potassium,
  Sodium,
  Wbc,
  TroponinT,
  DDimer,
  Urea
};
inline constexpr std::array<std::string_view, 19> kLabs = {
    "alt",        "ast",       "crp",        "creatinine", "ferritin",    "gfr",       "glucose",
    "hemoglobin", "lactate",   "ldh",        "lymphocyte", "neutrophils", "platelet",  "potassium",
    "sodium",     "wbc",       "troponin_t", "d_dimer",    "urea"};

constexpr std::size_t index_of(Vital v) { return static_cast<std::size_t>(v); }
constexpr std::size_t index_of(Lab l) { return static_cast<std::size_t>(l); }

struct NumericFieldSpec {
  std::string_view name;
  std::string_view unit;
  double lower;  // physiologic plausibility bounds, inclusive
  double upper;
};

// Bounds for age, vitals and labs. Values outside are rejected as input errors.
std::span<const NumericFieldSpec> numeric_field_specs();
std::optional<NumericFieldSpec> numeric_field_spec(std::string_view name);

// Oxygen-device taxonomy, one list per therapy level (room air has no device).
std::span<const std::string_view> devices_for(TherapyLevel level);

}  // namespace corisk
