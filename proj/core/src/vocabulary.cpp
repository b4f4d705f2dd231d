#include "corisk/vocabulary.hpp"

#include <algorithm>

namespace corisk {
namespace {

constexpr std::array<std::string_view, 4> kTherapyNames = {"RA", "LFO", "HFO_NIV", "MV"};
constexpr std::array<std::string_view, 4> kAvpuNames = {"alert", "voice", "pain",
                                                        "unresponsive"};
constexpr std::array<std::string_view, 3> kDispositionNames = {"discharge", "floor", "icu"};
constexpr std::array<std::string_view, 2> kSexNames = {"female", "male"};
constexpr std::array<std::string_view, 2> kPcrNames = {"negative", "positive"};

constexpr std::array<std::string_view, 7> kLfoDevices = {
    "Nasal cannula",  "Simple mask",   "Oxymask",     "Oxygen conserving device",
    "Blow-by",        "Pulse dose device", "Aerosol mask"};
constexpr std::array<std::string_view, 11> kHfoDevices = {
    "High flow nasal cannula", "Face tent",      "High flow face mask",
    "Bag-valve Mask",          "Non-rebreather mask", "T-Piece",
    "Venturi mask",            "Partial rebreather mask", "Bi-PAP",
    "CPAP",                    "Transtracheal catheter"};
constexpr std::array<std::string_view, 1> kMvDevices = {"Ventilator"};

constexpr std::array<NumericFieldSpec, 26> kNumericSpecs = {{
    {"age", "years", 0.0, 120.0},
    {"temperature", "degC", 25.0, 45.0},
    {"spo2", "%", 30.0, 100.0},
    {"respiratory_rate", "breaths/min", 2.0, 80.0},
    {"heart_rate", "beats/min", 10.0, 300.0},
    {"systolic_bp", "mmHg", 30.0, 300.0},
    {"diastolic_bp", "mmHg", 10.0, 200.0},
    {"alt", "U/L", 0.0, 10000.0},
    {"ast", "U/L", 0.0, 10000.0},
    {"crp", "mg/dL", 0.0, 1000.0},
    {"creatinine", "mg/dL", 0.0, 40.0},
    {"ferritin", "ug/L", 0.0, 100000.0},
    {"gfr", "ml/min/1.73m2", 0.0, 250.0},
    {"glucose", "mg/dL", 5.0, 3000.0},
    {"hemoglobin", "g/dL", 1.0, 30.0},
    {"lactate", "mmol/L", 0.0, 40.0},
    {"ldh", "U/L", 0.0, 20000.0},
    {"lymphocyte", "10^9/L", 0.0, 500.0},
    {"neutrophils", "10^9/L", 0.0, 500.0},
    {"platelet", "10^9/L", 0.0, 3000.0},
    {"potassium", "mmol/L", 1.0, 12.0},
    {"sodium", "mmol/L", 90.0, 200.0},
    {"wbc", "10^9/L", 0.0, 1000.0},
    {"troponin_t", "ng/L", 0.0, 100000.0},
    {"d_dimer", "ng/mL", 0.0, 100000.0},
    {"urea", "mmol/L", 0.0, 150.0},
}};

template <typename E, std::size_t N>
std::optional<E> parse_from(const std::array<std::string_view, N>& names, std::string_view text) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == text) return static_cast<E>(i);
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(TherapyLevel level) { return kTherapyNames[static_cast<int>(level)]; }
std::string_view to_string(Avpu avpu) { return kAvpuNames[static_cast<int>(avpu)]; }
std::string_view to_string(Disposition d) { return kDispositionNames[static_cast<int>(d)]; }
std::string_view to_string(Sex s) { return kSexNames[static_cast<int>(s)]; }
std::string_view to_string(PcrResult r) { return kPcrNames[static_cast<int>(r)]; }

std::optional<TherapyLevel> parse_therapy_level(std::string_view text) {
  return parse_from<TherapyLevel>(kTherapyNames, text);
}
std::optional<Avpu> parse_avpu(std::string_view text) { return parse_from<Avpu>(kAvpuNames, text); }
std::optional<Disposition> parse_disposition(std::string_view text) {
  return parse_from<Disposition>(kDispositionNames, text);
}
std::optional<Sex> parse_sex(std::string_view text) { return parse_from<Sex>(kSexNames, text); }
std::optional<PcrResult> parse_pcr_result(std::string_view text) {
  return parse_from<PcrResult>(kPcrNames, text);
}

std::span<const NumericFieldSpec> numeric_field_specs() { return kNumericSpecs; }

std::optional<NumericFieldSpec> numeric_field_spec(std::string_view name) {
  const auto it = std::find_if(kNumericSpecs.begin(), kNumericSpecs.end(),
                               [&](const NumericFieldSpec& s) { return s.name == name; });
  if (it == kNumericSpecs.end()) return std::nullopt;
  return *it;
}

std::span<const std::string_view> devices_for(TherapyLevel level) {
  switch (level) {
    case TherapyLevel::RA:
      return {};
    case TherapyLevel::LFO:
      return kLfoDevices;
    case TherapyLevel::HFO_NIV:
      return kHfoDevices;
    case TherapyLevel::MV:
      return kMvDevices;
  }
  return {};
}

}  // namespace corisk
