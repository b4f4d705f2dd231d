#include "corisk/clinical_scores.hpp"

#include <algorithm>
#include <cmath>

#include "corisk/error.hpp"

namespace corisk {

namespace {

void check(std::string_view field, std::optional<double> v, std::span<const NumericFieldSpec> bounds) {
  if (!v) return;
  if (!std::isfinite(*v)) throw ValidationError(std::string(field), "value is not finite");
  const auto spec = std::find_if(bounds.begin(), bounds.end(), [&](const NumericFieldSpec& s) { return s.name == field; });
  if (spec == bounds.end()) return;
  if (*v < spec->lower || *v > spec->upper) {
    throw ValidationError(std::string(field), "value " + std::to_string(*v) + " outside [" +
                                                  std::to_string(spec->lower) + ", " + std::to_string(spec->upper) + "]");
  }
}

int systolic_points(double sbp) {
  if (sbp <= 70) return 3;
  if (sbp <= 80) return 2;
  if (sbp <= 100) return 1;
  if (sbp < 200) return 0;
  return 2;
}

int heart_rate_points(double hr) {
  if (hr <= 40) return 2;
  if (hr <= 50) return 1;
  if (hr <= 100) return 0;
  if (hr <= 110) return 1;
  if (hr < 130) return 2;
  return 3;
}

int respiratory_points(double rr) {
  if (rr < 9) return 2;
  if (rr <= 14) return 0;
  if (rr <= 20) return 1;
  if (rr < 30) return 2;
  return 3;
}

int temperature_points(double t) {
  if (t < 35.0) return 2;
  if (t < 38.5) return 0;
  return 2;
}

}  // namespace

ClinicalScoreInputs ClinicalScoreInputs::from_record(const PatientRecord& r) {
  ClinicalScoreInputs in;
  if (r.avpu) in.confusion = *r.avpu != Avpu::Alert;
  in.urea = r.lab(Lab::Urea);
  in.respiratory_rate = r.vital(Vital::RespiratoryRate);
  in.systolic_bp = r.vital(Vital::SystolicBp);
  in.diastolic_bp = r.vital(Vital::DiastolicBp);
  in.heart_rate = r.vital(Vital::HeartRate);
  in.temperature = r.vital(Vital::Temperature);
  in.age = r.age;
  in.avpu = r.avpu;
  return in;
}

ClinicalScore curb65(const ClinicalScoreInputs& in, std::span<const NumericFieldSpec> bounds) {
  check("age", in.age, bounds);
  check("urea", in.urea, bounds);
  check("respiratory_rate", in.respiratory_rate, bounds);
  check("systolic_bp", in.systolic_bp, bounds);
  check("diastolic_bp", in.diastolic_bp, bounds);

  ClinicalScore out;
  if (!in.confusion) out.missing.emplace_back("confusion");
  if (!in.urea) out.missing.emplace_back("urea");
  if (!in.respiratory_rate) out.missing.emplace_back("respiratory_rate");
  if (!in.systolic_bp) out.missing.emplace_back("systolic_bp");
  if (!in.diastolic_bp) out.missing.emplace_back("diastolic_bp");
  if (!out.missing.empty()) return out;

  int score = 0;
  score += *in.confusion ? 1 : 0;
  score += *in.urea > 7.0 ? 1 : 0;
  score += *in.respiratory_rate >= 30.0 ? 1 : 0;
  score += (*in.systolic_bp < 90.0 || *in.diastolic_bp <= 60.0) ? 1 : 0;
  score += in.age >= 65.0 ? 1 : 0;
  out.value = score;
  return out;
}

ClinicalScore mews(const ClinicalScoreInputs& in, std::span<const NumericFieldSpec> bounds) {
  check("systolic_bp", in.systolic_bp, bounds);
  check("heart_rate", in.heart_rate, bounds);
  check("respiratory_rate", in.respiratory_rate, bounds);
  check("temperature", in.temperature, bounds);

  ClinicalScore out;
  if (!in.systolic_bp) out.missing.emplace_back("systolic_bp");
  if (!in.heart_rate) out.missing.emplace_back("heart_rate");
  if (!in.respiratory_rate) out.missing.emplace_back("respiratory_rate");
  if (!in.temperature) out.missing.emplace_back("temperature");
  if (!in.avpu) out.missing.emplace_back("avpu");
  if (!out.missing.empty()) return out;

  out.value = systolic_points(*in.systolic_bp) + heart_rate_points(*in.heart_rate) +
              respiratory_points(*in.respiratory_rate) + temperature_points(*in.temperature) +
              static_cast<int>(*in.avpu);
  return out;
}

}  // namespace corisk
