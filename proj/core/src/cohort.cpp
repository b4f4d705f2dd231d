#include "corisk/cohort.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "corisk/error.hpp"
#include "corisk/random.hpp"

namespace corisk {
namespace {

Marginal normal(double mean, double sd) { return {Marginal::Shape::Normal, mean, sd}; }

// Log-normal matched to a target median and interquartile range.
Marginal log_normal(double median, double q25, double q75) {
  constexpr double kIqrInSd = 1.3489795003921634;  // 2 * Phi^-1(0.75)
  return {Marginal::Shape::LogNormal, median, std::log(q75 / q25) / kIqrInSd};
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double logit(double p) { return std::log(p / (1.0 - p)); }

// Maps a standard-normal draw to the feature scale; increasing in z.
double realize(const Marginal& m, double z) {
  switch (m.shape) {
    case Marginal::Shape::Normal:
      return m.center + m.scale * z;
    case Marginal::Shape::LogNormal:
      return m.center * std::exp(m.scale * z);
    case Marginal::Shape::ReflectedLogNormal:
      return 100.0 - m.center * std::exp(-m.scale * z);
  }
  return m.center;
}

// Stratified standard-normal sample: one draw per 1/n quantile bin, in random
// order. Keeps sample marginals tight around their targets.
std::vector<double> stratified_normal(std::size_t n, Rng& rng) {
  std::vector<std::size_t> bins(n);
  std::iota(bins.begin(), bins.end(), std::size_t{0});
  std::shuffle(bins.begin(), bins.end(), rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const boost::math::normal_distribution<double> std_normal;
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = (static_cast<double>(bins[i]) + unit(rng)) / static_cast<double>(n);
    u = std::clamp(u, 1e-12, 1.0 - 1e-12);
    z[i] = boost::math::quantile(std_normal, u);
  }
  return z;
}

std::string normalize_device_name(std::string_view name) {
  std::string out;
  bool pending_space = false;
  for (char c : name) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

constexpr std::array<double, 6> kRaceWeights = {3.3, 13.2, 2.6, 13.1, 5.1, 62.6};
constexpr std::array<double, 12> kComorbidityRates = {0.172, 0.166, 0.746, 0.059, 0.098, 0.217,
                                                      0.039, 0.018, 0.054, 0.337, 0.043, 0.010};
constexpr std::array<double, 4> kDeviceLevelWeights = {80.9, 14.3, 2.6, 2.2};

bool is_marginal_feature(std::string_view name) {
  if (name == "age") return true;
  return std::find(kVitals.begin(), kVitals.end(), name) != kVitals.end() ||
         std::find(kLabs.begin(), kLabs.end(), name) != kLabs.end();
}

}  // namespace

GeneratorConfig GeneratorConfig::defaults() {
  GeneratorConfig c;
  c.marginals = {
      {"age", normal(56.7, 19.8)},
      {"temperature", normal(36.9, 0.7)},
      {"spo2", {Marginal::Shape::ReflectedLogNormal, 3.0, std::log(3.0) / 1.3489795003921634}},
      {"respiratory_rate", normal(20.4, 5.9)},
      {"heart_rate", normal(91.4, 19.8)},
      {"systolic_bp", normal(138.4, 25.9)},
      {"diastolic_bp", normal(78.4, 14.8)},
      {"alt", log_normal(22, 14, 36)},
      {"ast", log_normal(27, 20, 43)},
      {"crp", log_normal(31.8, 7.7, 89.5)},
      {"creatinine", log_normal(0.9, 0.8, 1.2)},
      {"ferritin", log_normal(276, 118, 638)},
      {"gfr", log_normal(78, 53, 98)},
      {"glucose", log_normal(116, 100, 146)},
      {"hemoglobin", log_normal(13.1, 11.6, 14.4)},
      {"lactate", log_normal(1.5, 1.1, 2.3)},
      {"ldh", log_normal(255, 200, 351)},
      {"lymphocyte", log_normal(1.3, 0.9, 2.0)},
      {"neutrophils", log_normal(5.3, 3.7, 7.9)},
      {"platelet", log_normal(225, 175, 283)},
      {"potassium", log_normal(4.0, 3.7, 4.4)},
      {"sodium", log_normal(139, 136, 141)},
      {"wbc", log_normal(7.8, 5.8, 10.5)},
      {"troponin_t", log_normal(10, 6, 19)},
      {"d_dimer", log_normal(800, 450, 1500)},
      {"urea", log_normal(5.5, 4.0, 8.0)},
  };
  for (auto v : kVitals) c.missing_rates[std::string(v)] = 0.03;
  for (auto l : kLabs) c.missing_rates[std::string(l)] = 0.30;
  c.missing_rates["spo2"] = 0.02;
  c.missing_rates["troponin_t"] = 0.50;
  c.missing_rates["d_dimer"] = 0.55;
  c.missing_rates["ferritin"] = 0.45;
  c.missing_rates["lactate"] = 0.45;
  c.missing_rates["urea"] = 0.22;
  c.missing_rates["avpu"] = 0.45;
  c.planted_coefficients = {
      {"spo2", -1.2},        {"respiratory_rate", 1.0}, {"age", 0.8},
      {"presenting_device", 0.9}, {"lactate", 0.45},    {"ldh", 0.4},
      {"crp", 0.35},         {"neutrophils", 0.3},      {"systolic_bp", -0.15},
  };
  return c;
}

void GeneratorConfig::validate() const {
  if (n_patients == 0) throw ConfigError("generator: n_patients must be positive");
  double weight_sum = 0.0;
  for (double w : site_weights) {
    if (!(w >= 0.0)) throw ConfigError("generator: site weights must be non-negative");
    weight_sum += w;
  }
  if (!(weight_sum > 0.0)) throw ConfigError("generator: site weights sum to zero");
  if (!(period_start < period_end)) throw ConfigError("generator: empty visit period");
  if (days_between(period_end, followup_end) < 30.0) {
    throw ConfigError("generator: follow-up must extend 30 days past the visit period");
  }
  for (const auto& [name, m] : marginals) {
    if (!is_marginal_feature(name)) throw ConfigError("generator: unknown marginal '" + name + "'");
    if (!(m.scale > 0.0) || !std::isfinite(m.center)) {
      throw ConfigError("generator: invalid marginal for '" + name + "'");
    }
  }
  for (const auto& [name, rate] : missing_rates) {
    if (!(rate >= 0.0 && rate < 1.0)) {
      throw ConfigError("generator: missing rate for '" + name + "' outside [0,1)");
    }
    if (name != "avpu" && (name == "age" || !is_marginal_feature(name))) {
      throw ConfigError("generator: feature '" + name + "' cannot be missing");
    }
  }
  if (planted_coefficients.empty()) throw ConfigError("generator: empty planted feature set");
  for (const char* required : {"spo2", "respiratory_rate", "presenting_device", "age"}) {
    if (!planted_coefficients.contains(required)) {
      throw ConfigError(std::string("generator: planted set must include '") + required + "'");
    }
  }
  for (const auto& [name, coef] : planted_coefficients) {
    if (name != "presenting_device" && !marginals.contains(name)) {
      throw ConfigError("generator: planted feature '" + name + "' has no marginal");
    }
    if (!std::isfinite(coef)) throw ConfigError("generator: non-finite planted coefficient");
  }
  for (double r : {no_pcr_rate, prior_negative_rate, bad_timestamp_rate, bad_duration_rate,
                   image_rate}) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("generator: rate outside [0,1]");
  }
  if (!(noise_sd >= 0.0)) throw ConfigError("generator: noise_sd must be non-negative");
  if (image_width < 8 || image_height < 8) throw ConfigError("generator: image too small");
}

Cohort generate_synthetic_cohort(const GeneratorConfig& config, std::uint64_t seed,
                                 PlantedTruth* truth) {
  config.validate();
  const std::size_t n = config.n_patients;

  // Standardized draws per marginal feature, in a fixed (sorted-name) order.
  std::map<std::string, std::vector<double>> z;
  for (const auto& [name, m] : config.marginals) {
    Rng rng(derive_seed(seed, "marginal:" + name));
    z[name] = stratified_normal(n, rng);
  }

  Rng demo_rng(derive_seed(seed, "demographics"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::discrete_distribution<int> site_dist(config.site_weights.begin(), config.site_weights.end());
  std::discrete_distribution<int> race_dist(kRaceWeights.begin(), kRaceWeights.end());
  std::discrete_distribution<int> device_dist(kDeviceLevelWeights.begin(),
                                              kDeviceLevelWeights.end());

  Cohort cohort(n);
  std::vector<int> device_level(n);
  const std::int64_t period_seconds = config.period_end.seconds - config.period_start.seconds;

  for (std::size_t i = 0; i < n; ++i) {
    PatientRecord& r = cohort[i].record;
    char id[24];
    std::snprintf(id, sizeof id, "P%06zu", i + 1);
    r.patient_id = id;
    r.site_id = site_dist(demo_rng) + 1;
    r.visit_time = add_seconds(config.period_start,
                               static_cast<std::int64_t>(unit(demo_rng) * static_cast<double>(period_seconds)));
    r.decision_time = add_seconds(r.visit_time, static_cast<std::int64_t>(3600 * (1.0 + 7.0 * unit(demo_rng))));
    r.visit_end_time = add_seconds(r.decision_time, static_cast<std::int64_t>(3600 * (0.5 + 11.5 * unit(demo_rng))));
    r.sex = unit(demo_rng) < 0.494 ? Sex::Male : Sex::Female;
    r.race = std::string(kRaces[static_cast<std::size_t>(race_dist(demo_rng))]);
    r.smoking = unit(demo_rng) < 0.105;
    for (std::size_t c = 0; c < kComorbidities.size(); ++c) {
      double rate = kComorbidityRates[c];
      if (kComorbidities[c] == "pregnancy") rate = r.sex == Sex::Female ? 2.0 * rate : 0.0;
      r.comorbidities[c] = unit(demo_rng) < rate;
    }

    // PCR status and data-quality defects.
    if (unit(demo_rng) < config.no_pcr_rate) {
      r.covid_pcr_ordered = false;
    } else if (unit(demo_rng) < config.prior_negative_rate) {
      r.covid_pcr_ordered = true;
      r.pcr_time = add_seconds(r.visit_time, -static_cast<std::int64_t>(kSecondsPerDay * (1.0 + 12.0 * unit(demo_rng))));
      r.covid_pcr_result = PcrResult::Negative;
    } else {
      r.covid_pcr_ordered = true;
      r.pcr_time = add_seconds(r.visit_time, static_cast<std::int64_t>(7200 * unit(demo_rng)));
      r.covid_pcr_result = unit(demo_rng) < 0.309 ? PcrResult::Positive : PcrResult::Negative;
    }
    if (unit(demo_rng) < config.bad_timestamp_rate) {
      r.decision_time = add_seconds(r.visit_time, -static_cast<std::int64_t>(600 + 10000 * unit(demo_rng)));
    }
    if (unit(demo_rng) < config.bad_duration_rate) {
      if (unit(demo_rng) < 0.5) {
        r.decision_time = add_seconds(r.visit_time, 60);
        r.visit_end_time = add_seconds(r.visit_time, 120);
      } else {
        r.visit_end_time = add_seconds(r.visit_time, 9 * kSecondsPerDay);
      }
    }

    device_level[i] = device_dist(demo_rng);
    const auto level = static_cast<TherapyLevel>(device_level[i]);
    if (level != TherapyLevel::RA) {
      const auto names = devices_for(level);
      const auto pick = static_cast<std::size_t>(unit(demo_rng) * static_cast<double>(names.size()));
      r.presenting_device = std::string(names[std::min(pick, names.size() - 1)]);
    }
  }

  // Continuous features realized from their standardized draws.
  auto clamp_to_spec = [](std::string_view name, double v) {
    if (name == "age") return std::clamp(v, 1.0, 105.0);
    if (name == "spo2") return std::clamp(v, 50.0, 100.0);
    if (name == "respiratory_rate") return std::clamp(v, 6.0, 60.0);
    if (name == "heart_rate") return std::clamp(v, 30.0, 200.0);
    if (name == "systolic_bp") return std::clamp(v, 50.0, 260.0);
    if (name == "diastolic_bp") return std::clamp(v, 25.0, 150.0);
    if (name == "temperature") return std::clamp(v, 33.0, 42.0);
    const auto spec = numeric_field_spec(name);
    return spec ? std::clamp(v, spec->lower, spec->upper) : v;
  };
  for (std::size_t i = 0; i < n; ++i) {
    PatientRecord& r = cohort[i].record;
    for (const auto& [name, m] : config.marginals) {
      const double v = clamp_to_spec(name, realize(m, z[name][i]));
      if (name == "age") {
        r.age = v;
        continue;
      }
      if (auto it = std::find(kVitals.begin(), kVitals.end(), name); it != kVitals.end()) {
        r.vitals[static_cast<std::size_t>(it - kVitals.begin())] = v;
      } else if (auto jt = std::find(kLabs.begin(), kLabs.end(), name); jt != kLabs.end()) {
        r.labs[static_cast<std::size_t>(jt - kLabs.begin())] = v;
      }
    }
  }

  // Planted latent risk.
  Rng risk_rng(derive_seed(seed, "latent"));
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::vector<double> eta(n);
  for (std::size_t i = 0; i < n; ++i) {
    double e = config.planted_intercept;
    for (const auto& [name, coef] : config.planted_coefficients) {
      e += coef * (name == "presenting_device" ? static_cast<double>(device_level[i]) : z[name][i]);
    }
    eta[i] = e + config.noise_sd * std_normal(risk_rng);
  }
  const double eta_mean = std::accumulate(eta.begin(), eta.end(), 0.0) / static_cast<double>(n);
  double eta_var = 0.0;
  for (double e : eta) eta_var += (e - eta_mean) * (e - eta_mean);
  const double eta_sd = n > 1 ? std::sqrt(eta_var / static_cast<double>(n - 1)) : 1.0;
  auto standardized_risk = [&](std::size_t i) { return eta_sd > 0.0 ? (eta[i] - eta_mean) / eta_sd : 0.0; };

  // Outcomes: therapy and death probability nondecreasing in severity.
  Rng outcome_rng(derive_seed(seed, "outcomes"));
  for (std::size_t i = 0; i < n; ++i) {
    const PatientRecord& r = cohort[i].record;
    OutcomeRecord& o = cohort[i].outcome;
    o.patient_id = r.patient_id;
    const double s = logistic(eta[i]);
    int level = s < 0.52 ? 0 : s < 0.80 ? 1 : s < 0.92 ? 2 : 3;
    level = std::max(level, device_level[i]);
    o.max_therapy_72h = static_cast<TherapyLevel>(level);
    const bool escalated_late = unit(outcome_rng) < 0.35;
    o.max_therapy_24h = static_cast<TherapyLevel>(
        escalated_late && level > device_level[i] ? level - 1 : level);

    const bool dies = unit(outcome_rng) < logistic(-3.9 + 1.1 * eta[i]);
    const double death_day = 30.0 * std::pow(unit(outcome_rng), 1.6);
    if (dies) {
      o.death_time = add_seconds(r.decision_time, static_cast<std::int64_t>(death_day * kSecondsPerDay));
      o.died_24h = death_day < 1.0;
      o.died_72h = death_day < 3.0;
    }

    const double perceived = eta[i] + 1.3 * std_normal(outcome_rng);
    if (perceived > 3.2 || device_level[i] == static_cast<int>(TherapyLevel::MV)) {
      o.disposition = Disposition::Icu;
    } else if (perceived > -0.6) {
      o.disposition = Disposition::Floor;
    } else {
      o.disposition = Disposition::Discharge;
    }
    o.followup_days = days_between(r.visit_time, config.followup_end);
  }

  // Informative missingness and AVPU.
  Rng missing_rng(derive_seed(seed, "missingness"));
  for (std::size_t i = 0; i < n; ++i) {
    PatientRecord& r = cohort[i].record;
    const double shift = config.missing_risk_slope * standardized_risk(i);
    auto drop = [&](const std::string& name) {
      const auto it = config.missing_rates.find(name);
      if (it == config.missing_rates.end() || it->second <= 0.0) return false;
      return unit(missing_rng) < logistic(logit(it->second) + shift);
    };
    for (std::size_t v = 0; v < kVitals.size(); ++v) {
      if (drop(std::string(kVitals[v]))) r.vitals[v].reset();
    }
    for (std::size_t l = 0; l < kLabs.size(); ++l) {
      if (drop(std::string(kLabs[l]))) r.labs[l].reset();
    }
    const double p_altered = logistic(-3.2 + 1.4 * standardized_risk(i));
    Avpu avpu = Avpu::Alert;
    if (unit(missing_rng) < p_altered) {
      const double u = unit(missing_rng);
      avpu = u < 0.6 ? Avpu::Voice : u < 0.9 ? Avpu::Pain : Avpu::Unresponsive;
    }
    if (!drop("avpu")) r.avpu = avpu;
  }

  // Chest images for a severity-dependent subset.
  Rng image_rng(derive_seed(seed, "image-presence"));
  const std::uint64_t render_seed = derive_seed(seed, "image-render");
  for (std::size_t i = 0; i < n; ++i) {
    const double p = logistic(logit(std::clamp(config.image_rate, 1e-9, 1.0 - 1e-9)) +
                              config.image_risk_slope * standardized_risk(i));
    if (unit(image_rng) < p) {
      Rng rng(derive_seed(render_seed, static_cast<std::uint64_t>(i)));
      cohort[i].image = render_synthetic_cxr(logistic(eta[i]), config.image_width,
                                             config.image_height, rng);
      cohort[i].record.image_path = "images/" + cohort[i].record.patient_id + ".pgm";
    }
  }

  if (truth != nullptr) {
    truth->latent_risk = eta;
    truth->severity.resize(n);
    std::transform(eta.begin(), eta.end(), truth->severity.begin(), logistic);
  }
  return cohort;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ExclusionReason reason) {
  switch (reason) {
    case ExclusionReason::Age:
      return "age";
    case ExclusionReason::NoSuspicion:
      return "no_suspicion";
    case ExclusionReason::ConfirmedNegative:
      return "confirmed_negative";
    case ExclusionReason::ContradictoryTimestamps:
      return "contradictory_timestamps";
    case ExclusionReason::AbnormalVisitDuration:
      return "abnormal_visit_duration";
  }
  return "unknown";
}

std::optional<ExclusionReason> exclusion_reason(const PatientRecord& r) {
  constexpr std::int64_t kLookback = 14 * kSecondsPerDay;
  if (r.age < 15.0) return ExclusionReason::Age;
  const bool suspected =
      r.covid_pcr_ordered && (!r.pcr_time || r.pcr_time->seconds >= r.visit_time.seconds - kLookback);
  if (!suspected) return ExclusionReason::NoSuspicion;
  if (r.covid_pcr_result == PcrResult::Negative && r.pcr_time && *r.pcr_time < r.visit_time &&
      r.pcr_time->seconds >= r.visit_time.seconds - kLookback) {
    return ExclusionReason::ConfirmedNegative;
  }
  if (r.decision_time < r.visit_time || r.visit_end_time < r.decision_time) {
    return ExclusionReason::ContradictoryTimestamps;
  }
  const std::int64_t duration = r.visit_end_time.seconds - r.visit_time.seconds;
  if (duration < 5 * 60 || duration > 7 * kSecondsPerDay) {
    return ExclusionReason::AbnormalVisitDuration;
  }
  return std::nullopt;
}

InclusionResult apply_inclusion_criteria(std::span<const PatientRecord> records) {
  InclusionResult result;
  for (const PatientRecord& r : records) {
    if (auto reason = exclusion_reason(r)) {
      result.exclusion_log.push_back({r.patient_id, *reason});
    } else {
      result.included.push_back(r);
    }
  }
  return result;
}

Cohort filter_cohort(const Cohort& cohort, std::vector<Exclusion>* log) {
  Cohort kept;
  for (const CohortEntry& e : cohort) {
    if (auto reason = exclusion_reason(e.record)) {
      if (log != nullptr) log->push_back({e.record.patient_id, *reason});
    } else {
      kept.push_back(e);
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------

std::optional<TherapyLevel> classify_oxygen_device(std::string_view device_name) {
  const std::string key = normalize_device_name(device_name);
  if (key == "room air" || key == "none") return TherapyLevel::RA;
  for (TherapyLevel level : {TherapyLevel::LFO, TherapyLevel::HFO_NIV, TherapyLevel::MV}) {
    for (std::string_view name : devices_for(level)) {
      if (normalize_device_name(name) == key) return level;
    }
  }
  return std::nullopt;
}

TherapyLevel presenting_therapy_level(const PatientRecord& record) {
  if (!record.presenting_device) return TherapyLevel::RA;
  if (auto level = classify_oxygen_device(*record.presenting_device)) return *level;
  throw EncodingError("unknown oxygen device '" + *record.presenting_device + "'");
}

double therapy_encoding(TherapyLevel level) { return 0.25 * static_cast<double>(level); }

double derive_outcome_label(const OutcomeRecord& outcome, Horizon horizon) {
  const bool died = horizon == Horizon::H24 ? outcome.died_24h : outcome.died_72h;
  if (died) return 1.0;
  return therapy_encoding(horizon == Horizon::H24 ? outcome.max_therapy_24h
                                                  : outcome.max_therapy_72h);
}

SurvivalObservation survival_within(const PatientRecord& record, const OutcomeRecord& outcome,
                                    double horizon_days) {
  if (outcome.death_time) {
    const double t = std::max(0.0, days_between(record.visit_time, *outcome.death_time));
    if (t <= horizon_days) return {t, true};
  }
  return {std::min(outcome.followup_days, horizon_days), false};
}

// ---------------------------------------------------------------------------

namespace {

bool in_validation(const std::string& id, std::uint64_t seed, double fraction) {
  const std::uint64_t h = derive_seed(seed, id);
  return static_cast<double>(h >> 11) * 0x1.0p-53 < fraction;
}

void check_fraction(double f) {
  if (!(f >= 0.0 && f < 1.0)) throw ConfigError("split: validation_fraction outside [0,1)");
}

}  // namespace

CohortSplit split_by_site(std::span<const PatientRecord> records, const SiteSplitParams& params) {
  check_fraction(params.validation_fraction);
  if (params.train_sites.empty() || params.test_sites.empty()) {
    throw ConfigError("split: train and test site sets must be nonempty");
  }
  for (int s : params.train_sites) {
    if (s < 1 || s > 5) throw ConfigError("split: unknown site id " + std::to_string(s));
    if (params.test_sites.contains(s)) {
      throw ConfigError("split: site " + std::to_string(s) + " is both train and test");
    }
  }
  for (int s : params.test_sites) {
    if (s < 1 || s > 5) throw ConfigError("split: unknown site id " + std::to_string(s));
  }

  CohortSplit split;
  split.kind = SplitKind::BySite;
  std::map<int, std::vector<std::string>> by_test_site;
  for (const PatientRecord& r : records) {
    if (params.train_sites.contains(r.site_id)) {
      (in_validation(r.patient_id, params.seed, params.validation_fraction) ? split.validation_ids
                                                                            : split.train_ids)
          .push_back(r.patient_id);
    } else if (params.test_sites.contains(r.site_id)) {
      split.test_ids.push_back(r.patient_id);
      by_test_site[r.site_id].push_back(r.patient_id);
    } else {
      throw ConfigError("split: record " + r.patient_id + " has unassigned site id " +
                        std::to_string(r.site_id));
    }
  }
  for (int s : params.test_sites) {
    split.test_groups.emplace_back("site" + std::to_string(s), std::move(by_test_site[s]));
  }
  return split;
}

PeriodSplitParams PeriodSplitParams::may_windows() {
  PeriodSplitParams p;
  p.training = {"training", make_timestamp(2020, 3, 1), make_timestamp(2020, 5, 1)};
  p.test_windows = {{"may01_may10", make_timestamp(2020, 5, 1), make_timestamp(2020, 5, 11)},
                    {"may11_may20", make_timestamp(2020, 5, 11), make_timestamp(2020, 5, 21)},
                    {"may21_may31", make_timestamp(2020, 5, 21), make_timestamp(2020, 6, 1)}};
  return p;
}

CohortSplit split_by_period(std::span<const PatientRecord> records,
                            const PeriodSplitParams& params) {
  check_fraction(params.validation_fraction);
  if (params.test_windows.empty()) throw ConfigError("split: no test windows");
  std::vector<const DateWindow*> all{&params.training};
  for (const DateWindow& w : params.test_windows) all.push_back(&w);
  for (const DateWindow* w : all) {
    if (!(w->start < w->end)) throw ConfigError("split: empty window '" + w->name + "'");
  }
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a + 1; b < all.size(); ++b) {
      if (all[a]->start < all[b]->end && all[b]->start < all[a]->end) {
        throw ConfigError("split: windows '" + all[a]->name + "' and '" + all[b]->name +
                          "' overlap");
      }
    }
  }

  CohortSplit split;
  split.kind = SplitKind::ByPeriod;
  for (const DateWindow& w : params.test_windows) split.test_groups.emplace_back(w.name, std::vector<std::string>{});
  for (const PatientRecord& r : records) {
    if (params.training.contains(r.visit_time)) {
      (in_validation(r.patient_id, params.seed, params.validation_fraction) ? split.validation_ids
                                                                            : split.train_ids)
          .push_back(r.patient_id);
      continue;
    }
    bool placed = false;
    for (std::size_t w = 0; w < params.test_windows.size(); ++w) {
      if (params.test_windows[w].contains(r.visit_time)) {
        split.test_ids.push_back(r.patient_id);
        split.test_groups[w].second.push_back(r.patient_id);
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw ConfigError("split: visit of " + r.patient_id + " (" + format_timestamp(r.visit_time) +
                        ") falls outside every window");
    }
  }
  for (const auto& [name, ids] : split.test_groups) {
    if (ids.empty()) throw ConfigError("split: test window '" + name + "' contains no visits");
  }
  return split;
}

}  // namespace corisk
