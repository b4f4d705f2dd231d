#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "corisk/bundle.hpp"
#include "corisk/clinical_scores.hpp"
#include "corisk/cohort.hpp"
#include "corisk/scoring.hpp"

namespace corisk {

struct ScoreRequest {
  PatientRecord record;
  std::optional<GrayImage> image;  // raw, any size
};

struct ImputedField {
  std::string field;
  double value = 0.0;
  std::optional<std::string> category;  // set for categorical fields
};

struct ScoreResponse {
  std::string patient_id;
  double raw_24h = 0.0;
  double raw_72h = 0.0;
  double score_24h = 0.0;
  double score_72h = 0.0;
  ScoreSource source = ScoreSource::Forest;
  double forest_24h = 0.0;
  double forest_72h = 0.0;
  std::optional<double> fusion_24h;
  std::optional<double> fusion_72h;
  RiskBand band_72h = RiskBand::Low;
  BandThresholds thresholds;
  std::optional<double> icu_reference_threshold;
  ClinicalScore curb65;
  ClinicalScore mews;
  std::vector<ImputedField> imputed;
  std::string bundle_version;
};

// Scores single records against an immutable bundle. Safe to share across
// threads.
class Scorer {
 public:
  // Throws SchemaError if the bundle's feature columns differ from this
  // build's vocabulary.
  explicit Scorer(std::shared_ptr<const ModelBundle> bundle, std::optional<BandThresholds> band_override = {});

  ScoreResponse score(const ScoreRequest& request) const;

  const ModelBundle& bundle() const { return *bundle_; }
  const BandThresholds& thresholds() const { return thresholds_; }
  const std::string& bundle_version() const { return version_; }

 private:
  std::shared_ptr<const ModelBundle> bundle_;
  BandThresholds thresholds_;
  std::string version_;
};

nlohmann::json to_json(const ScoreResponse& response);
nlohmann::json bundle_info_json(const Scorer& scorer);

// Flat object keyed by canonical field names; null or absent means missing.
// "patient_id" is optional. "image_path" is accepted only when image_root is
// given and is resolved beneath it. Field problems are collected into one
// RecordValidationError.
ScoreRequest parse_score_request(const nlohmann::json& payload,
                                 const std::optional<std::filesystem::path>& image_root = std::nullopt);

}  // namespace corisk
