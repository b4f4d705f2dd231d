#include "corisk/scorer.hpp"

#include <algorithm>
#include <cmath>

#include "corisk/cohort_io.hpp"
#include "corisk/error.hpp"
#include "corisk/features.hpp"

namespace corisk {

namespace {

std::string category_name(const std::string& column, int code) {
  auto pick = [&](auto names) -> std::string {
    return code >= 0 && static_cast<std::size_t>(code) < names.size() ? std::string(names[static_cast<std::size_t>(code)])
                                                                      : std::to_string(code);
  };
  if (column == "avpu") return std::string(to_string(static_cast<Avpu>(code)));
  if (column == "presenting_device") return std::string(to_string(static_cast<TherapyLevel>(code)));
  if (column == "sex") return std::string(to_string(static_cast<Sex>(code)));
  if (column == "race") return pick(kRaces);
  return std::to_string(code);
}

nlohmann::json clinical_json(const ClinicalScore& s) {
  nlohmann::json j;
  if (s.value) {
    j["value"] = *s.value;
  } else {
    j["value"] = nullptr;
    j["incomputable"] = s.missing;
  }
  return j;
}

}  // namespace

Scorer::Scorer(std::shared_ptr<const ModelBundle> bundle, std::optional<BandThresholds> band_override)
    : bundle_(std::move(bundle)) {
  if (!bundle_) throw ContractError("scorer: null bundle");
  const auto expected = ehr_feature_columns();
  bool same = expected.size() == bundle_->columns.size();
  for (std::size_t i = 0; same && i < expected.size(); ++i) {
    same = expected[i].name == bundle_->columns[i].name && expected[i].kind == bundle_->columns[i].kind &&
           expected[i].n_categories == bundle_->columns[i].n_categories;
  }
  if (!same) throw SchemaError("bundle feature columns differ from the feature vocabulary of this build");
  thresholds_ = band_override.value_or(bundle_->bands);
  thresholds_.validate();
  version_ = bundle_->version();
}

ScoreResponse Scorer::score(const ScoreRequest& request) const {
  const ModelBundle& b = *bundle_;
  const std::size_t p = b.columns.size();
  std::vector<double> row(p);
  std::vector<std::uint8_t> missing(p);
  encode_record(request.record, row, missing);
  const std::vector<std::size_t> filled = b.imputer.apply_row(row, missing);

  ScoreResponse r;
  r.patient_id = request.record.patient_id;
  for (std::size_t c : filled) {
    ImputedField f{b.columns[c].name, row[c], std::nullopt};
    if (b.columns[c].kind == ColumnKind::Categorical) f.category = category_name(f.field, static_cast<int>(std::lround(row[c])));
    r.imputed.push_back(std::move(f));
  }

  const double rf24 = std::clamp(b.forest_24h.predict(row), 0.0, 1.0);
  const double rf72 = std::clamp(b.forest_72h.predict(row), 0.0, 1.0);
  std::optional<double> dl24, dl72;
  const bool has_cxr = request.image.has_value();
  if (has_cxr) {
    const std::size_t side = b.fusion.architecture().image_size;
    const ChestImage chest = preprocess_image(*request.image, side, side);
    const auto [y24, y72] = b.fusion.forward(to_ehr_input(row), &chest);
    dl24 = y24;
    dl72 = y72;
  }
  const CombinedPrediction c24 = combine(dl24, rf24, has_cxr);
  const CombinedPrediction c72 = combine(dl72, rf72, has_cxr);
  r.forest_24h = rf24;
  r.forest_72h = rf72;
  r.fusion_24h = dl24;
  r.fusion_72h = dl72;
  r.raw_24h = c24.raw;
  r.raw_72h = c72.raw;
  r.source = c72.source;
  r.score_24h = to_corisk(c24.raw);
  r.score_72h = to_corisk(c72.raw);
  r.thresholds = thresholds_;
  r.band_72h = assign_band(r.score_72h, thresholds_);
  r.icu_reference_threshold = b.metadata.icu_reference_threshold;

  const ClinicalScoreInputs clinical = ClinicalScoreInputs::from_record(request.record);
  r.curb65 = curb65(clinical);
  r.mews = mews(clinical);
  r.bundle_version = version_;
  return r;
}

nlohmann::json to_json(const ScoreResponse& r) {
  nlohmann::json j;
  j["patient_id"] = r.patient_id;
  j["score_24h"] = r.score_24h;
  j["score_72h"] = r.score_72h;
  j["raw_24h"] = r.raw_24h;
  j["raw_72h"] = r.raw_72h;
  j["source"] = to_string(r.source);
  j["band_72h"] = to_string(r.band_72h);
  auto optional_json = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  j["model_outputs"] = {{"forest_24h", r.forest_24h},
                        {"forest_72h", r.forest_72h},
                        {"fusion_24h", optional_json(r.fusion_24h)},
                        {"fusion_72h", optional_json(r.fusion_72h)}};
  j["thresholds"] = {{"t_low_med", r.thresholds.t_low_med}, {"t_med_high", r.thresholds.t_med_high}};
  j["icu_reference_threshold"] = optional_json(r.icu_reference_threshold);
  j["curb65"] = clinical_json(r.curb65);
  j["mews"] = clinical_json(r.mews);
  nlohmann::json imputed = nlohmann::json::array();
  for (const auto& f : r.imputed) {
    nlohmann::json e = {{"field", f.field}, {"value", f.value}};
    if (f.category) e["category"] = *f.category;
    imputed.push_back(std::move(e));
  }
  j["imputed_fields"] = std::move(imputed);
  j["bundle_version"] = r.bundle_version;
  return j;
}

nlohmann::json bundle_info_json(const Scorer& scorer) {
  const ModelBundle& b = scorer.bundle();
  const TrainingMetadata& m = b.metadata;
  nlohmann::json schema = nlohmann::json::array();
  for (const auto& c : b.columns) {
    nlohmann::json col = {{"name", c.name}, {"kind", c.kind == ColumnKind::Continuous ? "continuous" : "categorical"}};
    if (c.kind == ColumnKind::Categorical) col["n_categories"] = c.n_categories;
    if (auto spec = numeric_field_spec(c.name)) {
      col["unit"] = spec->unit;
      col["min"] = spec->lower;
      col["max"] = spec->upper;
    }
    schema.push_back(std::move(col));
  }
  nlohmann::json config = nlohmann::json::parse(m.config_json.empty() ? "{}" : m.config_json, nullptr, false);
  if (config.is_discarded()) config = nullptr;
  return {
      {"bundle_version", scorer.bundle_version()},
      {"format_version", ModelBundle::kFormatVersion},
      {"schema", std::move(schema)},
      {"image_size", b.fusion.architecture().image_size},
      {"thresholds", {{"t_low_med", scorer.thresholds().t_low_med}, {"t_med_high", scorer.thresholds().t_med_high}}},
      {"trained_thresholds", {{"t_low_med", b.bands.t_low_med}, {"t_med_high", b.bands.t_med_high}}},
      {"icu_reference_threshold",
       m.icu_reference_threshold ? nlohmann::json(*m.icu_reference_threshold) : nlohmann::json()},
      {"training",
       {{"master_seed", m.master_seed},
        {"split", m.split},
        {"n_train", m.n_train},
        {"n_validation", m.n_validation},
        {"n_train_images", m.n_train_images},
        {"imputation_iterations", m.imputation_iterations},
        {"fusion_epochs_run", m.fusion_epochs_run},
        {"fusion_best_epoch", m.fusion_best_epoch},
        {"fusion_best_val_loss", m.fusion_best_val_loss},
        {"band_agreement", m.band_agreement},
        {"band_total", m.band_total},
        {"config", std::move(config)}}},
  };
}

ScoreRequest parse_score_request(const nlohmann::json& payload, const std::optional<std::filesystem::path>& image_root) {
  if (!payload.is_object()) throw RecordValidationError(std::vector<FieldError>{{"", "request body must be a JSON object"}});
  std::vector<FieldError> errors;
  std::map<std::string, std::string> fields;
  ScoreRequest req;
  req.record.patient_id = "request";
  std::optional<std::string> image_path;
  for (const auto& [key, value] : payload.items()) {
    if (key == "patient_id") {
      if (value.is_string()) {
        req.record.patient_id = value.get<std::string>();
      } else if (!value.is_null()) {
        errors.push_back({key, "expected a string"});
      }
      continue;
    }
    if (key == "image_path") {
      if (value.is_string()) {
        image_path = value.get<std::string>();
      } else if (!value.is_null()) {
        errors.push_back({key, "expected a string"});
      }
      continue;
    }
    if (value.is_null()) {
      fields[key] = "";
    } else if (value.is_string()) {
      fields[key] = value.get<std::string>();
    } else if (value.is_boolean()) {
      fields[key] = value.get<bool>() ? "1" : "0";
    } else if (value.is_number()) {
      fields[key] = format_real(value.get<double>());
    } else {
      errors.push_back({key, "expected a number, string, boolean or null"});
    }
  }
  parse_feature_fields(fields, req.record, errors);

  if (image_path) {
    if (!image_root) {
      errors.push_back({"image_path", "server-side image paths are not enabled"});
    } else {
      const std::filesystem::path rel(*image_path);
      const auto root = std::filesystem::weakly_canonical(*image_root);
      const auto full = std::filesystem::weakly_canonical(root / rel);
      const auto [end, _] = std::mismatch(root.begin(), root.end(), full.begin(), full.end());
      if (rel.is_absolute() || end != root.end()) {
        errors.push_back({"image_path", "path escapes the image directory"});
      } else {
        try {
          req.image = read_pgm(full);
          req.record.image_path = *image_path;
        } catch (const Error& e) {
          errors.push_back({"image_path", e.what()});
        }
      }
    }
  }
  if (!errors.empty()) throw RecordValidationError(std::move(errors));
  return req;
}

}  // namespace corisk
