#include "corisk/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <set>
#include <unordered_map>

#include "corisk/clinical_scores.hpp"
#include "corisk/cohort_io.hpp"
#include "corisk/error.hpp"
#include "corisk/evaluation.hpp"
#include "corisk/features.hpp"
#include "corisk/random.hpp"
#include "corisk/report.hpp"
#include "corisk/scorer.hpp"

namespace corisk {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Config reading

class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = convert<T>(*it, key);
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  template <typename T>
  T convert(const json& v, const std::string& key) const {
    const std::string at = where_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigError(at + ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
      return v.get<T>();
    } else {
      if (!v.is_array()) throw ConfigError(at + ": expected an array");
      T out;
      for (const auto& e : v) {
        if (!e.is_number_integer()) throw ConfigError(at + ": expected integers");
        out.insert(out.end(), e.get<typename T::value_type>());
      }
      return out;
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : (base / path).lexically_normal();
}

void read_forest(Fields& f, ForestConfig& c, const std::string& prefix) {
  f.read(prefix + "n_trees", c.n_trees);
  f.read(prefix + "max_depth", c.max_depth);
  f.read(prefix + "min_leaf", c.min_leaf);
  f.read(prefix + "mtry", c.mtry);
}

json forest_json(const ForestConfig& c) {
  return {{"n_trees", c.n_trees}, {"max_depth", c.max_depth}, {"min_leaf", c.min_leaf}, {"mtry", c.mtry}};
}

std::string_view split_name(SplitKind kind) { return kind == SplitKind::BySite ? "site" : "period"; }

// ---------------------------------------------------------------------------
// Shared helpers

struct Cutoff {
  double value;
  const char* name;
};
constexpr Cutoff kCutoffs[] = {{0.25, "LFO_or_higher"}, {0.5, "HFO_NIV_or_higher"}, {0.75, "MV_or_death"}};

std::vector<const CohortEntry*> select(const Cohort& cohort, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const CohortEntry*> by_id;
  for (const auto& e : cohort) by_id.emplace(e.record.patient_id, &e);
  std::vector<const CohortEntry*> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ContractError("split references unknown patient '" + id + "'");
    out.push_back(it->second);
  }
  return out;
}

std::vector<PatientRecord> records_of(const std::vector<const CohortEntry*>& entries) {
  std::vector<PatientRecord> r;
  r.reserve(entries.size());
  for (const auto* e : entries) r.push_back(e->record);
  return r;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(); }

json roc_points_json(const RocCurve& c) {
  json pts = json::array();
  for (const auto& p : c.points) pts.push_back({p.fpr, p.tpr, finite_or_null(p.threshold)});
  return pts;
}

json interval_json(const Interval& i) { return json::array({i.lo, i.hi}); }

bool has_both(const std::vector<bool>& labels) {
  const bool any = std::find(labels.begin(), labels.end(), true) != labels.end();
  const bool none = std::find(labels.begin(), labels.end(), false) != labels.end();
  return any && none;
}

// AUC with a bootstrap CI; a structured error when the subset is degenerate.
json auc_json(std::span<const double> scores, const std::vector<bool>& labels, std::size_t n_boot,
              std::uint64_t seed, bool with_points = false) {
  json j;
  j["n"] = scores.size();
  if (!has_both(labels)) {
    j["error"] = "single-class labels";
    return j;
  }
  const RocCurve curve = roc(scores, labels);
  j["auc"] = curve.auc;
  j["positives"] = curve.positives;
  j["negatives"] = curve.negatives;
  try {
    j["ci_95"] = interval_json(bootstrap_ci(scores, labels, roc_auc, n_boot, seed));
  } catch (const EvaluationError& e) {
    j["ci_95"] = nullptr;
    j["ci_error"] = e.what();
  }
  if (with_points) j["points"] = roc_points_json(curve);
  return j;
}

double label_for(const CohortEntry& e, Horizon h) { return derive_outcome_label(e.outcome, h); }

bool died_within(const CohortEntry& e, double days) {
  const SurvivalObservation s = survival_within(e.record, e.outcome, days);
  return s.event;
}

struct Scored {
  const CohortEntry* entry;
  ScoreResponse response;
};

std::vector<Scored> score_entries(const Scorer& scorer, const std::vector<const CohortEntry*>& entries) {
  std::vector<Scored> out;
  out.reserve(entries.size());
  for (const auto* e : entries) out.push_back({e, scorer.score(ScoreRequest{e->record, e->image})});
  return out;
}

json horizon_auc_table(const std::vector<Scored>& scored, std::size_t n_boot, std::uint64_t seed, bool with_points) {
  json out;
  for (Horizon h : {Horizon::H24, Horizon::H72}) {
    const std::string hname = h == Horizon::H24 ? "24h" : "72h";
    std::vector<double> scores;
    for (const auto& s : scored) scores.push_back(h == Horizon::H24 ? s.response.score_24h : s.response.score_72h);
    for (const auto& c : kCutoffs) {
      std::vector<bool> labels;
      for (const auto& s : scored) labels.push_back(label_for(*s.entry, h) >= c.value);
      json j = auc_json(scores, labels, n_boot, derive_seed(seed, hname + "/" + c.name), with_points);
      j["label_cutoff"] = c.value;
      out[hname][c.name] = std::move(j);
    }
  }
  return out;
}

json quartile_json(std::span<const double> v) {
  const Quartiles q = summarize(v);
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  return {{"n", q.n}, {"min", *mn}, {"q25", q.q25}, {"median", q.median}, {"q75", q.q75}, {"max", *mx}};
}

json two_group_json(const std::vector<double>& a, const std::vector<double>& b, const char* name_a, const char* name_b) {
  json j;
  if (a.empty() || b.empty()) {
    j["error"] = "empty group";
    return j;
  }
  j[name_a] = quartile_json(a);
  j[name_b] = quartile_json(b);
  const MannWhitneyResult mw = mann_whitney(a, b);
  j["mann_whitney"] = {{"u", mw.u}, {"z", mw.z}, {"p_value", mw.p_value}};
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

PipelineConfig PipelineConfig::from_json(const json& j, const fs::path& base_dir) {
  PipelineConfig c;
  Fields top(j, "config");
  top.read("seed", c.seed);

  std::string cohort = "data/cohort.csv", outcomes = "data/outcomes.csv", images, bundle = "out/bundle.bin",
              report = "out/report";
  if (const json* p = top.child("paths")) {
    Fields f(*p, "paths");
    f.read("cohort", cohort);
    f.read("outcomes", outcomes);
    f.read("images", images);
    f.read("bundle", bundle);
    f.read("report_dir", report);
    f.finish();
  }
  c.paths.cohort = resolve(base_dir, cohort);
  c.paths.outcomes = resolve(base_dir, outcomes);
  c.paths.images = images.empty() ? c.paths.cohort.parent_path() : resolve(base_dir, images);
  c.paths.bundle = resolve(base_dir, bundle);
  c.paths.report_dir = resolve(base_dir, report);

  if (const json* g = top.child("generator")) {
    Fields f(*g, "generator");
    f.read("n_patients", c.generator.n_patients);
    f.read("image_rate", c.generator.image_rate);
    f.read("noise_sd", c.generator.noise_sd);
    f.read("planted_intercept", c.generator.planted_intercept);
    f.read("missing_risk_slope", c.generator.missing_risk_slope);
    f.read("image_width", c.generator.image_width);
    f.read("image_height", c.generator.image_height);
    f.finish();
  }
  c.generator.validate();

  if (const json* s = top.child("split")) {
    Fields f(*s, "split");
    std::string kind = "site";
    f.read("kind", kind);
    if (kind == "site") {
      c.split = SplitKind::BySite;
    } else if (kind == "period") {
      c.split = SplitKind::ByPeriod;
    } else {
      throw ConfigError("split.kind: expected 'site' or 'period', got '" + kind + "'");
    }
    f.read("train_sites", c.site_split.train_sites);
    f.read("test_sites", c.site_split.test_sites);
    f.read("validation_fraction", c.site_split.validation_fraction);
    f.finish();
  }
  c.period_split.validation_fraction = c.site_split.validation_fraction;
  top.read("temporal_split", c.temporal_split);

  if (const json* m = top.child("imputation")) {
    Fields f(*m, "imputation");
    f.read("max_iters", c.impute.max_iters);
    read_forest(f, c.impute.forest, "");
    read_forest(f, c.column_forest, "column_");
    f.finish();
  }
  if (const json* m = top.child("forest")) {
    Fields f(*m, "forest");
    read_forest(f, c.outcome_forest, "");
    f.finish();
  }
  if (const json* m = top.child("fusion")) {
    Fields f(*m, "fusion");
    auto& a = c.fusion.architecture;
    f.read("image_size", a.image_size);
    f.read("conv_channels", a.conv_channels);
    f.read("kernel_size", a.kernel_size);
    f.read("pool_window", a.pool_window);
    f.read("cross_layers", a.cross_layers);
    f.read("deep_layers", a.deep_layers);
    f.read("image_feature_dim", c.image_feature_dim);
    f.read("max_epochs", c.fusion.max_epochs);
    f.read("batch_size", c.fusion.batch_size);
    f.read("learning_rate", c.fusion.learning_rate);
    f.read("patience", c.fusion.patience);
    f.finish();
  }
  c.fusion.architecture.validate();
  if (c.image_feature_dim == 0) throw ConfigError("fusion.image_feature_dim must be positive");
  if (c.fusion.batch_size == 0) throw ConfigError("fusion.batch_size must be positive");
  if (c.fusion.architecture.image_size > 224) throw ConfigError("fusion.image_size must be at most 224");

  if (const json* m = top.child("evaluation")) {
    Fields f(*m, "evaluation");
    f.read("n_boot", c.eval.n_boot);
    f.read("importance_repeats", c.eval.importance_repeats);
    f.read("plots", c.eval.plots);
    f.finish();
  }
  if (c.eval.n_boot == 0) throw ConfigError("evaluation.n_boot must be positive");

  std::size_t threads = 0;
  top.read("threads", threads);
  c.impute.forest.n_threads = threads;
  c.column_forest.n_threads = threads;
  c.outcome_forest.n_threads = threads;
  top.finish();

  for (const ForestConfig* fc : {&c.impute.forest, &c.column_forest, &c.outcome_forest}) {
    if (fc->n_trees == 0) throw ConfigError("forest n_trees must be positive");
    if (fc->min_leaf == 0) throw ConfigError("forest min_leaf must be positive");
  }
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return from_json(j, fs::absolute(path).parent_path());
}

json PipelineConfig::to_json() const {
  const auto& a = fusion.architecture;
  return {
      {"seed", seed},
      {"generator", {{"n_patients", generator.n_patients}, {"image_rate", generator.image_rate}}},
      {"split",
       {{"kind", split_name(split)},
        {"train_sites", site_split.train_sites},
        {"test_sites", site_split.test_sites},
        {"validation_fraction", site_split.validation_fraction}}},
      {"temporal_split", temporal_split},
      {"imputation",
       {{"max_iters", impute.max_iters}, {"forest", forest_json(impute.forest)}, {"column_forest", forest_json(column_forest)}}},
      {"forest", forest_json(outcome_forest)},
      {"fusion",
       {{"image_size", a.image_size},
        {"conv_channels", a.conv_channels},
        {"kernel_size", a.kernel_size},
        {"pool_window", a.pool_window},
        {"cross_layers", a.cross_layers},
        {"deep_layers", a.deep_layers},
        {"image_feature_dim", image_feature_dim},
        {"max_epochs", fusion.max_epochs},
        {"batch_size", fusion.batch_size},
        {"learning_rate", fusion.learning_rate},
        {"patience", fusion.patience}}},
  };
}

fs::path PipelineConfig::temporal_bundle_path() const {
  return paths.bundle.parent_path() / (paths.bundle.stem().string() + "_temporal" + paths.bundle.extension().string());
}

// ---------------------------------------------------------------------------
// Cohort

void generate_cohort_files(const PipelineConfig& config, std::ostream* log) {
  const Cohort cohort = generate_synthetic_cohort(config.generator, derive_seed(config.seed, "generator"));
  write_cohort(cohort, config.paths.cohort, config.paths.outcomes);
  if (log) {
    std::size_t images = 0;
    for (const auto& e : cohort) images += e.image.has_value();
    *log << "generated " << cohort.size() << " patients (" << images << " with images) -> "
         << config.paths.cohort.string() << "\n";
  }
}

Cohort load_included_cohort(const PipelineConfig& config, std::vector<Exclusion>* exclusions) {
  const Cohort raw = read_cohort(config.paths.cohort, config.paths.outcomes, config.paths.images);
  return filter_cohort(raw, exclusions);
}

CohortSplit split_cohort(const Cohort& cohort, const PipelineConfig& config, SplitKind kind) {
  std::vector<PatientRecord> records;
  records.reserve(cohort.size());
  for (const auto& e : cohort) records.push_back(e.record);
  if (kind == SplitKind::BySite) {
    SiteSplitParams p = config.site_split;
    p.seed = derive_seed(config.seed, "split");
    return split_by_site(records, p);
  }
  PeriodSplitParams p = config.period_split;
  p.seed = derive_seed(config.seed, "split");
  return split_by_period(records, p);
}

// ---------------------------------------------------------------------------
// Training

ModelBundle train_bundle(const Cohort& cohort, const CohortSplit& split, const PipelineConfig& config,
                         std::ostream* log) {
  const std::uint64_t scope = derive_seed(config.seed, std::string("train/") + std::string(split_name(split.kind)));
  const auto train = select(cohort, split.train_ids);
  const auto validation = select(cohort, split.validation_ids);
  if (train.size() < 2) throw TrainingError("training partition has fewer than two patients");
  if (validation.empty()) throw TrainingError("validation partition is empty");

  ModelBundle bundle;
  bundle.columns = ehr_feature_columns();

  const FeatureMatrix train_matrix = encode_records(records_of(train));
  ImputeResult imputed;
  bundle.imputer = FittedImputer::fit(train_matrix, config.impute, config.column_forest, derive_seed(scope, "impute"),
                                      &imputed);
  const FeatureMatrix& train_completed = imputed.completed;
  const FeatureMatrix val_completed = bundle.imputer.apply(encode_records(records_of(validation)));
  if (log) *log << "imputation: " << imputed.iterations << " iterations over " << train.size() << " patients\n";

  std::vector<double> l24, l72;
  for (const auto* e : train) {
    l24.push_back(label_for(*e, Horizon::H24));
    l72.push_back(label_for(*e, Horizon::H72));
  }
  const DenseMatrix x = train_completed.to_dense();
  bundle.forest_24h = Forest::fit_regression(x, l24, config.outcome_forest, derive_seed(scope, "forest_24h"));
  bundle.forest_72h = Forest::fit_regression(x, l72, config.outcome_forest, derive_seed(scope, "forest_72h"));
  if (log) *log << "outcome forests: " << config.outcome_forest.n_trees << " trees per horizon\n";

  const std::size_t side = config.fusion.architecture.image_size;
  auto examples = [&](const std::vector<const CohortEntry*>& entries, const FeatureMatrix& completed) {
    std::vector<FusionExample> out;
    const std::size_t p = completed.cols();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      if (!entries[i]->image) continue;
      FusionExample ex;
      ex.ehr = to_ehr_input(std::span<const double>(completed.values).subspan(i * p, p));
      ex.image = preprocess_image(*entries[i]->image, side, side);
      ex.label_24h = label_for(*entries[i], Horizon::H24);
      ex.label_72h = label_for(*entries[i], Horizon::H72);
      out.push_back(std::move(ex));
    }
    return out;
  };
  const auto fusion_train = examples(train, train_completed);
  const auto fusion_val = examples(validation, val_completed);
  if (fusion_train.empty() || fusion_val.empty()) throw TrainingError("no imaged patients available for the fusion model");
  const FusionTrainResult fit = train_fusion_model(fusion_train, fusion_val, fusion_feature_schema(config.image_feature_dim),
                                                   config.fusion, derive_seed(scope, "fusion"));
  bundle.fusion = fit.model;
  if (log) {
    *log << "fusion model: " << fit.epochs_run << " epochs, best epoch " << fit.best_epoch << ", validation loss "
         << fit.initial_val_loss << " -> " << fit.best_val_loss << "\n";
  }

  // Combined validation scores drive the band thresholds and the ICU reference point.
  std::vector<double> val_scores(validation.size());
  {
    std::vector<EhrInput> inputs;
    std::vector<const ChestImage*> images;
    std::vector<std::size_t> imaged;
    for (const auto& ex : fusion_val) images.push_back(&ex.image);
    const std::size_t p = val_completed.cols();
    for (std::size_t i = 0; i < validation.size(); ++i) {
      const auto row = std::span<const double>(val_completed.values).subspan(i * p, p);
      if (validation[i]->image) {
        inputs.push_back(to_ehr_input(row));
        imaged.push_back(i);
      } else {
        val_scores[i] = to_corisk(std::clamp(bundle.forest_72h.predict(row), 0.0, 1.0));
      }
    }
    const auto preds = bundle.fusion.predict(inputs, bundle.fusion.encode_images(images));
    for (std::size_t k = 0; k < imaged.size(); ++k) val_scores[imaged[k]] = to_corisk(preds[k].second);
  }
  std::vector<Disposition> val_disp;
  for (const auto* e : validation) val_disp.push_back(e->outcome.disposition);
  const BandFit bands = fit_band_thresholds(val_scores, val_disp);
  bundle.bands = bands.thresholds;

  std::vector<double> admitted_scores;
  std::vector<Disposition> admitted_disp;
  std::vector<bool> mv72;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    if (val_disp[i] == Disposition::Discharge) continue;
    admitted_scores.push_back(val_scores[i]);
    admitted_disp.push_back(val_disp[i]);
    mv72.push_back(validation[i]->outcome.max_therapy_72h == TherapyLevel::MV);
  }
  if (has_both(mv72)) {
    const OperatingPoint physician = physician_operating_point(admitted_disp, mv72);
    const ClosestPoint closest = closest_roc_threshold(roc(admitted_scores, mv72), physician);
    if (std::isfinite(closest.threshold)) bundle.metadata.icu_reference_threshold = closest.threshold;
  }

  TrainingMetadata& m = bundle.metadata;
  m.master_seed = config.seed;
  m.split = std::string(split_name(split.kind));
  m.n_train = train.size();
  m.n_validation = validation.size();
  m.n_train_images = fusion_train.size();
  m.imputation_iterations = imputed.iterations;
  m.fusion_epochs_run = fit.epochs_run;
  m.fusion_best_epoch = fit.best_epoch;
  m.fusion_best_val_loss = fit.best_val_loss;
  m.band_agreement = bands.agreement;
  m.band_total = bands.total;
  m.config_json = config.to_json().dump();
  if (log) {
    *log << "bands: " << bands.thresholds.t_low_med << " / " << bands.thresholds.t_med_high << " (agreement "
         << bands.agreement << "/" << bands.total << ")\n";
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Evaluation

nlohmann::json evaluate_windows(std::shared_ptr<const ModelBundle> bundle, const Cohort& cohort,
                                const CohortSplit& split, const PipelineConfig& config) {
  const Scorer scorer(std::move(bundle));
  const std::uint64_t scope = derive_seed(config.seed, "eval/windows");
  json windows = json::array();
  for (const auto& [name, ids] : split.test_groups) {
    const auto scored = score_entries(scorer, select(cohort, ids));
    json w;
    w["name"] = name;
    w["n"] = scored.size();
    w["auc"] = horizon_auc_table(scored, config.eval.n_boot, derive_seed(scope, name), false);
    windows.push_back(std::move(w));
  }
  return windows;
}

nlohmann::json evaluate_bundle(std::shared_ptr<const ModelBundle> bundle, const Cohort& cohort,
                               const CohortSplit& split, const PipelineConfig& config, std::ostream* log) {
  const Scorer scorer(bundle);
  const std::uint64_t scope = derive_seed(config.seed, "eval");
  const std::size_t n_boot = config.eval.n_boot;
  const auto test = select(cohort, split.test_ids);
  if (test.empty()) throw EvaluationError("test partition is empty");
  const auto scored = score_entries(scorer, test);
  if (log) *log << "scored " << scored.size() << " test patients\n";

  json report;
  report["bundle_version"] = scorer.bundle_version();
  report["test"] = {{"n", test.size()}, {"split", split_name(split.kind)}};
  {
    json groups = json::object();
    for (const auto& [name, ids] : split.test_groups) groups[name] = ids.size();
    report["test"]["groups"] = std::move(groups);
  }

  // ROC/AUC per horizon and therapy cutoff on the combined score.
  report["roc"] = horizon_auc_table(scored, n_boot, derive_seed(scope, "roc"), true);

  // Each model on its own population, plus the forest on everyone.
  {
    json by = json::object();
    for (Horizon h : {Horizon::H24, Horizon::H72}) {
      const std::string hname = h == Horizon::H24 ? "24h" : "72h";
      std::vector<double> fusion_scores, forest_all, forest_imageless;
      std::vector<bool> fusion_labels, all_labels, imageless_labels;
      for (const auto& s : scored) {
        const bool label = label_for(*s.entry, h) >= 0.75;
        const double rf = h == Horizon::H24 ? s.response.forest_24h : s.response.forest_72h;
        forest_all.push_back(rf);
        all_labels.push_back(label);
        if (s.response.source == ScoreSource::FusionModel) {
          fusion_scores.push_back(h == Horizon::H24 ? *s.response.fusion_24h : *s.response.fusion_72h);
          fusion_labels.push_back(label);
        } else {
          forest_imageless.push_back(rf);
          imageless_labels.push_back(label);
        }
      }
      const std::uint64_t seed = derive_seed(scope, "by_source/" + hname);
      by[hname]["fusion_model_imaged"] = auc_json(fusion_scores, fusion_labels, n_boot, derive_seed(seed, "fusion"));
      by[hname]["forest_imageless"] = auc_json(forest_imageless, imageless_labels, n_boot, derive_seed(seed, "rf_noimg"));
      by[hname]["forest_all"] = auc_json(forest_all, all_labels, n_boot, derive_seed(seed, "rf_all"));
    }
    report["model_comparison"] = {{"outcome", "MV_or_death"}, {"by_horizon", std::move(by)}};
  }

  // CURB-65 and MEWS on their computable subsets.
  {
    std::vector<double> curb_corisk, curb_values, mews_corisk, mews_values;
    std::vector<bool> curb_mv, curb_death30, mews_mv, mews_icu_death;
    for (const auto& s : scored) {
      const bool mv_death = label_for(*s.entry, Horizon::H72) >= 0.75;
      const bool death30 = died_within(*s.entry, 30.0);
      if (s.response.curb65.computable()) {
        curb_corisk.push_back(s.response.score_72h);
        curb_values.push_back(*s.response.curb65.value);
        curb_mv.push_back(mv_death);
        curb_death30.push_back(death30);
      }
      if (s.response.mews.computable()) {
        mews_corisk.push_back(s.response.score_72h);
        mews_values.push_back(*s.response.mews.value);
        mews_mv.push_back(mv_death);
        mews_icu_death.push_back(s.entry->outcome.disposition == Disposition::Icu || death30);
      }
    }
    const double n = static_cast<double>(scored.size());
    const std::uint64_t seed = derive_seed(scope, "clinical");
    report["clinical_scores"] = {
        {"curb65",
         {{"computable", curb_values.size()},
          {"computable_rate", static_cast<double>(curb_values.size()) / n},
          {"MV_or_death_72h",
           {{"corisk", auc_json(curb_corisk, curb_mv, n_boot, derive_seed(seed, "curb/mv/corisk"), true)},
            {"curb65", auc_json(curb_values, curb_mv, n_boot, derive_seed(seed, "curb/mv/score"), true)}}},
          {"death_30d",
           {{"corisk", auc_json(curb_corisk, curb_death30, n_boot, derive_seed(seed, "curb/d30/corisk"))},
            {"curb65", auc_json(curb_values, curb_death30, n_boot, derive_seed(seed, "curb/d30/score"))}}}}},
        {"mews",
         {{"computable", mews_values.size()},
          {"computable_rate", static_cast<double>(mews_values.size()) / n},
          {"MV_or_death_72h",
           {{"corisk", auc_json(mews_corisk, mews_mv, n_boot, derive_seed(seed, "mews/mv/corisk"), true)},
            {"mews", auc_json(mews_values, mews_mv, n_boot, derive_seed(seed, "mews/mv/score"), true)}}},
          {"icu_or_death",
           {{"corisk", auc_json(mews_corisk, mews_icu_death, n_boot, derive_seed(seed, "mews/icu/corisk"))},
            {"mews", auc_json(mews_values, mews_icu_death, n_boot, derive_seed(seed, "mews/icu/score"))}}}}},
    };
  }

  // ICU vs floor decisions against MV within 72 hours.
  {
    std::vector<Disposition> disp;
    std::vector<double> scores;
    std::vector<bool> mv72;
    for (const auto& s : scored) {
      if (s.entry->outcome.disposition == Disposition::Discharge) continue;
      disp.push_back(s.entry->outcome.disposition);
      scores.push_back(s.response.score_72h);
      mv72.push_back(s.entry->outcome.max_therapy_72h == TherapyLevel::MV);
    }
    json phys;
    phys["n_admitted"] = disp.size();
    if (!has_both(mv72)) {
      phys["error"] = "admitted test patients lack MV-positive or MV-negative cases";
    } else {
      const std::uint64_t seed = derive_seed(scope, "physician");
      const OperatingPoint human = physician_operating_point(disp, mv72);
      auto resampled = [&](std::span<const std::size_t> idx, auto&& fn) -> std::optional<double> {
        std::vector<Disposition> d;
        std::vector<double> sc;
        std::vector<bool> y;
        for (std::size_t i : idx) {
          d.push_back(disp[i]);
          sc.push_back(scores[i]);
          y.push_back(mv72[i]);
        }
        if (!has_both(y)) return std::nullopt;
        return fn(d, sc, y);
      };
      const Interval sens_ci = bootstrap_interval(
          disp.size(),
          [&](std::span<const std::size_t> idx) {
            return resampled(idx, [](auto& d, auto&, auto& y) { return physician_operating_point(d, y).sensitivity; });
          },
          n_boot, derive_seed(seed, "sens"));
      const Interval spec_ci = bootstrap_interval(
          disp.size(),
          [&](std::span<const std::size_t> idx) {
            return resampled(idx, [](auto& d, auto&, auto& y) { return physician_operating_point(d, y).specificity; });
          },
          n_boot, derive_seed(seed, "spec"));
      const RocCurve curve = roc(scores, mv72);
      const ClosestPoint closest = closest_roc_threshold(curve, human);
      const OperatingPoint matched = operating_point_at_sensitivity(curve, human.sensitivity);
      const Interval matched_spec_ci = bootstrap_interval(
          disp.size(),
          [&](std::span<const std::size_t> idx) {
            return resampled(idx, [&](auto&, auto& sc, auto& y) {
              return operating_point_at_sensitivity(roc(sc, y), human.sensitivity).specificity;
            });
          },
          n_boot, derive_seed(seed, "matched"));
      phys["physician"] = {{"sensitivity", human.sensitivity},
                           {"specificity", human.specificity},
                           {"sensitivity_ci_95", interval_json(sens_ci)},
                           {"specificity_ci_95", interval_json(spec_ci)}};
      phys["corisk_roc"] = {{"auc", curve.auc}, {"points", roc_points_json(curve)}};
      phys["closest_point"] = {{"threshold", finite_or_null(closest.threshold)},
                               {"sensitivity", closest.point.sensitivity},
                               {"specificity", closest.point.specificity},
                               {"distance", closest.distance}};
      phys["at_physician_sensitivity"] = {{"threshold", finite_or_null(*matched.threshold)},
                                          {"sensitivity", matched.sensitivity},
                                          {"specificity", matched.specificity},
                                          {"specificity_ci_95", interval_json(matched_spec_ci)}};
    }
    report["physician_comparison"] = std::move(phys);
  }

  // Risk bands with 30-day survival.
  {
    json bands;
    bands["thresholds"] = {{"t_low_med", scorer.thresholds().t_low_med}, {"t_med_high", scorer.thresholds().t_med_high}};
    std::vector<SurvivalGroup> groups(3);
    for (const auto& s : scored) {
      const SurvivalObservation o = survival_within(s.entry->record, s.entry->outcome, 30.0);
      auto& g = groups[static_cast<std::size_t>(s.response.band_72h)];
      g.times.push_back(o.time_days);
      g.events.push_back(o.event);
    }
    json per_band = json::object();
    std::vector<SurvivalGroup> nonempty;
    for (RiskBand b : {RiskBand::Low, RiskBand::Medium, RiskBand::High}) {
      const auto& g = groups[static_cast<std::size_t>(b)];
      json jb;
      jb["n"] = g.times.size();
      const auto deaths = static_cast<std::size_t>(std::count(g.events.begin(), g.events.end(), true));
      jb["deaths_30d"] = deaths;
      if (!g.times.empty()) {
        nonempty.push_back(g);
        jb["mortality_30d"] = static_cast<double>(deaths) / static_cast<double>(g.times.size());
        const KmCurve km = km_estimate(g.times, g.events, 30.0);
        json steps = json::array();
        for (const auto& st : km.steps) steps.push_back({st.time, st.survival, st.at_risk, st.events});
        jb["km_steps"] = std::move(steps);
        jb["survival_30d"] = km.survival_at(30.0);
      }
      per_band[std::string(to_string(b))] = std::move(jb);
    }
    bands["bands"] = std::move(per_band);
    try {
      const LogRankResult lr = logrank_test(nonempty);
      bands["logrank"] = {{"chi_square", lr.chi_square}, {"df", lr.df}, {"p_value", lr.p_value}};
    } catch (const Error& e) {
      bands["logrank"] = {{"error", e.what()}};
    }
    report["risk_bands"] = std::move(bands);
  }

  // Score distributions across outcome groups.
  {
    json gs;
    struct Comparison {
      const char* name;
      const char* a;
      const char* b;
      std::function<std::optional<bool>(const CohortEntry&)> in_a;
    };
    const std::vector<Comparison> comparisons = {
        {"admitted_vs_discharged", "admitted", "discharged",
         [](const CohortEntry& e) { return std::optional<bool>(e.outcome.disposition != Disposition::Discharge); }},
        {"icu_vs_floor", "icu", "floor",
         [](const CohortEntry& e) -> std::optional<bool> {
           if (e.outcome.disposition == Disposition::Discharge) return std::nullopt;
           return e.outcome.disposition == Disposition::Icu;
         }},
        {"death_vs_survival_30d", "died", "survived",
         [](const CohortEntry& e) { return std::optional<bool>(died_within(e, 30.0)); }},
        {"mv_hfo_vs_lfo_ra", "MV_or_HFO_NIV", "LFO_or_RA",
         [](const CohortEntry& e) {
           return std::optional<bool>(static_cast<int>(e.outcome.max_therapy_72h) >= static_cast<int>(TherapyLevel::HFO_NIV));
         }},
    };
    for (const auto& c : comparisons) {
      std::vector<double> ca, cb, curb_a, curb_b, mews_a, mews_b;
      for (const auto& s : scored) {
        const auto side = c.in_a(*s.entry);
        if (!side) continue;
        (*side ? ca : cb).push_back(s.response.score_72h);
        if (s.response.curb65.value) (*side ? curb_a : curb_b).push_back(*s.response.curb65.value);
        if (s.response.mews.value) (*side ? mews_a : mews_b).push_back(*s.response.mews.value);
      }
      gs[c.name] = {{"corisk", two_group_json(ca, cb, c.a, c.b)},
                    {"curb65", two_group_json(curb_a, curb_b, c.a, c.b)},
                    {"mews", two_group_json(mews_a, mews_b, c.a, c.b)}};
    }
    report["group_stats"] = std::move(gs);
  }

  // Permutation importance of EHR items for the 72h label.
  {
    const ModelBundle& b = *bundle;
    const FeatureMatrix completed = b.imputer.apply(encode_records(records_of(test)));
    const DenseMatrix x = completed.to_dense();
    std::vector<std::string> names;
    for (const auto& c : b.columns) names.push_back(c.name);
    std::vector<double> y;
    for (const auto* e : test) y.push_back(label_for(*e, Horizon::H72));
    const std::uint64_t seed = derive_seed(scope, "importance");
    auto ranking_json = [](const std::vector<FeatureImportance>& r) {
      json a = json::array();
      for (const auto& f : r) a.push_back({{"feature", f.feature}, {"mean_increase", f.mean_increase}});
      return a;
    };
    const auto forest_rank = permutation_importance(
        [&](const DenseMatrix& m) {
          std::vector<double> p = b.forest_72h.predict(m);
          for (double& v : p) v = std::clamp(v, 0.0, 1.0);
          return p;
        },
        x, y, names, config.eval.importance_repeats, derive_seed(seed, "forest"));

    std::vector<std::size_t> imaged;
    std::vector<const ChestImage*> images;
    std::vector<ChestImage> chest;
    const std::size_t side = b.fusion.architecture().image_size;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test[i]->image) imaged.push_back(i);
    }
    chest.reserve(imaged.size());
    for (std::size_t i : imaged) chest.push_back(preprocess_image(*test[i]->image, side, side));
    for (const auto& c : chest) images.push_back(&c);
    json fusion_json = json::array();
    if (!imaged.empty()) {
      const DenseMatrix features = b.fusion.encode_images(images);
      DenseMatrix xi(imaged.size(), x.cols);
      std::vector<double> yi;
      for (std::size_t k = 0; k < imaged.size(); ++k) {
        std::copy(x.row(imaged[k]).begin(), x.row(imaged[k]).end(), xi.row(k).begin());
        yi.push_back(y[imaged[k]]);
      }
      const auto fusion_rank = permutation_importance(
          [&](const DenseMatrix& m) {
            std::vector<EhrInput> inputs;
            for (std::size_t r = 0; r < m.rows; ++r) inputs.push_back(to_ehr_input(m.row(r)));
            std::vector<double> p;
            for (const auto& pr : b.fusion.predict(inputs, features)) p.push_back(pr.second);
            return p;
          },
          xi, yi, names, config.eval.importance_repeats, derive_seed(seed, "fusion"));
      fusion_json = ranking_json(fusion_rank);
    }
    report["permutation_importance"] = {{"label", "72h"},
                                        {"error", "mse"},
                                        {"n_repeats", config.eval.importance_repeats},
                                        {"forest", ranking_json(forest_rank)},
                                        {"fusion_model", std::move(fusion_json)}};
  }
  return report;
}

// ---------------------------------------------------------------------------
// Commands

TrainRun run_train(const PipelineConfig& config, std::ostream* log) {
  const Cohort cohort = load_included_cohort(config);
  const CohortSplit split = split_cohort(cohort, config, config.split);
  if (log) {
    *log << "cohort: " << cohort.size() << " included; train " << split.train_ids.size() << ", validation "
         << split.validation_ids.size() << ", test " << split.test_ids.size() << "\n";
  }
  TrainRun run{train_bundle(cohort, split, config, log), std::nullopt};
  run.primary.save(config.paths.bundle);
  if (log) *log << "wrote " << config.paths.bundle.string() << "\n";
  if (config.temporal_split && config.split != SplitKind::ByPeriod) {
    const CohortSplit period = split_cohort(cohort, config, SplitKind::ByPeriod);
    if (log) *log << "temporal split: train " << period.train_ids.size() << ", test " << period.test_ids.size() << "\n";
    run.temporal = train_bundle(cohort, period, config, log);
    run.temporal->save(config.temporal_bundle_path());
    if (log) *log << "wrote " << config.temporal_bundle_path().string() << "\n";
  }
  return run;
}

nlohmann::json run_eval(const PipelineConfig& config, std::ostream* log) {
  std::vector<Exclusion> exclusions;
  const Cohort cohort = load_included_cohort(config, &exclusions);
  const CohortSplit split = split_cohort(cohort, config, config.split);
  auto bundle = std::make_shared<const ModelBundle>(ModelBundle::load(config.paths.bundle));

  json report = evaluate_bundle(bundle, cohort, split, config, log);
  json excl = json::object();
  for (const auto& e : exclusions) {
    const std::string key(to_string(e.reason));
    excl[key] = excl.value(key, 0) + 1;
  }
  report["cohort"] = {{"included", cohort.size()},
                      {"excluded", exclusions.size()},
                      {"exclusions_by_reason", std::move(excl)},
                      {"train", split.train_ids.size()},
                      {"validation", split.validation_ids.size()},
                      {"test", split.test_ids.size()}};

  const bool temporal_primary = config.split == SplitKind::ByPeriod;
  if (temporal_primary || config.temporal_split) {
    const fs::path path = temporal_primary ? config.paths.bundle : config.temporal_bundle_path();
    auto temporal = temporal_primary ? bundle : std::make_shared<const ModelBundle>(ModelBundle::load(path));
    const CohortSplit period = temporal_primary ? split : split_cohort(cohort, config, SplitKind::ByPeriod);
    report["temporal"] = {{"bundle_version", temporal->version()},
                          {"training_window", config.period_split.training.name},
                          {"windows", evaluate_windows(temporal, cohort, period, config)}};
  }
  write_report(report, config.paths.report_dir, config.eval.plots);
  if (log) *log << "wrote report to " << config.paths.report_dir.string() << "\n";
  return report;
}

}  // namespace corisk
