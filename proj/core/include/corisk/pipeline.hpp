#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

#include "corisk/bundle.hpp"
#include "corisk/cohort.hpp"
#include "corisk/fusion_model.hpp"
#include "corisk/imputation.hpp"

namespace corisk {

struct PipelinePaths {
  std::filesystem::path cohort;
  std::filesystem::path outcomes;
  std::filesystem::path images;  // root for image_path values
  std::filesystem::path bundle;
  std::filesystem::path report_dir;
};

struct EvalConfig {
  std::size_t n_boot = 1000;
  std::size_t importance_repeats = 5;
  bool plots = true;
};

// Every module seed is derive_seed(seed, "<module>"), so one master seed
// fixes the whole run.
struct PipelineConfig {
  std::uint64_t seed = 20200301;
  PipelinePaths paths;
  GeneratorConfig generator = GeneratorConfig::defaults();
  SplitKind split = SplitKind::BySite;
  SiteSplitParams site_split;
  PeriodSplitParams period_split = PeriodSplitParams::may_windows();
  bool temporal_split = true;
  ImputeConfig impute;
  ForestConfig column_forest{.n_trees = 25, .max_depth = 10, .min_leaf = 5, .mtry = 0, .bootstrap = true, .n_threads = 0};
  ForestConfig outcome_forest;
  FusionTrainConfig fusion;
  std::size_t image_feature_dim = 16;
  EvalConfig eval;

  // Relative paths resolve against base_dir. Unknown keys are ConfigErrors.
  static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  static PipelineConfig load(const std::filesystem::path& path);
  // Model-relevant settings (no paths), stored in the bundle.
  nlohmann::json to_json() const;
  // <bundle stem>_temporal<extension> next to the main bundle.
  std::filesystem::path temporal_bundle_path() const;
};

void generate_cohort_files(const PipelineConfig& config, std::ostream* log = nullptr);

// Reads the cohort files and applies the inclusion criteria.
Cohort load_included_cohort(const PipelineConfig& config, std::vector<Exclusion>* exclusions = nullptr);
CohortSplit split_cohort(const Cohort& cohort, const PipelineConfig& config, SplitKind kind);

ModelBundle train_bundle(const Cohort& cohort, const CohortSplit& split, const PipelineConfig& config,
                         std::ostream* log = nullptr);

// Full report for the test partition of `split`: ROC/AUC per horizon and
// therapy cutoff, model comparison, clinical scores, physician comparison,
// risk bands with survival, group statistics and permutation importance.
nlohmann::json evaluate_bundle(std::shared_ptr<const ModelBundle> bundle, const Cohort& cohort,
                               const CohortSplit& split, const PipelineConfig& config, std::ostream* log = nullptr);

// Per-window AUCs for every horizon and cutoff.
nlohmann::json evaluate_windows(std::shared_ptr<const ModelBundle> bundle, const Cohort& cohort,
                                const CohortSplit& split, const PipelineConfig& config);

struct TrainRun {
  ModelBundle primary;
  std::optional<ModelBundle> temporal;
};

// Trains and writes the bundle, plus the temporal bundle when enabled.
TrainRun run_train(const PipelineConfig& config, std::ostream* log = nullptr);
// Loads the bundles, evaluates, and writes the report directory.
nlohmann::json run_eval(const PipelineConfig& config, std::ostream* log = nullptr);

}  // namespace corisk
