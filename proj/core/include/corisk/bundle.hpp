#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "corisk/forest.hpp"
#include "corisk/fusion_model.hpp"
#include "corisk/imputation.hpp"
#include "corisk/scoring.hpp"

namespace corisk {

struct TrainingMetadata {
  std::uint64_t master_seed = 0;
  std::string split;  // "site" or "period"
  std::size_t n_train = 0;
  std::size_t n_validation = 0;
  std::size_t n_train_images = 0;
  std::size_t imputation_iterations = 0;
  std::size_t fusion_epochs_run = 0;
  std::size_t fusion_best_epoch = 0;
  double fusion_best_val_loss = 0.0;
  std::size_t band_agreement = 0;
  std::size_t band_total = 0;
  // Closest point on the validation ICU-vs-floor ROC to the physicians' point.
  std::optional<double> icu_reference_threshold;
  std::string config_json;  // the training configuration, serialized
};

// Everything needed to score a new patient. Serialized as one versioned file;
// save then load is value-exact and the byte stream is a pure function of the
// contents.
struct ModelBundle {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::vector<FeatureColumn> columns;
  FittedImputer imputer;
  Forest forest_24h;
  Forest forest_72h;
  FusionModel fusion;
  BandThresholds bands;
  TrainingMetadata metadata;

  std::vector<unsigned char> serialize() const;
  static ModelBundle deserialize(const std::vector<unsigned char>& bytes);
  void save(const std::filesystem::path& path) const;
  // Throws BundleError when the file is missing, truncated or of another format.
  static ModelBundle load(const std::filesystem::path& path);

  // Format version plus a content hash, e.g. "1-3fa2...".
  std::string version() const;
};

}  // namespace corisk
