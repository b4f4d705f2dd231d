#include "corisk/features.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "corisk/error.hpp"

namespace corisk {

std::vector<FeatureColumn> ehr_feature_columns() {
  std::vector<FeatureColumn> cols;
  cols.push_back({"age", ColumnKind::Continuous, 0});
  for (auto v : kVitals) cols.push_back({std::string(v), ColumnKind::Continuous, 0});
  for (auto l : kLabs) cols.push_back({std::string(l), ColumnKind::Continuous, 0});
  cols.push_back({"sex", ColumnKind::Categorical, 2});
  cols.push_back({"race", ColumnKind::Categorical, static_cast<int>(kRaces.size())});
  cols.push_back({"smoking", ColumnKind::Categorical, 2});
  for (auto c : kComorbidities) cols.push_back({std::string(c), ColumnKind::Categorical, 2});
  cols.push_back({"avpu", ColumnKind::Categorical, 4});
  cols.push_back({"presenting_device", ColumnKind::Categorical, kTherapyLevelCount});
  return cols;
}

FeatureSchema fusion_feature_schema(std::size_t image_feature_dim) {
  FeatureSchema schema;
  schema.image_feature_dim = image_feature_dim;
  for (const auto& col : ehr_feature_columns()) {
    if (col.kind == ColumnKind::Continuous) {
      schema.continuous_features.push_back(col.name);
    } else {
      schema.categorical_features.push_back({col.name, col.n_categories, default_embedding_dim(col.n_categories)});
    }
  }
  return schema;
}

void encode_record(const PatientRecord& record, std::span<double> values, std::span<std::uint8_t> missing) {
  const std::size_t width = kContinuousFeatureCount + 3 + kComorbidities.size() + 2;
  if (values.size() != width || missing.size() != width) {
    throw ShapeError("encode_record: row width " + std::to_string(values.size()) + ", expected " + std::to_string(width));
  }
  std::size_t c = 0;
  auto put = [&](std::optional<double> v) {
    if (v) {
      values[c] = *v;
      missing[c] = 0;
    } else {
      values[c] = 0.0;
      missing[c] = 1;
    }
    ++c;
  };
  put(record.age);
  for (const auto& v : record.vitals) put(v);
  for (const auto& l : record.labs) put(l);
  put(static_cast<double>(static_cast<int>(record.sex)));
  const auto race = std::find(kRaces.begin(), kRaces.end(), record.race);
  if (race == kRaces.end()) throw EncodingError("race: unknown category '" + record.race + "'");
  put(static_cast<double>(race - kRaces.begin()));
  put(record.smoking ? 1.0 : 0.0);
  for (bool flag : record.comorbidities) put(flag ? 1.0 : 0.0);
  put(record.avpu ? std::optional<double>(static_cast<int>(*record.avpu)) : std::nullopt);
  put(static_cast<double>(static_cast<int>(presenting_therapy_level(record))));
}

FeatureMatrix encode_records(std::span<const PatientRecord> records) {
  FeatureMatrix m(ehr_feature_columns(), records.size());
  const std::size_t p = m.cols();
  for (std::size_t r = 0; r < records.size(); ++r) {
    encode_record(records[r], std::span<double>(m.values).subspan(r * p, p),
                  std::span<std::uint8_t>(m.missing).subspan(r * p, p));
  }
  return m;
}

EhrInput to_ehr_input(std::span<const double> completed_row) {
  const std::size_t width = kContinuousFeatureCount + 3 + kComorbidities.size() + 2;
  if (completed_row.size() != width) throw ShapeError("to_ehr_input: row width " + std::to_string(completed_row.size()));
  EhrInput in;
  in.continuous.assign(completed_row.begin(), completed_row.begin() + kContinuousFeatureCount);
  for (std::size_t i = kContinuousFeatureCount; i < width; ++i) {
    in.categorical.push_back(static_cast<int>(std::lround(completed_row[i])));
  }
  return in;
}

}  // namespace corisk
