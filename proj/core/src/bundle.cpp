#include "corisk/bundle.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>

#include "corisk/error.hpp"
#include "corisk/random.hpp"

namespace corisk {

namespace {

constexpr std::string_view kMagic = "CORISKBN";

void put_optional(BinaryWriter& out, const std::optional<double>& v) {
  out.put<std::uint8_t>(v ? 1 : 0);
  out.put(v.value_or(0.0));
}

std::optional<double> get_optional(BinaryReader& in) {
  const bool present = in.get<std::uint8_t>() != 0;
  const double v = in.get<double>();
  return present ? std::optional<double>(v) : std::nullopt;
}

}  // namespace

std::vector<unsigned char> ModelBundle::serialize() const {
  BinaryWriter out;
  out.put_raw(kMagic);
  out.put(kFormatVersion);

  out.put_raw("META");
  out.put_u64(metadata.master_seed);
  out.put_string(metadata.split);
  out.put_u64(metadata.n_train);
  out.put_u64(metadata.n_validation);
  out.put_u64(metadata.n_train_images);
  out.put_u64(metadata.imputation_iterations);
  out.put_u64(metadata.fusion_epochs_run);
  out.put_u64(metadata.fusion_best_epoch);
  out.put(metadata.fusion_best_val_loss);
  out.put_u64(metadata.band_agreement);
  out.put_u64(metadata.band_total);
  put_optional(out, metadata.icu_reference_threshold);
  out.put_string(metadata.config_json);

  out.put_raw("COLS");
  out.put_u64(columns.size());
  for (const auto& c : columns) {
    out.put_string(c.name);
    out.put(static_cast<std::uint8_t>(c.kind));
    out.put<std::int32_t>(c.n_categories);
  }

  out.put_raw("BAND");
  out.put(bands.t_low_med);
  out.put(bands.t_med_high);

  imputer.save(out);
  forest_24h.save(out);
  forest_72h.save(out);
  fusion.save(out);
  out.put_raw("END!");
  return out.bytes();
}

ModelBundle ModelBundle::deserialize(const std::vector<unsigned char>& bytes) {
  BinaryReader in(bytes);
  if (bytes.size() < kMagic.size() || in.get_raw(kMagic.size()) != kMagic) {
    throw BundleError("bundle: not a model bundle (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kFormatVersion) {
    throw BundleError("bundle: format version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kFormatVersion) + ")");
  }
  ModelBundle b;
  in.expect_tag("META");
  b.metadata.master_seed = in.get_u64();
  b.metadata.split = in.get_string();
  b.metadata.n_train = in.get_u64();
  b.metadata.n_validation = in.get_u64();
  b.metadata.n_train_images = in.get_u64();
  b.metadata.imputation_iterations = in.get_u64();
  b.metadata.fusion_epochs_run = in.get_u64();
  b.metadata.fusion_best_epoch = in.get_u64();
  b.metadata.fusion_best_val_loss = in.get<double>();
  b.metadata.band_agreement = in.get_u64();
  b.metadata.band_total = in.get_u64();
  b.metadata.icu_reference_threshold = get_optional(in);
  b.metadata.config_json = in.get_string();

  in.expect_tag("COLS");
  const std::size_t n = in.get_size(1 << 16);
  for (std::size_t i = 0; i < n; ++i) {
    FeatureColumn c;
    c.name = in.get_string();
    const auto kind = in.get<std::uint8_t>();
    if (kind > 1) throw BundleError("bundle: bad column kind");
    c.kind = static_cast<ColumnKind>(kind);
    c.n_categories = in.get<std::int32_t>();
    b.columns.push_back(std::move(c));
  }

  in.expect_tag("BAND");
  b.bands.t_low_med = in.get<double>();
  b.bands.t_med_high = in.get<double>();

  b.imputer = FittedImputer::load(in);
  b.forest_24h = Forest::load(in);
  b.forest_72h = Forest::load(in);
  b.fusion = FusionModel::load(in);
  in.expect_tag("END!");
  if (!in.at_end()) throw BundleError("bundle: trailing bytes after end marker");
  return b;
}

void ModelBundle::save(const std::filesystem::path& path) const {
  const auto bytes = serialize();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw BundleError("bundle: cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw BundleError("bundle: write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

ModelBundle ModelBundle::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BundleError("bundle: cannot open '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize(bytes);
  } catch (const BundleError& e) {
    throw BundleError("'" + path.string() + "': " + e.what());
  }
}

std::string ModelBundle::version() const {
  const auto bytes = serialize();
  const std::uint64_t h =
      fnv1a64(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::to_string(kFormatVersion) + "-" + buf;
}

}  // namespace corisk
