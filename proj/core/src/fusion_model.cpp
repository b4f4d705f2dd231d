#include "corisk/fusion_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "corisk/error.hpp"
#include "corisk/random.hpp"

namespace corisk {

namespace {

constexpr std::uint32_t kFusionVersion = 1;
constexpr std::size_t kInferenceChunk = 256;

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor normal_tensor(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape), 0.0);
  std::normal_distribution<double> dist(0.0, sd);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

// h W + b, with the sum formed before the bias is added.
std::vector<double> dense(std::span<const double> h, const DenseLayer& layer) {
  const std::size_t in = layer.weight.dim(0), out = layer.weight.dim(1);
  if (h.size() != in) throw ShapeError("dense: input width " + std::to_string(h.size()) + ", expected " + std::to_string(in));
  std::vector<double> acc(out, 0.0);
  for (std::size_t p = 0; p < in; ++p) {
    if (h[p] == 0.0) continue;
    for (std::size_t j = 0; j < out; ++j) acc[j] += h[p] * layer.weight[p * out + j];
  }
  for (std::size_t j = 0; j < out; ++j) acc[j] += layer.bias[j];
  return acc;
}

void put_tensor(BinaryWriter& out, const Tensor& t) {
  std::vector<std::uint64_t> shape(t.shape().begin(), t.shape().end());
  out.put_vector(shape);
  out.put_vector(t.values());
}

Tensor get_tensor(BinaryReader& in) {
  const auto shape64 = in.get_vector<std::uint64_t>();
  Shape shape(shape64.begin(), shape64.end());
  auto data = in.get_vector<double>();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

bool operator==(const CategoricalFeature& a, const CategoricalFeature& b) {
  return a.name == b.name && a.cardinality == b.cardinality && a.embedding_dim == b.embedding_dim;
}

std::size_t default_embedding_dim(int cardinality) {
  if (cardinality < 1) throw ContractError("embedding: cardinality must be positive");
  const auto d = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cardinality))));
  return std::min<std::size_t>(d, 8);
}

std::size_t FeatureSchema::embedding_width() const {
  std::size_t w = 0;
  for (const auto& c : categorical_features) w += c.embedding_dim;
  return w;
}

std::size_t FeatureSchema::input_dim() const {
  return continuous_features.size() + embedding_width() + image_feature_dim;
}

void FeatureSchema::validate() const {
  std::set<std::string> seen;
  auto claim = [&](const std::string& name) {
    if (name.empty()) throw ContractError("schema: empty feature name");
    if (!seen.insert(name).second) throw ContractError("schema: duplicate feature name '" + name + "'");
  };
  for (const auto& n : continuous_features) claim(n);
  for (const auto& c : categorical_features) {
    claim(c.name);
    if (c.cardinality < 1) throw ContractError("schema: feature '" + c.name + "' has no categories");
    if (c.embedding_dim < 1) throw ContractError("schema: feature '" + c.name + "' has embedding_dim 0");
  }
  if (input_dim() == 0) throw ContractError("schema: empty input");
}

Standardization Standardization::fit(const DenseMatrix& continuous) {
  Standardization s;
  s.mean.assign(continuous.cols, 0.0);
  s.sd.assign(continuous.cols, 1.0);
  if (continuous.rows == 0) return s;
  const double n = static_cast<double>(continuous.rows);
  for (std::size_t c = 0; c < continuous.cols; ++c) {
    double sum = 0.0;
    for (std::size_t r = 0; r < continuous.rows; ++r) sum += continuous.at(r, c);
    const double mean = sum / n;
    double ss = 0.0;
    for (std::size_t r = 0; r < continuous.rows; ++r) {
      const double d = continuous.at(r, c) - mean;
      ss += d * d;
    }
    const double sd = std::sqrt(ss / n);
    s.mean[c] = mean;
    s.sd[c] = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

std::size_t FusionArchitecture::conv_output_width() const {
  std::size_t s = image_size;
  for (std::size_t i = 0; i < conv_channels.size(); ++i) {
    if (s < kernel_size) throw ConfigError("architecture: image too small for conv block " + std::to_string(i));
    s = s - kernel_size + 1;
    if (s < pool_window) throw ConfigError("architecture: image too small for pool after block " + std::to_string(i));
    s /= pool_window;
  }
  const std::size_t channels = conv_channels.empty() ? 1 : conv_channels.back();
  return s * s * channels;
}

void FusionArchitecture::validate() const {
  if (image_size == 0 || kernel_size == 0 || pool_window == 0) {
    throw ConfigError("architecture: image_size, kernel_size and pool_window must be positive");
  }
  for (std::size_t c : conv_channels) {
    if (c == 0) throw ConfigError("architecture: conv channel count 0");
  }
  for (std::size_t w : deep_layers) {
    if (w == 0) throw ConfigError("architecture: deep layer width 0");
  }
  (void)conv_output_width();
}

std::vector<Tensor*> FusionModelParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& e : embeddings) out.push_back(&e);
  for (auto& c : conv_encoder) {
    out.push_back(&c.kernels);
    out.push_back(&c.bias);
  }
  out.push_back(&image_projection.weight);
  out.push_back(&image_projection.bias);
  for (auto& c : cross_layers) {
    out.push_back(&c.w);
    out.push_back(&c.b);
  }
  for (auto& d : deep_layers) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  out.push_back(&head_24h.weight);
  out.push_back(&head_24h.bias);
  out.push_back(&head_72h.weight);
  out.push_back(&head_72h.bias);
  return out;
}

std::vector<const Tensor*> FusionModelParams::tensors() const {
  auto mutable_view = const_cast<FusionModelParams*>(this)->tensors();
  return {mutable_view.begin(), mutable_view.end()};
}

std::vector<std::string> FusionModelParams::tensor_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < embeddings.size(); ++i) names.push_back("embedding" + std::to_string(i));
  for (std::size_t i = 0; i < conv_encoder.size(); ++i) {
    names.push_back("conv" + std::to_string(i) + ".kernels");
    names.push_back("conv" + std::to_string(i) + ".bias");
  }
  names.emplace_back("image_projection.weight");
  names.emplace_back("image_projection.bias");
  for (std::size_t i = 0; i < cross_layers.size(); ++i) {
    names.push_back("cross" + std::to_string(i) + ".w");
    names.push_back("cross" + std::to_string(i) + ".b");
  }
  for (std::size_t i = 0; i < deep_layers.size(); ++i) {
    names.push_back("deep" + std::to_string(i) + ".weight");
    names.push_back("deep" + std::to_string(i) + ".bias");
  }
  for (const char* h : {"head_24h", "head_72h"}) {
    names.push_back(std::string(h) + ".weight");
    names.push_back(std::string(h) + ".bias");
  }
  return names;
}

std::size_t FusionModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

FusionModelParams FusionModelParams::zeros(const FeatureSchema& schema, const FusionArchitecture& arch) {
  schema.validate();
  arch.validate();
  if (schema.image_feature_dim == 0) throw ContractError("fusion model: image_feature_dim must be positive");
  FusionModelParams p;
  for (const auto& c : schema.categorical_features) {
    p.embeddings.emplace_back(Shape{static_cast<std::size_t>(c.cardinality), c.embedding_dim});
  }
  std::size_t in_channels = 1;
  for (std::size_t out_channels : arch.conv_channels) {
    p.conv_encoder.push_back(ConvLayer{Tensor(Shape{out_channels, in_channels, arch.kernel_size, arch.kernel_size}),
                                       Tensor(Shape{out_channels})});
    in_channels = out_channels;
  }
  p.image_projection = DenseLayer{Tensor(Shape{arch.conv_output_width(), schema.image_feature_dim}),
                                  Tensor(Shape{schema.image_feature_dim})};
  const std::size_t d = schema.input_dim();
  for (std::size_t i = 0; i < arch.cross_layers; ++i) {
    p.cross_layers.push_back(CrossLayerParams{Tensor(Shape{d}), Tensor(Shape{d})});
  }
  std::size_t width = d;
  for (std::size_t w : arch.deep_layers) {
    p.deep_layers.push_back(DenseLayer{Tensor(Shape{width, w}), Tensor(Shape{w})});
    width = w;
  }
  const std::size_t head_in = d + (arch.deep_layers.empty() ? d : arch.deep_layers.back());
  p.head_24h = DenseLayer{Tensor(Shape{head_in, 1}), Tensor(Shape{1})};
  p.head_72h = DenseLayer{Tensor(Shape{head_in, 1}), Tensor(Shape{1})};
  return p;
}

FusionModelParams FusionModelParams::initialize(const FeatureSchema& schema, const FusionArchitecture& arch,
                                                std::uint64_t seed) {
  FusionModelParams p = zeros(schema, arch);
  Rng rng(seed);
  for (auto& e : p.embeddings) e = normal_tensor(e.shape(), 0.5, rng);
  for (auto& c : p.conv_encoder) {
    const double fan_in = static_cast<double>(c.kernels.dim(1) * c.kernels.dim(2) * c.kernels.dim(3));
    c.kernels = normal_tensor(c.kernels.shape(), std::sqrt(2.0 / fan_in), rng);
  }
  p.image_projection.weight = normal_tensor(p.image_projection.weight.shape(),
                                            std::sqrt(2.0 / static_cast<double>(p.image_projection.weight.dim(0))), rng);
  for (auto& c : p.cross_layers) {
    c.w = normal_tensor(c.w.shape(), 0.5 / std::sqrt(static_cast<double>(c.w.size())), rng);
  }
  for (auto& d : p.deep_layers) {
    d.weight = normal_tensor(d.weight.shape(), std::sqrt(2.0 / static_cast<double>(d.weight.dim(0))), rng);
  }
  for (DenseLayer* h : {&p.head_24h, &p.head_72h}) {
    h->weight = normal_tensor(h->weight.shape(), std::sqrt(1.0 / static_cast<double>(h->weight.dim(0))), rng);
  }
  return p;
}

std::vector<double> stack_input(const EhrInput& record, std::optional<std::span<const double>> image_features,
                                const FeatureSchema& schema, const Standardization& standardization,
                                const FusionModelParams& params) {
  if (record.continuous.size() != schema.continuous_features.size()) {
    throw ShapeError("stack_input: " + std::to_string(record.continuous.size()) + " continuous values, schema has " +
                     std::to_string(schema.continuous_features.size()));
  }
  if (record.categorical.size() != schema.categorical_features.size()) {
    throw ShapeError("stack_input: " + std::to_string(record.categorical.size()) + " categorical values, schema has " +
                     std::to_string(schema.categorical_features.size()));
  }
  if (schema.image_feature_dim > 0) {
    if (!image_features) throw ContractError("stack_input: image features required by schema");
    if (image_features->size() != schema.image_feature_dim) {
      throw ShapeError("stack_input: image feature width " + std::to_string(image_features->size()) + ", expected " +
                       std::to_string(schema.image_feature_dim));
    }
  } else if (image_features && !image_features->empty()) {
    throw ContractError("stack_input: schema has no image features");
  }

  std::vector<double> x0;
  x0.reserve(schema.input_dim());
  for (std::size_t i = 0; i < record.continuous.size(); ++i) x0.push_back(standardization.apply(i, record.continuous[i]));
  for (std::size_t k = 0; k < schema.categorical_features.size(); ++k) {
    const auto& feature = schema.categorical_features[k];
    const int idx = record.categorical[k];
    if (idx < 0 || idx >= feature.cardinality) {
      throw EncodingError("stack_input: category index " + std::to_string(idx) + " for '" + feature.name +
                          "' outside [0," + std::to_string(feature.cardinality) + ")");
    }
    const Tensor& table = params.embeddings.at(k);
    const std::size_t dim = table.dim(1);
    for (std::size_t j = 0; j < dim; ++j) x0.push_back(table[static_cast<std::size_t>(idx) * dim + j]);
  }
  if (image_features) x0.insert(x0.end(), image_features->begin(), image_features->end());
  return x0;
}

std::vector<double> cross_layer(std::span<const double> x0, std::span<const double> xl, const CrossLayerParams& p) {
  const std::size_t d = x0.size();
  if (xl.size() != d || p.w.size() != d || p.b.size() != d) {
    throw ShapeError("cross_layer: dimensions x0=" + std::to_string(d) + " xl=" + std::to_string(xl.size()) +
                     " w=" + std::to_string(p.w.size()) + " b=" + std::to_string(p.b.size()));
  }
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) s += xl[j] * p.w[j];
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = (x0[j] * s + p.b[j]) + xl[j];
  return out;
}

FusionModel::FusionModel(FeatureSchema schema, FusionArchitecture arch, Standardization standardization,
                         FusionModelParams params)
    : schema_(std::move(schema)),
      arch_(std::move(arch)),
      standardization_(std::move(standardization)),
      params_(std::move(params)) {
  schema_.validate();
  arch_.validate();
  if (standardization_.mean.size() != schema_.continuous_features.size() ||
      standardization_.sd.size() != schema_.continuous_features.size()) {
    throw ShapeError("fusion model: standardization does not match schema");
  }
  const FusionModelParams reference = FusionModelParams::zeros(schema_, arch_);
  const auto expected = reference.tensors();
  const auto actual = params_.tensors();
  const auto names = reference.tensor_names();
  if (expected.size() != actual.size()) throw ShapeError("fusion model: parameter count mismatch");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected[i]->shape() != actual[i]->shape()) {
      throw ShapeError("fusion model: " + names[i] + " has shape " + shape_string(actual[i]->shape()) +
                       ", expected " + shape_string(expected[i]->shape()));
    }
  }
}

void FusionModel::check_record(const EhrInput& record) const {
  if (record.continuous.size() != schema_.continuous_features.size() ||
      record.categorical.size() != schema_.categorical_features.size()) {
    throw ShapeError("fusion model: record does not match schema");
  }
}

void FusionModel::check_image(const ChestImage& image) const {
  if (image.image.width != arch_.image_size || image.image.height != arch_.image_size) {
    throw ShapeError("fusion model: image is " + std::to_string(image.image.width) + "x" +
                     std::to_string(image.image.height) + ", expected " + std::to_string(arch_.image_size) + "x" +
                     std::to_string(arch_.image_size));
  }
}

FusionModel::Outputs FusionModel::build_graph(Tape& tape, const FusionBatch& batch, std::vector<Var>& bound) const {
  bound.clear();
  for (const Tensor* t : params_.tensors()) bound.push_back(tape.leaf(*t));
  std::size_t cursor = 0;
  auto next = [&]() { return bound[cursor++]; };

  const std::size_t n = batch.size();
  std::vector<Var> tables;
  for (std::size_t k = 0; k < params_.embeddings.size(); ++k) tables.push_back(next());
  std::vector<std::pair<Var, Var>> conv;
  for (std::size_t k = 0; k < params_.conv_encoder.size(); ++k) {
    Var kernels = next();
    conv.emplace_back(kernels, next());
  }
  Var proj_w = next();
  Var proj_b = next();

  Var image;
  if (batch.image_features) {
    const DenseMatrix& f = *batch.image_features;
    if (f.rows != n || f.cols != schema_.image_feature_dim) throw ShapeError("fusion model: image feature matrix shape");
    image = tape.leaf(Tensor(Shape{n, f.cols}, f.data));
  } else {
    if (batch.images.shape() != Shape{n, 1, arch_.image_size, arch_.image_size}) {
      throw ShapeError("fusion model: image batch shape " + shape_string(batch.images.shape()));
    }
    Var x = tape.leaf(batch.images);
    for (const auto& [kernels, bias] : conv) x = ad::max_pool(ad::relu(ad::conv2d(x, kernels, bias)), arch_.pool_window);
    image = ad::relu(ad::add(ad::matmul(ad::flatten(x), proj_w), proj_b));
  }

  std::vector<Var> parts;
  parts.push_back(tape.leaf(Tensor(Shape{n, batch.continuous.cols}, batch.continuous.data)));
  for (std::size_t k = 0; k < tables.size(); ++k) parts.push_back(ad::embedding(tables[k], batch.categorical.at(k)));
  parts.push_back(image);
  Var x0 = ad::concat(parts);

  Var xl = x0;
  for (std::size_t i = 0; i < params_.cross_layers.size(); ++i) {
    Var w = next();
    Var b = next();
    xl = ad::add(ad::add(ad::outer_scale(x0, ad::inner(xl, w)), b), xl);
  }
  Var h = x0;
  for (std::size_t i = 0; i < params_.deep_layers.size(); ++i) {
    Var w = next();
    Var b = next();
    h = ad::relu(ad::add(ad::matmul(h, w), b));
  }
  Var z = ad::concat({xl, h});
  Var w24 = next();
  Var b24 = next();
  Var w72 = next();
  Var b72 = next();
  return Outputs{ad::sigmoid(ad::add(ad::matmul(z, w24), b24)), ad::sigmoid(ad::add(ad::matmul(z, w72), b72))};
}

std::vector<double> FusionModel::encode_image(const ChestImage& image) const {
  const ChestImage* one[] = {&image};
  const DenseMatrix m = encode_images(one);
  return std::vector<double>(m.data.begin(), m.data.end());
}

DenseMatrix FusionModel::encode_images(std::span<const ChestImage* const> images) const {
  const std::size_t side = arch_.image_size;
  DenseMatrix out(images.size(), schema_.image_feature_dim);
  for (std::size_t start = 0; start < images.size(); start += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, images.size() - start);
    Tensor batch(Shape{n, 1, side, side});
    for (std::size_t i = 0; i < n; ++i) {
      const ChestImage* img = images[start + i];
      if (img == nullptr) throw ContractError("fusion model: missing image");
      check_image(*img);
      std::copy(img->image.pixels.begin(), img->image.pixels.end(),
                batch.data().begin() + static_cast<std::ptrdiff_t>(i * side * side));
    }
    Tape tape;
    std::vector<Var> bound;
    for (const Tensor* t : params_.tensors()) bound.push_back(tape.leaf(*t));
    std::size_t cursor = params_.embeddings.size();
    Var x = tape.leaf(std::move(batch));
    for (std::size_t k = 0; k < params_.conv_encoder.size(); ++k, cursor += 2) {
      x = ad::max_pool(ad::relu(ad::conv2d(x, bound[cursor], bound[cursor + 1])), arch_.pool_window);
    }
    Var f = ad::relu(ad::add(ad::matmul(ad::flatten(x), bound[cursor]), bound[cursor + 1]));
    std::copy(f.value().data().begin(), f.value().data().end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(start * schema_.image_feature_dim));
  }
  return out;
}

std::pair<double, double> FusionModel::forward(const EhrInput& record, const ChestImage* image) const {
  if (image == nullptr) {
    throw ContractError("fusion model: no image; image-less patients are scored by the forest");
  }
  check_record(record);
  const std::vector<double> features = encode_image(*image);
  const std::vector<double> x0 =
      stack_input(record, std::span<const double>(features), schema_, standardization_, params_);
  std::vector<double> xl = x0;
  for (const auto& layer : params_.cross_layers) xl = cross_layer(x0, xl, layer);
  std::vector<double> h = x0;
  for (const auto& layer : params_.deep_layers) {
    h = dense(h, layer);
    for (double& v : h) v = v > 0.0 ? v : 0.0;
  }
  std::vector<double> z = xl;
  z.insert(z.end(), h.begin(), h.end());
  return {stable_sigmoid(dense(z, params_.head_24h)[0]), stable_sigmoid(dense(z, params_.head_72h)[0])};
}

FusionBatch FusionModel::make_batch(std::span<const EhrInput> records, std::span<const ChestImage* const> images,
                                    std::span<const double> label_24h, std::span<const double> label_72h) const {
  const std::size_t n = records.size();
  if (!images.empty() && images.size() != n) throw ShapeError("fusion batch: image count differs from record count");
  if ((!label_24h.empty() && label_24h.size() != n) || (!label_72h.empty() && label_72h.size() != n)) {
    throw ShapeError("fusion batch: label count differs from record count");
  }
  FusionBatch b;
  const std::size_t nc = schema_.continuous_features.size();
  b.continuous = DenseMatrix(n, nc);
  b.categorical.assign(schema_.categorical_features.size(), std::vector<int>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    check_record(records[i]);
    for (std::size_t c = 0; c < nc; ++c) b.continuous.at(i, c) = standardization_.apply(c, records[i].continuous[c]);
    for (std::size_t k = 0; k < b.categorical.size(); ++k) b.categorical[k][i] = records[i].categorical[k];
  }
  if (!images.empty()) {
    const std::size_t side = arch_.image_size;
    b.images = Tensor(Shape{n, 1, side, side});
    for (std::size_t i = 0; i < n; ++i) {
      if (images[i] == nullptr) throw ContractError("fusion batch: missing image");
      check_image(*images[i]);
      std::copy(images[i]->image.pixels.begin(), images[i]->image.pixels.end(),
                b.images.data().begin() + static_cast<std::ptrdiff_t>(i * side * side));
    }
  }
  b.label_24h.assign(label_24h.begin(), label_24h.end());
  b.label_72h.assign(label_72h.begin(), label_72h.end());
  if (b.label_24h.empty()) b.label_24h.assign(n, 0.0);
  if (b.label_72h.empty()) b.label_72h.assign(n, 0.0);
  return b;
}

std::vector<std::pair<double, double>> FusionModel::predict(std::span<const EhrInput> records,
                                                            const DenseMatrix& image_features) const {
  if (image_features.rows != records.size()) throw ShapeError("fusion predict: image feature rows differ from records");
  std::vector<std::pair<double, double>> out;
  out.reserve(records.size());
  for (std::size_t start = 0; start < records.size(); start += kInferenceChunk) {
    const std::size_t n = std::min(kInferenceChunk, records.size() - start);
    FusionBatch batch = make_batch(records.subspan(start, n), {}, {}, {});
    DenseMatrix f(n, image_features.cols);
    std::copy_n(image_features.data.begin() + static_cast<std::ptrdiff_t>(start * image_features.cols),
                n * image_features.cols, f.data.begin());
    batch.image_features = std::move(f);
    Tape tape;
    std::vector<Var> bound;
    const Outputs y = build_graph(tape, batch, bound);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(y.y24.value()[i], y.y72.value()[i]);
  }
  return out;
}

double FusionModel::loss(const FusionBatch& batch, FusionModelParams* grads) const {
  const std::size_t n = batch.size();
  if (n == 0) throw ShapeError("fusion loss: empty batch");
  if (batch.label_24h.size() != n || batch.label_72h.size() != n) throw ShapeError("fusion loss: label count");
  Tape tape;
  std::vector<Var> bound;
  const Outputs y = build_graph(tape, batch, bound);
  Var t24 = tape.leaf(Tensor(Shape{n, 1}, batch.label_24h));
  Var t72 = tape.leaf(Tensor(Shape{n, 1}, batch.label_72h));
  Var total = ad::add(ad::mean_sq_error(y.y24, t24), ad::mean_sq_error(y.y72, t72));
  const double value = total.value().item();
  if (grads != nullptr) {
    tape.backward(total);
    *grads = params_;
    auto targets = grads->tensors();
    for (std::size_t i = 0; i < targets.size(); ++i) *targets[i] = bound[i].grad();
  }
  return value;
}

void FusionModel::save(BinaryWriter& out) const {
  out.put_raw("FUSN");
  out.put(kFusionVersion);
  out.put_u64(schema_.continuous_features.size());
  for (const auto& n : schema_.continuous_features) out.put_string(n);
  out.put_u64(schema_.categorical_features.size());
  for (const auto& c : schema_.categorical_features) {
    out.put_string(c.name);
    out.put<std::int32_t>(c.cardinality);
    out.put_u64(c.embedding_dim);
  }
  out.put_u64(schema_.image_feature_dim);

  out.put_u64(arch_.image_size);
  out.put_vector(std::vector<std::uint64_t>(arch_.conv_channels.begin(), arch_.conv_channels.end()));
  out.put_u64(arch_.kernel_size);
  out.put_u64(arch_.pool_window);
  out.put_u64(arch_.cross_layers);
  out.put_vector(std::vector<std::uint64_t>(arch_.deep_layers.begin(), arch_.deep_layers.end()));

  out.put_vector(standardization_.mean);
  out.put_vector(standardization_.sd);

  const auto tensors = params_.tensors();
  out.put_u64(tensors.size());
  for (const Tensor* t : tensors) put_tensor(out, *t);
}

FusionModel FusionModel::load(BinaryReader& in) {
  in.expect_tag("FUSN");
  const auto version = in.get<std::uint32_t>();
  if (version != kFusionVersion) throw BundleError("fusion model: unsupported version " + std::to_string(version));
  FeatureSchema schema;
  const std::size_t nc = in.get_size(1 << 16);
  for (std::size_t i = 0; i < nc; ++i) schema.continuous_features.push_back(in.get_string());
  const std::size_t nk = in.get_size(1 << 16);
  for (std::size_t i = 0; i < nk; ++i) {
    CategoricalFeature c;
    c.name = in.get_string();
    c.cardinality = in.get<std::int32_t>();
    c.embedding_dim = in.get_size(1 << 16);
    schema.categorical_features.push_back(std::move(c));
  }
  schema.image_feature_dim = in.get_size(1 << 16);

  FusionArchitecture arch;
  arch.image_size = in.get_size(1 << 16);
  const auto conv = in.get_vector<std::uint64_t>();
  arch.conv_channels.assign(conv.begin(), conv.end());
  arch.kernel_size = in.get_size(1 << 16);
  arch.pool_window = in.get_size(1 << 16);
  arch.cross_layers = in.get_size(1 << 16);
  const auto deep = in.get_vector<std::uint64_t>();
  arch.deep_layers.assign(deep.begin(), deep.end());

  Standardization standardization;
  standardization.mean = in.get_vector<double>();
  standardization.sd = in.get_vector<double>();

  FusionModelParams params;
  try {
    params = FusionModelParams::zeros(schema, arch);
  } catch (const Error& e) {
    throw BundleError(std::string("fusion model: invalid stored schema: ") + e.what());
  }
  auto targets = params.tensors();
  if (in.get_size(1 << 20) != targets.size()) throw BundleError("fusion model: parameter tensor count mismatch");
  for (Tensor* t : targets) {
    Tensor loaded = get_tensor(in);
    if (loaded.shape() != t->shape()) throw BundleError("fusion model: parameter shape mismatch");
    *t = std::move(loaded);
  }
  return FusionModel(std::move(schema), std::move(arch), std::move(standardization), std::move(params));
}

namespace {

struct Adam {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  void update(FusionModelParams& params, const FusionModelParams& grads, const FusionTrainConfig& cfg) {
    auto p = params.tensors();
    auto g = grads.tensors();
    if (m.empty()) {
      for (const Tensor* t : p) {
        m.emplace_back(t->shape(), 0.0);
        v.emplace_back(t->shape(), 0.0);
      }
    }
    ++step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t k = 0; k < p.size(); ++k) {
      Tensor& pk = *p[k];
      const Tensor& gk = *g[k];
      for (std::size_t i = 0; i < pk.size(); ++i) {
        m[k][i] = cfg.beta1 * m[k][i] + (1.0 - cfg.beta1) * gk[i];
        v[k][i] = cfg.beta2 * v[k][i] + (1.0 - cfg.beta2) * gk[i] * gk[i];
        pk[i] -= cfg.learning_rate * (m[k][i] / c1) / (std::sqrt(v[k][i] / c2) + cfg.epsilon);
      }
    }
  }
};

FusionBatch batch_of(const FusionModel& model, std::span<const FusionExample> data,
                     std::span<const std::size_t> indices) {
  std::vector<EhrInput> records;
  std::vector<const ChestImage*> images;
  std::vector<double> l24, l72;
  for (std::size_t i : indices) {
    records.push_back(data[i].ehr);
    images.push_back(&data[i].image);
    l24.push_back(data[i].label_24h);
    l72.push_back(data[i].label_72h);
  }
  return model.make_batch(records, images, l24, l72);
}

}  // namespace

FusionTrainResult train_fusion_model(std::span<const FusionExample> train, std::span<const FusionExample> validation,
                                     const FeatureSchema& schema, const FusionTrainConfig& config,
                                     std::uint64_t seed) {
  if (train.empty()) throw TrainingError("fusion training: empty training set");
  if (validation.empty()) throw TrainingError("fusion training: empty validation set");
  if (config.batch_size == 0) throw ConfigError("fusion training: batch_size must be positive");
  if (!(config.learning_rate > 0.0)) throw ConfigError("fusion training: learning_rate must be positive");

  DenseMatrix continuous(train.size(), schema.continuous_features.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train[i].ehr.continuous.size() != continuous.cols) throw ShapeError("fusion training: record does not match schema");
    std::copy(train[i].ehr.continuous.begin(), train[i].ehr.continuous.end(), continuous.row(i).begin());
  }
  FusionModel model(schema, config.architecture, Standardization::fit(continuous),
                    FusionModelParams::initialize(schema, config.architecture, derive_seed(seed, "init")));

  std::vector<FusionBatch> val_batches;
  for (std::size_t start = 0; start < validation.size(); start += config.batch_size) {
    const std::size_t n = std::min(config.batch_size, validation.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    val_batches.push_back(batch_of(model, validation, idx));
  }
  auto validation_loss = [&]() {
    double total = 0.0;
    for (const auto& b : val_batches) total += model.loss(b) * static_cast<double>(b.size());
    return total / static_cast<double>(validation.size());
  };

  FusionTrainResult result;
  result.initial_val_loss = validation_loss();
  if (!std::isfinite(result.initial_val_loss)) throw TrainingError("fusion training: non-finite initial validation loss");
  result.best_val_loss = result.initial_val_loss;
  FusionModelParams best = model.params();

  Adam adam;
  FusionModelParams grads;
  std::vector<std::size_t> order(train.size());
  std::size_t since_best = 0;
  const std::uint64_t shuffle_seed = derive_seed(seed, "shuffle");
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(shuffle_seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      const FusionBatch batch = batch_of(model, train, std::span<const std::size_t>(order).subspan(start, n));
      const double l = model.loss(batch, &grads);
      if (!std::isfinite(l)) {
        throw TrainingError("fusion training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batch_index));
      }
      for (const Tensor* g : grads.tensors()) {
        for (double x : g->data()) {
          if (!std::isfinite(x)) {
            throw TrainingError("fusion training diverged: non-finite gradient at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(batch_index));
          }
        }
      }
      adam.update(model.params(), grads, config);
      epoch_loss += l * static_cast<double>(n);
    }
    result.train_loss_history.push_back(epoch_loss / static_cast<double>(train.size()));
    const double vl = validation_loss();
    if (!std::isfinite(vl)) {
      throw TrainingError("fusion training diverged: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.val_loss_history.push_back(vl);
    result.epochs_run = epoch;
    if (vl < result.best_val_loss) {
      result.best_val_loss = vl;
      result.best_epoch = epoch;
      best = model.params();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.params() = std::move(best);
  result.model = std::move(model);
  return result;
}

}  // namespace corisk
