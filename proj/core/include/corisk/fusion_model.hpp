#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "corisk/autodiff.hpp"
#include "corisk/forest.hpp"
#include "corisk/image.hpp"
#include "corisk/serialize.hpp"

namespace corisk {

struct CategoricalFeature {
  std::string name;
  int cardinality = 2;
  std::size_t embedding_dim = 1;
};

// Fixes the stacking order of x0: standardized continuous values, then one
// embedding per categorical feature, then the image feature vector.
struct FeatureSchema {
  std::vector<std::string> continuous_features;
  std::vector<CategoricalFeature> categorical_features;
  std::size_t image_feature_dim = 16;

  std::size_t embedding_width() const;
  std::size_t input_dim() const;
  void validate() const;  // throws ContractError

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};
bool operator==(const CategoricalFeature& a, const CategoricalFeature& b);

// ceil(sqrt(cardinality)), capped at 8.
std::size_t default_embedding_dim(int cardinality);

struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;  // zero-variance columns get sd = 1

  static Standardization fit(const DenseMatrix& continuous);
  double apply(std::size_t column, double value) const { return (value - mean[column]) / sd[column]; }
};

struct FusionArchitecture {
  std::size_t image_size = 32;  // square model input
  std::vector<std::size_t> conv_channels = {4, 8};
  std::size_t kernel_size = 3;
  std::size_t pool_window = 2;
  std::size_t cross_layers = 3;
  std::vector<std::size_t> deep_layers = {64, 64};

  // Width of the flattened conv output feeding the image projection.
  std::size_t conv_output_width() const;
  void validate() const;  // throws ConfigError
};

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct ConvLayer {
  Tensor kernels;  // [out_channels, in_channels, k, k]
  Tensor bias;     // [out_channels]
};

struct CrossLayerParams {
  Tensor w;  // [d]
  Tensor b;  // [d]
};

struct FusionModelParams {
  std::vector<Tensor> embeddings;  // [cardinality, dim] per categorical feature
  std::vector<ConvLayer> conv_encoder;
  DenseLayer image_projection;
  std::vector<CrossLayerParams> cross_layers;
  std::vector<DenseLayer> deep_layers;
  DenseLayer head_24h;
  DenseLayer head_72h;

  // Every parameter tensor, in a fixed order shared with tensor_names().
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  std::vector<std::string> tensor_names() const;
  std::size_t parameter_count() const;

  static FusionModelParams initialize(const FeatureSchema& schema, const FusionArchitecture& arch,
                                      std::uint64_t seed);
  static FusionModelParams zeros(const FeatureSchema& schema, const FusionArchitecture& arch);
};

// Completed EHR features of one patient: raw continuous values and category
// indices, both in schema order.
struct EhrInput {
  std::vector<double> continuous;
  std::vector<int> categorical;
};

std::vector<double> stack_input(const EhrInput& record, std::optional<std::span<const double>> image_features,
                                const FeatureSchema& schema, const Standardization& standardization,
                                const FusionModelParams& params);

// x0 * (xl . w) + b + xl
std::vector<double> cross_layer(std::span<const double> x0, std::span<const double> xl,
                                const CrossLayerParams& p);

// Minibatch in graph form. Continuous values are already standardized.
struct FusionBatch {
  DenseMatrix continuous;                    // [B, n_continuous]
  std::vector<std::vector<int>> categorical;  // [n_categorical][B]
  Tensor images;                             // [B, 1, H, W]; unused when image_features is set
  std::optional<DenseMatrix> image_features;  // [B, image_feature_dim], bypasses the encoder
  std::vector<double> label_24h;
  std::vector<double> label_72h;

  std::size_t size() const { return continuous.rows; }
};

class FusionModel {
 public:
  FusionModel() = default;
  FusionModel(FeatureSchema schema, FusionArchitecture arch, Standardization standardization,
              FusionModelParams params);

  // Single record. Throws ContractError when image is null: image-less
  // patients belong to the forest path.
  std::pair<double, double> forward(const EhrInput& record, const ChestImage* image) const;

  std::vector<double> encode_image(const ChestImage& image) const;
  // Batched image encoder output, [n, image_feature_dim].
  DenseMatrix encode_images(std::span<const ChestImage* const> images) const;
  // Batched prediction from cached image features.
  std::vector<std::pair<double, double>> predict(std::span<const EhrInput> records,
                                                 const DenseMatrix& image_features) const;

  // Mean over the batch of squared error at both horizons. If grads is
  // given it receives dLoss/dParam with the layout of params().
  double loss(const FusionBatch& batch, FusionModelParams* grads = nullptr) const;

  FusionBatch make_batch(std::span<const EhrInput> records, std::span<const ChestImage* const> images,
                         std::span<const double> label_24h, std::span<const double> label_72h) const;

  const FeatureSchema& schema() const { return schema_; }
  const FusionArchitecture& architecture() const { return arch_; }
  const Standardization& standardization() const { return standardization_; }
  const FusionModelParams& params() const { return params_; }
  FusionModelParams& params() { return params_; }

  void save(BinaryWriter& out) const;
  static FusionModel load(BinaryReader& in);

 private:
  struct Outputs {
    Var y24;
    Var y72;
  };
  Outputs build_graph(Tape& tape, const FusionBatch& batch, std::vector<Var>& bound) const;
  void check_record(const EhrInput& record) const;
  void check_image(const ChestImage& image) const;

  FeatureSchema schema_;
  FusionArchitecture arch_;
  Standardization standardization_;
  FusionModelParams params_;
};

struct FusionExample {
  EhrInput ehr;
  ChestImage image;
  double label_24h = 0.0;
  double label_72h = 0.0;
};

struct FusionTrainConfig {
  FusionArchitecture architecture;
  std::size_t max_epochs = 60;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience = 10;
};

struct FusionTrainResult {
  FusionModel model;  // parameters from the best validation epoch
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 0: the initial parameters
  double initial_val_loss = 0.0;
  double best_val_loss = 0.0;
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;
};

FusionTrainResult train_fusion_model(std::span<const FusionExample> train, std::span<const FusionExample> validation,
                                     const FeatureSchema& schema, const FusionTrainConfig& config,
                                     std::uint64_t seed);

}  // namespace corisk
