#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "powq/tensor.hpp"

namespace powq {

enum class ActivationKind { kIdentity, kRelu, kSilu, kGelu };

std::string activation_name(ActivationKind kind);
ActivationKind activation_from_name(const std::string &name);

/// silu(x) = x * sigmoid(x); gelu is the exact Gaussian-CDF form.
double apply_activation(ActivationKind kind, double x);
Tensor apply_activation(ActivationKind kind, const Tensor &t);

inline constexpr double kBatchNormEpsilon = 1e-5;

struct DenseLayer {
  Tensor weights;  // [out x in]
  Tensor bias;     // [out]
};

struct Conv2dLayer {
  Tensor kernel;  // [C_out x C_in x kh x kw]
  Tensor bias;    // [C_out]
  std::size_t stride = 1;
  Padding padding = Padding::kValid;
};

struct BatchNormLayer {
  Tensor gamma;  // [c]
  Tensor beta;   // [c]
  Tensor mean;   // [c]
  Tensor var;    // [c], elementwise >= 0
};

/// One layer of a feed-forward model. The activation is applied after the
/// layer's own transform; batch-norm layers normally carry kIdentity and
/// hand their activation to the preceding dense/conv when folded.
struct LayerSpec {
  std::variant<DenseLayer, Conv2dLayer, BatchNormLayer> kind;
  ActivationKind activation = ActivationKind::kIdentity;

  bool is_dense() const { return std::holds_alternative<DenseLayer>(kind); }
  bool is_conv() const { return std::holds_alternative<Conv2dLayer>(kind); }
  bool is_batchnorm() const {
    return std::holds_alternative<BatchNormLayer>(kind);
  }
  bool has_weights() const { return is_dense() || is_conv(); }

  /// Weight tensor of a dense/conv layer (throws for batchnorm).
  const Tensor &weights() const;
  Tensor &weights();
  const Tensor &bias() const;
  Tensor &bias();
  /// Output-channel count of a dense/conv layer.
  std::size_t out_channels() const;
};

struct Model {
  std::vector<LayerSpec> layers;
  std::vector<std::size_t> input_shape;

  /// Number of weight-bearing (dense/conv) layers.
  std::size_t weight_layer_count() const;
  /// Indices of weight-bearing layers, in order.
  std::vector<std::size_t> weight_layer_indices() const;

  void validate() const;
};

struct Dataset {
  Tensor features;  // [n x d]
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t feature_dim() const {
    return features.rank() == 2 ? features.shape()[1] : 0;
  }
  Tensor row(std::size_t i) const;
  void validate() const;
};

/// Runs the model on one input: each layer's transform, then its
/// activation. Batch-norm applies (x - mean) / sqrt(var + eps) * gamma +
/// beta per channel.
Tensor forward_float(const Model &model, const Tensor &input);

/// Absorbs every batch-norm layer into the immediately preceding
/// dense/conv layer: W' = W * g, b' = (b - mean) * g + beta with
/// g = gamma / sqrt(var + eps), per output channel. The folded layer
/// adopts the batch-norm's activation; the predecessor must carry
/// kIdentity so nothing sits between its output and the normalization.
Model fold_batchnorm(const Model &model);

/// Fraction of rows whose argmax output equals the label; ties break
/// toward the lowest class index.
double accuracy(const Model &model, const Dataset &dataset);

/// Argmax with ties toward the lowest index.
std::size_t argmax_lowest(const Tensor &logits);

}  // namespace powq
