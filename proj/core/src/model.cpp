#include "powq/model.hpp"

#include <cmath>

namespace powq {

std::string activation_name(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kIdentity: return "identity";
    case ActivationKind::kRelu: return "relu";
    case ActivationKind::kSilu: return "silu";
    case ActivationKind::kGelu: return "gelu";
  }
  return "identity";
}

ActivationKind activation_from_name(const std::string &name) {
  if (name == "identity") return ActivationKind::kIdentity;
  if (name == "relu") return ActivationKind::kRelu;
  if (name == "silu") return ActivationKind::kSilu;
  if (name == "gelu") return ActivationKind::kGelu;
  throw ValidationError("unknown activation '" + name + "'", "activation");
}

double apply_activation(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::kIdentity:
      return x;
    case ActivationKind::kRelu:
      return x > 0.0 ? x : 0.0;
    case ActivationKind::kSilu:
      return x / (1.0 + std::exp(-x));
    case ActivationKind::kGelu:
      return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
  }
  return x;
}

Tensor apply_activation(ActivationKind kind, const Tensor &t) {
  if (kind == ActivationKind::kIdentity) return t;
  return map(t, [kind](double x) { return apply_activation(kind, x); });
}

const Tensor &LayerSpec::weights() const {
  if (is_dense()) return std::get<DenseLayer>(kind).weights;
  if (is_conv()) return std::get<Conv2dLayer>(kind).kernel;
  throw StructureError("batchnorm layer has no weight tensor");
}

Tensor &LayerSpec::weights() {
  return const_cast<Tensor &>(std::as_const(*this).weights());
}

const Tensor &LayerSpec::bias() const {
  if (is_dense()) return std::get<DenseLayer>(kind).bias;
  if (is_conv()) return std::get<Conv2dLayer>(kind).bias;
  throw StructureError("batchnorm layer has no bias tensor");
}

Tensor &LayerSpec::bias() {
  return const_cast<Tensor &>(std::as_const(*this).bias());
}

std::size_t LayerSpec::out_channels() const {
  return weights().shape()[0];
}

std::size_t Model::weight_layer_count() const {
  std::size_t n = 0;
  for (const auto &l : layers) n += l.has_weights() ? 1 : 0;
  return n;
}

std::vector<std::size_t> Model::weight_layer_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].has_weights()) out.push_back(i);
  }
  return out;
}

void Model::validate() const {
  if (weight_layer_count() < 1) {
    throw ValidationError("model needs at least one weight-bearing layer",
                          "layers");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto &l = layers[i];
    if (l.is_dense()) {
      const auto &d = std::get<DenseLayer>(l.kind);
      if (d.weights.rank() != 2) {
        throw ValidationError("dense weights must be rank 2 at layer " +
                                  std::to_string(i),
                              "layers[" + std::to_string(i) + "].weights");
      }
      if (d.bias.size() != d.weights.shape()[0]) {
        throw ValidationError("bias extent must equal output extent at layer " +
                                  std::to_string(i),
                              "layers[" + std::to_string(i) + "].bias");
      }
    } else if (l.is_conv()) {
      const auto &c = std::get<Conv2dLayer>(l.kind);
      if (c.kernel.rank() != 4) {
        throw ValidationError("conv kernel must be rank 4 at layer " +
                                  std::to_string(i),
                              "layers[" + std::to_string(i) + "].kernel");
      }
      if (c.bias.size() != c.kernel.shape()[0]) {
        throw ValidationError("bias extent must equal output channels at layer " +
                                  std::to_string(i),
                              "layers[" + std::to_string(i) + "].bias");
      }
    } else {
      const auto &bn = std::get<BatchNormLayer>(l.kind);
      const std::size_t c = bn.gamma.size();
      if (bn.beta.size() != c || bn.mean.size() != c || bn.var.size() != c) {
        throw ValidationError("batchnorm parameter extents disagree at layer " +
                                  std::to_string(i),
                              "layers[" + std::to_string(i) + "]");
      }
      for (double v : bn.var.data()) {
        if (v < 0.0) {
          throw ValidationError("batchnorm variance must be non-negative",
                                "layers[" + std::to_string(i) + "].var");
        }
      }
    }
  }
}

Tensor Dataset::row(std::size_t i) const {
  const std::size_t d = feature_dim();
  std::vector<double> v(d);
  for (std::size_t j = 0; j < d; ++j) v[j] = features[i * d + j];
  return Tensor::vector(std::move(v));
}

void Dataset::validate() const {
  if (features.rank() != 2) {
    throw ValidationError("dataset features must be rank 2", "features");
  }
  if (features.shape()[0] != labels.size()) {
    throw ValidationError("feature row count does not match label count",
                          "labels");
  }
  for (int l : labels) {
    if (l < 0 || l >= class_count) {
      throw ValidationError("label " + std::to_string(l) +
                                " outside [0, class_count)",
                            "labels");
    }
  }
}

namespace {

Tensor dense_apply(const DenseLayer &d, const Tensor &input) {
  const std::size_t out = d.weights.shape()[0], in = d.weights.shape()[1];
  if (input.size() != in) {
    throw DimensionError("dense layer expects " + std::to_string(in) +
                         " inputs, got " + shape_to_string(input.shape()));
  }
  std::vector<double> y(out);
  for (std::size_t i = 0; i < out; ++i) {
    double acc = d.bias[i];
    for (std::size_t j = 0; j < in; ++j) acc += d.weights[i * in + j] * input[j];
    y[i] = acc;
  }
  return Tensor::vector(std::move(y));
}

Tensor conv_apply(const Conv2dLayer &c, const Tensor &input) {
  Tensor y = conv2d(input, c.kernel, c.stride, c.padding);
  const std::size_t c_out = y.shape()[0];
  const std::size_t plane = y.size() / c_out;
  for (std::size_t oc = 0; oc < c_out; ++oc) {
    for (std::size_t p = 0; p < plane; ++p) y[oc * plane + p] += c.bias[oc];
  }
  return y;
}

Tensor batchnorm_apply(const BatchNormLayer &bn, const Tensor &input) {
  const std::size_t c = bn.gamma.size();
  if (input.size() % c != 0 || input.shape()[0] != c) {
    throw DimensionError("batchnorm over " + std::to_string(c) +
                         " channels cannot apply to " +
                         shape_to_string(input.shape()));
  }
  const std::size_t plane = input.size() / c;
  std::vector<double> y(input.size());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / std::sqrt(bn.var[ch] + kBatchNormEpsilon);
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = ch * plane + p;
      y[i] = (input[i] - bn.mean[ch]) * inv * bn.gamma[ch] + bn.beta[ch];
    }
  }
  return Tensor(input.shape(), std::move(y));
}

// Dense layers accept any input with a matching element count; this is the
// implicit flatten between a conv stack and a dense head.
Tensor maybe_flatten(const Tensor &t, const LayerSpec &next) {
  if (next.is_dense() && t.rank() != 1) {
    return Tensor({t.size()}, t.data());
  }
  return t;
}

}  // namespace

Tensor forward_float(const Model &model, const Tensor &input) {
  if (input.shape() != model.input_shape) {
    throw DimensionError("input shape " + shape_to_string(input.shape()) +
                         " does not match model input " +
                         shape_to_string(model.input_shape));
  }
  Tensor x = input;
  for (const auto &layer : model.layers) {
    x = maybe_flatten(x, layer);
    if (layer.is_dense()) {
      x = dense_apply(std::get<DenseLayer>(layer.kind), x);
    } else if (layer.is_conv()) {
      x = conv_apply(std::get<Conv2dLayer>(layer.kind), x);
    } else {
      x = batchnorm_apply(std::get<BatchNormLayer>(layer.kind), x);
    }
    x = apply_activation(layer.activation, x);
  }
  return x;
}

Model fold_batchnorm(const Model &model) {
  Model out;
  out.input_shape = model.input_shape;
  for (const auto &layer : model.layers) {
    if (!layer.is_batchnorm()) {
      out.layers.push_back(layer);
      continue;
    }
    if (out.layers.empty() || !out.layers.back().has_weights()) {
      throw StructureError(
          "batchnorm layer has no dense/conv predecessor to fold into");
    }
    LayerSpec &prev = out.layers.back();
    if (prev.activation != ActivationKind::kIdentity) {
      throw StructureError(
          "cannot fold batchnorm: predecessor applies a non-identity "
          "activation before normalization");
    }
    const auto &bn = std::get<BatchNormLayer>(layer.kind);
    const std::size_t c = bn.gamma.size();
    if (prev.out_channels() != c) {
      throw StructureError("batchnorm channel count does not match "
                           "predecessor output channels");
    }
    Tensor &w = prev.weights();
    Tensor &b = prev.bias();
    const std::size_t per_channel = w.size() / c;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double g =
          bn.gamma[ch] / std::sqrt(bn.var[ch] + kBatchNormEpsilon);
      for (std::size_t j = 0; j < per_channel; ++j) {
        w[ch * per_channel + j] *= g;
      }
      b[ch] = (b[ch] - bn.mean[ch]) * g + bn.beta[ch];
    }
    prev.activation = layer.activation;
  }
  return out;
}

std::size_t argmax_lowest(const Tensor &logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

double accuracy(const Model &model, const Dataset &dataset) {
  dataset.validate();
  const std::size_t want = shape_numel(model.input_shape);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Tensor row = dataset.row(i);
    if (row.size() == want && row.shape() != model.input_shape) {
      row = Tensor(model.input_shape, row.data());
    }
    const Tensor logits = forward_float(model, row);
    if (argmax_lowest(logits) == static_cast<std::size_t>(dataset.labels[i])) {
      ++hits;
    }
  }
  return dataset.size() ? static_cast<double>(hits) / dataset.size() : 0.0;
}

}  // namespace powq
