#include "powq/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace powq {

std::string act_policy_name(ActRangePolicy::Kind kind) {
  return kind == ActRangePolicy::Kind::kBnStats ? "bn-stats" : "dynamic";
}

ActRangePolicy::Kind act_policy_from_name(const std::string &name) {
  if (name == "bn-stats" || name == "bn_stats") {
    return ActRangePolicy::Kind::kBnStats;
  }
  if (name == "dynamic") return ActRangePolicy::Kind::kDynamic;
  throw ValidationError("unknown activation range policy '" + name + "'",
                        "act_policy");
}

std::string accumulation_name(AccumulationMode mode) {
  return mode == AccumulationMode::kPreAccumulation ? "pre" : "post";
}

AccumulationMode accumulation_from_name(const std::string &name) {
  if (name == "pre" || name == "pre_accumulation") {
    return AccumulationMode::kPreAccumulation;
  }
  if (name == "post" || name == "post_accumulation") {
    return AccumulationMode::kPostAccumulation;
  }
  throw ValidationError("unknown accumulation mode '" + name + "'",
                        "accumulation");
}

double activation_lower_bound(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::kIdentity:
    case ActivationKind::kRelu:
      return 0.0;
    case ActivationKind::kSilu:
      return 0.27846;
    case ActivationKind::kGelu:
      return 0.169971;
  }
  return 0.0;
}

void IntPowConfig::validate() const {
  if (iterations < 1 || iterations > 8) {
    throw DomainError("int power iterations must lie in [1, 8]");
  }
  if (fraction_bits < 4 || fraction_bits > 30) {
    throw DomainError("fraction_bits must lie in [4, 30]");
  }
}

namespace {

using u128 = unsigned __int128;

// Integer sqrt of v (64-bit) seeded from the bit length plus one averaging
// correction, then exactly `iterations` Newton steps.
std::uint64_t newton_isqrt(std::uint64_t v, int iterations) {
  if (v == 0) return 0;
  const int bits = std::bit_width(v);
  std::uint64_t y = std::uint64_t{1} << ((bits + 1) / 2);
  y = (y + v / y) / 2;  // seed refinement
  for (int i = 0; i < iterations; ++i) {
    const std::uint64_t next = (y + v / y) / 2;
    y = next;
  }
  return y;
}

}  // namespace

FixedPoint int_power_newton(std::uint32_t code, double exponent_inv,
                            IntPowConfig cfg) {
  cfg.validate();
  if (exponent_inv < 0.25 || exponent_inv > 10.0) {
    throw DomainError("exponent_inv must lie in [0.25, 10]");
  }
  const int frac = cfg.fraction_bits;
  const std::int64_t one = std::int64_t{1} << frac;
  FixedPoint result{0, frac};
  if (code == 0) return result;

  // Split the exponent into integer and binary-fraction parts. Only the
  // split itself uses floating point; everything after is integer-only.
  std::int64_t m = static_cast<std::int64_t>(std::floor(exponent_inv));
  std::int64_t f_fixed = static_cast<std::int64_t>(
      std::llround((exponent_inv - static_cast<double>(m)) *
                   static_cast<double>(one)));
  if (f_fixed >= one) {
    m += 1;
    f_fixed = 0;
  }

  const std::int64_t limit = std::int64_t{1} << 62;
  auto fixmul = [&](std::int64_t a, std::int64_t b) -> std::int64_t {
    const u128 p = static_cast<u128>(a) * static_cast<u128>(b);
    const u128 shifted = p >> frac;
    if (shifted > static_cast<u128>(limit)) {
      throw RangeError("fixed-point accumulator overflow; widen "
                       "fraction_bits or reduce the exponent");
    }
    return static_cast<std::int64_t>(shifted);
  };

  const std::int64_t base = static_cast<std::int64_t>(code) << frac;
  if (base > limit) {
    throw RangeError("code too large for the configured fixed-point format");
  }

  std::int64_t acc = one;
  for (std::int64_t i = 0; i < m; ++i) acc = fixmul(acc, base);

  if (f_fixed > 0) {
    // x^f via the binary expansion of f: bit k (weight 2^-k) contributes
    // the k-fold square root of the base.
    std::int64_t cur = base;
    for (int k = 1; k <= frac; ++k) {
      const std::uint64_t widened = static_cast<std::uint64_t>(cur) << frac;
      cur = static_cast<std::int64_t>(newton_isqrt(widened, cfg.iterations));
      if ((f_fixed >> (frac - k)) & 1) acc = fixmul(acc, cur);
    }
  }
  result.raw = acc;
  return result;
}

namespace {

// Dense matvec over plain double tensors.
Tensor dense_matvec(const Tensor &weights, const Tensor &input) {
  const std::size_t out = weights.shape()[0], in = weights.shape()[1];
  Tensor x = input;
  if (x.rank() != 1) x = Tensor({x.size()}, x.data());
  if (x.size() != in) {
    throw DimensionError("quantized dense layer expects " +
                         std::to_string(in) + " inputs, got " +
                         shape_to_string(input.shape()));
  }
  std::vector<double> y(out, 0.0);
  for (std::size_t i = 0; i < out; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < in; ++j) acc += weights[i * in + j] * x[j];
    y[i] = acc;
  }
  return Tensor::vector(std::move(y));
}

// The layer's linear map (dense or conv) applied to an arbitrary weight
// tensor; shared by the code path, the dequantized path, and the
// zero-point compensation.
Tensor layer_linear(const QuantizedLayer &layer, const Tensor &weights,
                    const Tensor &input) {
  if (layer.is_conv) {
    return conv2d(input, weights, layer.stride, layer.padding);
  }
  return dense_matvec(weights, input);
}

Tensor codes_as_tensor(const QuantizedTensor &q) {
  std::vector<double> v(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    v[i] = static_cast<double>(q.codes.at(i));
  }
  return Tensor(q.shape, std::move(v));
}

Tensor add_bias_per_channel(Tensor t, const Tensor &bias) {
  const std::size_t c = bias.size();
  const std::size_t plane = t.size() / c;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t p = 0; p < plane; ++p) t[ch * plane + p] += bias[ch];
  }
  return t;
}

// Input ranges and means of every weight layer of `folded` observed while
// running the float model over the calibration rows. The range covers the
// zero-point-shifted input, which is what gets quantized.
struct CalibStats {
  std::vector<double> range;
  std::vector<Tensor> mean;
};

CalibStats calibrate(const Model &folded, const Dataset &calib) {
  const std::size_t layer_count = folded.layers.size();
  CalibStats stats;
  stats.range.assign(layer_count, 0.0);
  stats.mean.resize(layer_count);
  std::vector<std::size_t> counts(layer_count, 0);
  const std::size_t want = shape_numel(folded.input_shape);

  for (std::size_t row = 0; row < calib.size(); ++row) {
    Tensor x = calib.row(row);
    if (x.size() == want && x.shape() != folded.input_shape) {
      x = Tensor(folded.input_shape, x.data());
    }
    for (std::size_t l = 0; l < layer_count; ++l) {
      const LayerSpec &layer = folded.layers[l];
      const double shift =
          l == 0 ? 0.0
                 : activation_lower_bound(folded.layers[l - 1].activation);
      Tensor flat = x;
      if (layer.is_dense() && flat.rank() != 1) {
        flat = Tensor({flat.size()}, flat.data());
      }
      for (std::size_t i = 0; i < flat.size(); ++i) {
        stats.range[l] = std::max(stats.range[l], flat[i] + shift);
      }
      // Per-input-channel mean in the raw (unshifted) domain.
      const std::size_t channels =
          layer.is_conv() ? flat.shape()[0] : flat.size();
      if (stats.mean[l].empty()) stats.mean[l] = Tensor::zeros({channels});
      const std::size_t plane = flat.size() / channels;
      for (std::size_t ch = 0; ch < channels; ++ch) {
        double acc = 0.0;
        for (std::size_t p = 0; p < plane; ++p) acc += flat[ch * plane + p];
        stats.mean[l][ch] += acc / static_cast<double>(plane);
      }
      ++counts[l];

      // Advance through the float layer.
      if (layer.is_dense()) {
        const auto &d = std::get<DenseLayer>(layer.kind);
        Tensor y = dense_matvec(d.weights, flat);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += d.bias[i];
        x = apply_activation(layer.activation, y);
      } else if (layer.is_conv()) {
        const auto &c = std::get<Conv2dLayer>(layer.kind);
        Tensor y = conv2d(x, c.kernel, c.stride, c.padding);
        y = add_bias_per_channel(std::move(y), c.bias);
        x = apply_activation(layer.activation, y);
      } else {
        throw StructureError("calibration expects a folded model");
      }
    }
  }
  for (std::size_t l = 0; l < layer_count; ++l) {
    if (counts[l]) {
      for (std::size_t i = 0; i < stats.mean[l].size(); ++i) {
        stats.mean[l][i] /= static_cast<double>(counts[l]);
      }
    }
  }
  return stats;
}

// Batch-norm parameters feeding each weight layer of the original model:
// entry k corresponds to the k-th weight-bearing layer and is set when the
// layer directly follows a batch-norm.
struct BnProvider {
  bool present = false;
  Tensor beta;
  Tensor gamma;
};

std::vector<BnProvider> bn_providers(const Model &model) {
  std::vector<BnProvider> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (!model.layers[i].has_weights()) continue;
    BnProvider p;
    if (i > 0 && model.layers[i - 1].is_batchnorm()) {
      const auto &bn = std::get<BatchNormLayer>(model.layers[i - 1].kind);
      p.present = true;
      p.beta = bn.beta;
      p.gamma = bn.gamma;
    }
    out.push_back(std::move(p));
  }
  return out;
}

constexpr double kRangeFloor = 1e-6;

}  // namespace

std::vector<double> derive_activation_scales(const Model &model_with_bn,
                                             ActRangePolicy policy, double a,
                                             BitWidth bits_a,
                                             const Dataset *calib,
                                             std::vector<double> *ranges_out) {
  if (!(a > 0.0) || a > 4.0) {
    throw DomainError("activation exponent must lie in (0, 4]");
  }
  const Model folded = fold_batchnorm(model_with_bn);
  const std::vector<BnProvider> providers = bn_providers(model_with_bn);

  CalibStats stats;
  bool have_calib = false;
  if (calib != nullptr) {
    stats = calibrate(folded, *calib);
    have_calib = true;
  }

  std::vector<double> ranges;
  for (std::size_t l = 0; l < folded.layers.size(); ++l) {
    double range = 0.0;
    const bool use_bn = policy.kind == ActRangePolicy::Kind::kBnStats &&
                        providers[l].present;
    if (use_bn) {
      for (std::size_t c = 0; c < providers[l].beta.size(); ++c) {
        range = std::max(range, providers[l].beta[c] +
                                    policy.n_sigma * providers[l].gamma[c]);
      }
    } else if (have_calib) {
      range = stats.range[l];
    } else if (policy.kind == ActRangePolicy::Kind::kBnStats) {
      throw StructureError(
          "no batch-norm statistics feed layer " + std::to_string(l) +
          " and no calibration set was given to fall back on");
    } else {
      throw StructureError(
          "dynamic range policy requires a calibration set");
    }
    ranges.push_back(std::max(range, kRangeFloor));
  }
  if (ranges_out != nullptr) *ranges_out = ranges;

  std::vector<double> scales(ranges.size());
  const int u = bits_a.unsigned_max();
  for (std::size_t l = 0; l < ranges.size(); ++l) {
    scales[l] = std::pow(ranges[l], a) / u;
  }
  return scales;
}

Tensor bias_correction(const Tensor &float_weights,
                       const Tensor &dequantized_weights,
                       const Tensor &input_mean, const Tensor &bias) {
  if (!float_weights.same_shape(dequantized_weights)) {
    throw DimensionError("weight tensors disagree in shape");
  }
  const std::size_t out = float_weights.shape()[0];
  const std::size_t per_out = float_weights.size() / out;
  const std::size_t channels = input_mean.size();
  if (per_out % channels != 0) {
    throw DimensionError("input mean extent " + std::to_string(channels) +
                         " does not divide the layer input extent " +
                         std::to_string(per_out));
  }
  const std::size_t spread = per_out / channels;  // kh*kw for conv, 1 dense
  if (bias.size() != out) {
    throw DimensionError("bias extent does not match output extent");
  }
  std::vector<double> corrected(out);
  for (std::size_t i = 0; i < out; ++i) {
    double gap = 0.0;
    for (std::size_t j = 0; j < per_out; ++j) {
      const std::size_t ch = j / spread;
      gap += (dequantized_weights[i * per_out + j] -
              float_weights[i * per_out + j]) *
             input_mean[ch];
    }
    corrected[i] = bias[i] - gap;
  }
  return Tensor({out}, std::move(corrected));
}

QuantizeResult quantize_model(const Model &model, const QuantizeOptions &opts,
                              const Dataset *calib) {
  model.validate();
  const BitWidth bits_w(opts.bits_w);
  const BitWidth bits_a(opts.bits_a);

  const std::vector<BnProvider> providers = bn_providers(model);
  const Model folded = fold_batchnorm(model);

  // Every folded layer is weight-bearing.
  const std::size_t layer_count = folded.layers.size();

  QuantizeResult result;
  FitReport &fit = result.fit;
  std::vector<double> exponents(layer_count, 1.0);
  if (opts.fixed_exponent.has_value()) {
    std::fill(exponents.begin(), exponents.end(), *opts.fixed_exponent);
    fit.mode = opts.fit_mode;
    fit.solver = opts.solver;
    fit.a_star = {*opts.fixed_exponent};
    fit.epsilon_at_a_star = objective(folded, *opts.fixed_exponent, bits_w,
                                      opts.granularity, opts.norm_p);
    fit.epsilon_at_uniform =
        objective(folded, 1.0, bits_w, opts.granularity, opts.norm_p);
  } else if (opts.scheme == SchemeKind::kPower) {
    fit = opts.fit_mode == FitMode::kGlobal
              ? fit_exponent(folded, bits_w, opts.granularity, opts.norm_p,
                             opts.solver)
              : fit_per_layer(folded, bits_w, opts.granularity, opts.norm_p,
                              opts.solver);
    if (fit.mode == FitMode::kGlobal) {
      std::fill(exponents.begin(), exponents.end(), fit.a_global());
    } else {
      exponents = fit.a_star;
    }
  } else {
    // Uniform and log schemes have no exponent to fit.
    fit.mode = FitMode::kGlobal;
    fit.solver = opts.solver;
    fit.a_star = {1.0};
    const QuantScheme scheme = opts.scheme == SchemeKind::kLog
                                   ? QuantScheme::log()
                                   : QuantScheme::uniform();
    fit.epsilon_at_a_star = reconstruction_error(folded, scheme, bits_w,
                                                 opts.granularity, opts.norm_p);
    fit.epsilon_at_uniform = reconstruction_error(
        folded, QuantScheme::uniform(), bits_w, opts.granularity, opts.norm_p);
  }

  CalibStats stats;
  bool have_calib = false;
  if (calib != nullptr && calib->size() > 0) {
    stats = calibrate(folded, *calib);
    have_calib = true;
  }

  QuantizedModel &qm = result.qmodel;
  qm.input_shape = folded.input_shape;
  qm.bits_w = opts.bits_w;
  qm.bits_a = opts.bits_a;
  qm.scheme = opts.scheme;
  qm.granularity = opts.granularity;
  qm.fit_mode = opts.fit_mode;
  qm.accumulation = opts.accumulation;
  qm.norm_p = opts.norm_p;

  for (std::size_t l = 0; l < layer_count; ++l) {
    const LayerSpec &layer = folded.layers[l];
    const double a = exponents[l];

    QuantizedLayer ql;
    ql.is_conv = layer.is_conv();
    if (ql.is_conv) {
      const auto &c = std::get<Conv2dLayer>(layer.kind);
      ql.stride = c.stride;
      ql.padding = c.padding;
    }
    ql.activation = layer.activation;
    ql.zero_point = activation_lower_bound(layer.activation);
    ql.exponent = a;

    QuantScheme scheme;
    switch (opts.scheme) {
      case SchemeKind::kUniform: scheme = QuantScheme::uniform(); break;
      case SchemeKind::kLog: scheme = QuantScheme::log(); break;
      case SchemeKind::kPower: scheme = QuantScheme::power(a); break;
    }
    ql.qweights =
        quantize_tensor(layer.weights(), scheme, bits_w, opts.granularity);
    ql.dequantized_weights = dequantize_tensor(ql.qweights);
    ql.epsilon =
        lp_distance(layer.weights(), ql.dequantized_weights, opts.norm_p);
    qm.epsilon_total += ql.epsilon;

    // Input range: batch-norm statistics when the original graph provides
    // them, calibration data otherwise.
    double range = 0.0;
    const bool use_bn = opts.policy.kind == ActRangePolicy::Kind::kBnStats &&
                        providers[l].present;
    if (use_bn) {
      for (std::size_t c = 0; c < providers[l].beta.size(); ++c) {
        range = std::max(range, providers[l].beta[c] +
                                    opts.policy.n_sigma *
                                        providers[l].gamma[c]);
      }
    } else if (have_calib) {
      range = stats.range[l];
    } else {
      throw StructureError(
          opts.policy.kind == ActRangePolicy::Kind::kBnStats
              ? "no batch-norm statistics feed layer " + std::to_string(l) +
                    " and no calibration set was given to fall back on"
              : "dynamic range policy requires a calibration set");
    }
    ql.act_range = std::max(range, kRangeFloor);
    ql.act_scale = std::pow(ql.act_range, a) / bits_a.unsigned_max();

    // Bias correction with the data-free mean when available.
    if (opts.bias_correct) {
      Tensor mu;
      if (use_bn) {
        mu = providers[l].beta;
      } else if (have_calib) {
        mu = stats.mean[l];
      } else {
        mu = Tensor::zeros({layer.weights().size() /
                            layer.weights().shape()[0]});
      }
      ql.corrected_bias = bias_correction(
          layer.weights(), ql.dequantized_weights, mu, layer.bias());
    } else {
      ql.corrected_bias = layer.bias();
    }

    qm.layers.push_back(std::move(ql));
  }
  return result;
}

Tensor forward_quantized(const QuantizedModel &qm, const Tensor &input) {
  if (input.shape() != qm.input_shape) {
    throw DimensionError("input shape " + shape_to_string(input.shape()) +
                         " does not match quantized model input " +
                         shape_to_string(qm.input_shape));
  }
  const BitWidth bits_a(qm.bits_a);
  const int u_max = bits_a.unsigned_max();

  Tensor x = input;
  for (std::size_t l = 0; l < qm.layers.size(); ++l) {
    const QuantizedLayer &layer = qm.layers[l];
    const double shift = l == 0 ? 0.0 : qm.layers[l - 1].zero_point;
    const double a = layer.exponent;
    const double s = layer.act_scale;

    if (!layer.is_conv && x.rank() != 1) x = Tensor({x.size()}, x.data());

    // Shift into the unsigned domain and quantize the input.
    std::vector<double> codes(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xs = std::max(x[i] + shift, 0.0);
      const double powered = xs == 0.0 ? 0.0 : std::pow(xs, a);
      codes[i] = std::clamp<double>(std::llround(powered / s), 0.0,
                                    static_cast<double>(u_max));
    }
    const Tensor code_tensor(x.shape(), std::move(codes));

    Tensor y;
    if (qm.accumulation == AccumulationMode::kPreAccumulation) {
      // Reconstruct each activation, multiply by the reconstructed
      // weights, accumulate in float: the exact semantics.
      Tensor x_hat = code_tensor;
      for (std::size_t i = 0; i < x_hat.size(); ++i) {
        const double v = x_hat[i] * s;
        x_hat[i] = v == 0.0 ? 0.0 : std::pow(v, 1.0 / a);
      }
      y = layer_linear(layer, layer.dequantized_weights, x_hat);
    } else {
      if (qm.scheme == SchemeKind::kLog) {
        throw DomainError(
            "post-accumulation inference is undefined for the log scheme");
      }
      // Accumulate raw code products, then one global rescale and inverse
      // power per output element.
      const Tensor w_codes = codes_as_tensor(layer.qweights);
      Tensor acc = layer_linear(layer, w_codes, code_tensor);
      const std::size_t c_out = layer.qweights.shape[0];
      const std::size_t plane = acc.size() / c_out;
      const bool per_channel =
          layer.qweights.granularity.kind == GranularityKind::kPerAxis;
      for (std::size_t oc = 0; oc < c_out; ++oc) {
        const double s_w =
            layer.qweights.scales[per_channel ? oc : 0];
        for (std::size_t p = 0; p < plane; ++p) {
          const double v = acc[oc * plane + p] * s * s_w;
          acc[oc * plane + p] = signed_power(v, 1.0 / a);
        }
      }
      y = std::move(acc);
    }

    // Zero-point compensation: subtract what the constant shift
    // contributed through the layer's linear map (exact under padding).
    if (shift != 0.0) {
      const Tensor shift_plane = Tensor::full(x.shape(), shift);
      const Tensor correction =
          layer_linear(layer, layer.dequantized_weights, shift_plane);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] -= correction[i];
    }
    y = add_bias_per_channel(std::move(y), layer.corrected_bias);
    x = apply_activation(layer.activation, y);
  }
  return x;
}

double accuracy_quantized(const QuantizedModel &qm, const Dataset &dataset) {
  dataset.validate();
  const std::size_t want = shape_numel(qm.input_shape);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    Tensor row = dataset.row(i);
    if (row.size() == want && row.shape() != qm.input_shape) {
      row = Tensor(qm.input_shape, row.data());
    }
    const Tensor logits = forward_quantized(qm, row);
    if (argmax_lowest(logits) ==
        static_cast<std::size_t>(dataset.labels[i])) {
      ++hits;
    }
  }
  return dataset.size() ? static_cast<double>(hits) / dataset.size() : 0.0;
}

}  // namespace powq
