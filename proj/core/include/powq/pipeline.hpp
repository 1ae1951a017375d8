#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "powq/fit.hpp"
#include "powq/model.hpp"
#include "powq/quant.hpp"

namespace powq {

/// How per-layer input ranges are obtained: from batch-norm statistics
/// (data-free) or from a calibration set run through the float model.
struct ActRangePolicy {
  enum class Kind { kBnStats, kDynamic };
  Kind kind = Kind::kBnStats;
  double n_sigma = 3.0;

  static ActRangePolicy bn_stats(double n_sigma = 3.0) {
    return {Kind::kBnStats, n_sigma};
  }
  static ActRangePolicy dynamic() { return {Kind::kDynamic, 3.0}; }
};

std::string act_policy_name(ActRangePolicy::Kind kind);
ActRangePolicy::Kind act_policy_from_name(const std::string &name);

enum class AccumulationMode { kPreAccumulation, kPostAccumulation };

std::string accumulation_name(AccumulationMode mode);
AccumulationMode accumulation_from_name(const std::string &name);

/// Analytic lower bound of an activation's output, used as the zero point
/// that shifts signed activations into the unsigned code range:
/// 0 for relu/identity, 0.27846 for silu, 0.169971 for gelu.
double activation_lower_bound(ActivationKind kind);

/// Fixed-point configuration for the integer-only power evaluation.
struct IntPowConfig {
  int iterations = 2;       // Newton steps per square root
  int fraction_bits = 16;   // Q-format fractional bits

  void validate() const;
};

/// Q-format fixed-point value produced by int_power_newton.
struct FixedPoint {
  std::int64_t raw = 0;
  int fraction_bits = 16;

  double to_double() const {
    return static_cast<double>(raw) /
           static_cast<double>(std::int64_t{1} << fraction_bits);
  }
  std::int64_t integer_part() const { return raw >> fraction_bits; }
};

/// code^exponent_inv computed entirely in fixed-point integer arithmetic.
/// The exponent splits into an integer part, handled by repeated
/// fixed-point multiplication, and a binary fraction, handled by a chain
/// of fixed-point square roots (one per fraction bit, each Newton-iterated
/// cfg.iterations times).
FixedPoint int_power_newton(std::uint32_t code, double exponent_inv,
                            IntPowConfig cfg = {});

/// One quantized layer: integer weight codes plus the float-side state
/// the simulated inference needs.
struct QuantizedLayer {
  bool is_conv = false;
  std::size_t stride = 1;
  Padding padding = Padding::kValid;
  QuantizedTensor qweights;
  Tensor dequantized_weights;  // cached reconstruction of qweights
  Tensor corrected_bias;
  ActivationKind activation = ActivationKind::kIdentity;
  double act_scale = 1.0;   // s_X for this layer's input codes
  double act_range = 1.0;   // input range the scale was derived from
  double zero_point = 0.0;  // C_sigma of this layer's own activation
  double exponent = 1.0;    // a used for this layer's weights and input
  double epsilon = 0.0;     // ||W - What||_p recorded at quantize time
};

struct QuantizedModel {
  std::vector<QuantizedLayer> layers;
  std::vector<std::size_t> input_shape;
  int bits_w = 8;
  int bits_a = 8;
  SchemeKind scheme = SchemeKind::kPower;
  Granularity granularity;
  FitMode fit_mode = FitMode::kGlobal;
  AccumulationMode accumulation = AccumulationMode::kPreAccumulation;
  int norm_p = 2;
  double epsilon_total = 0.0;
};

struct QuantizeOptions {
  int bits_w = 8;
  int bits_a = 8;
  SchemeKind scheme = SchemeKind::kPower;
  Granularity granularity = Granularity::per_channel(0);
  FitMode fit_mode = FitMode::kGlobal;
  SolverKind solver = SolverKind::kNelderMead;
  ActRangePolicy policy = ActRangePolicy::bn_stats();
  int norm_p = 2;
  bool bias_correct = true;
  AccumulationMode accumulation = AccumulationMode::kPreAccumulation;
  /// Skip fitting and use this exponent as-is (sweeps use this).
  std::optional<double> fixed_exponent;
};

struct QuantizeResult {
  QuantizedModel qmodel;
  FitReport fit;
};

/// Per-layer input scales s_X = range^a / U for the folded model.
/// bn_stats takes range = max_c(beta_c + n_sigma * gamma_c) from the
/// batch-norm that fed the layer in the original graph; layers without
/// one fall back to the calibration set when given. Dynamic tracks the
/// max shifted input seen while running the float model over the
/// calibration set. Ranges are clamped below at 1e-6.
std::vector<double> derive_activation_scales(
    const Model &model_with_bn, ActRangePolicy policy, double a,
    BitWidth bits_a, const Dataset *calib = nullptr,
    std::vector<double> *ranges_out = nullptr);

/// b' = b - (What - W) * mu, the data-free compensation of the expected
/// output gap introduced by weight quantization.
Tensor bias_correction(const Tensor &float_weights,
                       const Tensor &dequantized_weights,
                       const Tensor &input_mean, const Tensor &bias);

/// The full pipeline: fold batch-norm (keeping its statistics for the
/// activation ranges), fit the exponent, quantize every weight tensor,
/// derive activation scales, and optionally correct the biases.
QuantizeResult quantize_model(const Model &model, const QuantizeOptions &opts,
                              const Dataset *calib = nullptr);

/// Simulated quantized inference. Per layer the input is shifted by the
/// previous activation's zero point, clamped at zero, quantized to
/// unsigned codes, and either reconstructed per element before the
/// accumulation (exact semantics, default) or accumulated as raw code
/// products with one inverse power afterwards.
Tensor forward_quantized(const QuantizedModel &qm, const Tensor &input);

/// Accuracy of the simulated quantized model on a dataset.
double accuracy_quantized(const QuantizedModel &qm, const Dataset &dataset);

}  // namespace powq
