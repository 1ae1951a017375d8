#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "powq/model.hpp"
#include "powq/tensor.hpp"

namespace powq {

/// Bit budget of a quantized code. Signed full scale B = 2^(b-1) - 1,
/// unsigned full scale U = 2^b - 1.
class BitWidth {
 public:
  explicit BitWidth(int bits);
  int bits() const noexcept { return bits_; }
  int signed_max() const noexcept { return (1 << (bits_ - 1)) - 1; }
  int unsigned_max() const noexcept { return (1 << bits_) - 1; }

 private:
  int bits_;
};

enum class SchemeKind { kUniform, kPower, kLog };

std::string scheme_name(SchemeKind kind);
SchemeKind scheme_from_name(const std::string &name);

/// Weight quantization scheme. Uniform is the a = 1 special case of the
/// power family and shares its code path bit for bit; the log scheme
/// stores reflected exponents so larger magnitudes get larger codes.
struct QuantScheme {
  SchemeKind kind = SchemeKind::kUniform;
  double a = 1.0;

  static QuantScheme uniform() { return {SchemeKind::kUniform, 1.0}; }
  static QuantScheme power(double a);
  static QuantScheme log() { return {SchemeKind::kLog, 1.0}; }

  /// Exponent actually applied: 1 for uniform/log, a for power.
  double effective_a() const noexcept {
    return kind == SchemeKind::kPower ? a : 1.0;
  }
};

/// Scale grouping: one scale for the whole tensor or one per index along
/// the output-channel axis.
struct Granularity {
  GranularityKind kind = GranularityKind::kPerTensor;
  std::size_t axis = 0;

  static Granularity per_tensor() { return {GranularityKind::kPerTensor, 0}; }
  static Granularity per_channel(std::size_t axis = 0) {
    return {GranularityKind::kPerAxis, axis};
  }
};

enum class Signedness { kSigned, kUnsigned };

/// Integer codes in the container the bit width calls for: 8-bit cells
/// when b <= 8, 32-bit otherwise.
class CodeArray {
 public:
  CodeArray() = default;
  CodeArray(std::size_t n, int bits, Signedness signedness);

  std::int32_t at(std::size_t i) const;
  void set(std::size_t i, std::int32_t v);
  std::size_t size() const noexcept { return size_; }
  bool narrow() const noexcept { return narrow_; }

  const std::vector<std::int8_t> &raw8() const noexcept { return v8_; }
  const std::vector<std::uint8_t> &rawu8() const noexcept { return vu8_; }
  const std::vector<std::int32_t> &raw32() const noexcept { return v32_; }

 private:
  std::size_t size_ = 0;
  bool narrow_ = false;
  Signedness signedness_ = Signedness::kSigned;
  std::vector<std::int8_t> v8_;
  std::vector<std::uint8_t> vu8_;
  std::vector<std::int32_t> v32_;
};

/// Quantized tensor: codes plus everything needed to reconstruct floats.
/// For uniform/power the per-group scale is (powered magnitude) / code;
/// for log it is the group's max magnitude.
struct QuantizedTensor {
  std::vector<std::size_t> shape;
  CodeArray codes;
  Tensor scales;  // [groups], or [1] for per-tensor
  QuantScheme scheme;
  int bits = 8;
  Signedness signedness = Signedness::kSigned;
  Granularity granularity;

  std::size_t size() const noexcept { return codes.size(); }
  /// Scale-group index of a flat element position.
  std::size_t group_of(std::size_t flat) const;
};

/// x^a on the positive reals; the continuous automorphism of (R+*, x).
double continuous_power(double x, double a);

/// sign(x) * |x|^a; shared by the quantizers and de-quantizers.
double signed_power(double x, double a);

/// Quantizes a weight tensor. Per scale group, for uniform/power:
/// p_i = sign(w_i) * |w_i|^a, s = max|p| / B,
/// codes = round-half-away(p_i / s) clamped to [-B, B]. For log:
/// e_i = clamp(round(log2(max|w| / |w_i|)), 0, B),
/// code = sign(w_i) * (B - e_i). An all-zero group gets scale 1 and zero
/// codes.
QuantizedTensor quantize_tensor(const Tensor &weights, QuantScheme scheme,
                                BitWidth bits, Granularity granularity);

/// Reconstructs floats: uniform/power w' = sign(c) * |c * s|^(1/a);
/// log w' = sign(c) * max_group * 2^(|c| - B). Code 0 is exactly 0.
Tensor dequantize_tensor(const QuantizedTensor &q);

/// Unsigned quantization for activations. Requires x >= 0 elementwise;
/// s = range^a / U, codes = round(x^a / s) clamped to [0, U].
QuantizedTensor quantize_unsigned(const Tensor &values, double a,
                                  BitWidth bits, double range);

/// Sum over all weight-bearing layers of || W_l - deq(quant(W_l)) ||_p
/// with each layer flattened to a vector; p in {1, 2}.
double reconstruction_error(const Model &model, QuantScheme scheme,
                            BitWidth bits, Granularity granularity,
                            int norm_p = 2);

/// || a - b ||_p over flattened tensors, p in {1, 2}.
double lp_distance(const Tensor &a, const Tensor &b, int norm_p);

}  // namespace powq
