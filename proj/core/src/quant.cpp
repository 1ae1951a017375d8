#include "powq/quant.hpp"

#include <algorithm>
#include <cmath>

namespace powq {

BitWidth::BitWidth(int bits) : bits_(bits) {
  if (bits < 2 || bits > 16) {
    throw DomainError("bit width must be in [2, 16], got " +
                      std::to_string(bits));
  }
}

std::string scheme_name(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::kUniform: return "uniform";
    case SchemeKind::kPower: return "power";
    case SchemeKind::kLog: return "log";
  }
  return "uniform";
}

SchemeKind scheme_from_name(const std::string &name) {
  if (name == "uniform") return SchemeKind::kUniform;
  if (name == "power") return SchemeKind::kPower;
  if (name == "log") return SchemeKind::kLog;
  throw ValidationError("unknown scheme '" + name + "'", "scheme");
}

QuantScheme QuantScheme::power(double a) {
  if (!(a > 0.0) || a > 4.0) {
    throw DomainError("power exponent must lie in (0, 4], got " +
                      std::to_string(a));
  }
  return {SchemeKind::kPower, a};
}

CodeArray::CodeArray(std::size_t n, int bits, Signedness signedness)
    : size_(n), narrow_(bits <= 8), signedness_(signedness) {
  if (!narrow_) {
    v32_.assign(n, 0);
  } else if (signedness == Signedness::kSigned) {
    v8_.assign(n, 0);
  } else {
    vu8_.assign(n, 0);
  }
}

std::int32_t CodeArray::at(std::size_t i) const {
  if (!narrow_) return v32_[i];
  if (signedness_ == Signedness::kSigned) return v8_[i];
  return vu8_[i];
}

void CodeArray::set(std::size_t i, std::int32_t v) {
  if (!narrow_) {
    v32_[i] = v;
  } else if (signedness_ == Signedness::kSigned) {
    v8_[i] = static_cast<std::int8_t>(v);
  } else {
    vu8_[i] = static_cast<std::uint8_t>(v);
  }
}

std::size_t QuantizedTensor::group_of(std::size_t flat) const {
  if (granularity.kind == GranularityKind::kPerTensor) return 0;
  const std::size_t extent = shape[granularity.axis];
  std::size_t inner = 1;
  for (std::size_t d = granularity.axis + 1; d < shape.size(); ++d) {
    inner *= shape[d];
  }
  return (flat / inner) % extent;
}

double continuous_power(double x, double a) {
  if (!(x > 0.0)) {
    throw DomainError("continuous_power requires x > 0, got " +
                      std::to_string(x));
  }
  // The quantizer exponent is clamped to (0, 4] in QuantScheme; the map
  // itself must also serve the inverse direction, where the exponent is
  // 1/a and can exceed 4.
  if (!(a > 0.0) || !std::isfinite(a)) {
    throw DomainError("continuous_power exponent must be positive");
  }
  return std::pow(x, a);
}

double signed_power(double x, double a) {
  if (x == 0.0) return 0.0;
  if (a == 1.0) return x;
  const double mag = std::pow(std::abs(x), a);
  return x < 0.0 ? -mag : mag;
}

namespace {

std::vector<std::size_t> group_index_of(const std::vector<std::size_t> &shape,
                                        Granularity gran, std::size_t n,
                                        std::size_t *group_count) {
  if (gran.kind == GranularityKind::kPerTensor) {
    *group_count = 1;
    return {};
  }
  if (gran.axis >= shape.size()) {
    throw DomainError("granularity axis " + std::to_string(gran.axis) +
                      " out of range for shape " + shape_to_string(shape));
  }
  const std::size_t extent = shape[gran.axis];
  std::size_t inner = 1;
  for (std::size_t d = gran.axis + 1; d < shape.size(); ++d) {
    inner *= shape[d];
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = (i / inner) % extent;
  *group_count = extent;
  return idx;
}

int round_half_away(double x) {
  return static_cast<int>(std::llround(x));
}

}  // namespace

QuantizedTensor quantize_tensor(const Tensor &weights, QuantScheme scheme,
                                BitWidth bits, Granularity granularity) {
  if (weights.empty()) throw DomainError("quantize_tensor of empty tensor");
  const std::size_t n = weights.size();
  const int full = bits.signed_max();
  const double a = scheme.effective_a();
  if (!(a > 0.0)) throw DomainError("quantization exponent must be positive");

  std::size_t groups = 1;
  const std::vector<std::size_t> gidx =
      group_index_of(weights.shape(), granularity, n, &groups);
  auto group = [&](std::size_t i) { return groups == 1 ? 0 : gidx[i]; };

  // Per-group max magnitude (of the powered values for uniform/power, of the
  // raw values for log; for the former max|w|^a == (max|w|)^a).
  std::vector<double> max_abs(groups, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    max_abs[group(i)] = std::max(max_abs[group(i)], std::abs(weights[i]));
  }

  QuantizedTensor q;
  q.shape = weights.shape();
  q.codes = CodeArray(n, bits.bits(), Signedness::kSigned);
  q.scheme = scheme;
  q.bits = bits.bits();
  q.signedness = Signedness::kSigned;
  q.granularity = granularity;

  std::vector<double> scales(groups, 1.0);
  if (scheme.kind == SchemeKind::kLog) {
    for (std::size_t g = 0; g < groups; ++g) {
      scales[g] = max_abs[g] > 0.0 ? max_abs[g] : 1.0;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double w = weights[i];
      const double mx = max_abs[group(i)];
      if (w == 0.0 || mx == 0.0) continue;
      const double e_raw = std::round(std::log2(mx / std::abs(w)));
      const int e = static_cast<int>(std::clamp(e_raw, 0.0, double(full)));
      const int mag = full - e;
      q.codes.set(i, w < 0.0 ? -mag : mag);
    }
  } else {
    for (std::size_t g = 0; g < groups; ++g) {
      if (max_abs[g] > 0.0) {
        scales[g] = signed_power(max_abs[g], a) / full;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t g = group(i);
      if (max_abs[g] == 0.0) continue;
      const double p = signed_power(weights[i], a);
      const int code =
          std::clamp(round_half_away(p / scales[g]), -full, full);
      q.codes.set(i, code);
    }
  }
  q.scales = Tensor({groups}, std::move(scales));
  return q;
}

Tensor dequantize_tensor(const QuantizedTensor &q) {
  const int full = BitWidth(q.bits).signed_max();
  const double a = q.scheme.effective_a();
  std::vector<double> out(q.size(), 0.0);

  if (q.signedness == Signedness::kUnsigned) {
    const double s = q.scales[0];
    for (std::size_t i = 0; i < q.size(); ++i) {
      const std::int32_t c = q.codes.at(i);
      if (c == 0) continue;
      out[i] = signed_power(c * s, 1.0 / a);
    }
    return Tensor(q.shape, std::move(out));
  }

  for (std::size_t i = 0; i < q.size(); ++i) {
    const std::int32_t c = q.codes.at(i);
    if (c == 0) continue;
    const double s = q.scales[q.group_of(i)];
    if (q.scheme.kind == SchemeKind::kLog) {
      const double mag = s * std::exp2(double(std::abs(c) - full));
      out[i] = c < 0 ? -mag : mag;
    } else {
      out[i] = signed_power(c * s, 1.0 / a);
    }
  }
  return Tensor(q.shape, std::move(out));
}

QuantizedTensor quantize_unsigned(const Tensor &values, double a,
                                  BitWidth bits, double range) {
  if (!(a > 0.0) || a > 4.0) {
    throw DomainError("activation exponent must lie in (0, 4]");
  }
  if (!(range > 0.0)) {
    throw DomainError("activation range must be positive");
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0.0) {
      throw DomainError("quantize_unsigned requires non-negative input; "
                        "element at flat index " +
                        std::to_string(i) + " is " +
                        std::to_string(values[i]));
    }
  }
  const int full = bits.unsigned_max();
  const double s = std::pow(range, a) / full;

  QuantizedTensor q;
  q.shape = values.shape();
  q.codes = CodeArray(values.size(), bits.bits(), Signedness::kUnsigned);
  q.scales = Tensor({1}, {s});
  q.scheme = a == 1.0 ? QuantScheme::uniform() : QuantScheme::power(a);
  q.bits = bits.bits();
  q.signedness = Signedness::kUnsigned;
  q.granularity = Granularity::per_tensor();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double p = values[i] == 0.0 ? 0.0 : std::pow(values[i], a);
    q.codes.set(i, std::clamp(round_half_away(p / s), 0, full));
  }
  return q;
}

double lp_distance(const Tensor &a, const Tensor &b, int norm_p) {
  if (a.size() != b.size()) {
    throw DimensionError("lp_distance requires equal element counts");
  }
  if (norm_p != 1 && norm_p != 2) {
    throw DomainError("norm p must be 1 or 2, got " + std::to_string(norm_p));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    acc += norm_p == 1 ? d : d * d;
  }
  return norm_p == 1 ? acc : std::sqrt(acc);
}

double reconstruction_error(const Model &model, QuantScheme scheme,
                            BitWidth bits, Granularity granularity,
                            int norm_p) {
  double total = 0.0;
  for (std::size_t idx : model.weight_layer_indices()) {
    const Tensor &w = model.layers[idx].weights();
    const Tensor rec =
        dequantize_tensor(quantize_tensor(w, scheme, bits, granularity));
    total += lp_distance(w, rec, norm_p);
  }
  return total;
}

}  // namespace powq
