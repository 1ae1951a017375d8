#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "powq/errors.hpp"

namespace powq {

/// Dense row-major tensor of 64-bit floats. All numeric state in the float
/// path lives here; integer codes live in QuantizedTensor.
///
/// Invariants kept by every public operation:
///   - data.size() == product of shape extents
///   - all values finite
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  /// Zero-filled tensor of the given shape.
  static Tensor zeros(std::vector<std::size_t> shape);
  /// Constant-filled tensor.
  static Tensor full(std::vector<std::size_t> shape, double value);
  /// 1-D tensor from a value list.
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t> &shape() const noexcept { return shape_; }
  const std::vector<double> &data() const noexcept { return data_; }
  std::vector<double> &data() noexcept { return data_; }

  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double &operator[](std::size_t i) { return data_[i]; }

  /// Flat offset of a multi-index (row-major).
  std::size_t offset(const std::vector<std::size_t> &index) const;

  bool same_shape(const Tensor &other) const noexcept {
    return shape_ == other.shape_;
  }

  /// Throws NumericError naming the first non-finite element, if any.
  void check_finite(const std::string &context) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const std::vector<std::size_t> &shape);
std::string shape_to_string(const std::vector<std::size_t> &shape);

/// Standard matrix product of a[m x k] and b[k x n].
Tensor matmul(const Tensor &a, const Tensor &b);

enum class Padding { kValid, kSame };

/// 2-D cross-correlation (no kernel flip) of input[C_in x H x W] with
/// kernel[C_out x C_in x kh x kw]. Output spatial extent is
/// floor((H_pad - kh) / stride) + 1; "same" pads so that
/// H' = ceil(H / stride), splitting the pad with the extra row/column at
/// the bottom/right.
Tensor conv2d(const Tensor &input, const Tensor &kernel, std::size_t stride,
              Padding padding);

/// Elementwise application of f; shape preserved. A non-finite result
/// raises NumericError naming the offending flat index.
Tensor map(const Tensor &t, const std::function<double(double)> &f);

enum class GranularityKind { kPerTensor, kPerAxis };

/// Maximum absolute value, either one scalar for the whole tensor or a
/// 1-D tensor with one entry per index along `axis`.
Tensor abs_max(const Tensor &t, GranularityKind granularity,
               std::size_t axis = 0);

/// Population moments. Skewness and kurtosis use the non-excess
/// convention (a Gaussian has kurtosis 3) and are absent when the
/// standard deviation is zero.
struct Moments {
  double mean = 0.0;
  double std = 0.0;
  std::optional<double> skewness;
  std::optional<double> kurtosis;
};

Moments moments(const Tensor &t);

}  // namespace powq
