#include "powq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace powq {

std::size_t shape_numel(const std::vector<std::size_t> &shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const std::vector<std::size_t> &shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_to_string(shape_));
  }
  check_finite("tensor construction");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::offset(const std::vector<std::size_t> &index) const {
  if (index.size() != shape_.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) +
                         " does not match tensor rank " +
                         std::to_string(shape_.size()));
  }
  std::size_t off = 0;
  for (std::size_t d = 0; d < shape_.size(); ++d) {
    off = off * shape_[d] + index[d];
  }
  return off;
}

void Tensor::check_finite(const std::string &context) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError("non-finite value at flat index " +
                         std::to_string(i) + " in " + context);
    }
  }
}

Tensor matmul(const Tensor &a, const Tensor &b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects rank-2 tensors, got " +
                         shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw DimensionError("matmul inner extents differ: " +
                         shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] += av * b[p * n + j];
      }
    }
  }
  return out;
}

Tensor conv2d(const Tensor &input, const Tensor &kernel, std::size_t stride,
              Padding padding) {
  if (input.rank() != 3 || kernel.rank() != 4) {
    throw DimensionError("conv2d expects input [C,H,W] and kernel "
                         "[Cout,Cin,kh,kw], got " +
                         shape_to_string(input.shape()) + " and " +
                         shape_to_string(kernel.shape()));
  }
  if (stride == 0) throw DomainError("conv2d stride must be positive");
  const std::size_t c_in = input.shape()[0], h = input.shape()[1],
                    w = input.shape()[2];
  const std::size_t c_out = kernel.shape()[0], kc = kernel.shape()[1],
                    kh = kernel.shape()[2], kw = kernel.shape()[3];
  if (kc != c_in) {
    throw DimensionError("conv2d channel mismatch: input has " +
                         std::to_string(c_in) + ", kernel expects " +
                         std::to_string(kc));
  }

  std::size_t pad_top = 0, pad_left = 0, h_pad = h, w_pad = w;
  if (padding == Padding::kSame) {
    const std::size_t h_out = (h + stride - 1) / stride;
    const std::size_t w_out = (w + stride - 1) / stride;
    const std::size_t ph =
        std::max<std::size_t>((h_out - 1) * stride + kh, h) - h;
    const std::size_t pw =
        std::max<std::size_t>((w_out - 1) * stride + kw, w) - w;
    pad_top = ph / 2;
    pad_left = pw / 2;
    h_pad = h + ph;
    w_pad = w + pw;
  }
  if (kh > h_pad || kw > w_pad) {
    throw DimensionError("conv2d kernel " + shape_to_string(kernel.shape()) +
                         " larger than padded input");
  }
  const std::size_t h_out = (h_pad - kh) / stride + 1;
  const std::size_t w_out = (w_pad - kw) / stride + 1;

  Tensor out = Tensor::zeros({c_out, h_out, w_out});
  for (std::size_t oc = 0; oc < c_out; ++oc) {
    for (std::size_t oy = 0; oy < h_out; ++oy) {
      for (std::size_t ox = 0; ox < w_out; ++ox) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < c_in; ++ic) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * stride + ky) -
                static_cast<std::ptrdiff_t>(pad_top);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) -
                  static_cast<std::ptrdiff_t>(pad_left);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              acc += input[(ic * h + iy) * w + ix] *
                     kernel[((oc * c_in + ic) * kh + ky) * kw + kx];
            }
          }
        }
        out[(oc * h_out + oy) * w_out + ox] = acc;
      }
    }
  }
  return out;
}

Tensor map(const Tensor &t, const std::function<double(double)> &f) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = f(t[i]);
    if (!std::isfinite(out[i])) {
      throw NumericError("map produced non-finite value at flat index " +
                         std::to_string(i));
    }
  }
  return Tensor(t.shape(), std::move(out));
}

Tensor abs_max(const Tensor &t, GranularityKind granularity,
               std::size_t axis) {
  if (t.empty()) throw DomainError("abs_max of empty tensor");
  if (granularity == GranularityKind::kPerTensor) {
    double m = 0.0;
    for (double v : t.data()) m = std::max(m, std::abs(v));
    return Tensor({1}, {m});
  }
  if (axis >= t.rank()) {
    throw DomainError("abs_max axis " + std::to_string(axis) +
                      " out of range for rank " + std::to_string(t.rank()));
  }
  const std::size_t extent = t.shape()[axis];
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < t.rank(); ++d) inner *= t.shape()[d];
  std::vector<double> out(extent, 0.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::size_t idx = (i / inner) % extent;
    out[idx] = std::max(out[idx], std::abs(t[i]));
  }
  return Tensor({extent}, std::move(out));
}

Moments moments(const Tensor &t) {
  if (t.size() < 2) {
    throw DomainError("moments require at least 2 elements, got " +
                      std::to_string(t.size()));
  }
  const double n = static_cast<double>(t.size());
  double mean = 0.0;
  for (double v : t.data()) mean += v;
  mean /= n;

  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : t.data()) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;

  Moments out;
  out.mean = mean;
  out.std = std::sqrt(m2);
  if (out.std > 0.0) {
    out.skewness = m3 / (out.std * out.std * out.std);
    out.kurtosis = m4 / (m2 * m2);
  }
  return out;
}

}  // namespace powq
