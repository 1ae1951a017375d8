// Test-only reference implementations, kept independent of the library's
// computation paths so they can stand as oracles.
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "powq/model.hpp"
#include "powq/tensor.hpp"

namespace oracles {

// Naive triple-loop matrix product.
inline std::vector<double> matmul_naive(const std::vector<double> &a,
                                        const std::vector<double> &b,
                                        std::size_t m, std::size_t k,
                                        std::size_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[p * n + j];
      }
      out[i * n + j] = acc;
    }
  }
  return out;
}

// Six-nested-loop valid cross-correlation, stride 1.
inline std::vector<double> conv2d_naive_valid(
    const std::vector<double> &input, std::size_t c_in, std::size_t h,
    std::size_t w, const std::vector<double> &kernel, std::size_t c_out,
    std::size_t kh, std::size_t kw, std::size_t stride) {
  const std::size_t h_out = (h - kh) / stride + 1;
  const std::size_t w_out = (w - kw) / stride + 1;
  std::vector<double> out(c_out * h_out * w_out, 0.0);
  for (std::size_t oc = 0; oc < c_out; ++oc) {
    for (std::size_t oy = 0; oy < h_out; ++oy) {
      for (std::size_t ox = 0; ox < w_out; ++ox) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < c_in; ++ic) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              acc += input[(ic * h + oy * stride + ky) * w + ox * stride + kx] *
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

// Reference reconstruction of one value through the unsigned activation
// quantizer: shift, clamp, power, round, scale back, inverse power,
// unshift. Written out longhand so pipeline tests compare against
// independent arithmetic.
inline double snap_activation(double x, double shift, double a, double scale,
                              int u_max) {
  const double shifted = std::max(x + shift, 0.0);
  const double powered = shifted == 0.0 ? 0.0 : std::pow(shifted, a);
  double code = std::llround(powered / scale);
  if (code < 0) code = 0;
  if (code > u_max) code = u_max;
  const double rec_pow = code * scale;
  const double rec = rec_pow == 0.0 ? 0.0 : std::pow(rec_pow, 1.0 / a);
  return rec - shift;
}

inline double relative_error(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

// Test-local RNG helpers; std engine with explicit seeding is fine here
// because tests never compare streams across platforms.
inline std::vector<double> random_values(std::uint64_t seed, std::size_t n,
                                         double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> out(n);
  for (auto &v : out) v = dist(rng);
  return out;
}

inline std::vector<double> random_normal(std::uint64_t seed, std::size_t n,
                                         double mean = 0.0,
                                         double sigma = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(mean, sigma);
  std::vector<double> out(n);
  for (auto &v : out) v = dist(rng);
  return out;
}

inline std::vector<double> random_laplace(std::uint64_t seed, std::size_t n,
                                          double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-0.5, 0.5);
  std::vector<double> out(n);
  for (auto &v : out) {
    const double u = dist(rng);
    v = -scale * (u < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(u));
  }
  return out;
}

// Wraps a flat weight vector as a single-dense-layer model.
inline powq::Model single_dense_model(std::vector<double> weights,
                                      std::size_t out, std::size_t in) {
  powq::DenseLayer d;
  d.weights = powq::Tensor({out, in}, std::move(weights));
  d.bias = powq::Tensor::zeros({out});
  powq::LayerSpec spec;
  spec.kind = std::move(d);
  powq::Model m;
  m.layers.push_back(std::move(spec));
  m.input_shape = {in};
  return m;
}

}  // namespace oracles
