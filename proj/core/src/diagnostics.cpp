#include "powq/diagnostics.hpp"

#include <algorithm>
#include <cmath>

namespace powq {

double pearson(const std::vector<double> &xs, const std::vector<double> &ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw DomainError("pearson needs two equally sized series of >= 2 points");
  }
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

SweepCurve sweep_a(const Model &model, const Dataset &dataset,
                   SweepOptions opts) {
  const Model folded = fold_batchnorm(model);
  const BitWidth bits_w(opts.bits_w);

  SweepCurve curve;
  curve.bits_w = opts.bits_w;
  curve.bits_a = opts.bits_a;

  QuantizeOptions qopts;
  qopts.bits_w = opts.bits_w;
  qopts.bits_a = opts.bits_a;
  qopts.scheme = SchemeKind::kPower;
  qopts.granularity = opts.granularity;
  qopts.norm_p = opts.norm_p;
  qopts.policy = opts.policy;
  qopts.bias_correct = opts.bias_correct;

  const std::size_t count = static_cast<std::size_t>(
                                std::floor((opts.hi - opts.lo) / opts.step +
                                           1e-9)) +
                            1;
  for (std::size_t k = 0; k < count; ++k) {
    const double a = opts.lo + static_cast<double>(k) * opts.step;
    SweepPoint point;
    point.a = a;
    point.epsilon =
        objective(folded, a, bits_w, opts.granularity, opts.norm_p);
    qopts.fixed_exponent = a;
    const QuantizeResult qr = quantize_model(model, qopts, &dataset);
    point.accuracy = accuracy_quantized(qr.qmodel, dataset);
    curve.points.push_back(point);
  }

  std::vector<double> eps, acc;
  for (const auto &p : curve.points) {
    eps.push_back(p.epsilon);
    acc.push_back(p.accuracy);
  }
  curve.correlation = pearson(eps, acc);
  return curve;
}

std::vector<ComparisonRow> compare_schemes(const Model &model,
                                           const Dataset &dataset,
                                           const std::vector<int> &bits_list,
                                           CompareOptions opts) {
  std::vector<ComparisonRow> rows;
  const Model folded = fold_batchnorm(model);

  for (int b : bits_list) {
    const BitWidth bits(b);
    for (SchemeKind scheme :
         {SchemeKind::kUniform, SchemeKind::kLog, SchemeKind::kPower}) {
      QuantizeOptions qopts;
      qopts.bits_w = b;
      qopts.bits_a = b;
      qopts.scheme = scheme;
      qopts.granularity = opts.granularity;
      qopts.norm_p = opts.norm_p;
      qopts.solver = opts.solver;
      qopts.policy = opts.policy;
      qopts.bias_correct = opts.bias_correct;

      const QuantizeResult qr = quantize_model(model, qopts, &dataset);

      ComparisonRow row;
      row.scheme = scheme;
      row.bits_w = b;
      row.bits_a = b;
      if (scheme == SchemeKind::kPower) row.a_star = qr.fit.a_global();
      row.accuracy = accuracy_quantized(qr.qmodel, dataset);
      row.reconstruction_error = qr.qmodel.epsilon_total;
      rows.push_back(row);
    }
  }
  return rows;
}

WeightStats weight_stats(const Model &model) {
  WeightStats stats;
  double sum_std = 0.0, sum_skew = 0.0, sum_kurt = 0.0;
  std::size_t n_skew = 0;
  for (std::size_t idx : model.weight_layer_indices()) {
    const Tensor &w = model.layers[idx].weights();
    const Moments m = moments(Tensor({w.size()}, w.data()));
    LayerStats ls;
    ls.std = m.std;
    ls.skewness = m.skewness;
    ls.kurtosis = m.kurtosis;
    sum_std += m.std;
    if (m.skewness.has_value()) {
      sum_skew += *m.skewness;
      sum_kurt += *m.kurtosis;
      ++n_skew;
    }
    stats.layers.push_back(ls);
  }
  const std::size_t n = stats.layers.size();
  if (n > 0) stats.mean_std = sum_std / static_cast<double>(n);
  if (n_skew > 0) {
    stats.mean_skewness = sum_skew / static_cast<double>(n_skew);
    stats.mean_kurtosis = sum_kurt / static_cast<double>(n_skew);
  }
  return stats;
}

namespace {

// Output shape of a layer given its input shape; mirrors forward_float.
std::vector<std::size_t> layer_output_shape(
    const LayerSpec &layer, const std::vector<std::size_t> &in_shape) {
  if (layer.is_dense()) {
    return {layer.weights().shape()[0]};
  }
  if (layer.is_conv()) {
    const auto &c = std::get<Conv2dLayer>(layer.kind);
    const std::size_t h = in_shape[1], w = in_shape[2];
    const std::size_t kh = c.kernel.shape()[2], kw = c.kernel.shape()[3];
    std::size_t h_out, w_out;
    if (c.padding == Padding::kSame) {
      h_out = (h + c.stride - 1) / c.stride;
      w_out = (w + c.stride - 1) / c.stride;
    } else {
      h_out = (h - kh) / c.stride + 1;
      w_out = (w - kw) / c.stride + 1;
    }
    return {c.kernel.shape()[0], h_out, w_out};
  }
  return in_shape;
}

}  // namespace

OverheadEstimate overhead_estimate(const Model &model, int bits_w, int bits_a,
                                   IntPowConfig intpow) {
  intpow.validate();
  BitWidth check_w(bits_w);
  BitWidth check_a(bits_a);
  (void)check_w;
  (void)check_a;

  OverheadEstimate est;
  std::vector<std::size_t> shape = model.input_shape;
  for (const auto &layer : model.layers) {
    if (!layer.has_weights()) {
      shape = layer_output_shape(layer, shape);
      continue;
    }
    const std::size_t in_elems = shape_numel(shape);
    double macs = 0.0;
    if (layer.is_dense()) {
      macs = static_cast<double>(layer.weights().size());
    } else {
      const auto out_shape = layer_output_shape(layer, shape);
      const auto &k = layer.weights().shape();
      macs = static_cast<double>(out_shape[0] * out_shape[1] * out_shape[2]) *
             static_cast<double>(k[1] * k[2] * k[3]);
    }
    est.mac_cost += macs * bits_w * bits_a;
    est.power_eval_cost +=
        static_cast<double>(in_elems) *
        static_cast<double>(intpow.iterations * intpow.fraction_bits) *
        static_cast<double>(bits_a) * static_cast<double>(bits_a);
    shape = layer_output_shape(layer, shape);
  }
  // A model with no multiply work is all overhead by convention.
  est.overhead_fraction =
      est.mac_cost == 0.0
          ? 1.0
          : est.power_eval_cost / (est.mac_cost + est.power_eval_cost);
  return est;
}

}  // namespace powq
