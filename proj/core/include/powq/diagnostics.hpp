#pragma once

#include <optional>
#include <string>
#include <vector>

#include "powq/pipeline.hpp"

namespace powq {

struct SweepPoint {
  double a = 0.0;
  double epsilon = 0.0;
  double accuracy = 0.0;
};

/// Reconstruction error and quantized accuracy over a grid of exponents,
/// plus the Pearson correlation between the two columns.
struct SweepCurve {
  std::vector<SweepPoint> points;
  std::string model_id;
  int bits_w = 8;
  int bits_a = 8;
  double correlation = 0.0;
};

struct SweepOptions {
  int bits_w = 4;
  int bits_a = 4;
  Granularity granularity = Granularity::per_channel(0);
  double lo = 0.2;
  double hi = 1.6;
  double step = 0.05;
  int norm_p = 2;
  ActRangePolicy policy = ActRangePolicy::bn_stats();
  bool bias_correct = true;
};

SweepCurve sweep_a(const Model &model, const Dataset &dataset,
                   SweepOptions opts);

/// One row of the scheme comparison table.
struct ComparisonRow {
  SchemeKind scheme = SchemeKind::kUniform;
  int bits_w = 8;
  int bits_a = 8;
  std::optional<double> a_star;  // power rows only
  double accuracy = 0.0;
  double reconstruction_error = 0.0;
};

struct CompareOptions {
  Granularity granularity = Granularity::per_channel(0);
  int norm_p = 2;
  SolverKind solver = SolverKind::kNelderMead;
  ActRangePolicy policy = ActRangePolicy::bn_stats();
  bool bias_correct = true;
};

/// Uniform, log, and fitted power rows at each bit width.
std::vector<ComparisonRow> compare_schemes(const Model &model,
                                           const Dataset &dataset,
                                           const std::vector<int> &bits_list,
                                           CompareOptions opts = {});

struct LayerStats {
  double std = 0.0;
  std::optional<double> skewness;
  std::optional<double> kurtosis;
};

struct WeightStats {
  std::vector<LayerStats> layers;
  double mean_std = 0.0;
  std::optional<double> mean_skewness;
  std::optional<double> mean_kurtosis;
};

/// Moments of each flattened weight tensor and their cross-layer means.
WeightStats weight_stats(const Model &model);

/// Hardware-agnostic cost proxy: multiply counts weighted by operand bit
/// widths. mac_cost = sum MACs * bits_w * bits_a; the power evaluations
/// cost (iterations * fraction_bits) fixed-point multiplies of weight
/// bits_a^2 per activation element. Shape-derived only, nothing executes.
struct OverheadEstimate {
  double mac_cost = 0.0;
  double power_eval_cost = 0.0;
  double overhead_fraction = 0.0;
};

OverheadEstimate overhead_estimate(const Model &model, int bits_w, int bits_a,
                                   IntPowConfig intpow = {});

/// Pearson correlation coefficient; 0 when either side is constant.
double pearson(const std::vector<double> &xs, const std::vector<double> &ys);

}  // namespace powq
