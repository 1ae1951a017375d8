#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "powq/model.hpp"
#include "powq/quant.hpp"

namespace powq {

enum class FitMode { kGlobal, kPerLayer };
enum class SolverKind { kNelderMead, kGrid };

std::string fit_mode_name(FitMode mode);
FitMode fit_mode_from_name(const std::string &name);
std::string solver_name(SolverKind solver);
SolverKind solver_from_name(const std::string &name);

/// Exponent domain the solvers are confined to.
inline constexpr double kExponentMin = 0.01;
inline constexpr double kExponentMax = 4.0;

/// Result of an exponent fit: the minimizer(s), the objective there and at
/// the uniform point a = 1, and every (a, epsilon) evaluation made.
struct FitReport {
  FitMode mode = FitMode::kGlobal;
  std::vector<double> a_star;  // one entry, or one per weight layer
  double epsilon_at_a_star = 0.0;
  double epsilon_at_uniform = 0.0;
  std::vector<std::pair<double, double>> trace;
  SolverKind solver = SolverKind::kNelderMead;

  double a_global() const { return a_star.at(0); }
};

/// Layer-summed reconstruction error under the power scheme with the
/// given exponent; the data-free objective the solvers minimize.
double objective(const Model &model, double a, BitWidth bits,
                 Granularity granularity, int norm_p = 2);

struct SolverResult {
  double a_min = 0.0;
  double f_min = 0.0;
  std::vector<std::pair<double, double>> evaluations;
};

/// 1-D Nelder-Mead over a two-point simplex with the standard
/// reflection/expansion/contraction/shrink coefficients 1, 2, 0.5, 0.5.
/// Stops when the simplex width falls below tol or after max_iter
/// iterations. Candidate points are clamped into
/// [kExponentMin, kExponentMax].
SolverResult nelder_mead_1d(const std::function<double(double)> &f,
                            double init_lo = 0.2, double init_hi = 1.0,
                            double tol = 1e-4, int max_iter = 200);

struct GridResult {
  double a_min = 0.0;
  double f_min = 0.0;
  std::vector<std::pair<double, double>> curve;
};

/// Exhaustive scan of f over {lo, lo + step, ...} up to hi; ties go to the
/// smallest a. The independent check on the simplex solver.
GridResult grid_scan(const std::function<double(double)> &f, double lo = 0.05,
                     double hi = 2.0, double step = 0.005);

/// Fits one exponent for the whole model by minimizing the weight
/// reconstruction error. Always also evaluates a = 1 and keeps the better
/// of the two, so the result never loses to uniform quantization.
FitReport fit_exponent(const Model &model, BitWidth bits,
                       Granularity granularity, int norm_p = 2,
                       SolverKind solver = SolverKind::kNelderMead);

/// Independent fit per weight-bearing layer. Each layer's candidate set
/// includes 1.0 and the global fit's exponent, which makes the summed
/// error provably no worse than either the uniform or the global fit.
FitReport fit_per_layer(const Model &model, BitWidth bits,
                        Granularity granularity, int norm_p = 2,
                        SolverKind solver = SolverKind::kNelderMead);

}  // namespace powq
