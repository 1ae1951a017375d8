#include "powq/fit.hpp"

#include <algorithm>
#include <cmath>

namespace powq {

std::string fit_mode_name(FitMode mode) {
  return mode == FitMode::kGlobal ? "global" : "per_layer";
}

FitMode fit_mode_from_name(const std::string &name) {
  if (name == "global") return FitMode::kGlobal;
  if (name == "per_layer" || name == "per-layer") return FitMode::kPerLayer;
  throw ValidationError("unknown fit mode '" + name + "'", "fit_mode");
}

std::string solver_name(SolverKind solver) {
  return solver == SolverKind::kNelderMead ? "nelder_mead" : "grid";
}

SolverKind solver_from_name(const std::string &name) {
  if (name == "nelder_mead" || name == "nelder-mead") {
    return SolverKind::kNelderMead;
  }
  if (name == "grid") return SolverKind::kGrid;
  throw ValidationError("unknown solver '" + name + "'", "solver");
}

double objective(const Model &model, double a, BitWidth bits,
                 Granularity granularity, int norm_p) {
  if (!(a > 0.0) || a > kExponentMax) {
    throw DomainError("objective exponent must lie in (0, 4], got " +
                      std::to_string(a));
  }
  return reconstruction_error(model, QuantScheme::power(a), bits, granularity,
                              norm_p);
}

namespace {

double clamp_a(double a) {
  return std::clamp(a, kExponentMin, kExponentMax);
}

}  // namespace

SolverResult nelder_mead_1d(const std::function<double(double)> &f,
                            double init_lo, double init_hi, double tol,
                            int max_iter) {
  if (!(init_lo < init_hi)) {
    throw DomainError("nelder_mead_1d requires init_lo < init_hi");
  }
  SolverResult result;
  auto eval = [&](double a_raw) {
    const double a = clamp_a(a_raw);
    const double v = f(a);
    if (!std::isfinite(v)) {
      throw SolverError("objective evaluated to a non-finite value at a = " +
                            std::to_string(a),
                        a);
    }
    result.evaluations.emplace_back(a, v);
    return std::pair<double, double>{a, v};
  };

  auto [b, fb] = eval(init_lo);
  auto [w, fw] = eval(init_hi);
  if (fw < fb) {
    std::swap(b, w);
    std::swap(fb, fw);
  }

  constexpr double kReflect = 1.0, kExpand = 2.0, kContract = 0.5,
                   kShrink = 0.5;
  for (int it = 0; it < max_iter && std::abs(w - b) >= tol; ++it) {
    auto [r, fr] = eval(b + kReflect * (b - w));
    if (fr < fb) {
      auto [e, fe] = eval(b + kExpand * (r - b));
      if (fe < fr) {
        w = e;
        fw = fe;
      } else {
        w = r;
        fw = fr;
      }
    } else if (fr < fw) {
      w = r;
      fw = fr;
    } else {
      auto [c, fc] = eval(b + kContract * (w - b));
      if (fc < fw) {
        w = c;
        fw = fc;
      } else {
        auto [s, fs] = eval(b + kShrink * (w - b));
        w = s;
        fw = fs;
      }
    }
    if (fw < fb) {
      std::swap(b, w);
      std::swap(fb, fw);
    }
  }
  result.a_min = b;
  result.f_min = fb;
  return result;
}

GridResult grid_scan(const std::function<double(double)> &f, double lo,
                     double hi, double step) {
  if (!(lo < hi) || !(step > 0.0)) {
    throw DomainError("grid_scan requires lo < hi and step > 0");
  }
  // The epsilon keeps floor((hi - lo) / step) stable against the division
  // landing just below an integer.
  const std::size_t count =
      static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
  GridResult result;
  result.curve.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const double a = lo + static_cast<double>(k) * step;
    result.curve.emplace_back(a, f(a));
  }
  result.a_min = result.curve.front().first;
  result.f_min = result.curve.front().second;
  for (const auto &[a, v] : result.curve) {
    if (v < result.f_min) {
      result.f_min = v;
      result.a_min = a;
    }
  }
  return result;
}

namespace {

FitReport fit_single(const Model &model, BitWidth bits, Granularity gran,
                     int norm_p, SolverKind solver,
                     const std::vector<double> &extra_candidates) {
  auto f = [&](double a) { return objective(model, a, bits, gran, norm_p); };

  FitReport report;
  report.mode = FitMode::kGlobal;
  report.solver = solver;

  double a_best, f_best;
  if (solver == SolverKind::kNelderMead) {
    SolverResult r = nelder_mead_1d(f);
    report.trace = std::move(r.evaluations);
    // The rounding staircase leaves micro-plateaus whose sub-resolution
    // dips are sampling noise, so the simplex only localizes the basin;
    // the minimizer is then pinned by an exhaustive scan of the canonical
    // 0.005 lattice around it, which keeps results solver-independent at
    // the declared working resolution.
    constexpr double kLatticeLo = 0.05, kLatticeStep = 0.005, kWindow = 0.15;
    const long k_lo = static_cast<long>(
        std::ceil((r.a_min - kWindow - kLatticeLo) / kLatticeStep));
    const long k_hi = static_cast<long>(
        std::floor((r.a_min + kWindow - kLatticeLo) / kLatticeStep));
    a_best = r.a_min;
    f_best = r.f_min;
    bool first = true;
    for (long k = k_lo; k <= k_hi; ++k) {
      const double a = kLatticeLo + static_cast<double>(k) * kLatticeStep;
      if (a < kExponentMin || a > kExponentMax) continue;
      const double v = f(a);
      report.trace.emplace_back(a, v);
      if (first || v < f_best) {
        f_best = v;
        a_best = a;
        first = false;
      }
    }
  } else {
    GridResult r = grid_scan(f);
    report.trace = r.curve;
    a_best = r.a_min;
    f_best = r.f_min;
  }

  // Safeguard: uniform quantization sits inside the search space, so the
  // fitted exponent must never do worse than a = 1.
  const double f_uniform = f(1.0);
  report.trace.emplace_back(1.0, f_uniform);
  report.epsilon_at_uniform = f_uniform;
  if (f_uniform < f_best) {
    a_best = 1.0;
    f_best = f_uniform;
  }
  for (double cand : extra_candidates) {
    const double fc = f(cand);
    report.trace.emplace_back(cand, fc);
    if (fc < f_best) {
      a_best = cand;
      f_best = fc;
    }
  }
  report.a_star = {a_best};
  report.epsilon_at_a_star = f_best;
  return report;
}

Model single_layer_model(const Model &model, std::size_t layer_index) {
  Model m;
  m.input_shape = model.input_shape;
  m.layers.push_back(model.layers[layer_index]);
  return m;
}

}  // namespace

FitReport fit_exponent(const Model &model, BitWidth bits,
                       Granularity granularity, int norm_p,
                       SolverKind solver) {
  model.validate();
  return fit_single(model, bits, granularity, norm_p, solver, {});
}

FitReport fit_per_layer(const Model &model, BitWidth bits,
                        Granularity granularity, int norm_p,
                        SolverKind solver) {
  model.validate();
  const FitReport global =
      fit_single(model, bits, granularity, norm_p, solver, {});

  FitReport report;
  report.mode = FitMode::kPerLayer;
  report.solver = solver;
  report.epsilon_at_uniform = global.epsilon_at_uniform;
  report.epsilon_at_a_star = 0.0;

  for (std::size_t idx : model.weight_layer_indices()) {
    const Model layer_model = single_layer_model(model, idx);
    const FitReport layer_fit = fit_single(layer_model, bits, granularity,
                                           norm_p, solver, {global.a_global()});
    report.a_star.push_back(layer_fit.a_global());
    report.epsilon_at_a_star += layer_fit.epsilon_at_a_star;
    for (const auto &e : layer_fit.trace) report.trace.push_back(e);
  }
  return report;
}

}  // namespace powq
