// Command-line surface for the power-function quantization pipeline:
// fixture generation, exponent fitting, quantization, evaluation, sweeps,
// scheme comparison, weight statistics, and overhead estimation.

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "powq/diagnostics.hpp"
#include "powq/fixture.hpp"
#include "powq/io.hpp"

namespace fs = std::filesystem;
using namespace powq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

std::vector<std::size_t> parse_arch(const std::string &s) {
  std::vector<std::size_t> arch;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    arch.push_back(static_cast<std::size_t>(std::stoul(tok)));
  }
  return arch;
}

std::vector<int> parse_int_list(const std::string &s) {
  std::vector<int> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

void write_text(const fs::path &path, const std::string &content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << content;
}

Granularity parse_gran(const std::string &name) {
  if (name == "per-tensor") return Granularity::per_tensor();
  if (name == "per-channel") return Granularity::per_channel(0);
  throw ValidationError("unknown granularity '" + name + "'", "gran");
}

struct CommonQuantFlags {
  int bits_w = 8;
  int bits_a = 8;
  int norm_p = 2;
  std::string gran = "per-channel";
  std::string fit_mode = "global";
  std::string solver = "nelder-mead";
  std::string act_policy = "bn-stats";
  std::string accumulation = "pre";
  std::string scheme = "power";
  bool bias_correct = true;
};

void add_quant_flags(CLI::App *cmd, CommonQuantFlags &flags,
                     bool with_inference_flags) {
  cmd->add_option("--bits-w", flags.bits_w, "Weight bit width (2..16)");
  cmd->add_option("--p", flags.norm_p, "Reconstruction norm, 1 or 2")
      ->check(CLI::IsMember({1, 2}));
  cmd->add_option("--gran", flags.gran, "Scale granularity")
      ->check(CLI::IsMember({"per-tensor", "per-channel"}));
  cmd->add_option("--fit-mode", flags.fit_mode, "Exponent fit mode")
      ->check(CLI::IsMember({"global", "per-layer"}));
  cmd->add_option("--solver", flags.solver, "Fit solver")
      ->check(CLI::IsMember({"nelder-mead", "grid"}));
  if (with_inference_flags) {
    cmd->add_option("--bits-a", flags.bits_a, "Activation bit width (2..16)");
    cmd->add_option("--act-policy", flags.act_policy,
                    "Activation range policy")
        ->check(CLI::IsMember({"bn-stats", "dynamic"}));
    cmd->add_option("--accumulation", flags.accumulation,
                    "Inverse power before (pre) or after (post) the "
                    "accumulation")
        ->check(CLI::IsMember({"pre", "post"}));
    cmd->add_option("--scheme", flags.scheme, "Weight quantization scheme")
        ->check(CLI::IsMember({"uniform", "power", "log"}));
    cmd->add_flag("--bias-correct,!--no-bias-correct", flags.bias_correct,
                  "Apply data-free bias correction (default on)");
  }
}

QuantizeOptions to_options(const CommonQuantFlags &flags) {
  QuantizeOptions opts;
  opts.bits_w = flags.bits_w;
  opts.bits_a = flags.bits_a;
  opts.norm_p = flags.norm_p;
  opts.granularity = parse_gran(flags.gran);
  opts.fit_mode = fit_mode_from_name(flags.fit_mode);
  opts.solver = solver_from_name(flags.solver);
  opts.policy = ActRangePolicy{act_policy_from_name(flags.act_policy), 3.0};
  opts.accumulation = accumulation_from_name(flags.accumulation);
  opts.scheme = scheme_from_name(flags.scheme);
  opts.bias_correct = flags.bias_correct;
  return opts;
}

std::string csv_double(double v) { return JsonWriter::format_double(v); }

int run_cli(int argc, char **argv) {
  CLI::App app{"Power-function post-training quantization toolkit"};
  app.require_subcommand(1);

  // fixture
  auto *fixture = app.add_subcommand(
      "fixture", "Generate a dataset, train a small model, write both");
  std::uint64_t seed = 0;
  std::string fixture_out = "fixture_model";
  std::string fixture_data;
  std::string kind = "blobs";
  std::size_t samples = 300;
  std::size_t dims = 2;
  double separation = 3.5;
  std::string arch_str = "2,16,3";
  std::size_t epochs = 500;
  double lr = 0.5;
  fixture->add_option("--seed", seed, "Deterministic seed");
  fixture->add_option("--out", fixture_out, "Model directory to write");
  fixture->add_option("--data-out", fixture_data,
                      "Dataset CSV to write (default <out>/train.csv)");
  fixture->add_option("--kind", kind, "Dataset kind")
      ->check(CLI::IsMember({"blobs", "rings"}));
  fixture->add_option("--samples", samples, "Sample count (>= 10)");
  fixture->add_option("--dims", dims, "Feature dimensions for blobs (2..8)");
  fixture->add_option("--separation", separation,
                      "Blob center separation in sigmas");
  fixture->add_option("--arch", arch_str,
                      "Dense layer sizes, e.g. 2,16,3");
  fixture->add_option("--epochs", epochs, "Training epochs");
  fixture->add_option("--lr", lr, "Learning rate");

  // fit
  auto *fit_cmd = app.add_subcommand("fit", "Fit the quantization exponent");
  std::string model_dir, out_path, dataset_path, calib_path;
  CommonQuantFlags fit_flags;
  fit_cmd->add_option("--model", model_dir, "Model directory")->required();
  fit_cmd->add_option("--out", out_path, "Report JSON path (default stdout)");
  add_quant_flags(fit_cmd, fit_flags, false);
  fit_flags.bits_w = 8;

  // quantize
  auto *quant_cmd =
      app.add_subcommand("quantize", "Quantize a model end to end");
  std::string quant_model, quant_out = "qmodel", quant_calib;
  CommonQuantFlags quant_flags;
  quant_cmd->add_option("--model", quant_model, "Model directory")->required();
  quant_cmd->add_option("--out", quant_out, "Quantized model directory");
  quant_cmd->add_option("--calib", quant_calib,
                        "Calibration dataset CSV (required for layers "
                        "without batch-norm statistics)");
  add_quant_flags(quant_cmd, quant_flags, true);

  // eval
  auto *eval_cmd = app.add_subcommand(
      "eval", "Accuracy plus per-layer reconstruction error report");
  std::string eval_model, eval_dataset, eval_out;
  eval_cmd->add_option("--model", eval_model, "Model or qmodel directory")
      ->required();
  eval_cmd->add_option("--dataset", eval_dataset, "Dataset CSV")->required();
  eval_cmd->add_option("--out", eval_out, "Report JSON path (default stdout)");

  // sweep
  auto *sweep_cmd =
      app.add_subcommand("sweep", "Exponent sweep CSV: a,epsilon,accuracy");
  std::string sweep_model, sweep_dataset, sweep_out = "sweep.csv";
  CommonQuantFlags sweep_flags;
  sweep_flags.bits_w = 4;
  sweep_flags.bits_a = 4;
  double sweep_lo = 0.2, sweep_hi = 1.6, sweep_step = 0.05;
  sweep_cmd->add_option("--model", sweep_model, "Model directory")->required();
  sweep_cmd->add_option("--dataset", sweep_dataset, "Dataset CSV")->required();
  sweep_cmd->add_option("--out", sweep_out, "CSV path");
  sweep_cmd->add_option("--lo", sweep_lo, "Grid start");
  sweep_cmd->add_option("--hi", sweep_hi, "Grid end");
  sweep_cmd->add_option("--step", sweep_step, "Grid step");
  add_quant_flags(sweep_cmd, sweep_flags, true);

  // compare
  auto *compare_cmd = app.add_subcommand(
      "compare", "Uniform/log/power comparison table CSV");
  std::string compare_model, compare_dataset, compare_out = "compare.csv";
  std::string bits_list_str = "4,8";
  CommonQuantFlags compare_flags;
  compare_cmd->add_option("--model", compare_model, "Model directory")
      ->required();
  compare_cmd->add_option("--dataset", compare_dataset, "Dataset CSV")
      ->required();
  compare_cmd->add_option("--out", compare_out, "CSV path");
  compare_cmd->add_option("--bits", bits_list_str,
                          "Comma-separated bit widths, e.g. 3,4,6,8");
  add_quant_flags(compare_cmd, compare_flags, true);

  // stats
  auto *stats_cmd =
      app.add_subcommand("stats", "Per-layer weight moments JSON");
  std::string stats_model, stats_out;
  stats_cmd->add_option("--model", stats_model, "Model directory")->required();
  stats_cmd->add_option("--out", stats_out, "JSON path (default stdout)");

  // overhead
  auto *overhead_cmd = app.add_subcommand(
      "overhead", "Shape-derived cost estimate of the power evaluations");
  std::string overhead_model, overhead_out;
  int ov_bits_w = 8, ov_bits_a = 8, ov_iterations = 2, ov_fraction_bits = 16;
  overhead_cmd->add_option("--model", overhead_model, "Model directory")
      ->required();
  overhead_cmd->add_option("--out", overhead_out,
                           "JSON path (default stdout)");
  overhead_cmd->add_option("--bits-w", ov_bits_w, "Weight bit width");
  overhead_cmd->add_option("--bits-a", ov_bits_a, "Activation bit width");
  overhead_cmd->add_option("--iterations", ov_iterations,
                           "Newton steps per square root");
  overhead_cmd->add_option("--fraction-bits", ov_fraction_bits,
                           "Fixed-point fraction bits");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return kExitUsage;
  }

  auto emit = [&](const std::string &path, const std::string &content) {
    if (path.empty()) {
      std::cout << content;
    } else {
      write_text(path, content);
    }
  };

  if (fixture->parsed()) {
    const DatasetKind dk = dataset_kind_from_name(kind);
    Dataset ds;
    if (dk == DatasetKind::kBlobs) {
      BlobsConfig cfg;
      cfg.dims = dims;
      cfg.separation = separation;
      const auto arch = parse_arch(arch_str);
      cfg.clusters = static_cast<int>(arch.back());
      ds = generate_blobs(samples, seed, cfg);
    } else {
      ds = generate_rings(samples, seed, {});
    }
    const auto arch = parse_arch(arch_str);
    TrainConfig tc;
    tc.epochs = epochs;
    tc.learning_rate = lr;
    tc.seed = seed;
    const Model model = train_fixture(arch, ds, tc);
    write_model_dir(model, fixture_out);
    const fs::path data_path = fixture_data.empty()
                                   ? fs::path(fixture_out) / "train.csv"
                                   : fs::path(fixture_data);
    write_dataset_csv(ds, data_path);
    std::cout << "fixture: accuracy " << accuracy(model, ds) << ", model in "
              << fixture_out << ", data in " << data_path.string() << "\n";
    return kExitOk;
  }

  if (fit_cmd->parsed()) {
    const Model model = read_model_dir(model_dir);
    const Model folded = fold_batchnorm(model);
    const QuantizeOptions opts = to_options(fit_flags);
    const FitReport report =
        opts.fit_mode == FitMode::kGlobal
            ? fit_exponent(folded, BitWidth(opts.bits_w), opts.granularity,
                           opts.norm_p, opts.solver)
            : fit_per_layer(folded, BitWidth(opts.bits_w), opts.granularity,
                            opts.norm_p, opts.solver);
    emit(out_path, fit_report_to_json(report));
    return kExitOk;
  }

  if (quant_cmd->parsed()) {
    const Model model = read_model_dir(quant_model);
    const QuantizeOptions opts = to_options(quant_flags);
    Dataset calib;
    const Dataset *calib_ptr = nullptr;
    if (!quant_calib.empty()) {
      calib = read_dataset_csv(quant_calib);
      calib_ptr = &calib;
    }
    const QuantizeResult result = quantize_model(model, opts, calib_ptr);
    write_qmodel_dir(result.qmodel, quant_out);
    std::cout << "quantize: a " << result.fit.a_global() << ", epsilon "
              << result.qmodel.epsilon_total << ", wrote " << quant_out
              << "\n";
    return kExitOk;
  }

  if (eval_cmd->parsed()) {
    const Dataset ds = read_dataset_csv(eval_dataset);
    JsonWriter w;
    w.begin_object();
    if (is_qmodel_dir(eval_model)) {
      const QuantizedModel qm = read_qmodel_dir(eval_model);
      w.key("kind");
      w.value("quantized");
      w.key("accuracy");
      w.value(accuracy_quantized(qm, ds));
      w.key("epsilon_total");
      w.value(qm.epsilon_total);
      w.key("per_layer_epsilon");
      w.begin_array();
      for (const auto &l : qm.layers) w.value(l.epsilon);
      w.end_array();
    } else {
      const Model model = read_model_dir(eval_model);
      w.key("kind");
      w.value("float");
      w.key("accuracy");
      w.value(accuracy(model, ds));
    }
    w.end_object();
    emit(eval_out, w.result() + "\n");
    return kExitOk;
  }

  if (sweep_cmd->parsed()) {
    const Model model = read_model_dir(sweep_model);
    const Dataset ds = read_dataset_csv(sweep_dataset);
    SweepOptions opts;
    opts.bits_w = sweep_flags.bits_w;
    opts.bits_a = sweep_flags.bits_a;
    opts.granularity = parse_gran(sweep_flags.gran);
    opts.norm_p = sweep_flags.norm_p;
    opts.policy =
        ActRangePolicy{act_policy_from_name(sweep_flags.act_policy), 3.0};
    opts.bias_correct = sweep_flags.bias_correct;
    opts.lo = sweep_lo;
    opts.hi = sweep_hi;
    opts.step = sweep_step;
    const SweepCurve curve = sweep_a(model, ds, opts);
    std::string csv = "a,epsilon,accuracy\n";
    for (const auto &p : curve.points) {
      csv += csv_double(p.a) + "," + csv_double(p.epsilon) + "," +
             csv_double(p.accuracy) + "\n";
    }
    write_text(sweep_out, csv);
    std::cout << "sweep: " << curve.points.size() << " points, pearson r "
              << curve.correlation << ", wrote " << sweep_out << "\n";
    return kExitOk;
  }

  if (compare_cmd->parsed()) {
    const Model model = read_model_dir(compare_model);
    const Dataset ds = read_dataset_csv(compare_dataset);
    CompareOptions opts;
    opts.granularity = parse_gran(compare_flags.gran);
    opts.norm_p = compare_flags.norm_p;
    opts.solver = solver_from_name(compare_flags.solver);
    opts.policy =
        ActRangePolicy{act_policy_from_name(compare_flags.act_policy), 3.0};
    opts.bias_correct = compare_flags.bias_correct;
    const auto rows =
        compare_schemes(model, ds, parse_int_list(bits_list_str), opts);
    std::string csv = "scheme,bits_w,bits_a,a_star,accuracy,reconstruction_error\n";
    for (const auto &r : rows) {
      csv += scheme_name(r.scheme) + "," + std::to_string(r.bits_w) + "," +
             std::to_string(r.bits_a) + ",";
      if (r.a_star.has_value()) csv += csv_double(*r.a_star);
      csv += "," + csv_double(r.accuracy) + "," +
             csv_double(r.reconstruction_error) + "\n";
    }
    write_text(compare_out, csv);
    std::cout << "compare: " << rows.size() << " rows, wrote " << compare_out
              << "\n";
    return kExitOk;
  }

  if (stats_cmd->parsed()) {
    const Model model = read_model_dir(stats_model);
    const WeightStats stats = weight_stats(model);
    JsonWriter w;
    w.begin_object();
    w.key("layers");
    w.begin_array();
    for (const auto &l : stats.layers) {
      w.begin_object();
      w.key("std");
      w.value(l.std);
      w.key("skewness");
      if (l.skewness.has_value()) {
        w.value(*l.skewness);
      } else {
        w.null();
      }
      w.key("kurtosis");
      if (l.kurtosis.has_value()) {
        w.value(*l.kurtosis);
      } else {
        w.null();
      }
      w.end_object();
    }
    w.end_array();
    w.key("mean_std");
    w.value(stats.mean_std);
    w.key("mean_skewness");
    if (stats.mean_skewness.has_value()) {
      w.value(*stats.mean_skewness);
    } else {
      w.null();
    }
    w.key("mean_kurtosis");
    if (stats.mean_kurtosis.has_value()) {
      w.value(*stats.mean_kurtosis);
    } else {
      w.null();
    }
    w.end_object();
    emit(stats_out, w.result() + "\n");
    return kExitOk;
  }

  if (overhead_cmd->parsed()) {
    const Model model = read_model_dir(overhead_model);
    IntPowConfig cfg;
    cfg.iterations = ov_iterations;
    cfg.fraction_bits = ov_fraction_bits;
    const OverheadEstimate est =
        overhead_estimate(model, ov_bits_w, ov_bits_a, cfg);
    JsonWriter w;
    w.begin_object();
    w.key("mac_cost");
    w.value(est.mac_cost);
    w.key("power_eval_cost");
    w.value(est.power_eval_cost);
    w.key("overhead_fraction");
    w.value(est.overhead_fraction);
    w.end_object();
    emit(overhead_out, w.result() + "\n");
    return kExitOk;
  }

  return kExitUsage;
}

}  // namespace

int main(int argc, char **argv) {
  try {
    return run_cli(argc, argv);
  } catch (const ParseError &e) {
    std::cerr << "data error: " << e.what() << " (byte offset "
              << e.byte_offset() << ")\n";
    return kExitData;
  } catch (const ValidationError &e) {
    std::cerr << "data error: " << e.what() << " (field " << e.field()
              << ")\n";
    return kExitData;
  } catch (const StructureError &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const SolverError &e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DimensionError &e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DomainError &e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const NumericError &e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const RangeError &e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const TrainingError &e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error &e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
}
