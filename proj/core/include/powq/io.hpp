#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "powq/fit.hpp"
#include "powq/model.hpp"
#include "powq/pipeline.hpp"

namespace powq {

/// Deterministic JSON emitter: insertion-ordered keys, floats printed with
/// 17 significant digits so doubles survive a round trip exactly, two-space
/// indentation. Byte-identical output for identical input.
class JsonWriter {
 public:
  std::string result() const { return out_; }

  void begin_object();
  void end_object();
  void begin_array();
  void end_array();
  void key(const std::string &name);
  void value(const std::string &v);
  void value(const char *v);
  void value(double v);
  void value(std::int64_t v);
  void value(int v) { value(static_cast<std::int64_t>(v)); }
  void value(std::size_t v) { value(static_cast<std::int64_t>(v)); }
  void value(bool v);
  void null();

  static std::string format_double(double v);

 private:
  void separator();
  void newline();

  std::string out_;
  int depth_ = 0;
  bool need_comma_ = false;
  bool after_key_ = false;
};

/// Model directory: model.json manifest plus weights.bin holding every
/// tensor as little-endian 32-bit floats, concatenated in manifest order.
/// Offsets are in elements.
void write_model_dir(const Model &model, const std::filesystem::path &dir);
Model read_model_dir(const std::filesystem::path &dir);

/// Quantized model directory: qmodel.json manifest plus qweights.bin with
/// the integer codes (int8 when bits_w <= 8, else int32, little-endian).
/// Scales, corrected biases, zero points, and activation scales live in
/// the manifest as exact 17-digit numbers.
void write_qmodel_dir(const QuantizedModel &qm,
                      const std::filesystem::path &dir);
QuantizedModel read_qmodel_dir(const std::filesystem::path &dir);

/// Dataset CSV with header f0,...,f{d-1},label.
void write_dataset_csv(const Dataset &ds, const std::filesystem::path &path);
Dataset read_dataset_csv(const std::filesystem::path &path);

std::string fit_report_to_json(const FitReport &report);

/// True if the directory holds a quantized model (qmodel.json).
bool is_qmodel_dir(const std::filesystem::path &dir);

}  // namespace powq
