#include "powq/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace powq {

namespace fs = std::filesystem;
using nlohmann::json;

void JsonWriter::separator() {
  if (after_key_) {
    after_key_ = false;
    return;
  }
  if (need_comma_) out_ += ",";
  newline();
}

void JsonWriter::newline() {
  out_ += "\n";
  out_.append(static_cast<std::size_t>(depth_) * 2, ' ');
}

void JsonWriter::begin_object() {
  separator();
  out_ += "{";
  ++depth_;
  need_comma_ = false;
}

void JsonWriter::end_object() {
  --depth_;
  newline();
  out_ += "}";
  need_comma_ = true;
}

void JsonWriter::begin_array() {
  separator();
  out_ += "[";
  ++depth_;
  need_comma_ = false;
}

void JsonWriter::end_array() {
  --depth_;
  newline();
  out_ += "]";
  need_comma_ = true;
}

void JsonWriter::key(const std::string &name) {
  if (need_comma_) out_ += ",";
  newline();
  out_ += "\"" + name + "\": ";
  need_comma_ = false;
  after_key_ = true;
}

void JsonWriter::value(const std::string &v) {
  separator();
  out_ += "\"";
  for (char c : v) {
    if (c == '"' || c == '\\') out_ += '\\';
    out_ += c;
  }
  out_ += "\"";
  need_comma_ = true;
}

void JsonWriter::value(const char *v) { value(std::string(v)); }

std::string JsonWriter::format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  // Keep the token a valid JSON number.
  if (!std::strpbrk(buf, ".eE")) std::strcat(buf, ".0");
  return buf;
}

void JsonWriter::value(double v) {
  separator();
  out_ += format_double(v);
  need_comma_ = true;
}

void JsonWriter::value(std::int64_t v) {
  separator();
  out_ += std::to_string(v);
  need_comma_ = true;
}

void JsonWriter::value(bool v) {
  separator();
  out_ += v ? "true" : "false";
  need_comma_ = true;
}

void JsonWriter::null() {
  separator();
  out_ += "null";
  need_comma_ = true;
}

namespace {

void write_file(const fs::path &path, const std::string &content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw Error("failed writing " + path.string());
}

std::string read_file(const fs::path &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json parse_json_file(const fs::path &path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error &e) {
    throw ParseError("malformed JSON in " + path.string() + ": " + e.what(),
                     e.byte);
  }
}

void append_f32_le(std::string &out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  out += static_cast<char>(u & 0xff);
  out += static_cast<char>((u >> 8) & 0xff);
  out += static_cast<char>((u >> 16) & 0xff);
  out += static_cast<char>((u >> 24) & 0xff);
}

double read_f32_le(const std::string &in, std::size_t elem) {
  const std::size_t off = elem * 4;
  if (off + 4 > in.size()) {
    throw ParseError("weights.bin too short for element " +
                         std::to_string(elem),
                     in.size());
  }
  std::uint32_t u = 0;
  for (int i = 3; i >= 0; --i) {
    u = (u << 8) | static_cast<unsigned char>(in[off + i]);
  }
  float f;
  std::memcpy(&f, &u, 4);
  return static_cast<double>(f);
}

void append_i32_le(std::string &out, std::int32_t v) {
  const std::uint32_t u = static_cast<std::uint32_t>(v);
  out += static_cast<char>(u & 0xff);
  out += static_cast<char>((u >> 8) & 0xff);
  out += static_cast<char>((u >> 16) & 0xff);
  out += static_cast<char>((u >> 24) & 0xff);
}

std::int32_t read_i32_le(const std::string &in, std::size_t elem) {
  const std::size_t off = elem * 4;
  if (off + 4 > in.size()) {
    throw ParseError("qweights.bin too short for element " +
                         std::to_string(elem),
                     in.size());
  }
  std::uint32_t u = 0;
  for (int i = 3; i >= 0; --i) {
    u = (u << 8) | static_cast<unsigned char>(in[off + i]);
  }
  return static_cast<std::int32_t>(u);
}

void tensor_entry(JsonWriter &w, const char *name, const Tensor &t,
                  std::size_t offset) {
  w.key(name);
  w.begin_object();
  w.key("offset");
  w.value(offset);
  w.key("shape");
  w.begin_array();
  for (std::size_t e : t.shape()) w.value(e);
  w.end_array();
  w.end_object();
}

struct TensorRef {
  std::size_t offset = 0;
  std::vector<std::size_t> shape;
};

TensorRef parse_tensor_ref(const json &j, const std::string &field) {
  if (!j.is_object() || !j.contains("offset") || !j.contains("shape")) {
    throw ValidationError("tensor entry missing offset/shape", field);
  }
  TensorRef ref;
  ref.offset = j["offset"].get<std::size_t>();
  for (const auto &e : j["shape"]) ref.shape.push_back(e.get<std::size_t>());
  return ref;
}

Tensor load_tensor(const std::string &bin, const TensorRef &ref) {
  const std::size_t n = shape_numel(ref.shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = read_f32_le(bin, ref.offset + i);
  }
  return Tensor(ref.shape, std::move(data));
}

std::string padding_name(Padding p) {
  return p == Padding::kValid ? "valid" : "same";
}

Padding padding_from_name(const std::string &name) {
  if (name == "valid") return Padding::kValid;
  if (name == "same") return Padding::kSame;
  throw ValidationError("unknown padding '" + name + "'", "padding");
}

void float_array(JsonWriter &w, const char *name,
                 const std::vector<double> &values) {
  w.key(name);
  w.begin_array();
  for (double v : values) w.value(v);
  w.end_array();
}

std::vector<double> parse_float_array(const json &j, const std::string &field) {
  if (!j.is_array()) throw ValidationError("expected an array", field);
  std::vector<double> out;
  for (const auto &e : j) out.push_back(e.get<double>());
  return out;
}

}  // namespace

void write_model_dir(const Model &model, const fs::path &dir) {
  model.validate();
  fs::create_directories(dir);

  std::string bin;
  std::size_t offset = 0;
  auto push_tensor = [&](const Tensor &t) {
    const std::size_t at = offset;
    for (double v : t.data()) append_f32_le(bin, v);
    offset += t.size();
    return at;
  };

  JsonWriter w;
  w.begin_object();
  w.key("format");
  w.value("powq-model-v1");
  w.key("input_shape");
  w.begin_array();
  for (std::size_t e : model.input_shape) w.value(e);
  w.end_array();
  w.key("layers");
  w.begin_array();
  for (const auto &layer : model.layers) {
    w.begin_object();
    if (layer.is_dense()) {
      const auto &d = std::get<DenseLayer>(layer.kind);
      w.key("kind");
      w.value("dense");
      w.key("activation");
      w.value(activation_name(layer.activation));
      tensor_entry(w, "weights", d.weights, push_tensor(d.weights));
      tensor_entry(w, "bias", d.bias, push_tensor(d.bias));
    } else if (layer.is_conv()) {
      const auto &c = std::get<Conv2dLayer>(layer.kind);
      w.key("kind");
      w.value("conv2d");
      w.key("activation");
      w.value(activation_name(layer.activation));
      w.key("stride");
      w.value(c.stride);
      w.key("padding");
      w.value(padding_name(c.padding));
      tensor_entry(w, "kernel", c.kernel, push_tensor(c.kernel));
      tensor_entry(w, "bias", c.bias, push_tensor(c.bias));
    } else {
      const auto &bn = std::get<BatchNormLayer>(layer.kind);
      w.key("kind");
      w.value("batchnorm");
      w.key("activation");
      w.value(activation_name(layer.activation));
      tensor_entry(w, "gamma", bn.gamma, push_tensor(bn.gamma));
      tensor_entry(w, "beta", bn.beta, push_tensor(bn.beta));
      tensor_entry(w, "mean", bn.mean, push_tensor(bn.mean));
      tensor_entry(w, "var", bn.var, push_tensor(bn.var));
    }
    w.end_object();
  }
  w.end_array();
  w.end_object();

  write_file(dir / "model.json", w.result() + "\n");
  write_file(dir / "weights.bin", bin);
}

Model read_model_dir(const fs::path &dir) {
  const json manifest = parse_json_file(dir / "model.json");
  if (!manifest.contains("format") ||
      manifest["format"].get<std::string>() != "powq-model-v1") {
    throw ValidationError("not a powq model manifest", "format");
  }
  const std::string bin = read_file(dir / "weights.bin");

  Model model;
  for (const auto &e : manifest.at("input_shape")) {
    model.input_shape.push_back(e.get<std::size_t>());
  }
  std::size_t index = 0;
  for (const auto &jl : manifest.at("layers")) {
    const std::string field = "layers[" + std::to_string(index) + "]";
    if (!jl.contains("kind")) {
      throw ValidationError("layer entry missing kind", field + ".kind");
    }
    const std::string kind = jl["kind"].get<std::string>();
    LayerSpec spec;
    spec.activation =
        activation_from_name(jl.value("activation", std::string("identity")));
    if (kind == "dense") {
      DenseLayer d;
      d.weights =
          load_tensor(bin, parse_tensor_ref(jl.at("weights"), field));
      d.bias = load_tensor(bin, parse_tensor_ref(jl.at("bias"), field));
      spec.kind = std::move(d);
    } else if (kind == "conv2d") {
      Conv2dLayer c;
      c.kernel = load_tensor(bin, parse_tensor_ref(jl.at("kernel"), field));
      c.bias = load_tensor(bin, parse_tensor_ref(jl.at("bias"), field));
      c.stride = jl.value("stride", std::size_t{1});
      c.padding = padding_from_name(jl.value("padding", std::string("valid")));
      spec.kind = std::move(c);
    } else if (kind == "batchnorm") {
      BatchNormLayer bn;
      bn.gamma = load_tensor(bin, parse_tensor_ref(jl.at("gamma"), field));
      bn.beta = load_tensor(bin, parse_tensor_ref(jl.at("beta"), field));
      bn.mean = load_tensor(bin, parse_tensor_ref(jl.at("mean"), field));
      bn.var = load_tensor(bin, parse_tensor_ref(jl.at("var"), field));
      spec.kind = std::move(bn);
    } else {
      throw ValidationError("unknown layer kind '" + kind + "'",
                            field + ".kind");
    }
    model.layers.push_back(std::move(spec));
    ++index;
  }
  model.validate();
  return model;
}

void write_qmodel_dir(const QuantizedModel &qm, const fs::path &dir) {
  fs::create_directories(dir);
  const bool narrow = qm.bits_w <= 8;

  std::string bin;
  std::size_t offset = 0;
  auto push_codes = [&](const QuantizedTensor &q) {
    const std::size_t at = offset;
    for (std::size_t i = 0; i < q.size(); ++i) {
      if (narrow) {
        bin += static_cast<char>(static_cast<std::int8_t>(q.codes.at(i)));
      } else {
        append_i32_le(bin, q.codes.at(i));
      }
    }
    offset += q.size();
    return at;
  };

  JsonWriter w;
  w.begin_object();
  w.key("format");
  w.value("powq-qmodel-v1");
  w.key("input_shape");
  w.begin_array();
  for (std::size_t e : qm.input_shape) w.value(e);
  w.end_array();
  w.key("bits_w");
  w.value(qm.bits_w);
  w.key("bits_a");
  w.value(qm.bits_a);
  w.key("scheme");
  w.value(scheme_name(qm.scheme));
  w.key("granularity");
  w.value(qm.granularity.kind == GranularityKind::kPerAxis ? "per-channel"
                                                           : "per-tensor");
  w.key("fit_mode");
  w.value(fit_mode_name(qm.fit_mode));
  w.key("accumulation");
  w.value(accumulation_name(qm.accumulation));
  w.key("norm_p");
  w.value(qm.norm_p);
  w.key("epsilon_total");
  w.value(qm.epsilon_total);
  w.key("a");
  if (qm.fit_mode == FitMode::kPerLayer) {
    w.begin_array();
    for (const auto &l : qm.layers) w.value(l.exponent);
    w.end_array();
  } else {
    w.value(qm.layers.empty() ? 1.0 : qm.layers.front().exponent);
  }
  w.key("layers");
  w.begin_array();
  for (const auto &l : qm.layers) {
    w.begin_object();
    w.key("kind");
    w.value(l.is_conv ? "conv2d" : "dense");
    w.key("activation");
    w.value(activation_name(l.activation));
    if (l.is_conv) {
      w.key("stride");
      w.value(l.stride);
      w.key("padding");
      w.value(padding_name(l.padding));
    }
    w.key("codes");
    w.begin_object();
    w.key("offset");
    w.value(push_codes(l.qweights));
    w.key("shape");
    w.begin_array();
    for (std::size_t e : l.qweights.shape) w.value(e);
    w.end_array();
    w.end_object();
    float_array(w, "scales", l.qweights.scales.data());
    float_array(w, "bias", l.corrected_bias.data());
    w.key("c_sigma");
    w.value(l.zero_point);
    w.key("s_x");
    w.value(l.act_scale);
    w.key("act_range");
    w.value(l.act_range);
    w.key("a");
    w.value(l.exponent);
    w.key("epsilon");
    w.value(l.epsilon);
    w.end_object();
  }
  w.end_array();
  w.end_object();

  write_file(dir / "qmodel.json", w.result() + "\n");
  write_file(dir / "qweights.bin", bin);
}

QuantizedModel read_qmodel_dir(const fs::path &dir) {
  const json manifest = parse_json_file(dir / "qmodel.json");
  if (!manifest.contains("format") ||
      manifest["format"].get<std::string>() != "powq-qmodel-v1") {
    throw ValidationError("not a powq quantized-model manifest", "format");
  }
  const std::string bin = read_file(dir / "qweights.bin");

  QuantizedModel qm;
  for (const auto &e : manifest.at("input_shape")) {
    qm.input_shape.push_back(e.get<std::size_t>());
  }
  qm.bits_w = manifest.at("bits_w").get<int>();
  qm.bits_a = manifest.at("bits_a").get<int>();
  BitWidth(qm.bits_w);
  BitWidth(qm.bits_a);
  qm.scheme = scheme_from_name(manifest.at("scheme").get<std::string>());
  const std::string gran = manifest.at("granularity").get<std::string>();
  qm.granularity = gran == "per-channel" ? Granularity::per_channel(0)
                                         : Granularity::per_tensor();
  qm.fit_mode = fit_mode_from_name(manifest.at("fit_mode").get<std::string>());
  qm.accumulation =
      accumulation_from_name(manifest.at("accumulation").get<std::string>());
  qm.norm_p = manifest.at("norm_p").get<int>();
  qm.epsilon_total = manifest.at("epsilon_total").get<double>();

  const bool narrow = qm.bits_w <= 8;
  std::size_t index = 0;
  for (const auto &jl : manifest.at("layers")) {
    const std::string field = "layers[" + std::to_string(index) + "]";
    QuantizedLayer l;
    const std::string kind = jl.at("kind").get<std::string>();
    l.is_conv = kind == "conv2d";
    if (l.is_conv) {
      l.stride = jl.value("stride", std::size_t{1});
      l.padding = padding_from_name(jl.value("padding", std::string("valid")));
    }
    l.activation =
        activation_from_name(jl.at("activation").get<std::string>());
    l.zero_point = jl.at("c_sigma").get<double>();
    l.act_scale = jl.at("s_x").get<double>();
    l.act_range = jl.value("act_range", 1.0);
    l.exponent = jl.at("a").get<double>();
    l.epsilon = jl.value("epsilon", 0.0);
    if (!(l.act_scale > 0.0)) {
      throw ValidationError("s_x must be positive", field + ".s_x");
    }
    if (l.zero_point < 0.0) {
      throw ValidationError("c_sigma must be non-negative",
                            field + ".c_sigma");
    }

    const TensorRef ref = parse_tensor_ref(jl.at("codes"), field + ".codes");
    const std::size_t n = shape_numel(ref.shape);
    QuantizedTensor q;
    q.shape = ref.shape;
    q.bits = qm.bits_w;
    q.signedness = Signedness::kSigned;
    q.granularity = qm.granularity;
    const double a_layer = l.exponent;
    switch (qm.scheme) {
      case SchemeKind::kUniform: q.scheme = QuantScheme::uniform(); break;
      case SchemeKind::kLog: q.scheme = QuantScheme::log(); break;
      case SchemeKind::kPower: q.scheme = QuantScheme::power(a_layer); break;
    }
    q.codes = CodeArray(n, qm.bits_w, Signedness::kSigned);
    const int full = BitWidth(qm.bits_w).signed_max();
    for (std::size_t i = 0; i < n; ++i) {
      std::int32_t code;
      if (narrow) {
        const std::size_t off = ref.offset + i;
        if (off >= bin.size()) {
          throw ParseError("qweights.bin too short for element " +
                               std::to_string(off),
                           bin.size());
        }
        code = static_cast<std::int8_t>(bin[off]);
      } else {
        code = read_i32_le(bin, ref.offset + i);
      }
      if (code < -full || code > full) {
        throw ValidationError("code " + std::to_string(code) +
                                  " outside [-B, B] for b=" +
                                  std::to_string(qm.bits_w),
                              field + ".codes");
      }
      q.codes.set(i, code);
    }
    const std::vector<double> scales =
        parse_float_array(jl.at("scales"), field + ".scales");
    for (double s : scales) {
      if (!(s > 0.0)) {
        throw ValidationError("scales must be positive", field + ".scales");
      }
    }
    q.scales = Tensor({scales.size()}, scales);
    l.qweights = std::move(q);
    l.dequantized_weights = dequantize_tensor(l.qweights);

    const std::vector<double> bias =
        parse_float_array(jl.at("bias"), field + ".bias");
    l.corrected_bias = Tensor({bias.size()}, bias);

    qm.layers.push_back(std::move(l));
    ++index;
  }
  return qm;
}

void write_dataset_csv(const Dataset &ds, const fs::path &path) {
  ds.validate();
  std::string out;
  const std::size_t d = ds.feature_dim();
  for (std::size_t j = 0; j < d; ++j) {
    out += "f" + std::to_string(j) + ",";
  }
  out += "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out += JsonWriter::format_double(ds.features[i * d + j]);
      out += ",";
    }
    out += std::to_string(ds.labels[i]);
    out += "\n";
  }
  write_file(path, out);
}

Dataset read_dataset_csv(const fs::path &path) {
  const std::string text = read_file(path);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError("empty dataset file " + path.string(), 0);
  }
  std::size_t d = 0;
  {
    std::istringstream header(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(header, col, ',')) cols.push_back(col);
    if (cols.empty() || cols.back() != "label") {
      throw ValidationError("dataset header must end with 'label'", "header");
    }
    d = cols.size() - 1;
  }

  std::vector<double> feats;
  std::vector<int> labels;
  std::size_t byte = line.size() + 1;
  std::size_t lineno = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) {
      byte += 1;
      continue;
    }
    std::istringstream row(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(row, cell, ',')) cells.push_back(cell);
    if (cells.size() != d + 1) {
      throw ParseError("row " + std::to_string(lineno) + " has " +
                           std::to_string(cells.size()) + " columns, expected " +
                           std::to_string(d + 1),
                       byte);
    }
    for (std::size_t j = 0; j < d; ++j) {
      try {
        feats.push_back(std::stod(cells[j]));
      } catch (const std::exception &) {
        throw ParseError("row " + std::to_string(lineno) +
                             ": bad float '" + cells[j] + "'",
                         byte);
      }
    }
    try {
      labels.push_back(std::stoi(cells[d]));
    } catch (const std::exception &) {
      throw ParseError("row " + std::to_string(lineno) + ": bad label '" +
                           cells[d] + "'",
                       byte);
    }
    max_label = std::max(max_label, labels.back());
    byte += line.size() + 1;
  }
  Dataset ds;
  ds.class_count = max_label + 1;
  ds.labels = std::move(labels);
  ds.features = Tensor({ds.labels.size(), d}, std::move(feats));
  ds.validate();
  return ds;
}

std::string fit_report_to_json(const FitReport &report) {
  JsonWriter w;
  w.begin_object();
  w.key("mode");
  w.value(fit_mode_name(report.mode));
  w.key("solver");
  w.value(solver_name(report.solver));
  w.key("a_star");
  if (report.mode == FitMode::kPerLayer) {
    w.begin_array();
    for (double a : report.a_star) w.value(a);
    w.end_array();
  } else {
    w.value(report.a_global());
  }
  w.key("epsilon_at_a_star");
  w.value(report.epsilon_at_a_star);
  w.key("epsilon_at_uniform");
  w.value(report.epsilon_at_uniform);
  w.key("trace");
  w.begin_array();
  for (const auto &[a, eps] : report.trace) {
    w.begin_array();
    w.value(a);
    w.value(eps);
    w.end_array();
  }
  w.end_array();
  w.end_object();
  return w.result() + "\n";
}

bool is_qmodel_dir(const fs::path &dir) {
  return fs::exists(dir / "qmodel.json");
}

}  // namespace powq
