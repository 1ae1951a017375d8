#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include <json.hpp>

#include "oracles.hpp"
#include "powq/fixture.hpp"
#include "powq/io.hpp"

using namespace powq;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string &tag) {
    path = fs::temp_directory_path() /
           ("powq_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path &p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool tensors_equal(const Tensor &a, const Tensor &b) {
  return a.shape() == b.shape() && a.data() == b.data();
}

Model trained_fixture(Dataset *ds_out) {
  Dataset ds = generate_dataset(DatasetKind::kBlobs, 120, 5);
  TrainConfig tc;
  tc.epochs = 200;
  tc.seed = 5;
  Model m = train_fixture({2, 8, 3}, ds, tc);
  *ds_out = std::move(ds);
  return m;
}

}  // namespace

TEST_CASE("json writer prints doubles that round-trip exactly") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-1e6, 1e6);
  for (int i = 0; i < 1000; ++i) {
    double v = d(rng) * std::pow(10.0, (i % 13) - 6);
    const std::string s = JsonWriter::format_double(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(JsonWriter::format_double(1.0) == "1.0");
}

TEST_CASE("model directory round trip is byte-stable") {
  TempDir tmp("model_rt");
  Dataset ds;
  const Model m = trained_fixture(&ds);
  const fs::path dir1 = tmp.path / "m1";
  const fs::path dir2 = tmp.path / "m2";
  write_model_dir(m, dir1);
  const Model read1 = read_model_dir(dir1);
  write_model_dir(read1, dir2);

  CHECK(slurp(dir1 / "model.json") == slurp(dir2 / "model.json"));
  CHECK(slurp(dir1 / "weights.bin") == slurp(dir2 / "weights.bin"));

  // Reading twice reproduces the same tensors bitwise.
  const Model read2 = read_model_dir(dir1);
  REQUIRE(read1.layers.size() == read2.layers.size());
  REQUIRE(read1.layers.size() == m.layers.size());
  for (std::size_t i = 0; i < read1.layers.size(); ++i) {
    if (read1.layers[i].has_weights()) {
      CHECK(tensors_equal(read1.layers[i].weights(),
                          read2.layers[i].weights()));
      CHECK(tensors_equal(read1.layers[i].bias(), read2.layers[i].bias()));
    } else {
      const auto &a = std::get<BatchNormLayer>(read1.layers[i].kind);
      const auto &b = std::get<BatchNormLayer>(read2.layers[i].kind);
      CHECK(tensors_equal(a.gamma, b.gamma));
      CHECK(tensors_equal(a.var, b.var));
    }
    CHECK(read1.layers[i].activation == m.layers[i].activation);
  }
}

TEST_CASE("weights serialize as little-endian float32") {
  TempDir tmp("model_le");
  Model m = oracles::single_dense_model({1.0}, 1, 1);
  write_model_dir(m, tmp.path / "m");
  const std::string bin = slurp(tmp.path / "m" / "weights.bin");
  REQUIRE(bin.size() == 8);  // one weight + one bias
  // 1.0f little-endian
  CHECK(static_cast<unsigned char>(bin[0]) == 0x00);
  CHECK(static_cast<unsigned char>(bin[1]) == 0x00);
  CHECK(static_cast<unsigned char>(bin[2]) == 0x80);
  CHECK(static_cast<unsigned char>(bin[3]) == 0x3f);
}

TEST_CASE("qmodel round trip preserves codes, scales and inference") {
  TempDir tmp("qmodel_rt");
  Dataset ds;
  const Model m = trained_fixture(&ds);
  for (int bits : {4, 16}) {
    QuantizeOptions opts;
    opts.bits_w = bits;
    opts.bits_a = bits;
    const QuantizeResult qr = quantize_model(m, opts, &ds);
    const fs::path dir1 = tmp.path / ("q1_" + std::to_string(bits));
    const fs::path dir2 = tmp.path / ("q2_" + std::to_string(bits));
    write_qmodel_dir(qr.qmodel, dir1);
    const QuantizedModel read1 = read_qmodel_dir(dir1);
    write_qmodel_dir(read1, dir2);
    CHECK(slurp(dir1 / "qmodel.json") == slurp(dir2 / "qmodel.json"));
    CHECK(slurp(dir1 / "qweights.bin") == slurp(dir2 / "qweights.bin"));

    REQUIRE(read1.layers.size() == qr.qmodel.layers.size());
    for (std::size_t i = 0; i < read1.layers.size(); ++i) {
      const auto &a = qr.qmodel.layers[i];
      const auto &b = read1.layers[i];
      REQUIRE(a.qweights.size() == b.qweights.size());
      for (std::size_t j = 0; j < a.qweights.size(); ++j) {
        CHECK(a.qweights.codes.at(j) == b.qweights.codes.at(j));
      }
      CHECK(a.qweights.scales.data() == b.qweights.scales.data());
      CHECK(a.corrected_bias.data() == b.corrected_bias.data());
      CHECK(a.act_scale == b.act_scale);
      CHECK(a.zero_point == b.zero_point);
      CHECK(a.exponent == b.exponent);
    }
    // The reloaded model computes the same outputs bit for bit.
    for (std::size_t i = 0; i < 20; ++i) {
      const Tensor x = ds.row(i);
      CHECK(forward_quantized(qr.qmodel, x).data() ==
            forward_quantized(read1, x).data());
    }
  }
}

TEST_CASE("per-layer qmodel round trip keeps each exponent") {
  TempDir tmp("qmodel_pl");
  Dataset ds;
  const Model m = trained_fixture(&ds);
  QuantizeOptions opts;
  opts.bits_w = 4;
  opts.bits_a = 4;
  opts.fit_mode = FitMode::kPerLayer;
  const QuantizeResult qr = quantize_model(m, opts, &ds);
  write_qmodel_dir(qr.qmodel, tmp.path / "q");
  const QuantizedModel read = read_qmodel_dir(tmp.path / "q");
  CHECK(read.fit_mode == FitMode::kPerLayer);
  REQUIRE(read.layers.size() == qr.qmodel.layers.size());
  for (std::size_t i = 0; i < read.layers.size(); ++i) {
    CHECK(read.layers[i].exponent == qr.qmodel.layers[i].exponent);
  }
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(forward_quantized(qr.qmodel, ds.row(i)).data() ==
          forward_quantized(read, ds.row(i)).data());
  }
}

TEST_CASE("dataset csv round trip") {
  TempDir tmp("csv_rt");
  const Dataset ds = generate_dataset(DatasetKind::kRings, 64, 11);
  const fs::path p1 = tmp.path / "d1.csv";
  const fs::path p2 = tmp.path / "d2.csv";
  write_dataset_csv(ds, p1);
  const Dataset read1 = read_dataset_csv(p1);
  write_dataset_csv(read1, p2);
  CHECK(slurp(p1) == slurp(p2));
  CHECK(read1.features.data() == ds.features.data());
  CHECK(read1.labels == ds.labels);
  CHECK(read1.class_count == ds.class_count);

  const std::string header = slurp(p1).substr(0, slurp(p1).find('\n'));
  CHECK(header == "f0,f1,label");
}

TEST_CASE("malformed files raise parse errors with a byte offset") {
  TempDir tmp("bad_json");
  std::ofstream(tmp.path / "model.json") << "{\"format\": \"powq-model-v1\",";
  std::ofstream(tmp.path / "weights.bin") << "";
  try {
    read_model_dir(tmp.path);
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(e.byte_offset() > 0);
  }

  std::ofstream(tmp.path / "d.csv") << "f0,f1,label\n1.0,oops,0\n";
  try {
    read_dataset_csv(tmp.path / "d.csv");
    FAIL("expected ParseError");
  } catch (const ParseError &e) {
    CHECK(e.byte_offset() == 12);  // start of the offending row
  }
}

TEST_CASE("invariant violations raise validation errors naming the field") {
  TempDir tmp("bad_field");
  Dataset ds;
  const Model m = trained_fixture(&ds);
  QuantizeOptions opts;
  opts.bits_w = 4;
  opts.bits_a = 4;
  const QuantizeResult qr = quantize_model(m, opts, &ds);
  write_qmodel_dir(qr.qmodel, tmp.path / "q");

  // Corrupt s_x to a non-positive value.
  std::string text = slurp(tmp.path / "q" / "qmodel.json");
  nlohmann::json j = nlohmann::json::parse(text);
  j["layers"][0]["s_x"] = -1.0;
  std::ofstream(tmp.path / "q" / "qmodel.json") << j.dump();
  try {
    read_qmodel_dir(tmp.path / "q");
    FAIL("expected ValidationError");
  } catch (const ValidationError &e) {
    CHECK(e.field().find("s_x") != std::string::npos);
  }

  // Wrong header marker.
  j["layers"][0]["s_x"] = 0.5;
  j["format"] = "something-else";
  std::ofstream(tmp.path / "q" / "qmodel.json") << j.dump();
  try {
    read_qmodel_dir(tmp.path / "q");
    FAIL("expected ValidationError");
  } catch (const ValidationError &e) {
    CHECK(e.field() == "format");
  }
}

TEST_CASE("fit report serialization carries the trace") {
  Dataset ds;
  const Model m = fold_batchnorm(trained_fixture(&ds));
  const FitReport r = fit_exponent(m, BitWidth(4), Granularity::per_channel(0));
  const std::string json_text = fit_report_to_json(r);
  const nlohmann::json j = nlohmann::json::parse(json_text);
  CHECK(j["mode"] == "global");
  CHECK(j["solver"] == "nelder_mead");
  CHECK(j["a_star"].get<double>() == r.a_global());
  CHECK(j["trace"].size() == r.trace.size());
}

TEST_CASE("qmodel detection") {
  TempDir tmp("detect");
  Dataset ds;
  const Model m = trained_fixture(&ds);
  write_model_dir(m, tmp.path / "m");
  CHECK_FALSE(is_qmodel_dir(tmp.path / "m"));
  QuantizeOptions opts;
  const QuantizeResult qr = quantize_model(m, opts, &ds);
  write_qmodel_dir(qr.qmodel, tmp.path / "q");
  CHECK(is_qmodel_dir(tmp.path / "q"));
}
