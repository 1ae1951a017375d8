#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "powq/quant.hpp"

using namespace powq;

namespace {

std::vector<std::int32_t> codes_of(const QuantizedTensor &q) {
  std::vector<std::int32_t> out(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = q.codes.at(i);
  return out;
}

}  // namespace

TEST_CASE("continuous power is the identity at a=1 and multiplicative") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> xd(1e-6, 1e3);
  std::uniform_real_distribution<double> ad(0.1, 3.0);
  for (int i = 0; i < 500; ++i) {
    const double x = xd(rng), y = xd(rng), a = ad(rng);
    CHECK(continuous_power(x, 1.0) == x);
    const double lhs = continuous_power(x, a) * continuous_power(y, a);
    const double rhs = continuous_power(x * y, a);
    CHECK(std::abs(lhs - rhs) / rhs < 1e-12);
    const double back = continuous_power(continuous_power(x, a), 1.0 / a);
    CHECK(std::abs(back - x) / x < 1e-12);
  }
  CHECK_THROWS_AS(continuous_power(-1.0, 0.5), DomainError);
  CHECK_THROWS_AS(continuous_power(0.0, 0.5), DomainError);
  CHECK_THROWS_AS(continuous_power(2.0, 0.0), DomainError);
}

TEST_CASE("uniform b=3 hand example") {
  const Tensor w = Tensor::vector({0.5, -1.0, 0.25});
  const QuantizedTensor q = quantize_tensor(w, QuantScheme::uniform(),
                                            BitWidth(3),
                                            Granularity::per_tensor());
  CHECK(codes_of(q) == std::vector<std::int32_t>{2, -3, 1});
  CHECK(q.scales[0] == 1.0 / 3.0);

  const Tensor rec = dequantize_tensor(q);
  CHECK(rec[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(rec[1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(rec[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("power a=0.5 b=3 hand example") {
  const Tensor w = Tensor::vector({0.25, -1.0});
  const QuantizedTensor q = quantize_tensor(w, QuantScheme::power(0.5),
                                            BitWidth(3),
                                            Granularity::per_tensor());
  CHECK(codes_of(q) == std::vector<std::int32_t>{2, -3});
  CHECK(q.scales[0] == 1.0 / 3.0);

  const Tensor rec = dequantize_tensor(q);
  CHECK(rec[0] == doctest::Approx(4.0 / 9.0).epsilon(1e-12));
  CHECK(rec[1] == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("max element always maps to full scale") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> ad(0.1, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor w =
        Tensor::vector(oracles::random_values(trial + 100, 33, -4.0, 4.0));
    const double a = ad(rng);
    const QuantizedTensor q = quantize_tensor(
        w, QuantScheme::power(a), BitWidth(4), Granularity::per_tensor());
    std::size_t arg = 0;
    for (std::size_t i = 1; i < w.size(); ++i) {
      if (std::abs(w[i]) > std::abs(w[arg])) arg = i;
    }
    CHECK(std::abs(q.codes.at(arg)) == 7);
  }
}

TEST_CASE("all-zero group gets sentinel scale and zero codes") {
  const Tensor w = Tensor::zeros({4});
  const QuantizedTensor q = quantize_tensor(w, QuantScheme::uniform(),
                                            BitWidth(4),
                                            Granularity::per_tensor());
  CHECK(q.scales[0] == 1.0);
  for (auto c : codes_of(q)) CHECK(c == 0);
  const Tensor rec = dequantize_tensor(q);
  for (double v : rec.data()) CHECK(v == 0.0);

  // Mixed case: one zero row among live rows, per-channel.
  const Tensor m({2, 2}, {0, 0, 1, -2});
  const QuantizedTensor qm = quantize_tensor(m, QuantScheme::uniform(),
                                             BitWidth(4),
                                             Granularity::per_channel(0));
  CHECK(qm.scales[0] == 1.0);
  CHECK(qm.scales[1] > 0.0);
  CHECK(qm.codes.at(0) == 0);
  CHECK(qm.codes.at(1) == 0);
}

TEST_CASE("exponent domain is validated") {
  CHECK_THROWS_AS(QuantScheme::power(0.0), DomainError);
  CHECK_THROWS_AS(QuantScheme::power(-0.5), DomainError);
  CHECK_THROWS_AS(QuantScheme::power(4.5), DomainError);
  CHECK_THROWS_AS(BitWidth(1), DomainError);
  CHECK_THROWS_AS(BitWidth(17), DomainError);
}

TEST_CASE("uniform and power{a=1} agree bitwise") {
  const Tensor w =
      Tensor::vector(oracles::random_normal(23, 200, 0.0, 1.5));
  for (int b : {3, 8}) {
    const QuantizedTensor qu = quantize_tensor(
        w, QuantScheme::uniform(), BitWidth(b), Granularity::per_tensor());
    const QuantizedTensor qp = quantize_tensor(
        w, QuantScheme::power(1.0), BitWidth(b), Granularity::per_tensor());
    CHECK(codes_of(qu) == codes_of(qp));
    CHECK(qu.scales.data() == qp.scales.data());
    const Tensor ru = dequantize_tensor(qu);
    const Tensor rp = dequantize_tensor(qp);
    CHECK(ru.data() == rp.data());
  }
}

TEST_CASE("code range, sign and order preservation across schemes") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> ad(0.1, 3.0);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor w = Tensor::vector(
        oracles::random_normal(trial + 500, 64, 0.0, 2.0));
    QuantScheme scheme;
    switch (trial % 3) {
      case 0: scheme = QuantScheme::uniform(); break;
      case 1: scheme = QuantScheme::power(ad(rng)); break;
      default: scheme = QuantScheme::log(); break;
    }
    const int bits = 3 + (trial % 4);
    const QuantizedTensor q =
        quantize_tensor(w, scheme, BitWidth(bits), Granularity::per_tensor());
    const int full = BitWidth(bits).signed_max();
    const Tensor rec = dequantize_tensor(q);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const auto c = q.codes.at(i);
      CHECK(c >= -full);
      CHECK(c <= full);
      if (c != 0) {
        CHECK((rec[i] > 0) == (w[i] > 0));
      }
    }
    for (std::size_t i = 0; i < w.size(); i += 7) {
      for (std::size_t j = 0; j < w.size(); ++j) {
        if (std::abs(w[i]) <= std::abs(w[j])) {
          CHECK(std::abs(q.codes.at(i)) <= std::abs(q.codes.at(j)));
        }
      }
    }
  }
}

TEST_CASE("idempotence: requantizing the reconstruction is stable") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> ad(0.3, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w = Tensor::vector(
        oracles::random_normal(trial + 900, 80, 0.0, 1.0));
    const QuantScheme scheme =
        trial % 2 ? QuantScheme::power(ad(rng)) : QuantScheme::uniform();
    const QuantizedTensor q =
        quantize_tensor(w, scheme, BitWidth(4), Granularity::per_tensor());
    const Tensor once = dequantize_tensor(q);
    const Tensor twice = dequantize_tensor(
        quantize_tensor(once, scheme, BitWidth(4), Granularity::per_tensor()));
    for (std::size_t i = 0; i < w.size(); ++i) {
      CHECK(std::abs(once[i] - twice[i]) < 1e-9);
    }
  }
}

TEST_CASE("log scheme codes store reflected exponents") {
  const Tensor w = Tensor::vector({1.0, 0.5, 0.25, -0.125, 0.0});
  const QuantizedTensor q = quantize_tensor(w, QuantScheme::log(), BitWidth(4),
                                            Granularity::per_tensor());
  // B=7: exponents 0,1,2,3 reflect to magnitudes 7,6,5,4; zero stays 0.
  CHECK(codes_of(q) == std::vector<std::int32_t>{7, 6, 5, -4, 0});
  const Tensor rec = dequantize_tensor(q);
  CHECK(rec[0] == doctest::Approx(1.0));
  CHECK(rec[1] == doctest::Approx(0.5));
  CHECK(rec[3] == doctest::Approx(-0.125));
  CHECK(rec[4] == 0.0);
}

TEST_CASE("codes live in 8-bit containers up to b=8, 32-bit beyond") {
  const Tensor w = Tensor::vector({0.5, -0.25, 1.0});
  const QuantizedTensor q8 = quantize_tensor(w, QuantScheme::uniform(),
                                             BitWidth(8),
                                             Granularity::per_tensor());
  CHECK(q8.codes.narrow());
  CHECK(q8.codes.raw8().size() == 3);
  const QuantizedTensor q16 = quantize_tensor(w, QuantScheme::uniform(),
                                              BitWidth(16),
                                              Granularity::per_tensor());
  CHECK_FALSE(q16.codes.narrow());
  CHECK(q16.codes.raw32().size() == 3);
}

TEST_CASE("unsigned quantization hand examples") {
  CHECK(quantize_unsigned(Tensor::vector({0.0}), 0.7, BitWidth(4), 1.0)
            .codes.at(0) == 0);
  CHECK(quantize_unsigned(Tensor::vector({1.0}), 0.7, BitWidth(4), 1.0)
            .codes.at(0) == 15);

  const QuantizedTensor q =
      quantize_unsigned(Tensor::vector({0.5}), 1.0, BitWidth(4), 1.0);
  CHECK(q.codes.at(0) == 8);
  CHECK(dequantize_tensor(q)[0] == doctest::Approx(8.0 / 15.0).epsilon(1e-15));

  CHECK_THROWS_AS(quantize_unsigned(Tensor::vector({-0.1}), 1.0, BitWidth(4),
                                    1.0),
                  DomainError);
  try {
    quantize_unsigned(Tensor::vector({0.5, -0.1}), 1.0, BitWidth(4), 1.0);
    FAIL("expected DomainError");
  } catch (const DomainError &e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}

TEST_CASE("reconstruction error hand values") {
  Model m = oracles::single_dense_model({0.5, -1.0, 0.25}, 1, 3);
  const double eps = reconstruction_error(m, QuantScheme::uniform(),
                                          BitWidth(3),
                                          Granularity::per_tensor(), 2);
  const double e0 = 0.5 - 2.0 / 3.0;
  const double e2 = 0.25 - 1.0 / 3.0;
  const double expected = std::sqrt(e0 * e0 + e2 * e2);  // = sqrt(5)/12
  CHECK(std::abs(eps - expected) <= 1e-12);
  CHECK(expected == doctest::Approx(0.18634).epsilon(1e-4));

  // Exactly representable weights reconstruct with zero error.
  Model exact = oracles::single_dense_model({1.0, 2.0 / 3.0, -1.0 / 3.0}, 1, 3);
  CHECK(reconstruction_error(exact, QuantScheme::uniform(), BitWidth(3),
                             Granularity::per_tensor(), 2) == 0.0);
}

TEST_CASE("per-channel error never exceeds per-tensor error") {
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> w = oracles::random_normal(trial + 1300, 96, 0.0, 1.0);
    // Spread the rows over very different magnitudes.
    for (std::size_t r = 0; r < 8; ++r) {
      for (std::size_t c = 0; c < 12; ++c) {
        w[r * 12 + c] *= std::pow(2.0, static_cast<double>(r) - 4.0);
      }
    }
    Model m = oracles::single_dense_model(w, 8, 12);
    // The log scheme anchors its geometric grid at the group max rather
    // than optimizing a scale, and per-channel anchors can land worse than
    // the per-tensor one, so the dominance property holds only for the
    // uniform/power family.
    for (auto scheme : {QuantScheme::uniform(), QuantScheme::power(0.6)}) {
      const double per_tensor = reconstruction_error(
          m, scheme, BitWidth(4), Granularity::per_tensor(), 2);
      const double per_channel = reconstruction_error(
          m, scheme, BitWidth(4), Granularity::per_channel(0), 2);
      CHECK(per_channel <= per_tensor + 1e-12);
    }
  }
}

TEST_CASE("lp distance validates inputs") {
  CHECK_THROWS_AS(
      lp_distance(Tensor::vector({1.0}), Tensor::vector({1.0, 2.0}), 2),
      DimensionError);
  CHECK_THROWS_AS(
      lp_distance(Tensor::vector({1.0}), Tensor::vector({2.0}), 3),
      DomainError);
  CHECK(lp_distance(Tensor::vector({1.0, -2.0}), Tensor::vector({0.0, 0.0}),
                    1) == doctest::Approx(3.0));
}

TEST_CASE("quantize_tensor rejects empty input") {
  CHECK_THROWS_AS(quantize_tensor(Tensor(), QuantScheme::uniform(),
                                  BitWidth(4), Granularity::per_tensor()),
                  DomainError);
}
