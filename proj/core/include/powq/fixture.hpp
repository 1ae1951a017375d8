#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "powq/model.hpp"

namespace powq {

/// Deterministic random draws built on mt19937_64 with explicit bit
/// handling, so the same seed gives the same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double std);
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

enum class DatasetKind { kBlobs, kRings };

DatasetKind dataset_kind_from_name(const std::string &name);
std::string dataset_kind_name(DatasetKind kind);

struct BlobsConfig {
  std::size_t dims = 2;       // 2..8
  int clusters = 3;
  double sigma = 0.8;
  double separation = 3.5;    // minimum center distance, in sigmas
  double center_lo = 2.0;     // lower corner of the center sampling box
};

struct RingsConfig {
  double inner_radius = 2.5;
  double outer_radius = 5.0;
  double noise = 0.25;
  double center = 8.0;  // keeps every coordinate positive
};

/// Synthetic classification data, deterministic for a fixed seed. Blobs
/// are Gaussian clusters placed in the positive orthant; rings are two
/// concentric noisy circles, which no linear classifier separates.
/// Features are clamped at zero so first-layer inputs stay non-negative.
Dataset generate_dataset(DatasetKind kind, std::size_t n, std::uint64_t seed);
Dataset generate_blobs(std::size_t n, std::uint64_t seed, BlobsConfig config);
Dataset generate_rings(std::size_t n, std::uint64_t seed, RingsConfig config);

struct TrainConfig {
  std::size_t epochs = 500;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

/// Trains a dense stack of the given layer sizes (input, hidden...,
/// classes) by deterministic full-batch gradient descent on softmax
/// cross-entropy. The returned model carries a batch-norm layer after the
/// first dense layer, populated with the training-set statistics of that
/// layer's pre-activation outputs and constructed as an exact identity
/// map, so the trained function is unchanged while the stats stay
/// available for activation-range derivation.
Model train_fixture(const std::vector<std::size_t> &arch,
                    const Dataset &dataset, TrainConfig config);

}  // namespace powq
