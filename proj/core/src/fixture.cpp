#include "powq/fixture.hpp"

#include <algorithm>
#include <cmath>

namespace powq {

double Rng::uniform() {
  // 53 random bits into [0, 1), independent of library distributions.
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

double Rng::normal(double mean, double std) {
  return mean + std * normal();
}

DatasetKind dataset_kind_from_name(const std::string &name) {
  if (name == "blobs") return DatasetKind::kBlobs;
  if (name == "rings") return DatasetKind::kRings;
  throw ValidationError("unknown dataset kind '" + name + "'", "kind");
}

std::string dataset_kind_name(DatasetKind kind) {
  return kind == DatasetKind::kBlobs ? "blobs" : "rings";
}

Dataset generate_dataset(DatasetKind kind, std::size_t n,
                         std::uint64_t seed) {
  if (kind == DatasetKind::kBlobs) return generate_blobs(n, seed, {});
  return generate_rings(n, seed, {});
}

Dataset generate_blobs(std::size_t n, std::uint64_t seed,
                       BlobsConfig config) {
  if (n < 10) throw DomainError("dataset needs at least 10 samples");
  if (config.dims < 2 || config.dims > 8) {
    throw DomainError("blobs dims must lie in [2, 8]");
  }
  Rng rng(seed);

  // Cluster centers in the positive orthant, rejection-sampled until all
  // pairwise distances reach separation * sigma. The sampling box grows
  // with the requested separation so the rejection loop terminates.
  const double min_dist = config.separation * config.sigma;
  const double span = std::max(6.0, 2.0 * min_dist);
  std::vector<std::vector<double>> centers;
  while (centers.size() < static_cast<std::size_t>(config.clusters)) {
    std::vector<double> c(config.dims);
    for (auto &v : c) v = rng.uniform(config.center_lo, config.center_lo + span);
    bool ok = true;
    for (const auto &other : centers) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        d2 += (c[k] - other[k]) * (c[k] - other[k]);
      }
      if (d2 < min_dist * min_dist) {
        ok = false;
        break;
      }
    }
    if (ok) centers.push_back(std::move(c));
  }

  Dataset ds;
  ds.class_count = config.clusters;
  ds.labels.resize(n);
  std::vector<double> feats(n * config.dims);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % config.clusters);
    ds.labels[i] = label;
    for (std::size_t k = 0; k < config.dims; ++k) {
      const double v = rng.normal(centers[label][k], config.sigma);
      feats[i * config.dims + k] = std::max(v, 0.0);
    }
  }
  ds.features = Tensor({n, config.dims}, std::move(feats));
  return ds;
}

Dataset generate_rings(std::size_t n, std::uint64_t seed,
                       RingsConfig config) {
  if (n < 10) throw DomainError("dataset needs at least 10 samples");
  Rng rng(seed);
  Dataset ds;
  ds.class_count = 2;
  ds.labels.resize(n);
  std::vector<double> feats(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    ds.labels[i] = label;
    const double radius =
        (label == 0 ? config.inner_radius : config.outer_radius) +
        rng.normal(0.0, config.noise);
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    feats[i * 2] = std::max(config.center + radius * std::cos(angle), 0.0);
    feats[i * 2 + 1] = std::max(config.center + radius * std::sin(angle), 0.0);
  }
  ds.features = Tensor({n, 2}, std::move(feats));
  return ds;
}


namespace {

// Dense stack with a batch-norm stage between every hidden affine and its
// ReLU; the output layer is a plain affine. Mirrors the Model the trainer
// returns. weights[l] is [out x in], stored row-major.
struct Mlp {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  std::vector<std::vector<double>> gamma, beta;      // per hidden layer
  std::vector<std::vector<double>> bn_mean, bn_var;  // full-batch statistics
  std::vector<std::size_t> sizes;

  std::size_t layer_count() const { return weights.size(); }
  bool is_hidden(std::size_t l) const { return l + 1 < layer_count(); }
};

Mlp init_mlp(const std::vector<std::size_t> &arch, std::uint64_t seed) {
  Rng rng(seed);
  Mlp mlp;
  mlp.sizes = arch;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const std::size_t in = arch[l], out = arch[l + 1];
    std::vector<double> w(out * in);
    const double std_dev = std::sqrt(2.0 / static_cast<double>(in));
    for (auto &v : w) v = rng.normal(0.0, std_dev);
    mlp.weights.push_back(std::move(w));
    mlp.biases.emplace_back(out, 0.0);
    if (l + 2 < arch.size()) {
      mlp.gamma.emplace_back(out, 1.0);
      mlp.beta.emplace_back(out, 0.0);
      mlp.bn_mean.emplace_back(out, 0.0);
      mlp.bn_var.emplace_back(out, 1.0);
    }
  }
  return mlp;
}

using Batch = std::vector<double>;  // [n x width], row-major

void affine_forward(const Mlp &mlp, std::size_t l, const Batch &input,
                    std::size_t n, Batch &z) {
  const std::size_t in = mlp.sizes[l], out = mlp.sizes[l + 1];
  z.assign(n * out, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < out; ++i) {
      double acc = mlp.biases[l][i];
      for (std::size_t j = 0; j < in; ++j) {
        acc += mlp.weights[l][i * in + j] * input[r * in + j];
      }
      z[r * out + i] = acc;
    }
  }
}

void batchnorm_stats(const Batch &z, std::size_t n, std::size_t width,
                     std::vector<double> &mean, std::vector<double> &var) {
  for (std::size_t c = 0; c < width; ++c) {
    double m = 0.0;
    for (std::size_t r = 0; r < n; ++r) m += z[r * width + c];
    m /= static_cast<double>(n);
    double v = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = z[r * width + c] - m;
      v += d * d;
    }
    mean[c] = m;
    var[c] = v / static_cast<double>(n);
  }
}

}  // namespace

Model train_fixture(const std::vector<std::size_t> &arch,
                    const Dataset &dataset, TrainConfig config) {
  if (arch.size() < 2) {
    throw DomainError("fixture arch needs at least input and output sizes");
  }
  dataset.validate();
  if (dataset.size() == 0) throw DomainError("fixture dataset is empty");
  if (dataset.feature_dim() != arch.front()) {
    throw DimensionError("arch input size does not match dataset features");
  }
  if (static_cast<int>(arch.back()) != dataset.class_count) {
    throw DimensionError("arch output size does not match class count");
  }

  Mlp mlp = init_mlp(arch, config.seed);
  const std::size_t n = dataset.size();
  const std::size_t layer_count = mlp.layer_count();
  const std::size_t classes = mlp.sizes.back();

  // Full-batch gradient descent on softmax cross-entropy. Batch-norm runs
  // inside the training loop, so its full-batch statistics equal the
  // stored inference statistics and the returned model computes exactly
  // the trained function.
  std::vector<Batch> acts(layer_count + 1);   // inputs of each affine
  std::vector<Batch> z(layer_count);          // affine outputs
  std::vector<Batch> xhat(layer_count);       // normalized affine outputs
  std::vector<Batch> u(layer_count);          // batch-norm outputs

  acts[0] = dataset.features.data();

  auto forward = [&]() {
    for (std::size_t l = 0; l < layer_count; ++l) {
      const std::size_t out = mlp.sizes[l + 1];
      affine_forward(mlp, l, acts[l], n, z[l]);
      if (!mlp.is_hidden(l)) {
        acts[l + 1] = z[l];
        continue;
      }
      batchnorm_stats(z[l], n, out, mlp.bn_mean[l], mlp.bn_var[l]);
      xhat[l].assign(n * out, 0.0);
      u[l].assign(n * out, 0.0);
      acts[l + 1].assign(n * out, 0.0);
      for (std::size_t c = 0; c < out; ++c) {
        const double inv_std =
            1.0 / std::sqrt(mlp.bn_var[l][c] + kBatchNormEpsilon);
        for (std::size_t r = 0; r < n; ++r) {
          const double xh = (z[l][r * out + c] - mlp.bn_mean[l][c]) * inv_std;
          const double uu = mlp.gamma[l][c] * xh + mlp.beta[l][c];
          xhat[l][r * out + c] = xh;
          u[l][r * out + c] = uu;
          acts[l + 1][r * out + c] = uu > 0.0 ? uu : 0.0;
        }
      }
    }
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    forward();

    // Loss and logits gradient.
    const Batch &logits = acts[layer_count];
    Batch g(n * classes, 0.0);
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      double zmax = logits[r * classes];
      for (std::size_t c = 1; c < classes; ++c) {
        zmax = std::max(zmax, logits[r * classes + c]);
      }
      double zsum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        zsum += std::exp(logits[r * classes + c] - zmax);
      }
      for (std::size_t c = 0; c < classes; ++c) {
        const double p = std::exp(logits[r * classes + c] - zmax) / zsum;
        const double y =
            static_cast<int>(c) == dataset.labels[r] ? 1.0 : 0.0;
        g[r * classes + c] = (p - y) / static_cast<double>(n);
        if (y > 0.0) loss -= std::log(std::max(p, 1e-300));
      }
    }
    if (!std::isfinite(loss)) {
      throw TrainingError("loss became non-finite at epoch " +
                          std::to_string(epoch));
    }
    for (const auto &w : mlp.weights) {
      for (double v : w) {
        if (!std::isfinite(v)) {
          throw TrainingError("weights diverged at epoch " +
                              std::to_string(epoch));
        }
      }
    }

    // Backward, layer by layer over the whole batch.
    for (std::size_t l = layer_count; l-- > 0;) {
      const std::size_t in = mlp.sizes[l], out = mlp.sizes[l + 1];
      if (mlp.is_hidden(l)) {
        // Through the ReLU.
        for (std::size_t i = 0; i < n * out; ++i) {
          if (u[l][i] <= 0.0) g[i] = 0.0;
        }
        // Batch-norm parameters and backward through the normalization.
        Batch gz(n * out, 0.0);
        for (std::size_t c = 0; c < out; ++c) {
          const double inv_std =
              1.0 / std::sqrt(mlp.bn_var[l][c] + kBatchNormEpsilon);
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t r = 0; r < n; ++r) {
            sum_g += g[r * out + c];
            sum_gx += g[r * out + c] * xhat[l][r * out + c];
          }
          const double mean_g = sum_g / static_cast<double>(n);
          const double mean_gx = sum_gx / static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r) {
            gz[r * out + c] =
                mlp.gamma[l][c] * inv_std *
                (g[r * out + c] - mean_g -
                 xhat[l][r * out + c] * mean_gx);
          }
          mlp.gamma[l][c] -= config.learning_rate * sum_gx;
          mlp.beta[l][c] -= config.learning_rate * sum_g;
        }
        g = std::move(gz);
      }
      // Affine gradients, propagation with the pre-update weights, then
      // the parameter step.
      Batch g_in(n * in, 0.0);
      std::vector<double> grad_w(out * in, 0.0);
      std::vector<double> grad_b(out, 0.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t i = 0; i < out; ++i) {
          const double gi = g[r * out + i];
          if (gi == 0.0) continue;
          grad_b[i] += gi;
          for (std::size_t j = 0; j < in; ++j) {
            grad_w[i * in + j] += gi * acts[l][r * in + j];
            g_in[r * in + j] += mlp.weights[l][i * in + j] * gi;
          }
        }
      }
      for (std::size_t i = 0; i < out * in; ++i) {
        mlp.weights[l][i] -= config.learning_rate * grad_w[i];
      }
      for (std::size_t i = 0; i < out; ++i) {
        mlp.biases[l][i] -= config.learning_rate * grad_b[i];
      }
      g = std::move(g_in);
    }
  }

  // One more pass so the stored statistics describe the final weights.
  forward();

  Model model;
  model.input_shape = {arch.front()};
  for (std::size_t l = 0; l < layer_count; ++l) {
    DenseLayer dense;
    dense.weights = Tensor({mlp.sizes[l + 1], mlp.sizes[l]}, mlp.weights[l]);
    dense.bias = Tensor({mlp.sizes[l + 1]}, mlp.biases[l]);
    LayerSpec spec;
    spec.kind = std::move(dense);
    spec.activation = ActivationKind::kIdentity;
    model.layers.push_back(std::move(spec));

    if (mlp.is_hidden(l)) {
      const std::size_t out = mlp.sizes[l + 1];
      BatchNormLayer bn;
      bn.gamma = Tensor({out}, mlp.gamma[l]);
      bn.beta = Tensor({out}, mlp.beta[l]);
      bn.mean = Tensor({out}, mlp.bn_mean[l]);
      bn.var = Tensor({out}, mlp.bn_var[l]);
      LayerSpec bn_spec;
      bn_spec.kind = std::move(bn);
      bn_spec.activation = ActivationKind::kRelu;
      model.layers.push_back(std::move(bn_spec));
    }
  }
  model.validate();
  return model;
}

}  // namespace powq
