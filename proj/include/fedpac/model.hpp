#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedpac/numerics.hpp"
#include "fedpac/rng.hpp"

namespace fedpac {

inline constexpr double kLeakySlope = 0.01;

struct ModelDims {
  std::size_t input = 16;
  std::vector<std::size_t> hidden{64};
  std::size_t feature = 16;
  std::size_t classes = 10;

  bool operator==(const ModelDims&) const = default;
};

/// weight is out x in.
struct DenseLayer {
  Matrix weight;
  Vector bias;

  bool operator==(const DenseLayer&) const = default;
};

/// Feature extractor f_theta: every layer but the last is followed by a
/// LeakyReLU; the last layer emits the feature vector linearly.
struct Extractor {
  std::vector<DenseLayer> layers;

  bool operator==(const Extractor&) const = default;
};

/// Decoupled model: extractor theta plus a bias-free linear head phi (K x d).
struct ModelParams {
  ModelDims dims;
  Extractor theta;
  Matrix phi;

  bool operator==(const ModelParams&) const = default;
};

struct Sample {
  Vector x;
  std::size_t y = 0;
};

/// Per-class feature centroids. `present` marks classes that have ever been
/// observed; `stale` marks values carried over from an earlier round.
struct CentroidSet {
  Matrix values;
  std::vector<std::size_t> counts;
  std::vector<bool> present;
  std::vector<bool> stale;

  static CentroidSet absent(std::size_t classes, std::size_t dim);
  std::size_t classes() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
};

/// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
ModelParams init_params(const ModelDims& dims, RngStream& rng);

/// Zero-valued extractor with the same layer shapes as `like`.
Extractor zeros_like(const Extractor& like);
std::size_t parameter_count(const Extractor& e);
Vector flatten(const Extractor& e);
void unflatten(std::span<const double> flat, Extractor& e);
/// y += s * x, layer by layer.
void axpy(double s, const Extractor& x, Extractor& y);
void validate_shapes(const ModelParams& params);

struct ForwardResult {
  Vector feature;
  Vector logits;
};

ForwardResult forward(const ModelParams& params, std::span<const double> x);
Vector extract_feature(const Extractor& theta, std::span<const double> x);
/// argmax of phi * f(x); ties go to the lowest class index.
std::size_t predict(const ModelParams& params, std::span<const double> x);

struct LossGrads {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double regularizer = 0.0;
  Extractor grad_theta;
  Matrix grad_phi;
};

/// Which gradient blocks to compute. Skipping a block leaves it zero.
struct GradBlocks {
  bool theta = true;
  bool phi = true;
};

/// Mean cross-entropy plus the feature-alignment penalty
///   (lambda / n) * sum_l (1/d) * ||f(x_l) - c_{y_l}||^2,
/// where samples whose class centroid is not present contribute nothing.
/// `centroids` may be null, which is the same as every class being absent.
LossGrads loss_and_grads(const ModelParams& params, std::span<const Sample* const> batch,
                         const CentroidSet* centroids, double lambda, GradBlocks blocks = {});
LossGrads loss_and_grads(const ModelParams& params, std::span<const Sample> batch,
                         const CentroidSet* centroids, double lambda, GradBlocks blocks = {});

}  // namespace fedpac
