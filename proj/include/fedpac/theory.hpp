#pragma once

// Finite-sample-space analysis of the linear discriminative model
//   Q(y|x) = (1 + f(x)^T g(y)) / K
// under the chi-square style loss sum_{x,y} (P - Q)^2 / P_X(x).

#include <span>

#include "fedpac/model.hpp"
#include "fedpac/numerics.hpp"
#include "fedpac/qp.hpp"
#include "fedpac/rng.hpp"

namespace fedpac::theory {

/// Joint distribution table over (x, y): S rows, K columns.
using Joint = Matrix;

/// A finite input space shared by all clients (one marginal P_X) with a
/// fixed feature table. Construction re-centers the features so that
/// E_{P_X}[f(X)] = 0.
struct DiscreteWorld {
  Matrix features;   // S x d
  Vector marginal;   // S
  std::size_t classes = 0;
  Matrix second_moment;  // E_{P_X}[f f^T], d x d

  std::size_t inputs() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
};

DiscreteWorld make_world(Matrix features, Vector marginal, std::size_t classes);

/// Random world: marginal ~ Dirichlet(1) bounded away from zero, features
/// standard normal before re-centering.
DiscreteWorld random_world(std::size_t inputs, std::size_t classes, std::size_t dim, RngStream& rng);

/// Random joint P(x,y) = P_X(x) P(y|x) with the world's marginal.
Joint random_joint(const DiscreteWorld& world, RngStream& rng);

/// g(y) stacked as rows: K x d.
struct LinearClassifier {
  Matrix g;
};

double chi2_distance(const DiscreteWorld& world, const Joint& p, const Joint& q);

/// P_X(x) (1 + f(x)^T g(y)) / K.
Joint model_joint(const DiscreteWorld& world, const LinearClassifier& g);

enum class RidgePolicy {
  kAuto,  // add 1e-8 * I when E[f f^T] is singular
  kNone,  // singular E[f f^T] is an error
};
inline constexpr double kRidge = 1e-8;

/// Stationary point of chi2(P_hat, P_X Q(g)):
///   g(y) = K * Lambda^{-1} * sum_x P_hat(x,y) f(x).
LinearClassifier fit_classifier_closed_form(const DiscreteWorld& world, const Joint& p_hat,
                                            RidgePolicy ridge = RidgePolicy::kAuto);

/// (2/n) sum_l (c_{y_l} - f(x_l))^T g(y_l) / K
double generalization_gap_estimate(std::span<const Vector> features, std::span<const std::size_t> labels,
                                   const CentroidSet& centroids, const LinearClassifier& g);

/// chi2(P_true, P_X Q(g)) = empirical + gap + constant, exactly:
///   empirical = chi2(P_hat, P_X Q(g))
///   gap       = (2/K) sum (P_hat - P_true)(x,y) f(x)^T g(y)
///   constant  = chi2(P_true, P_hat) + 2 sum (P_true - P_hat) P_hat / P_X
///               - (2/K) sum (P_true - P_hat)
/// gap is the only g-dependent remainder and is linear in g.
struct LossDecomposition {
  double empirical = 0.0;
  double gap = 0.0;
  double constant = 0.0;
};

LossDecomposition decompose_test_loss(const DiscreteWorld& world, const Joint& p_true, const Joint& p_hat,
                                      const LinearClassifier& g);

struct KlChi2 {
  double kl = 0.0;
  double chi2 = 0.0;
};

/// Compares KL(U || Q) and the chi-square divergence for the uniform
/// conditional U = 1/K against the model Q(y|x) = (1 + eps f(x)^T g(y)) / K.
/// g is centered across classes first so that Q is normalized.
KlChi2 kl_chi2_relation_check(const DiscreteWorld& world, const LinearClassifier& g, double eps);

/// h(y) = sum_x P(x,y) f(x) = P_Y(y) E[f | y], as K x d.
Matrix class_weighted_means(const DiscreteWorld& world, const Joint& p);

/// n * E[chi2(P_X Q(g_hat), P_X Q(g))] for an n-sample multinomial draw,
/// with the exact feature second moment of the world.
double variance_term(const DiscreteWorld& world, const Joint& p);

/// Weight-estimation QP with the exact Lambda^{-1} metric:
///   Q = diag(V_j / n_j) + D,  D_jj' = sum_y (h_i - h_j)^T Lambda^{-1} (h_i - h_j').
qp::SimplexQP assemble_qp_exact(const DiscreteWorld& world, std::size_t target, std::span<const Joint> joints,
                                std::span<const std::size_t> sample_counts);

/// Empirical joint of n iid draws from p.
Joint sample_empirical(const Joint& p, std::size_t n, RngStream& rng);

}  // namespace fedpac::theory
