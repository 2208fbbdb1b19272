#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "fedpac/client.hpp"
#include "fedpac/model.hpp"
#include "fedpac/qp.hpp"
#include "fedpac/theory.hpp"

namespace fedpac::server {

struct GlobalState {
  Extractor theta;
  CentroidSet centroids;
  std::vector<Matrix> heads;  // personalized head per client
  Matrix weights;             // m x m, row i = alpha_i
  std::size_t round = 0;
};

/// Sample-size weighted mean of the participants' extractors.
Extractor aggregate_extractors(std::span<const client::ClientUpdate> updates);

/// Count-weighted mean of local centroids per class. Classes nobody saw this
/// round keep the previous value and are flagged stale.
CentroidSet aggregate_centroids(std::span<const client::ClientUpdate> updates, const CentroidSet& previous);

/// Weight-estimation QP for `target` with Lambda replaced by the identity:
///   Q = diag(V_j / n_j) + D,  D_jj' = sum_y (h_i,y - h_j,y) . (h_i,y - h_j',y).
qp::SimplexQP assemble_qp(std::size_t target, std::span<const client::FeatureStats> stats,
                          std::span<const std::size_t> sample_counts);

struct Personalization {
  std::vector<Matrix> heads;  // one per update, same order
  Matrix alpha;               // updates.size() square, row i = weights of target i
};

/// Solves one QP per participant and mixes the participants' heads.
Personalization personalize_heads(std::span<const client::ClientUpdate> updates,
                                  const qp::SolverOptions& options = {});

/// Weighted sum of heads: sum_j alpha_j phi_j.
Matrix combine_heads(std::span<const double> alpha, std::span<const Matrix> heads);

/// Closed-form expected testing loss of client `target` for combination
/// weights `alpha` over the classifiers g_j = E[g_hat_j]:
///   chi2(P_X Q(g_i), sum_j alpha_j P_X Q(g_j)) + sum_j alpha_j^2 V_j / n_j
///   + chi2(P_i, P_X Q(g_i)).
double testing_loss_analytic(const theory::DiscreteWorld& world, std::span<const double> alpha,
                             std::span<const theory::LinearClassifier> g_means, std::span<const double> variances,
                             std::span<const std::size_t> sample_counts, std::size_t target,
                             const theory::Joint& target_joint);

/// m x m grid, one row per target client, comma separated.
void write_weight_csv(const std::filesystem::path& path, const Matrix& weights);

}  // namespace fedpac::server
