#include "fedpac/server.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

#include "fedpac/format.hpp"

namespace fedpac::server {

Extractor aggregate_extractors(std::span<const client::ClientUpdate> updates) {
  if (updates.empty()) throw std::invalid_argument("aggregate_extractors: no updates");
  double total = 0.0;
  for (const auto& u : updates) total += static_cast<double>(u.n);
  if (!(total > 0.0)) throw std::invalid_argument("aggregate_extractors: zero total sample count");
  Extractor out = zeros_like(updates.front().theta);
  for (const auto& u : updates) axpy(static_cast<double>(u.n) / total, u.theta, out);
  return out;
}

CentroidSet aggregate_centroids(std::span<const client::ClientUpdate> updates, const CentroidSet& previous) {
  CentroidSet out = CentroidSet::absent(previous.classes(), previous.dim());
  for (const auto& u : updates) {
    if (u.local_centroids.classes() != previous.classes() || u.local_centroids.dim() != previous.dim()) {
      throw ShapeError("aggregate_centroids: centroid shape mismatch");
    }
    for (std::size_t k = 0; k < out.classes(); ++k) {
      const std::size_t n = u.local_centroids.counts[k];
      if (n == 0) continue;
      axpy(static_cast<double>(n), u.local_centroids.values.row(k), out.values.row(k));
      out.counts[k] += n;
    }
  }
  for (std::size_t k = 0; k < out.classes(); ++k) {
    if (out.counts[k] > 0) {
      for (double& v : out.values.row(k)) v /= static_cast<double>(out.counts[k]);
      out.present[k] = true;
    } else {
      auto prev = previous.values.row(k);
      std::copy(prev.begin(), prev.end(), out.values.row(k).begin());
      out.present[k] = previous.present[k];
      out.stale[k] = true;
    }
  }
  return out;
}

qp::SimplexQP assemble_qp(std::size_t target, std::span<const client::FeatureStats> stats,
                          std::span<const std::size_t> sample_counts) {
  const std::size_t m = stats.size();
  if (m == 0 || sample_counts.size() != m || target >= m) throw ShapeError("assemble_qp: inconsistent inputs");
  const Matrix& hi = stats[target].h;
  for (const auto& s : stats) {
    if (s.h.rows() != hi.rows() || s.h.cols() != hi.cols()) throw ShapeError("assemble_qp: statistic shape mismatch");
  }
  std::vector<Matrix> diff;
  diff.reserve(m);
  for (const auto& s : stats) diff.push_back(hi - s.h);

  Matrix q(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t jp = j; jp < m; ++jp) {
      const double v = dot(diff[j].data(), diff[jp].data());
      q(j, jp) = v;
      q(jp, j) = v;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (sample_counts[j] == 0) throw std::invalid_argument("assemble_qp: zero sample count");
    q(j, j) += std::max(stats[j].variance, 0.0) / static_cast<double>(sample_counts[j]);
  }
  return qp::SimplexQP{std::move(q)};
}

Matrix combine_heads(std::span<const double> alpha, std::span<const Matrix> heads) {
  if (alpha.size() != heads.size() || heads.empty()) throw ShapeError("combine_heads: length mismatch");
  Matrix out(heads.front().rows(), heads.front().cols());
  for (std::size_t j = 0; j < heads.size(); ++j) {
    if (alpha[j] == 0.0) continue;
    out += heads[j] * alpha[j];
  }
  return out;
}

Personalization personalize_heads(std::span<const client::ClientUpdate> updates, const qp::SolverOptions& options) {
  const std::size_t m = updates.size();
  if (m == 0) throw std::invalid_argument("personalize_heads: no updates");
  std::vector<client::FeatureStats> stats;
  std::vector<std::size_t> counts;
  std::vector<Matrix> heads;
  for (const auto& u : updates) {
    stats.push_back(u.stats);
    counts.push_back(u.n);
    heads.push_back(u.phi);
  }
  Personalization out;
  out.alpha = Matrix(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    const qp::SimplexPoint alpha = qp::solve(assemble_qp(i, stats, counts), options);
    std::copy(alpha.alpha.begin(), alpha.alpha.end(), out.alpha.row(i).begin());
    out.heads.push_back(combine_heads(alpha.alpha, heads));
  }
  return out;
}

double testing_loss_analytic(const theory::DiscreteWorld& world, std::span<const double> alpha,
                             std::span<const theory::LinearClassifier> g_means, std::span<const double> variances,
                             std::span<const std::size_t> sample_counts, std::size_t target,
                             const theory::Joint& target_joint) {
  const std::size_t m = alpha.size();
  if (g_means.size() != m || variances.size() != m || sample_counts.size() != m || target >= m) {
    throw ShapeError("testing_loss_analytic: inconsistent inputs");
  }
  const theory::Joint own = theory::model_joint(world, g_means[target]);
  theory::Joint mixed(world.inputs(), world.classes);
  for (std::size_t j = 0; j < m; ++j) mixed += theory::model_joint(world, g_means[j]) * alpha[j];
  double variance = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    variance += alpha[j] * alpha[j] * variances[j] / static_cast<double>(sample_counts[j]);
  }
  return theory::chi2_distance(world, own, mixed) + variance + theory::chi2_distance(world, target_joint, own);
}

void write_weight_csv(const std::filesystem::path& path, const Matrix& weights) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (std::size_t i = 0; i < weights.rows(); ++i) {
    for (std::size_t j = 0; j < weights.cols(); ++j) {
      if (j) out << ',';
      out << format_real(weights(i, j));
    }
    out << '\n';
  }
}

}  // namespace fedpac::server
