#include "fedpac/theory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fedpac::theory {

namespace {

void require_joint(const DiscreteWorld& world, const Joint& p, const char* what) {
  if (p.rows() != world.inputs() || p.cols() != world.classes) {
    throw ShapeError(std::string(what) + ": joint table shape does not match world");
  }
}

Matrix lambda_inverse(const DiscreteWorld& world, RidgePolicy ridge) {
  try {
    return inverse_spd(world.second_moment);
  } catch (const NumericError&) {
    if (ridge == RidgePolicy::kNone) {
      throw NumericError("feature second moment is singular and ridge is disabled");
    }
    Matrix reg = world.second_moment;
    for (std::size_t i = 0; i < reg.rows(); ++i) reg(i, i) += kRidge;
    return inverse_spd(reg);
  }
}

}  // namespace

DiscreteWorld make_world(Matrix features, Vector marginal, std::size_t classes) {
  if (classes < 2) throw ShapeError("make_world: need at least two classes");
  if (features.rows() != marginal.size() || features.rows() == 0) {
    throw ShapeError("make_world: marginal length must equal the number of inputs");
  }
  double total = 0.0;
  for (double p : marginal) {
    if (!(p >= 0.0)) throw std::invalid_argument("make_world: marginal must be nonnegative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) throw std::invalid_argument("make_world: marginal must sum to 1");

  const std::size_t s = features.rows();
  const std::size_t d = features.cols();
  Vector mean(d, 0.0);
  for (std::size_t x = 0; x < s; ++x) axpy(marginal[x], features.row(x), mean);
  for (std::size_t x = 0; x < s; ++x) axpy(-1.0, mean, features.row(x));

  Matrix lambda(d, d);
  for (std::size_t x = 0; x < s; ++x) {
    auto f = features.row(x);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) lambda(a, b) += marginal[x] * f[a] * f[b];
  }
  return DiscreteWorld{std::move(features), std::move(marginal), classes, std::move(lambda)};
}

DiscreteWorld random_world(std::size_t inputs, std::size_t classes, std::size_t dim, RngStream& rng) {
  Vector marginal(inputs);
  double total = 0.0;
  for (double& p : marginal) {
    p = 0.2 + rng.gamma(1.0);
    total += p;
  }
  for (double& p : marginal) p /= total;
  // Re-normalize against rounding so the sum check in make_world holds.
  const double residual = 1.0 - std::accumulate(marginal.begin(), marginal.end(), 0.0);
  marginal.back() += residual;
  Matrix features(inputs, dim);
  for (double& v : features.data()) v = rng.normal();
  return make_world(std::move(features), std::move(marginal), classes);
}

Joint random_joint(const DiscreteWorld& world, RngStream& rng) {
  Joint p(world.inputs(), world.classes);
  for (std::size_t x = 0; x < world.inputs(); ++x) {
    Vector cond(world.classes);
    double total = 0.0;
    for (double& c : cond) {
      c = rng.gamma(1.0);
      total += c;
    }
    for (std::size_t y = 0; y < world.classes; ++y) p(x, y) = world.marginal[x] * cond[y] / total;
  }
  return p;
}

double chi2_distance(const DiscreteWorld& world, const Joint& p, const Joint& q) {
  require_joint(world, p, "chi2_distance");
  require_joint(world, q, "chi2_distance");
  double total = 0.0;
  for (std::size_t x = 0; x < world.inputs(); ++x) {
    const double px = world.marginal[x];
    if (!(px > 0.0)) throw std::domain_error("chi2_distance: zero marginal probability");
    double row = 0.0;
    for (std::size_t y = 0; y < world.classes; ++y) {
      const double diff = p(x, y) - q(x, y);
      row += diff * diff;
    }
    total += row / px;
  }
  return total;
}

Joint model_joint(const DiscreteWorld& world, const LinearClassifier& g) {
  if (g.g.rows() != world.classes || g.g.cols() != world.dim()) {
    throw ShapeError("model_joint: classifier shape does not match world");
  }
  const double inv_k = 1.0 / static_cast<double>(world.classes);
  Joint out(world.inputs(), world.classes);
  for (std::size_t x = 0; x < world.inputs(); ++x) {
    auto f = world.features.row(x);
    for (std::size_t y = 0; y < world.classes; ++y) {
      out(x, y) = world.marginal[x] * (1.0 + dot(f, g.g.row(y))) * inv_k;
    }
  }
  return out;
}

Matrix class_weighted_means(const DiscreteWorld& world, const Joint& p) {
  require_joint(world, p, "class_weighted_means");
  Matrix h(world.classes, world.dim());
  for (std::size_t x = 0; x < world.inputs(); ++x) {
    auto f = world.features.row(x);
    for (std::size_t y = 0; y < world.classes; ++y) axpy(p(x, y), f, h.row(y));
  }
  return h;
}

LinearClassifier fit_classifier_closed_form(const DiscreteWorld& world, const Joint& p_hat, RidgePolicy ridge) {
  const Matrix inv = lambda_inverse(world, ridge);
  const Matrix h = class_weighted_means(world, p_hat);
  // g(y) = K * Lambda^{-1} h(y); rows of h times the symmetric inverse.
  Matrix g = matmul(h, inv);
  g *= static_cast<double>(world.classes);
  return LinearClassifier{std::move(g)};
}

double generalization_gap_estimate(std::span<const Vector> features, std::span<const std::size_t> labels,
                                   const CentroidSet& centroids, const LinearClassifier& g) {
  if (features.size() != labels.size()) throw ShapeError("generalization_gap_estimate: length mismatch");
  if (features.empty()) throw std::invalid_argument("generalization_gap_estimate: no samples");
  const std::size_t classes = g.g.rows();
  double total = 0.0;
  for (std::size_t l = 0; l < features.size(); ++l) {
    const std::size_t y = labels[l];
    if (y >= classes || y >= centroids.classes()) throw ShapeError("generalization_gap_estimate: label out of range");
    if (!centroids.present[y]) throw std::invalid_argument("generalization_gap_estimate: missing centroid for a label");
    auto c = centroids.values.row(y);
    auto gy = g.g.row(y);
    const Vector& f = features[l];
    if (f.size() != c.size() || f.size() != gy.size()) throw ShapeError("generalization_gap_estimate: dim mismatch");
    for (std::size_t j = 0; j < f.size(); ++j) total += (c[j] - f[j]) * gy[j];
  }
  return 2.0 * total / (static_cast<double>(features.size()) * static_cast<double>(classes));
}

LossDecomposition decompose_test_loss(const DiscreteWorld& world, const Joint& p_true, const Joint& p_hat,
                                      const LinearClassifier& g) {
  require_joint(world, p_true, "decompose_test_loss");
  require_joint(world, p_hat, "decompose_test_loss");
  const Joint model = model_joint(world, g);
  const double inv_k = 1.0 / static_cast<double>(world.classes);
  LossDecomposition out;
  out.empirical = chi2_distance(world, p_hat, model);
  out.constant = chi2_distance(world, p_true, p_hat);
  double gap = 0.0, cross = 0.0, mass = 0.0;
  for (std::size_t x = 0; x < world.inputs(); ++x) {
    auto f = world.features.row(x);
    for (std::size_t y = 0; y < world.classes; ++y) {
      const double diff = p_true(x, y) - p_hat(x, y);
      gap -= diff * dot(f, g.g.row(y));
      cross += diff * p_hat(x, y) / world.marginal[x];
      mass += diff;
    }
  }
  out.gap = 2.0 * inv_k * gap;
  out.constant += 2.0 * cross - 2.0 * inv_k * mass;
  return out;
}

KlChi2 kl_chi2_relation_check(const DiscreteWorld& world, const LinearClassifier& g, double eps) {
  if (g.g.rows() != world.classes || g.g.cols() != world.dim()) {
    throw ShapeError("kl_chi2_relation_check: classifier shape does not match world");
  }
  const std::size_t k = world.classes;
  const double uniform = 1.0 / static_cast<double>(k);
  Matrix centered = g.g;
  Vector mean(world.dim(), 0.0);
  for (std::size_t y = 0; y < k; ++y) axpy(uniform, g.g.row(y), mean);
  for (std::size_t y = 0; y < k; ++y) axpy(-1.0, mean, centered.row(y));

  KlChi2 out;
  for (std::size_t x = 0; x < world.inputs(); ++x) {
    auto f = world.features.row(x);
    const double px = world.marginal[x];
    for (std::size_t y = 0; y < k; ++y) {
      const double q = uniform * (1.0 + eps * dot(f, centered.row(y)));
      if (!(q > 0.0)) throw std::domain_error("kl_chi2_relation_check: nonpositive model probability");
      out.kl += px * uniform * std::log(uniform / q);
      out.chi2 += px * (uniform - q) * (uniform - q) / uniform;
    }
  }
  // Rounding can push an exact zero slightly negative.
  out.kl = std::max(out.kl, 0.0);
  return out;
}

double variance_term(const DiscreteWorld& world, const Joint& p) {
  require_joint(world, p, "variance_term");
  const Matrix inv = lambda_inverse(world, RidgePolicy::kAuto);
  const Matrix h = class_weighted_means(world, p);
  const std::size_t d = world.dim();
  double total = 0.0;
  for (std::size_t y = 0; y < world.classes; ++y) {
    // Cov_y = sum_x P(x,y) f f^T - h(y) h(y)^T
    Matrix cov(d, d);
    for (std::size_t x = 0; x < world.inputs(); ++x) {
      auto f = world.features.row(x);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) cov(a, b) += p(x, y) * f[a] * f[b];
    }
    auto hy = h.row(y);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov(a, b) -= hy[a] * hy[b];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) total += inv(a, b) * cov(b, a);
  }
  return total;
}

qp::SimplexQP assemble_qp_exact(const DiscreteWorld& world, std::size_t target, std::span<const Joint> joints,
                                std::span<const std::size_t> sample_counts) {
  const std::size_t m = joints.size();
  if (sample_counts.size() != m || target >= m) throw ShapeError("assemble_qp_exact: inconsistent inputs");
  const Matrix inv = lambda_inverse(world, RidgePolicy::kAuto);
  std::vector<Matrix> h;
  h.reserve(m);
  for (const Joint& p : joints) h.push_back(class_weighted_means(world, p));

  const std::size_t d = world.dim();
  // diff_j(y) = h_target(y) - h_j(y)
  std::vector<Matrix> diff;
  for (std::size_t j = 0; j < m; ++j) diff.push_back(h[target] - h[j]);

  Matrix q(m, m);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t jp = j; jp < m; ++jp) {
      double s = 0.0;
      for (std::size_t y = 0; y < world.classes; ++y) {
        auto a = diff[j].row(y);
        auto b = diff[jp].row(y);
        for (std::size_t r = 0; r < d; ++r)
          for (std::size_t c = 0; c < d; ++c) s += a[r] * inv(r, c) * b[c];
      }
      q(j, jp) = s;
      q(jp, j) = s;
    }
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (sample_counts[j] == 0) throw std::invalid_argument("assemble_qp_exact: zero sample count");
    q(j, j) += variance_term(world, joints[j]) / static_cast<double>(sample_counts[j]);
  }
  return qp::SimplexQP{std::move(q)};
}

Joint sample_empirical(const Joint& p, std::size_t n, RngStream& rng) {
  if (n == 0) throw std::invalid_argument("sample_empirical: n must be positive");
  const auto cells = p.data();
  Vector cdf(cells.size());
  std::partial_sum(cells.begin(), cells.end(), cdf.begin());
  const double total = cdf.back();
  Joint out(p.rows(), p.cols());
  auto counts = out.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t idx = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), cells.size() - 1);
    counts[idx] += 1.0;
  }
  out *= 1.0 / static_cast<double>(n);
  return out;
}

}  // namespace fedpac::theory
