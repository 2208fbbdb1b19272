#include "fedpac/qp.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace fedpac::qp {

SimplexPoint project_simplex(std::span<const double> v) {
  const std::size_t m = v.size();
  if (m == 0) throw QpValidationError("project_simplex: empty input");
  require_finite(v, "project_simplex input");
  Vector sorted(v.begin(), v.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    cumulative += sorted[k];
    const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (sorted[k] - candidate > 0.0) tau = candidate;
  }
  SimplexPoint out;
  out.alpha.resize(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    out.alpha[i] = std::max(v[i] - tau, 0.0);
    total += out.alpha[i];
  }
  for (double& a : out.alpha) a /= total;
  return out;
}

double objective(const SimplexQP& qp, std::span<const double> alpha) {
  const Matrix& q = qp.q;
  if (alpha.size() != q.rows()) throw ShapeError("qp objective: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) s += alpha[i] * dot(q.row(i), alpha);
  return s;
}

namespace {

void validate(const SimplexQP& qp) {
  const Matrix& q = qp.q;
  if (q.rows() == 0) throw QpValidationError("qp: empty problem");
  if (q.rows() != q.cols()) throw QpValidationError("qp: Q must be square");
  for (double v : q.data())
    if (!std::isfinite(v)) throw QpValidationError("qp: Q has non-finite entries");
  const double scale = std::max(1.0, max_abs(q.data()));
  if (!is_symmetric(q, 1e-12 * scale)) throw QpValidationError("qp: Q is not symmetric");
}

void gradient(const Matrix& q, std::span<const double> x, std::span<double> g) {
  for (std::size_t i = 0; i < q.rows(); ++i) g[i] = 2.0 * dot(q.row(i), x);
}

}  // namespace

SimplexPoint solve(const SimplexQP& qp, const SolverOptions& options) {
  if (!(options.tol > 0.0)) throw QpValidationError("qp: tolerance must be positive");
  validate(qp);
  const Matrix& q = qp.q;
  const std::size_t m = q.rows();

  SimplexPoint x{Vector(m, 1.0 / static_cast<double>(m))};
  if (m == 1) return x;

  // Lipschitz bound of the gradient 2Q: twice the largest absolute row sum.
  double row_bound = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (double v : q.row(i)) s += std::abs(v);
    row_bound = std::max(row_bound, s);
  }
  if (row_bound == 0.0) return x;
  const double step = 1.0 / (2.0 * row_bound);

  SimplexPoint best = x;
  double best_obj = objective(qp, x.alpha);

  Vector y = x.alpha;
  Vector g(m), trial(m);
  double t = 1.0;
  for (int it = 0; it < options.max_iterations; ++it) {
    gradient(q, y, g);
    for (std::size_t i = 0; i < m; ++i) trial[i] = y[i] - step * g[i];
    SimplexPoint next = project_simplex(trial);

    // Gradient restart: drop momentum when it points uphill.
    double uphill = 0.0;
    for (std::size_t i = 0; i < m; ++i) uphill += (y[i] - next.alpha[i]) * (next.alpha[i] - x.alpha[i]);
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double momentum = (t - 1.0) / t_next;
    if (uphill > 0.0) {
      t_next = 1.0;
      momentum = 0.0;
    }
    for (std::size_t i = 0; i < m; ++i) y[i] = next.alpha[i] + momentum * (next.alpha[i] - x.alpha[i]);
    x = std::move(next);
    t = t_next;

    const double obj = objective(qp, x.alpha);
    if (obj < best_obj) {
      best_obj = obj;
      best = x;
    }

    // Stationarity: a plain projected-gradient step from x barely moves.
    gradient(q, x.alpha, g);
    for (std::size_t i = 0; i < m; ++i) trial[i] = x.alpha[i] - step * g[i];
    SimplexPoint probe = project_simplex(trial);
    double movement = 0.0;
    for (std::size_t i = 0; i < m; ++i) movement = std::max(movement, std::abs(probe.alpha[i] - x.alpha[i]));
    if (movement < options.tol) {
      return objective(qp, probe.alpha) < best_obj ? probe : best;
    }
  }
  throw QpNonConvergence("qp: iteration cap reached", best);
}

SimplexPoint brute_force_oracle(const SimplexQP& qp, double grid_step) {
  validate(qp);
  const std::size_t m = qp.size();
  if (m > 4) throw QpValidationError("brute_force_oracle: refusing m > 4");
  if (!(grid_step > 0.0) || grid_step > 1.0) throw QpValidationError("brute_force_oracle: bad grid step");
  const long n = std::lround(1.0 / grid_step);
  const double s = 1.0 / static_cast<double>(n);
  if (m == 1) return SimplexPoint{Vector{1.0}};

  const Matrix& q = qp.q;
  Vector x(m, 0.0);
  Vector best_x;
  double best_obj = 0.0;

  auto consider = [&](long a, long remaining) {
    x[m - 2] = static_cast<double>(a) * s;
    x[m - 1] = static_cast<double>(remaining - a) * s;
    const double obj = objective(qp, x);
    if (best_x.empty() || obj < best_obj) {
      best_obj = obj;
      best_x = x;
    }
  };

  // Along u = e_{m-2} - e_{m-1} the objective is a convex quadratic in the
  // lattice coordinate, so its lattice minimum sits at floor/ceil of the
  // continuous minimizer, or at an end point.
  auto finish_pair = [&](long remaining) {
    x[m - 2] = 0.0;
    x[m - 1] = static_cast<double>(remaining) * s;
    const std::size_t a_idx = m - 2, b_idx = m - 1;
    const double uqu = q(a_idx, a_idx) - 2.0 * q(a_idx, b_idx) + q(b_idx, b_idx);
    double uqx = 0.0;
    for (std::size_t k = 0; k < m; ++k) uqx += (q(a_idx, k) - q(b_idx, k)) * x[k];
    consider(0, remaining);
    consider(remaining, remaining);
    if (uqu > 0.0) {
      const double a_star = std::clamp(-uqx / (s * uqu), -1.0, static_cast<double>(remaining) + 1.0);
      const long lo = std::clamp(static_cast<long>(std::floor(a_star)), 0L, remaining);
      const long hi = std::clamp(static_cast<long>(std::ceil(a_star)), 0L, remaining);
      consider(lo, remaining);
      consider(hi, remaining);
    }
  };

  std::function<void(std::size_t, long)> enumerate = [&](std::size_t idx, long remaining) {
    if (idx == m - 2) {
      finish_pair(remaining);
      return;
    }
    for (long a = 0; a <= remaining; ++a) {
      x[idx] = static_cast<double>(a) * s;
      enumerate(idx + 1, remaining - a);
    }
    x[idx] = 0.0;
  };
  enumerate(0, n);
  return SimplexPoint{best_x};
}

}  // namespace fedpac::qp
