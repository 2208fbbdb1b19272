#pragma once

#include <span>
#include <stdexcept>

#include "fedpac/numerics.hpp"

namespace fedpac::qp {

/// min alpha^T Q alpha  s.t.  alpha >= 0, sum(alpha) = 1.
struct SimplexQP {
  Matrix q;
  std::size_t size() const { return q.rows(); }
};

/// A point of the probability simplex.
struct SimplexPoint {
  Vector alpha;
};

class QpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class QpValidationError : public QpError {
 public:
  using QpError::QpError;
};

/// Raised when the iteration cap is hit; carries the best feasible iterate.
class QpNonConvergence : public QpError {
 public:
  QpNonConvergence(const std::string& msg, SimplexPoint best)
      : QpError(msg), best_(std::move(best)) {}
  const SimplexPoint& best() const { return best_; }

 private:
  SimplexPoint best_;
};

struct SolverOptions {
  double tol = 1e-8;
  int max_iterations = 10000;
};

/// Euclidean projection onto the probability simplex (sort-based).
SimplexPoint project_simplex(std::span<const double> v);

double objective(const SimplexQP& qp, std::span<const double> alpha);

/// Accelerated projected gradient from the uniform point. Stops once a plain
/// projected-gradient step from the current iterate moves less than `tol`
/// in the max norm. Degenerate (flat) directions resolve toward uniform.
SimplexPoint solve(const SimplexQP& qp, const SolverOptions& options = {});
inline SimplexPoint solve(const SimplexQP& qp, double tol) {
  return solve(qp, SolverOptions{.tol = tol});
}

/// Best point of the simplex lattice with spacing `grid_step`. The last free
/// pair of coordinates is resolved exactly as a 1-D convex lattice problem,
/// every other coordinate is enumerated. Refuses m > 4.
SimplexPoint brute_force_oracle(const SimplexQP& qp, double grid_step);

}  // namespace fedpac::qp
