#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fedpac::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;   // the worst error seen
  double threshold = 0.0;  // pass iff measured <= threshold (or < for strict checks)
  std::string detail;
};

enum class Level { kFast, kFull };

struct Options {
  Level level = Level::kFast;
  std::uint64_t seed = 2024;
  /// Negative control: perturbs the analytic gradient so the gradient check
  /// must fail.
  bool corrupt_gradient = false;
};

/// Backprop vs central differences (step 1e-6) over 20 random draws with
/// lambda in {0, 1, 5}; measured = max normwise relative error.
CheckResult check_gradients(std::uint64_t seed, bool corrupt = false);

/// Solver vs lattice oracle (step 1e-3) on 50 random PSD instances plus the
/// two diagonal cases with known minimizers.
CheckResult check_qp_oracle(std::uint64_t seed);

/// Finite-difference gradient of the chi-square objective at the closed-form
/// classifier, 10 random worlds; measured = max infinity norm.
CheckResult check_closed_form(std::uint64_t seed);

/// Monte-Carlo expected testing loss vs the analytic three-term formula at
/// 20 random simplex points; measured = max relative error.
CheckResult check_theorem1(std::uint64_t seed, std::size_t resamples, double tolerance);

/// Exact decomposition of the testing loss on 20 random instances.
CheckResult check_loss_identity(std::uint64_t seed);

/// |KL - chi2/2| / chi2 must at least roughly halve each time eps halves.
CheckResult check_kl_ladder(std::uint64_t seed);

std::vector<CheckResult> run_all(const Options& options);

/// One line per check: "PASS name measured=... threshold=... detail".
std::string format(const CheckResult& result);

}  // namespace fedpac::verify
