#include "fedpac/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedpac/format.hpp"
#include "fedpac/model.hpp"
#include "fedpac/qp.hpp"
#include "fedpac/server.hpp"
#include "fedpac/theory.hpp"

namespace fedpac::verify {

namespace {

constexpr double kFdStep = 1e-6;

// Theorem-1 world shape.
constexpr std::size_t kInputs = 8;
constexpr std::size_t kClasses = 3;
constexpr std::size_t kDim = 2;

CentroidSet random_centroids(std::size_t classes, std::size_t dim, RngStream& rng) {
  CentroidSet c = CentroidSet::absent(classes, dim);
  for (std::size_t k = 0; k < classes; ++k) {
    // Leave roughly one class in four absent to exercise the skip path.
    if (rng.uniform() < 0.25) continue;
    for (double& v : c.values.row(k)) v = rng.normal();
    c.present[k] = true;
    c.counts[k] = 1;
  }
  return c;
}

double normwise_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
  return diff / std::max(max_abs(numeric), 1e-8);
}

Vector random_simplex_point(std::size_t m, RngStream& rng) {
  Vector a(m);
  double total = 0.0;
  for (double& v : a) {
    v = rng.gamma(1.0);
    total += v;
  }
  for (double& v : a) v /= total;
  return a;
}

}  // namespace

CheckResult check_gradients(std::uint64_t seed, bool corrupt) {
  CheckResult r{"gradient", false, 0.0, 1e-4, ""};
  const double lambdas[] = {0.0, 1.0, 5.0};
  for (std::size_t draw = 0; draw < 20; ++draw) {
    RngStream rng(seed, {draw, 0, Purpose::kTheory});
    ModelDims dims{5, {7}, 4, 3};
    ModelParams params = init_params(dims, rng);
    std::vector<Sample> batch(6);
    for (auto& s : batch) {
      s.x.resize(dims.input);
      for (double& v : s.x) v = rng.normal();
      s.y = rng.below(dims.classes);
    }
    const CentroidSet centroids = random_centroids(dims.classes, dims.feature, rng);
    const double lambda = lambdas[draw % 3];

    LossGrads g = loss_and_grads(params, batch, &centroids, lambda);
    Vector analytic = flatten(g.grad_theta);
    analytic.insert(analytic.end(), g.grad_phi.data().begin(), g.grad_phi.data().end());
    if (corrupt) {
      for (double& v : analytic) v *= 1.01;
    }

    Vector flat = flatten(params.theta);
    flat.insert(flat.end(), params.phi.data().begin(), params.phi.data().end());
    const std::size_t n_theta = parameter_count(params.theta);
    auto loss_at = [&](std::span<const double> w) {
      ModelParams p = params;
      unflatten(w.first(n_theta), p.theta);
      std::copy(w.begin() + static_cast<std::ptrdiff_t>(n_theta), w.end(), p.phi.data().begin());
      return loss_and_grads(p, batch, &centroids, lambda, GradBlocks{false, false}).loss;
    };
    const Vector numeric = finite_diff_grad(loss_at, flat, kFdStep);
    r.measured = std::max(r.measured, normwise_error(analytic, numeric));
  }
  r.passed = r.measured < r.threshold;
  r.detail = "20 draws, lambda in {0,1,5}";
  return r;
}

CheckResult check_qp_oracle(std::uint64_t seed) {
  CheckResult r{"qp_oracle", true, 0.0, 1e-5, ""};
  for (std::size_t inst = 0; inst < 50; ++inst) {
    RngStream rng(seed, {inst, 1, Purpose::kTheory});
    const std::size_t m = 2 + inst % 3;
    // Every fifth instance is rank deficient.
    const std::size_t rank = inst % 5 == 4 ? m - 1 : m + 1;
    Matrix a(rank, m);
    for (double& v : a.data()) v = rng.normal();
    qp::SimplexQP problem{matmul(transpose(a), a)};
    const double solved = qp::objective(problem, qp::solve(problem, 1e-8).alpha);
    const double oracle = qp::objective(problem, qp::brute_force_oracle(problem, 1e-3).alpha);
    r.measured = std::max(r.measured, solved - oracle);
  }
  const Vector a1 = qp::solve(qp::SimplexQP{Matrix{{1, 0}, {0, 1}}}, 1e-8).alpha;
  const Vector a2 = qp::solve(qp::SimplexQP{Matrix{{1, 0}, {0, 2}}}, 1e-8).alpha;
  const double analytic_err = std::max({std::abs(a1[0] - 0.5), std::abs(a1[1] - 0.5), std::abs(a2[0] - 2.0 / 3.0),
                                        std::abs(a2[1] - 1.0 / 3.0)});
  r.passed = r.measured <= r.threshold && analytic_err <= 1e-4;
  r.detail = "50 instances, m in {2,3,4}; analytic cases error " + format_real(analytic_err);
  return r;
}

CheckResult check_closed_form(std::uint64_t seed) {
  CheckResult r{"closed_form", false, 0.0, 1e-6, ""};
  for (std::size_t w = 0; w < 10; ++w) {
    RngStream rng(seed, {w, 2, Purpose::kTheory});
    const auto world = theory::random_world(kInputs, kClasses, kDim, rng);
    const theory::Joint p_hat = theory::random_joint(world, rng);
    const auto fitted = theory::fit_classifier_closed_form(world, p_hat, theory::RidgePolicy::kNone);
    auto objective = [&](std::span<const double> flat) {
      theory::LinearClassifier g{Matrix(kClasses, kDim, Vector(flat.begin(), flat.end()))};
      return theory::chi2_distance(world, p_hat, theory::model_joint(world, g));
    };
    const Vector grad = finite_diff_grad(objective, Vector(fitted.g.data().begin(), fitted.g.data().end()), kFdStep);
    r.measured = std::max(r.measured, max_abs(grad));
  }
  r.passed = r.measured < r.threshold;
  r.detail = "10 worlds, S=8 K=3 d=2";
  return r;
}

CheckResult check_theorem1(std::uint64_t seed, std::size_t resamples, double tolerance) {
  CheckResult r{"theorem1", false, 0.0, tolerance, ""};
  RngStream rng(seed, {0, 3, Purpose::kTheory});
  const auto world = theory::random_world(kInputs, kClasses, kDim, rng);
  const std::vector<std::size_t> counts{20, 40, 40};
  const std::size_t m = counts.size();
  const std::size_t target = 0;
  std::vector<theory::Joint> joints;
  std::vector<theory::LinearClassifier> g_means;
  std::vector<double> variances;
  for (std::size_t j = 0; j < m; ++j) {
    joints.push_back(theory::random_joint(world, rng));
    g_means.push_back(theory::fit_classifier_closed_form(world, joints[j]));
    variances.push_back(theory::variance_term(world, joints[j]));
  }
  std::vector<Vector> alphas;
  for (std::size_t a = 0; a < 20; ++a) alphas.push_back(random_simplex_point(m, rng));

  Vector mc(alphas.size(), 0.0);
  for (std::size_t s = 0; s < resamples; ++s) {
    RngStream draw(seed, {s, 4, Purpose::kTheory});
    std::vector<theory::LinearClassifier> fitted;
    for (std::size_t j = 0; j < m; ++j) {
      fitted.push_back(theory::fit_classifier_closed_form(world, theory::sample_empirical(joints[j], counts[j], draw)));
    }
    for (std::size_t a = 0; a < alphas.size(); ++a) {
      theory::LinearClassifier mixed{Matrix(kClasses, kDim)};
      for (std::size_t j = 0; j < m; ++j) mixed.g += fitted[j].g * alphas[a][j];
      mc[a] += theory::chi2_distance(world, joints[target], theory::model_joint(world, mixed));
    }
  }
  for (std::size_t a = 0; a < alphas.size(); ++a) {
    mc[a] /= static_cast<double>(resamples);
    const double analytic =
        server::testing_loss_analytic(world, alphas[a], g_means, variances, counts, target, joints[target]);
    r.measured = std::max(r.measured, std::abs(mc[a] - analytic) / analytic);
  }
  r.passed = r.measured <= r.threshold;
  r.detail = std::to_string(resamples) + " resamples, 20 simplex points";
  return r;
}

CheckResult check_loss_identity(std::uint64_t seed) {
  CheckResult r{"loss_identity", false, 0.0, 1e-10, ""};
  for (std::size_t inst = 0; inst < 20; ++inst) {
    RngStream rng(seed, {inst, 5, Purpose::kTheory});
    const auto world = theory::random_world(kInputs, kClasses, kDim, rng);
    const theory::Joint p_true = theory::random_joint(world, rng);
    const theory::Joint p_hat = theory::sample_empirical(p_true, 50, rng);
    theory::LinearClassifier g{Matrix(kClasses, kDim)};
    for (double& v : g.g.data()) v = rng.normal();
    const auto parts = theory::decompose_test_loss(world, p_true, p_hat, g);
    const double direct = theory::chi2_distance(world, p_true, theory::model_joint(world, g));
    r.measured = std::max(r.measured, std::abs(direct - (parts.empirical + parts.gap + parts.constant)));
  }
  r.passed = r.measured < r.threshold;
  r.detail = "20 instances";
  return r;
}

CheckResult check_kl_ladder(std::uint64_t seed) {
  CheckResult r{"kl_chi2", true, 0.0, 0.6, ""};
  RngStream rng(seed, {0, 6, Purpose::kTheory});
  const auto world = theory::random_world(kInputs, kClasses, kDim, rng);
  theory::LinearClassifier g{Matrix(kClasses, kDim)};
  for (double& v : g.g.data()) v = rng.normal();
  // Scale so that |f^T g| <= 1 everywhere; eps <= 0.1 then keeps Q positive.
  double peak = 0.0;
  for (std::size_t x = 0; x < world.inputs(); ++x)
    for (std::size_t y = 0; y < kClasses; ++y) peak = std::max(peak, std::abs(dot(world.features.row(x), g.g.row(y))));
  g.g *= 1.0 / peak;

  auto rel_gap = [&](double eps) {
    const auto v = theory::kl_chi2_relation_check(world, g, eps);
    return std::abs(v.kl - v.chi2 / 2.0) / v.chi2;
  };
  std::ostringstream detail;
  for (double eps : {0.1, 0.05, 0.025}) {
    const double ratio = rel_gap(eps / 2.0) / rel_gap(eps);
    r.measured = std::max(r.measured, ratio);
    detail << "eps=" << eps << " ratio=" << format_real(ratio) << ' ';
  }
  r.passed = r.measured <= r.threshold;
  r.detail = detail.str();
  return r;
}

std::vector<CheckResult> run_all(const Options& options) {
  const bool full = options.level == Level::kFull;
  return {
      check_gradients(options.seed, options.corrupt_gradient),
      check_qp_oracle(options.seed),
      check_closed_form(options.seed),
      check_theorem1(options.seed, full ? 10000 : 1000, full ? 0.02 : 0.05),
      check_loss_identity(options.seed),
      check_kl_ladder(options.seed),
  };
}

std::string format(const CheckResult& result) {
  std::ostringstream out;
  out << (result.passed ? "PASS " : "FAIL ") << result.name << " measured=" << format_real(result.measured)
      << " threshold=" << format_real(result.threshold);
  if (!result.detail.empty()) out << " (" << result.detail << ')';
  return out.str();
}

}  // namespace fedpac::verify
