#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedpac/server.hpp"
#include "oracles.hpp"

using namespace fedpac;
using namespace fedpac::server;

namespace {

client::ClientUpdate scalar_update(double theta, std::size_t n) {
  client::ClientUpdate u;
  u.theta.layers = {{Matrix{{theta}}, Vector{theta}}};
  u.n = n;
  return u;
}

client::ClientUpdate centroid_update(double value, std::size_t count) {
  client::ClientUpdate u;
  u.local_centroids = CentroidSet::absent(2, 1);
  u.local_centroids.values(0, 0) = value;
  u.local_centroids.counts[0] = count;
  u.local_centroids.present[0] = count > 0;
  return u;
}

client::FeatureStats scalar_stats(double h, double variance) {
  client::FeatureStats s;
  s.priors = {1.0};
  s.mu = Matrix{{h}};
  s.h = Matrix{{h}};
  s.class_present = {true};
  s.counts = {1};
  s.variance = variance;
  return s;
}

}  // namespace

TEST_CASE("extractor aggregation is the sample-weighted mean") {
  const std::vector<client::ClientUpdate> one{scalar_update(1.5, 9)};
  CHECK(aggregate_extractors(one).layers[0].weight(0, 0) == 1.5);
  const std::vector<client::ClientUpdate> equal{scalar_update(0, 5), scalar_update(2, 5)};
  CHECK(aggregate_extractors(equal).layers[0].weight(0, 0) == 1.0);
  const std::vector<client::ClientUpdate> skewed{scalar_update(0, 1), scalar_update(4, 3)};
  CHECK(aggregate_extractors(skewed).layers[0].bias[0] == 3.0);
  const std::vector<client::ClientUpdate> same{scalar_update(0.7, 2), scalar_update(0.7, 5)};
  CHECK(aggregate_extractors(same).layers[0].weight(0, 0) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS(aggregate_extractors(std::vector<client::ClientUpdate>{}));
}

TEST_CASE("centroid aggregation") {
  const CentroidSet prev = CentroidSet::absent(2, 1);
  const std::vector<client::ClientUpdate> one{centroid_update(2.5, 4)};
  CHECK(aggregate_centroids(one, prev).values(0, 0) == 2.5);
  const std::vector<client::ClientUpdate> two{centroid_update(0, 1), centroid_update(4, 3)};
  const CentroidSet c = aggregate_centroids(two, prev);
  CHECK(c.values(0, 0) == 3.0);
  CHECK(c.counts[0] == 4);
  CHECK(c.present[0]);
  CHECK_FALSE(c.stale[0]);
}

TEST_CASE("centroids of unseen classes carry forward and are flagged stale") {
  CentroidSet prev = CentroidSet::absent(2, 1);
  prev.values(1, 0) = -7.0;
  prev.present[1] = true;
  const std::vector<client::ClientUpdate> ups{centroid_update(1, 2)};
  const CentroidSet c = aggregate_centroids(ups, prev);
  CHECK(c.values(1, 0) == -7.0);
  CHECK(c.present[1]);
  CHECK(c.stale[1]);
}

TEST_CASE("QP assembly: zero self distance and symmetric") {
  const std::vector<client::FeatureStats> s{scalar_stats(1, 2), scalar_stats(3, 1), scalar_stats(-1, 4)};
  const std::vector<std::size_t> n{10, 20, 40};
  const auto q = assemble_qp(1, s, n);
  CHECK(q.q(1, 1) == doctest::Approx(1.0 / 20));
  CHECK(is_symmetric(q.q, 0.0));
  // D_jj' = (h_i - h_j)(h_i - h_j') with h_i = 3.
  CHECK(q.q(0, 2) == doctest::Approx((3 - 1) * (3 + 1)));
  CHECK(q.q(2, 2) == doctest::Approx(16 + 4.0 / 40));
}

TEST_CASE("QP assembly: identical clients give uniform weights") {
  const std::vector<client::FeatureStats> s(4, scalar_stats(0.5, 3));
  const std::vector<std::size_t> n(4, 100);
  const auto q = assemble_qp(2, s, n);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(q.q(i, j) == doctest::Approx(i == j ? 0.03 : 0.0));
  for (double a : qp::solve(q, 1e-10).alpha) CHECK(a == doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("QP assembly: two-client KKT weight") {
  const double h1 = 0.4, h2 = 1.1, v1 = 2.0, v2 = 3.0;
  const std::size_t n1 = 20, n2 = 30;
  const std::vector<client::FeatureStats> s{scalar_stats(h1, v1), scalar_stats(h2, v2)};
  const std::vector<std::size_t> n{n1, n2};
  const auto q = assemble_qp(0, s, n);
  const double expected = (v1 / n1) / (v1 / n1 + v2 / n2 + (h1 - h2) * (h1 - h2));
  const Vector a = qp::solve(q, 1e-12).alpha;
  CHECK(a[1] == doctest::Approx(expected).epsilon(1e-6));
  oracle::Mat rows{{q.q(0, 0), q.q(0, 1)}, {q.q(1, 0), q.q(1, 1)}};
  CHECK(std::abs(oracle::simplex_grid(rows, 100000)[1] - expected) < 2e-5);
}

TEST_CASE("QP assembly clamps negative variance and checks shapes") {
  const std::vector<client::FeatureStats> s{scalar_stats(0, -5), scalar_stats(1, 1)};
  const std::vector<std::size_t> n{1, 1};
  CHECK(assemble_qp(0, s, n).q(0, 0) == 0.0);
  const std::vector<std::size_t> short_n{1};
  CHECK_THROWS_AS(assemble_qp(0, s, short_n), ShapeError);
}

TEST_CASE("personalization") {
  client::ClientUpdate a;
  a.stats = scalar_stats(0, 1);
  a.n = 10;
  a.phi = Matrix{{1, 0}};
  SUBCASE("single client keeps its head") {
    const std::vector<client::ClientUpdate> one{a};
    const auto p = personalize_heads(one);
    CHECK(p.heads[0] == a.phi);
    CHECK(p.alpha(0, 0) == 1.0);
  }
  SUBCASE("far-apart clients keep their own heads") {
    client::ClientUpdate b = a;
    b.stats = scalar_stats(1e3, 1);
    b.phi = Matrix{{0, 1}};
    const std::vector<client::ClientUpdate> two{a, b};
    const auto p = personalize_heads(two);
    CHECK(p.alpha(0, 0) > 0.999);
    CHECK(p.alpha(1, 1) > 0.999);
    CHECK(p.heads[0](0, 0) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("head combination is linear") {
  const std::vector<Matrix> heads{Matrix{{1, 0}}, Matrix{{0, 1}}};
  CHECK(combine_heads(Vector{0.5, 0.5}, heads) == Matrix{{0.5, 0.5}});
  CHECK_THROWS_AS(combine_heads(Vector{1.0}, heads), ShapeError);
}

TEST_CASE("analytic testing loss: own classifier, no variance") {
  RngStream rng(1, {});
  const auto world = theory::random_world(6, 3, 2, rng);
  const theory::Joint p0 = theory::random_joint(world, rng);
  const theory::Joint p1 = theory::random_joint(world, rng);
  const std::vector<theory::LinearClassifier> g{theory::fit_classifier_closed_form(world, p0),
                                                theory::fit_classifier_closed_form(world, p1)};
  const std::vector<double> v{0.0, 0.0};
  const std::vector<std::size_t> n{10, 10};
  const double loss = testing_loss_analytic(world, Vector{1, 0}, g, v, n, 0, p0);
  CHECK(loss == doctest::Approx(theory::chi2_distance(world, p0, theory::model_joint(world, g[0]))).epsilon(1e-14));
}

TEST_CASE("analytic testing loss: identical classifiers prefer inverse-variance weights") {
  RngStream rng(2, {});
  const auto world = theory::random_world(6, 3, 2, rng);
  const theory::Joint p = theory::random_joint(world, rng);
  const auto g = theory::fit_classifier_closed_form(world, p);
  const std::vector<theory::LinearClassifier> gs(3, g);
  const std::vector<double> v{1.0, 2.0, 0.5};
  const std::vector<std::size_t> n{10, 30, 20};
  Vector inv(3);
  double total = 0.0;
  for (std::size_t j = 0; j < 3; ++j) total += inv[j] = n[j] / v[j];
  for (double& a : inv) a /= total;
  const double best = testing_loss_analytic(world, inv, gs, v, n, 0, p);
  const double irreducible = theory::chi2_distance(world, p, theory::model_joint(world, g));
  CHECK(best - irreducible == doctest::Approx(1.0 / total).epsilon(1e-10));
  for (int t = 0; t < 20; ++t) {
    Vector a{rng.uniform(), rng.uniform(), rng.uniform()};
    const double s = a[0] + a[1] + a[2];
    for (double& x : a) x /= s;
    CHECK(testing_loss_analytic(world, a, gs, v, n, 0, p) >= best - 1e-15);
  }
}

TEST_CASE("weight matrix CSV is an m x m grid") {
  const auto path = std::filesystem::temp_directory_path() / "fedpac_weights_test.csv";
  write_weight_csv(path, Matrix{{0.25, 0.75}, {1, 0}});
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(buf.str() == "0.25,0.75\n1,0\n");
}
