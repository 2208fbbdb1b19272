#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fedpac/model.hpp"
#include "oracles.hpp"

using namespace fedpac;

namespace {

oracle::Mat rows_of(const Matrix& m) {
  oracle::Mat out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r].assign(m.row(r).begin(), m.row(r).end());
  return out;
}

oracle::Net to_net(const ModelParams& p) {
  oracle::Net net;
  for (const auto& l : p.theta.layers) {
    net.w.push_back(rows_of(l.weight));
    net.b.push_back(l.bias);
  }
  net.phi = rows_of(p.phi);
  return net;
}

// Flattened (theta, phi) and the inverse mapping into an oracle net.
oracle::Vec pack(const ModelParams& p) {
  oracle::Vec v = flatten(p.theta);
  v.insert(v.end(), p.phi.data().begin(), p.phi.data().end());
  return v;
}

ModelParams unpack(ModelParams p, const oracle::Vec& v) {
  const std::size_t n = parameter_count(p.theta);
  unflatten(std::span(v).first(n), p.theta);
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(n), v.end(), p.phi.data().begin());
  return p;
}

std::vector<Sample> random_batch(std::size_t n, const ModelDims& dims, RngStream& rng) {
  std::vector<Sample> batch(n);
  for (auto& s : batch) {
    s.x.resize(dims.input);
    for (double& v : s.x) v = rng.normal();
    s.y = rng.below(dims.classes);
  }
  return batch;
}

}  // namespace

TEST_CASE("init is deterministic and sized from dims") {
  ModelDims dims{5, {7, 6}, 4, 3};
  RngStream a(9, {}), b(9, {});
  const ModelParams p = init_params(dims, a);
  CHECK(p == init_params(dims, b));
  CHECK_NOTHROW(validate_shapes(p));
  CHECK(p.theta.layers.size() == 3);
  CHECK(parameter_count(p.theta) == 7 * 5 + 7 + 6 * 7 + 6 + 4 * 6 + 4);
  for (double w : p.theta.layers[0].weight.data()) CHECK(std::abs(w) <= 1.0 / std::sqrt(5.0));
}

TEST_CASE("flatten and unflatten round trip") {
  RngStream rng(1, {});
  const ModelParams p = init_params(ModelDims{3, {4}, 2, 2}, rng);
  Extractor e = zeros_like(p.theta);
  unflatten(flatten(p.theta), e);
  CHECK(e == p.theta);
  CHECK_THROWS_AS(unflatten(Vector(3), e), ShapeError);
}

TEST_CASE("zero weights: feature comes from the bias path") {
  ModelParams p;
  p.dims = ModelDims{3, {4}, 2, 2};
  p.theta.layers = {{Matrix(4, 3), Vector(4, 1.0)}, {Matrix(2, 4), Vector{0.5, -2.0}}};
  p.phi = Matrix{{1, 2}, {3, 4}};
  const auto r = forward(p, Vector{9, 9, 9});
  CHECK(r.feature == Vector{0.5, -2.0});
  CHECK(r.logits == Vector{1 * 0.5 + 2 * -2.0, 3 * 0.5 + 4 * -2.0});
}

TEST_CASE("identity extractor and identity head pass the input through") {
  ModelParams p;
  p.dims = ModelDims{3, {}, 3, 3};
  p.theta.layers = {{Matrix::identity(3), Vector(3, 0.0)}};
  p.phi = Matrix::identity(3);
  const Vector x{0.25, -1.5, 3.0};
  CHECK(forward(p, x).logits == x);
}

TEST_CASE("logits are linear in the head") {
  RngStream rng(2, {});
  ModelParams p = init_params(ModelDims{4, {5}, 3, 3}, rng);
  const Vector x{1, -1, 0.5, 2};
  const Vector before = forward(p, x).logits;
  p.phi *= 2.0;
  const Vector after = forward(p, x).logits;
  for (std::size_t k = 0; k < 3; ++k) CHECK(after[k] == doctest::Approx(2 * before[k]).epsilon(1e-15));
}

TEST_CASE("forward rejects a wrong input length") {
  RngStream rng(3, {});
  const ModelParams p = init_params(ModelDims{4, {5}, 3, 3}, rng);
  CHECK_THROWS_AS(forward(p, Vector{1, 2}), ShapeError);
}

TEST_CASE("predict breaks ties toward the lowest class") {
  ModelParams p;
  p.dims = ModelDims{2, {}, 2, 3};
  p.theta.layers = {{Matrix::identity(2), Vector(2, 0.0)}};
  p.phi = Matrix(3, 2);
  CHECK(predict(p, Vector{1, 1}) == 0);
  p.phi = Matrix{{0, 0}, {1, 0}, {1, 0}};
  CHECK(predict(p, Vector{1, 1}) == 1);
}

TEST_CASE("loss matches the reference network, every lambda") {
  RngStream rng(4, {});
  for (double lambda : {0.0, 1.0, 5.0}) {
    ModelDims dims{4, {6}, 3, 3};
    const ModelParams p = init_params(dims, rng);
    const auto batch = random_batch(5, dims, rng);
    CentroidSet c = CentroidSet::absent(3, 3);
    for (std::size_t k = 0; k < 2; ++k) {
      for (double& v : c.values.row(k)) v = rng.normal();
      c.present[k] = true;
    }
    std::vector<oracle::Vec> xs;
    std::vector<std::size_t> ys;
    for (const auto& s : batch) xs.push_back(s.x), ys.push_back(s.y);
    const double ref = oracle::loss(to_net(p), xs, ys, rows_of(c.values), c.present, lambda);
    CHECK(loss_and_grads(p, batch, &c, lambda).loss == doctest::Approx(ref).epsilon(1e-13));
  }
}

TEST_CASE("backprop matches central differences of the reference loss") {
  RngStream rng(5, {});
  for (int draw = 0; draw < 12; ++draw) {
    const double lambda = draw % 3 == 0 ? 0.0 : (draw % 3 == 1 ? 1.0 : 5.0);
    ModelDims dims{4, {6}, 3, 4};
    const ModelParams p = init_params(dims, rng);
    const auto batch = random_batch(5, dims, rng);
    CentroidSet c = CentroidSet::absent(4, 3);
    for (std::size_t k = 0; k < 4; ++k) {
      if (k == 3) continue;
      for (double& v : c.values.row(k)) v = rng.normal();
      c.present[k] = true;
    }
    std::vector<oracle::Vec> xs;
    std::vector<std::size_t> ys;
    for (const auto& s : batch) xs.push_back(s.x), ys.push_back(s.y);
    auto ref = [&](const oracle::Vec& w) {
      return oracle::loss(to_net(unpack(p, w)), xs, ys, rows_of(c.values), c.present, lambda);
    };
    const oracle::Vec numeric = oracle::central_diff(ref, pack(p), 1e-6);

    const LossGrads g = loss_and_grads(p, batch, &c, lambda);
    oracle::Vec analytic = flatten(g.grad_theta);
    analytic.insert(analytic.end(), g.grad_phi.data().begin(), g.grad_phi.data().end());
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      err = std::max(err, std::abs(analytic[i] - numeric[i]));
      scale = std::max(scale, std::abs(numeric[i]));
    }
    CHECK(err / scale < 1e-4);
  }
}

TEST_CASE("lambda zero equals plain cross-entropy") {
  RngStream rng(6, {});
  ModelDims dims{4, {6}, 3, 3};
  const ModelParams p = init_params(dims, rng);
  const auto batch = random_batch(5, dims, rng);
  CentroidSet c = CentroidSet::absent(3, 3);
  c.present.assign(3, true);
  const LossGrads a = loss_and_grads(p, batch, &c, 0.0);
  const LossGrads b = loss_and_grads(p, batch, nullptr, 0.0);
  CHECK(a.loss == b.loss);
  CHECK(a.regularizer == 0.0);
  CHECK(a.grad_theta == b.grad_theta);
  CHECK(a.grad_phi == b.grad_phi);
}

TEST_CASE("features sitting on their centroids add nothing") {
  RngStream rng(7, {});
  ModelDims dims{4, {6}, 3, 3};
  const ModelParams p = init_params(dims, rng);
  auto batch = random_batch(3, dims, rng);
  for (std::size_t i = 0; i < 3; ++i) batch[i].y = i;
  CentroidSet c = CentroidSet::absent(3, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    const Vector f = extract_feature(p.theta, batch[k].x);
    std::copy(f.begin(), f.end(), c.values.row(k).begin());
    c.present[k] = true;
  }
  const LossGrads with = loss_and_grads(p, batch, &c, 3.0);
  const LossGrads without = loss_and_grads(p, batch, nullptr, 0.0);
  CHECK(with.regularizer == 0.0);
  CHECK(with.loss == without.loss);
  CHECK(with.grad_theta == without.grad_theta);
}

TEST_CASE("gradient blocks can be skipped") {
  RngStream rng(8, {});
  ModelDims dims{4, {6}, 3, 3};
  const ModelParams p = init_params(dims, rng);
  const auto batch = random_batch(4, dims, rng);
  const LossGrads head_only = loss_and_grads(p, batch, nullptr, 0.0, GradBlocks{false, true});
  const LossGrads full = loss_and_grads(p, batch, nullptr, 0.0);
  CHECK(head_only.grad_phi == full.grad_phi);
  for (double v : flatten(head_only.grad_theta)) CHECK(v == 0.0);
}

TEST_CASE("loss rejects empty batches and negative lambda") {
  RngStream rng(9, {});
  const ModelParams p = init_params(ModelDims{4, {6}, 3, 3}, rng);
  CHECK_THROWS(loss_and_grads(p, std::span<const Sample>{}, nullptr, 0.0));
  const auto batch = random_batch(2, p.dims, rng);
  CHECK_THROWS(loss_and_grads(p, batch, nullptr, -1.0));
}
