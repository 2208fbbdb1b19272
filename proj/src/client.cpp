#include "fedpac/client.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fedpac::client {

namespace {

// PyTorch SGD semantics: v = momentum * v + (g + wd * p); p -= eta * v.
void sgd_step(std::span<double> p, std::span<const double> g, std::span<double> v, double eta,
              const OptimizerSettings& opt) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double step = g[i] + opt.weight_decay * p[i];
    v[i] = opt.momentum * v[i] + step;
    p[i] -= eta * v[i];
  }
}

void sgd_step(Extractor& theta, const Extractor& grad, Extractor& velocity, double eta,
              const OptimizerSettings& opt) {
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    sgd_step(theta.layers[l].weight.data(), grad.layers[l].weight.data(), velocity.layers[l].weight.data(), eta, opt);
    sgd_step(theta.layers[l].bias, grad.layers[l].bias, velocity.layers[l].bias, eta, opt);
  }
}

// Calls `step(batch)` for each shuffled mini-batch of every epoch and
// returns the mean batch loss of the final epoch.
template <typename Step>
double for_each_batch(std::span<const Sample> train, std::size_t epochs, std::size_t batch_size, RngStream& rng,
                      Step&& step) {
  if (train.empty()) throw std::invalid_argument("local training: empty training set");
  if (batch_size == 0) throw std::invalid_argument("local training: batch size must be positive");
  std::vector<std::size_t> order(train.size());
  std::vector<const Sample*> batch;
  batch.reserve(batch_size);
  double last = 0.0;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      batch.clear();
      const std::size_t end = std::min(order.size(), start + batch_size);
      for (std::size_t k = start; k < end; ++k) batch.push_back(&train[order[k]]);
      total += step(std::span<const Sample* const>(batch));
      ++batches;
    }
    last = total / static_cast<double>(batches);
  }
  return last;
}

}  // namespace

FeatureStats extract_stats(const ModelParams& params, std::span<const Sample> train) {
  if (train.empty()) throw std::invalid_argument("extract_stats: empty training set");
  const std::size_t classes = params.dims.classes;
  const std::size_t d = params.dims.feature;
  FeatureStats s;
  s.counts.assign(classes, 0);
  s.mu = Matrix(classes, d);
  Vector sq_norm(classes, 0.0);
  for (const Sample& sample : train) {
    if (sample.y >= classes) throw ShapeError("extract_stats: label out of range");
    const Vector f = extract_feature(params.theta, sample.x);
    ++s.counts[sample.y];
    axpy(1.0, f, s.mu.row(sample.y));
    sq_norm[sample.y] += squared_norm(f);
  }
  const double n = static_cast<double>(train.size());
  s.priors.resize(classes);
  s.class_present.resize(classes);
  s.h = Matrix(classes, d);
  double v = 0.0;
  for (std::size_t y = 0; y < classes; ++y) {
    s.priors[y] = static_cast<double>(s.counts[y]) / n;
    s.class_present[y] = s.counts[y] > 0;
    if (!s.class_present[y]) continue;
    auto mu = s.mu.row(y);
    for (double& m : mu) m /= static_cast<double>(s.counts[y]);
    auto h = s.h.row(y);
    for (std::size_t j = 0; j < d; ++j) h[j] = s.priors[y] * mu[j];
    const double mean_sq = sq_norm[y] / static_cast<double>(s.counts[y]);
    v += s.priors[y] * mean_sq - s.priors[y] * s.priors[y] * squared_norm(mu);
  }
  s.variance = std::max(v, 0.0);
  return s;
}

Matrix train_head(const ModelParams& params, std::span<const Sample> train, double eta_g, std::size_t epochs,
                  const OptimizerSettings& opt, RngStream& rng) {
  if (!(eta_g >= 0.0)) throw std::invalid_argument("train_head: eta_g must be nonnegative");
  ModelParams work = params;
  Matrix velocity(work.phi.rows(), work.phi.cols());
  for_each_batch(train, epochs, opt.batch_size, rng, [&](std::span<const Sample* const> batch) {
    LossGrads lg = loss_and_grads(work, batch, nullptr, 0.0, GradBlocks{.theta = false, .phi = true});
    sgd_step(work.phi.data(), lg.grad_phi.data(), velocity.data(), eta_g, opt);
    return lg.loss;
  });
  return std::move(work.phi);
}

ExtractorResult train_extractor(const ModelParams& params, std::span<const Sample> train,
                                const CentroidSet& centroids, double lambda, double eta_f, std::size_t epochs,
                                const OptimizerSettings& opt, RngStream& rng) {
  if (!(eta_f >= 0.0)) throw std::invalid_argument("train_extractor: eta_f must be nonnegative");
  if (!(lambda >= 0.0)) throw std::invalid_argument("train_extractor: lambda must be nonnegative");
  ModelParams work = params;
  Extractor velocity = zeros_like(work.theta);
  const double last = for_each_batch(train, epochs, opt.batch_size, rng, [&](std::span<const Sample* const> batch) {
    LossGrads lg = loss_and_grads(work, batch, &centroids, lambda, GradBlocks{.theta = true, .phi = false});
    sgd_step(work.theta, lg.grad_theta, velocity, eta_f, opt);
    return lg.loss;
  });
  return {std::move(work.theta), last};
}

JointResult train_joint(const ModelParams& params, std::span<const Sample> train, double eta, std::size_t epochs,
                        const OptimizerSettings& opt, RngStream& rng) {
  if (!(eta >= 0.0)) throw std::invalid_argument("train_joint: eta must be nonnegative");
  ModelParams work = params;
  Extractor velocity = zeros_like(work.theta);
  Matrix head_velocity(work.phi.rows(), work.phi.cols());
  const double last = for_each_batch(train, epochs, opt.batch_size, rng, [&](std::span<const Sample* const> batch) {
    LossGrads lg = loss_and_grads(work, batch, nullptr, 0.0);
    sgd_step(work.theta, lg.grad_theta, velocity, eta, opt);
    sgd_step(work.phi.data(), lg.grad_phi.data(), head_velocity.data(), eta, opt);
    return lg.loss;
  });
  return {std::move(work), last};
}

CentroidSet local_centroids(const ModelParams& params, std::span<const Sample> train) {
  CentroidSet c = CentroidSet::absent(params.dims.classes, params.dims.feature);
  for (const Sample& s : train) {
    if (s.y >= c.classes()) throw ShapeError("local_centroids: label out of range");
    axpy(1.0, extract_feature(params.theta, s.x), c.values.row(s.y));
    ++c.counts[s.y];
  }
  for (std::size_t k = 0; k < c.classes(); ++k) {
    if (c.counts[k] == 0) continue;
    c.present[k] = true;
    for (double& v : c.values.row(k)) v /= static_cast<double>(c.counts[k]);
  }
  return c;
}

double mean_cross_entropy(const ModelParams& params, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("mean_cross_entropy: no samples");
  double total = 0.0;
  Vector grad(params.dims.classes);
  for (const Sample& s : samples) {
    const ForwardResult r = forward(params, s.x);
    total += softmax_xent_into(r.logits, s.y, grad);
  }
  return total / static_cast<double>(samples.size());
}

ClientUpdate run_client_round(const Broadcast& broadcast, const ClientState& state, const RoundSettings& settings) {
  ModelParams local;
  local.dims = state.dims;
  local.theta = broadcast.theta;
  local.phi = broadcast.head;
  validate_shapes(local);

  ClientUpdate update;
  update.client_id = state.client_id;
  update.n = state.train.size();
  update.stats = extract_stats(local, state.train);

  if (settings.style == LocalStyle::kJoint) {
    RngStream rng(settings.seed, {state.client_id, settings.round, Purpose::kExtractorShuffle});
    JointResult r = train_joint(local, state.train, settings.eta_f, settings.epochs, settings.opt, rng);
    local = std::move(r.params);
    update.train_loss = r.last_epoch_loss;
  } else {
    RngStream head_rng(settings.seed, {state.client_id, settings.round, Purpose::kHeadShuffle});
    local.phi = train_head(local, state.train, settings.eta_g, settings.head_epochs, settings.opt, head_rng);
    RngStream ext_rng(settings.seed, {state.client_id, settings.round, Purpose::kExtractorShuffle});
    ExtractorResult r = train_extractor(local, state.train, broadcast.centroids, settings.lambda, settings.eta_f,
                                        settings.epochs, settings.opt, ext_rng);
    local.theta = std::move(r.theta);
    update.train_loss = r.last_epoch_loss;
  }

  update.local_centroids = local_centroids(local, state.train);
  update.theta = std::move(local.theta);
  update.phi = std::move(local.phi);
  return update;
}

}  // namespace fedpac::client
