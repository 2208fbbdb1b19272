#include "fedpac/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fedpac {

CentroidSet CentroidSet::absent(std::size_t classes, std::size_t dim) {
  CentroidSet c;
  c.values = Matrix(classes, dim);
  c.counts.assign(classes, 0);
  c.present.assign(classes, false);
  c.stale.assign(classes, false);
  return c;
}

namespace {

DenseLayer random_layer(std::size_t in, std::size_t out, RngStream& rng) {
  DenseLayer layer{Matrix(out, in), Vector(out)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : layer.weight.data()) w = (2.0 * rng.uniform() - 1.0) * bound;
  for (double& b : layer.bias) b = (2.0 * rng.uniform() - 1.0) * bound;
  return layer;
}

inline double leaky(double z) { return z > 0.0 ? z : kLeakySlope * z; }
inline double leaky_slope(double z) { return z > 0.0 ? 1.0 : kLeakySlope; }

// Dense forward: out = W in + b.
void dense_forward(const DenseLayer& layer, std::span<const double> in, std::span<double> out) {
  const std::size_t rows = layer.weight.rows();
  const std::size_t cols = layer.weight.cols();
  const double* w = layer.weight.data().data();
  for (std::size_t o = 0; o < rows; ++o) {
    double s = layer.bias[o];
    const double* wr = w + o * cols;
    for (std::size_t i = 0; i < cols; ++i) s += wr[i] * in[i];
    out[o] = s;
  }
}

// Activations of every layer for one input, reused across a batch.
struct Workspace {
  std::vector<Vector> pre;   // pre-activation per layer
  std::vector<Vector> post;  // post-activation per layer (last == feature)
  std::vector<Vector> delta;
  Vector logits;
  Vector dlogits;
  Vector dfeature;

  Workspace(const ModelParams& p) {
    const auto& layers = p.theta.layers;
    for (const auto& l : layers) {
      pre.emplace_back(l.bias.size());
      post.emplace_back(l.bias.size());
      delta.emplace_back(l.bias.size());
    }
    logits.resize(p.phi.rows());
    dlogits.resize(p.phi.rows());
    dfeature.resize(p.phi.cols());
  }
};

void run_extractor(const Extractor& theta, std::span<const double> x, Workspace& ws) {
  std::span<const double> in = x;
  const std::size_t last = theta.layers.size() - 1;
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    dense_forward(theta.layers[l], in, ws.pre[l]);
    if (l == last) {
      ws.post[l] = ws.pre[l];
    } else {
      for (std::size_t o = 0; o < ws.pre[l].size(); ++o) ws.post[l][o] = leaky(ws.pre[l][o]);
    }
    in = ws.post[l];
  }
}

void head_forward(const Matrix& phi, std::span<const double> feature, std::span<double> logits) {
  for (std::size_t k = 0; k < phi.rows(); ++k) logits[k] = dot(phi.row(k), feature);
}

}  // namespace

ModelParams init_params(const ModelDims& dims, RngStream& rng) {
  if (dims.input == 0 || dims.feature == 0 || dims.classes < 2) {
    throw ShapeError("init_params: invalid model dimensions");
  }
  ModelParams p;
  p.dims = dims;
  std::size_t in = dims.input;
  for (std::size_t h : dims.hidden) {
    if (h == 0) throw ShapeError("init_params: hidden width must be positive");
    p.theta.layers.push_back(random_layer(in, h, rng));
    in = h;
  }
  p.theta.layers.push_back(random_layer(in, dims.feature, rng));
  p.phi = Matrix(dims.classes, dims.feature);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dims.feature));
  for (double& w : p.phi.data()) w = (2.0 * rng.uniform() - 1.0) * bound;
  return p;
}

Extractor zeros_like(const Extractor& like) {
  Extractor z;
  for (const auto& l : like.layers) {
    z.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), Vector(l.bias.size(), 0.0)});
  }
  return z;
}

std::size_t parameter_count(const Extractor& e) {
  std::size_t n = 0;
  for (const auto& l : e.layers) n += l.weight.size() + l.bias.size();
  return n;
}

Vector flatten(const Extractor& e) {
  Vector flat;
  flat.reserve(parameter_count(e));
  for (const auto& l : e.layers) {
    flat.insert(flat.end(), l.weight.data().begin(), l.weight.data().end());
    flat.insert(flat.end(), l.bias.begin(), l.bias.end());
  }
  return flat;
}

void unflatten(std::span<const double> flat, Extractor& e) {
  if (flat.size() != parameter_count(e)) throw ShapeError("unflatten: length mismatch");
  std::size_t pos = 0;
  for (auto& l : e.layers) {
    auto w = l.weight.data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), w.size(), w.begin());
    pos += w.size();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
}

void axpy(double s, const Extractor& x, Extractor& y) {
  if (x.layers.size() != y.layers.size()) throw ShapeError("extractor axpy: depth mismatch");
  for (std::size_t l = 0; l < x.layers.size(); ++l) {
    if (x.layers[l].weight.rows() != y.layers[l].weight.rows() ||
        x.layers[l].weight.cols() != y.layers[l].weight.cols()) {
      throw ShapeError("extractor axpy: layer shape mismatch");
    }
    fedpac::axpy(s, x.layers[l].weight.data(), y.layers[l].weight.data());
    fedpac::axpy(s, x.layers[l].bias, y.layers[l].bias);
  }
}

void validate_shapes(const ModelParams& p) {
  const auto& layers = p.theta.layers;
  if (layers.size() != p.dims.hidden.size() + 1) throw ShapeError("model: depth does not match dims");
  std::size_t in = p.dims.input;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::size_t out = l < p.dims.hidden.size() ? p.dims.hidden[l] : p.dims.feature;
    if (layers[l].weight.rows() != out || layers[l].weight.cols() != in || layers[l].bias.size() != out) {
      throw ShapeError("model: layer shape does not match dims");
    }
    in = out;
  }
  if (p.phi.rows() != p.dims.classes || p.phi.cols() != p.dims.feature) {
    throw ShapeError("model: head shape does not match dims");
  }
}

Vector extract_feature(const Extractor& theta, std::span<const double> x) {
  if (theta.layers.empty()) throw ShapeError("extract_feature: empty extractor");
  if (theta.layers.front().weight.cols() != x.size()) throw ShapeError("extract_feature: input size mismatch");
  Vector in(x.begin(), x.end());
  const std::size_t last = theta.layers.size() - 1;
  for (std::size_t l = 0; l < theta.layers.size(); ++l) {
    Vector out(theta.layers[l].bias.size());
    dense_forward(theta.layers[l], in, out);
    if (l != last) {
      for (double& v : out) v = leaky(v);
    }
    in = std::move(out);
  }
  return in;
}

ForwardResult forward(const ModelParams& params, std::span<const double> x) {
  if (x.size() != params.dims.input) throw ShapeError("forward: input size mismatch");
  ForwardResult r;
  r.feature = extract_feature(params.theta, x);
  r.logits.resize(params.phi.rows());
  head_forward(params.phi, r.feature, r.logits);
  return r;
}

std::size_t predict(const ModelParams& params, std::span<const double> x) {
  const Vector logits = forward(params, x).logits;
  std::size_t best = 0;
  for (std::size_t k = 1; k < logits.size(); ++k) {
    if (logits[k] > logits[best]) best = k;
  }
  return best;
}

LossGrads loss_and_grads(const ModelParams& params, std::span<const Sample* const> batch,
                         const CentroidSet* centroids, double lambda, GradBlocks blocks) {
  if (batch.empty()) throw std::invalid_argument("loss_and_grads: empty batch");
  if (!(lambda >= 0.0)) throw std::invalid_argument("loss_and_grads: lambda must be nonnegative");
  const std::size_t d = params.phi.cols();
  const std::size_t classes = params.phi.rows();
  if (centroids != nullptr && (centroids->classes() != classes || centroids->dim() != d)) {
    throw ShapeError("loss_and_grads: centroid shape mismatch");
  }

  LossGrads out;
  out.grad_theta = zeros_like(params.theta);
  out.grad_phi = Matrix(classes, d);
  Workspace ws(params);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double reg_scale = lambda * inv_n / static_cast<double>(d);
  const auto& layers = params.theta.layers;
  const std::size_t depth = layers.size();

  for (const Sample* sample : batch) {
    if (sample->x.size() != params.dims.input) throw ShapeError("loss_and_grads: input size mismatch");
    if (sample->y >= classes) throw ShapeError("loss_and_grads: label out of range");
    run_extractor(params.theta, sample->x, ws);
    const Vector& feature = ws.post[depth - 1];
    head_forward(params.phi, feature, ws.logits);
    out.cross_entropy += softmax_xent_into(ws.logits, sample->y, ws.dlogits);

    if (blocks.phi) {
      for (std::size_t k = 0; k < classes; ++k) {
        const double g = ws.dlogits[k] * inv_n;
        if (g == 0.0) continue;
        auto row = out.grad_phi.row(k);
        for (std::size_t j = 0; j < d; ++j) row[j] += g * feature[j];
      }
    }

    const bool aligned = lambda > 0.0 && centroids != nullptr && centroids->present[sample->y];
    if (aligned) {
      auto c = centroids->values.row(sample->y);
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = feature[j] - c[j];
        sq += diff * diff;
      }
      out.regularizer += reg_scale * sq;
    }

    if (!blocks.theta) continue;

    // dL/dfeature = phi^T dlogits / n + 2 * reg_scale * (f - c).
    std::fill(ws.dfeature.begin(), ws.dfeature.end(), 0.0);
    for (std::size_t k = 0; k < classes; ++k) {
      const double g = ws.dlogits[k] * inv_n;
      auto row = params.phi.row(k);
      for (std::size_t j = 0; j < d; ++j) ws.dfeature[j] += g * row[j];
    }
    if (aligned) {
      auto c = centroids->values.row(sample->y);
      for (std::size_t j = 0; j < d; ++j) ws.dfeature[j] += 2.0 * reg_scale * (feature[j] - c[j]);
    }

    ws.delta[depth - 1] = ws.dfeature;
    for (std::size_t l = depth; l-- > 0;) {
      const DenseLayer& layer = layers[l];
      DenseLayer& grad = out.grad_theta.layers[l];
      const Vector& delta = ws.delta[l];
      std::span<const double> in = l == 0 ? std::span<const double>(sample->x)
                                          : std::span<const double>(ws.post[l - 1]);
      const std::size_t rows = layer.weight.rows();
      const std::size_t cols = layer.weight.cols();
      double* gw = grad.weight.data().data();
      for (std::size_t o = 0; o < rows; ++o) {
        const double dl = delta[o];
        grad.bias[o] += dl;
        if (dl == 0.0) continue;
        double* gr = gw + o * cols;
        for (std::size_t i = 0; i < cols; ++i) gr[i] += dl * in[i];
      }
      if (l == 0) break;
      Vector& prev = ws.delta[l - 1];
      std::fill(prev.begin(), prev.end(), 0.0);
      const double* w = layer.weight.data().data();
      for (std::size_t o = 0; o < rows; ++o) {
        const double dl = delta[o];
        if (dl == 0.0) continue;
        const double* wr = w + o * cols;
        for (std::size_t i = 0; i < cols; ++i) prev[i] += dl * wr[i];
      }
      const Vector& pre = ws.pre[l - 1];
      for (std::size_t i = 0; i < prev.size(); ++i) prev[i] *= leaky_slope(pre[i]);
    }
  }
  out.cross_entropy *= inv_n;
  out.loss = out.cross_entropy + out.regularizer;
  if (!std::isfinite(out.loss)) throw NumericError("loss_and_grads: non-finite loss");
  return out;
}

LossGrads loss_and_grads(const ModelParams& params, std::span<const Sample> batch,
                         const CentroidSet* centroids, double lambda, GradBlocks blocks) {
  std::vector<const Sample*> ptrs;
  ptrs.reserve(batch.size());
  for (const Sample& s : batch) ptrs.push_back(&s);
  return loss_and_grads(params, std::span<const Sample* const>(ptrs), centroids, lambda, blocks);
}

}  // namespace fedpac
