#include "fedpac/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <set>

namespace fedpac::data {

namespace {

constexpr std::uint64_t kTestBit = 1ULL << 32;
constexpr std::size_t kMinDirichletClientSize = 10;
constexpr int kMaxDirichletAttempts = 1000;

std::uint64_t draw_index(std::size_t client, bool test, std::size_t position) {
  return (static_cast<std::uint64_t>(client) << 33) | (test ? kTestBit : 0) | static_cast<std::uint64_t>(position);
}

// Largest-remainder rounding of total * weights[i]; ties go to the lower index.
std::vector<std::size_t> apportion(std::span<const double> weights, std::size_t total) {
  const std::size_t n = weights.size();
  std::vector<std::size_t> out(n);
  std::vector<std::pair<double, std::size_t>> rest(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = weights[i] * static_cast<double>(total);
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    rest[i] = {exact - std::floor(exact), i};
  }
  std::stable_sort(rest.begin(), rest.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total && k < n; ++k, ++assigned) ++out[rest[k].second];
  return out;
}

std::size_t draw_weighted(std::span<const double> weights, RngStream& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (u < weights[i]) return i;
    u -= weights[i];
  }
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return 0;
}

// Label sequence for one client split under the mixture schemes.
std::vector<std::size_t> mixture_labels(const PartitionSpec& spec, std::span<const std::size_t> dominant,
                                        std::size_t classes, std::size_t group, std::size_t n, RngStream& rng) {
  std::vector<std::size_t> labels(n);
  if (spec.scheme == Scheme::kCustom) {
    const Vector& w = spec.group_weights[group];
    for (auto& y : labels) y = draw_weighted(w, rng);
    return labels;
  }
  const double s = spec.scheme == Scheme::kPathological ? 0.0 : spec.s_percent;
  const auto uniform_count = static_cast<std::size_t>(std::llround(s / 100.0 * static_cast<double>(n)));
  for (std::size_t l = 0; l < n; ++l) {
    labels[l] = l < uniform_count ? rng.below(classes) : dominant[rng.below(dominant.size())];
  }
  return labels;
}

}  // namespace

GaussianFactory::GaussianFactory(std::size_t classes, std::size_t input_dim, double class_sep, std::uint64_t seed)
    : means_(classes, input_dim), seed_(seed) {
  if (classes < 2) throw std::invalid_argument("synthetic world: need at least two classes");
  if (input_dim == 0) throw std::invalid_argument("synthetic world: input dimension must be positive");
  if (!(class_sep >= 0.0)) throw std::invalid_argument("synthetic world: class_sep must be nonnegative");
  for (std::size_t k = 0; k < classes; ++k) {
    RngStream rng(seed, {k, 0, Purpose::kClassMeans});
    auto row = means_.row(k);
    for (double& v : row) v = rng.normal();
    const double norm = std::sqrt(squared_norm(row));
    for (double& v : row) v *= class_sep / norm;
  }
}

Vector GaussianFactory::draw(std::size_t label, std::uint64_t index) const {
  if (label >= classes()) throw std::out_of_range("GaussianFactory::draw: label out of range");
  RngStream rng(seed_, {label, index, Purpose::kSample});
  auto mean = means_.row(label);
  Vector x(mean.begin(), mean.end());
  for (double& v : x) v += rng.normal();
  return x;
}

GaussianFactory gen_synthetic_world(std::size_t classes, std::size_t input_dim, double class_sep,
                                    std::uint64_t seed) {
  return GaussianFactory(classes, input_dim, class_sep, seed);
}

PoolFactory::PoolFactory(std::span<const Sample> pool, std::size_t classes, std::uint64_t seed)
    : by_class_(classes), seed_(seed) {
  if (pool.empty()) throw std::invalid_argument("PoolFactory: empty pool");
  dim_ = pool.front().x.size();
  for (const Sample& s : pool) {
    if (s.y >= classes) throw std::invalid_argument("PoolFactory: label out of range");
    if (s.x.size() != dim_) throw std::invalid_argument("PoolFactory: ragged inputs");
    by_class_[s.y].push_back(s.x);
  }
}

Vector PoolFactory::draw(std::size_t label, std::uint64_t index) const {
  if (label >= by_class_.size()) throw std::out_of_range("PoolFactory::draw: label out of range");
  const auto& bucket = by_class_[label];
  if (bucket.empty()) throw std::invalid_argument("PoolFactory::draw: class has no samples");
  RngStream rng(seed_, {label, index, Purpose::kSample});
  return bucket[rng.below(bucket.size())];
}

Scheme parse_scheme(const std::string& name) {
  if (name == "shared-s") return Scheme::kSharedS;
  if (name == "dirichlet") return Scheme::kDirichlet;
  if (name == "pathological") return Scheme::kPathological;
  if (name == "custom") return Scheme::kCustom;
  throw std::invalid_argument("unknown partition scheme '" + name + "'");
}

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::kSharedS: return "shared-s";
    case Scheme::kDirichlet: return "dirichlet";
    case Scheme::kPathological: return "pathological";
    case Scheme::kCustom: return "custom";
  }
  return "?";
}

std::vector<std::vector<std::size_t>> dominant_sets(const PartitionSpec& spec, std::size_t classes) {
  if (!spec.dominant.empty()) return spec.dominant;
  std::vector<std::vector<std::size_t>> sets(spec.num_groups);
  for (std::size_t g = 0; g < spec.num_groups; ++g) {
    for (std::size_t j = 0; j < 3; ++j) sets[g].push_back((2 * g + j) % classes);
    std::sort(sets[g].begin(), sets[g].end());
    sets[g].erase(std::unique(sets[g].begin(), sets[g].end()), sets[g].end());
  }
  return sets;
}

void validate(const PartitionSpec& spec, std::size_t classes) {
  if (spec.num_groups == 0) throw std::invalid_argument("partition.num_groups must be positive");
  if (!(spec.s_percent >= 0.0 && spec.s_percent <= 100.0)) {
    throw std::invalid_argument("partition.s_percent must lie in [0, 100]");
  }
  if (spec.samples_per_client.empty()) throw std::invalid_argument("partition.samples_per_client is empty");
  for (std::size_t n : spec.samples_per_client)
    if (n == 0) throw std::invalid_argument("partition.samples_per_client entries must be >= 1");
  if (spec.test_per_client == 0) throw std::invalid_argument("partition.test_per_client must be >= 1");
  if (spec.scheme == Scheme::kDirichlet && !(spec.dirichlet_beta > 0.0)) {
    throw std::invalid_argument("partition.dirichlet_beta must be positive");
  }
  if (!spec.dominant.empty() && spec.dominant.size() != spec.num_groups) {
    throw std::invalid_argument("partition.dominant must list one class set per group");
  }
  const bool needs_dominant = spec.scheme == Scheme::kPathological ||
                              (spec.scheme == Scheme::kSharedS && spec.s_percent < 100.0);
  for (const auto& set : dominant_sets(spec, classes)) {
    if (needs_dominant && set.empty()) {
      throw std::invalid_argument("partition.dominant: empty dominant set with s < 100");
    }
    for (std::size_t k : set)
      if (k >= classes) throw std::invalid_argument("partition.dominant: class index out of range");
  }
  if (spec.scheme == Scheme::kCustom) {
    if (spec.group_weights.size() != spec.num_groups) {
      throw std::invalid_argument("partition.group_weights must list one weight vector per group");
    }
    for (const auto& w : spec.group_weights) {
      if (w.size() != classes) throw std::invalid_argument("partition.group_weights: wrong length");
      double total = 0.0;
      for (double v : w) {
        if (!(v >= 0.0)) throw std::invalid_argument("partition.group_weights: negative weight");
        total += v;
      }
      if (!(total > 0.0)) throw std::invalid_argument("partition.group_weights: all-zero weights");
    }
  }
  if (!spec.label_permutation.empty()) {
    if (spec.label_permutation.size() != spec.num_groups) {
      throw std::invalid_argument("partition.label_permutation must list one permutation per group");
    }
    for (const auto& perm : spec.label_permutation) {
      if (perm.size() != classes) throw std::invalid_argument("partition.label_permutation: wrong length");
      std::set<std::size_t> seen(perm.begin(), perm.end());
      if (seen.size() != classes || *seen.rbegin() >= classes) {
        throw std::invalid_argument("partition.label_permutation: not a bijection");
      }
    }
  }
  if (!spec.rotation_degrees.empty() && spec.rotation_degrees.size() != spec.num_groups) {
    throw std::invalid_argument("partition.rotation_degrees must list one angle per group");
  }
}

std::size_t group_of(std::size_t client, std::size_t clients, std::size_t groups) {
  const std::size_t base = clients / groups;
  if (base == 0) return client % groups;
  if (client < base * groups) return client / base;
  return (client - base * groups) % groups;
}

Matrix dirichlet_proportions(std::size_t classes, std::size_t clients, double beta, RngStream& rng) {
  Matrix p(classes, clients);
  for (std::size_t k = 0; k < classes; ++k) {
    auto row = p.row(k);
    double total = 0.0;
    for (double& v : row) {
      v = rng.gamma(beta);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return p;
}

Matrix plane_rotation(std::size_t dim, double degrees, RngStream& rng) {
  // Random orthonormal basis by Gram-Schmidt on a Gaussian matrix.
  Matrix basis(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    auto v = basis.row(i);
    double norm = 0.0;
    do {
      for (double& x : v) x = rng.normal();
      for (std::size_t j = 0; j < i; ++j) axpy(-dot(v, basis.row(j)), basis.row(j), v);
      norm = std::sqrt(squared_norm(v));
    } while (norm < 1e-8);
    for (double& x : v) x /= norm;
  }
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  // R = I + sum over planes (u1,u2) of (c-1)(u1 u1^T + u2 u2^T) + s (u2 u1^T - u1 u2^T)
  Matrix r = Matrix::identity(dim);
  for (std::size_t k = 0; k + 1 < dim; k += 2) {
    auto u1 = basis.row(k);
    auto u2 = basis.row(k + 1);
    for (std::size_t a = 0; a < dim; ++a)
      for (std::size_t b = 0; b < dim; ++b)
        r(a, b) += (c - 1.0) * (u1[a] * u1[b] + u2[a] * u2[b]) + s * (u2[a] * u1[b] - u1[a] * u2[b]);
  }
  return r;
}

std::vector<std::size_t> label_histogram(std::span<const Sample> samples, std::size_t classes) {
  std::vector<std::size_t> h(classes, 0);
  for (const Sample& s : samples) {
    if (s.y >= classes) throw std::out_of_range("label_histogram: label out of range");
    ++h[s.y];
  }
  return h;
}

std::vector<ClientDataset> partition(const PartitionSpec& spec, const SampleFactory& factory, std::size_t clients) {
  const std::size_t classes = factory.classes();
  validate(spec, classes);
  if (clients == 0) throw std::invalid_argument("partition: need at least one client");
  const auto dominant = dominant_sets(spec, classes);

  // Training label sequence per client.
  std::vector<std::vector<std::size_t>> train_labels(clients);
  std::vector<std::size_t> groups(clients);
  for (std::size_t i = 0; i < clients; ++i) groups[i] = group_of(i, clients, spec.num_groups);

  if (spec.scheme == Scheme::kDirichlet) {
    const std::size_t pool = clients * spec.samples_per_client.front();
    const auto per_class = apportion(Vector(classes, 1.0 / static_cast<double>(classes)), pool);
    std::vector<std::vector<std::size_t>> counts;
    bool ok = false;
    for (int attempt = 0; attempt < kMaxDirichletAttempts && !ok; ++attempt) {
      RngStream rng(spec.seed, {0, static_cast<std::uint64_t>(attempt), Purpose::kDirichlet});
      const Matrix props = dirichlet_proportions(classes, clients, spec.dirichlet_beta, rng);
      counts.assign(clients, std::vector<std::size_t>(classes, 0));
      for (std::size_t k = 0; k < classes; ++k) {
        const auto alloc = apportion(props.row(k), per_class[k]);
        for (std::size_t i = 0; i < clients; ++i) counts[i][k] = alloc[i];
      }
      const std::size_t floor_size = std::min(kMinDirichletClientSize, std::max<std::size_t>(1, pool / clients));
      ok = std::all_of(counts.begin(), counts.end(), [&](const auto& c) {
        return std::accumulate(c.begin(), c.end(), std::size_t{0}) >= floor_size;
      });
    }
    if (!ok) throw std::runtime_error("partition: dirichlet allocation left a client (nearly) empty");
    for (std::size_t i = 0; i < clients; ++i) {
      for (std::size_t k = 0; k < classes; ++k) train_labels[i].insert(train_labels[i].end(), counts[i][k], k);
      RngStream rng(spec.seed, {i, 0, Purpose::kTrainLabels});
      rng.shuffle(std::span<std::size_t>(train_labels[i]));
    }
  } else {
    for (std::size_t i = 0; i < clients; ++i) {
      std::size_t n = spec.samples_per_client.front();
      if (spec.samples_per_client.size() > 1) {
        RngStream q(spec.seed, {i, 0, Purpose::kQuantity});
        n = spec.samples_per_client[q.below(spec.samples_per_client.size())];
      }
      RngStream rng(spec.seed, {i, 0, Purpose::kTrainLabels});
      train_labels[i] = mixture_labels(spec, dominant[groups[i] % dominant.size()], classes, groups[i], n, rng);
    }
  }

  std::vector<Matrix> rotations;
  if (!spec.rotation_degrees.empty()) {
    for (std::size_t g = 0; g < spec.num_groups; ++g) {
      RngStream rng(spec.seed, {g, 0, Purpose::kRotation});
      rotations.push_back(plane_rotation(factory.input_dim(), spec.rotation_degrees[g], rng));
    }
  }

  std::vector<ClientDataset> out(clients);
  for (std::size_t i = 0; i < clients; ++i) {
    ClientDataset& ds = out[i];
    ds.client_id = i;
    ds.group_id = groups[i];

    std::vector<std::size_t> test_labels;
    RngStream test_rng(spec.seed, {i, 0, Purpose::kTestLabels});
    if (spec.scheme == Scheme::kDirichlet) {
      // Test labels follow the client's training label proportions.
      const auto hist = [&] {
        Vector w(classes, 0.0);
        for (std::size_t y : train_labels[i]) w[y] += 1.0;
        return w;
      }();
      test_labels.resize(spec.test_per_client);
      for (auto& y : test_labels) y = draw_weighted(hist, test_rng);
    } else {
      test_labels = mixture_labels(spec, dominant[groups[i] % dominant.size()], classes, groups[i],
                                   spec.test_per_client, test_rng);
    }

    auto materialize = [&](const std::vector<std::size_t>& labels, bool test) {
      std::vector<Sample> samples;
      samples.reserve(labels.size());
      for (std::size_t l = 0; l < labels.size(); ++l) {
        Sample s{factory.draw(labels[l], draw_index(i, test, l)), labels[l]};
        if (!rotations.empty() && spec.rotation_degrees[ds.group_id] != 0.0) {
          s.x = matvec(rotations[ds.group_id], s.x);
        }
        if (!spec.label_permutation.empty()) s.y = spec.label_permutation[ds.group_id][s.y];
        samples.push_back(std::move(s));
      }
      return samples;
    };
    ds.train = materialize(train_labels[i], false);
    ds.test = materialize(test_labels, true);
  }
  return out;
}

}  // namespace fedpac::data
