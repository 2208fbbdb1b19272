#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedpac/model.hpp"
#include "fedpac/numerics.hpp"
#include "fedpac/rng.hpp"

namespace fedpac::data {

/// Source of labeled inputs. draw() is a pure function of (label, index).
class SampleFactory {
 public:
  virtual ~SampleFactory() = default;
  virtual std::size_t classes() const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual Vector draw(std::size_t label, std::uint64_t draw_index) const = 0;
};

/// Isotropic unit-variance Gaussian cloud per class around a random mean of
/// norm `class_sep`.
class GaussianFactory final : public SampleFactory {
 public:
  GaussianFactory(std::size_t classes, std::size_t input_dim, double class_sep, std::uint64_t seed);

  std::size_t classes() const override { return means_.rows(); }
  std::size_t input_dim() const override { return means_.cols(); }
  Vector draw(std::size_t label, std::uint64_t draw_index) const override;
  const Matrix& class_means() const { return means_; }

 private:
  Matrix means_;
  std::uint64_t seed_;
};

GaussianFactory gen_synthetic_world(std::size_t classes, std::size_t input_dim, double class_sep,
                                    std::uint64_t seed);

/// Resamples (with replacement) from a fixed labeled pool, e.g. IDX images.
class PoolFactory final : public SampleFactory {
 public:
  PoolFactory(std::span<const Sample> pool, std::size_t classes, std::uint64_t seed);

  std::size_t classes() const override { return by_class_.size(); }
  std::size_t input_dim() const override { return dim_; }
  Vector draw(std::size_t label, std::uint64_t draw_index) const override;

 private:
  std::vector<std::vector<Vector>> by_class_;
  std::size_t dim_ = 0;
  std::uint64_t seed_;
};

enum class Scheme { kSharedS, kDirichlet, kPathological, kCustom };

Scheme parse_scheme(const std::string& name);
std::string to_string(Scheme s);

struct PartitionSpec {
  Scheme scheme = Scheme::kSharedS;
  double s_percent = 20.0;
  std::size_t num_groups = 5;
  /// Dominant classes per group. Empty means three consecutive classes per
  /// group starting at 0, 2, 4, ... with wraparound.
  std::vector<std::vector<std::size_t>> dominant;
  double dirichlet_beta = 1.0;
  /// One entry: every client gets that many training samples. Several
  /// entries: each client draws its size uniformly from the list.
  std::vector<std::size_t> samples_per_client{600};
  std::size_t test_per_client = 300;
  /// Optional per-group label permutation (empty = none).
  std::vector<std::vector<std::size_t>> label_permutation;
  /// Optional per-group rotation angle in degrees (empty = none).
  std::vector<double> rotation_degrees;
  /// Custom scheme only: per-group label weights over all classes.
  std::vector<Vector> group_weights;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument describing the first violated constraint.
void validate(const PartitionSpec& spec, std::size_t classes);

/// Dominant sets actually used for `spec` (defaults filled in).
std::vector<std::vector<std::size_t>> dominant_sets(const PartitionSpec& spec, std::size_t classes);

struct ClientDataset {
  std::size_t client_id = 0;
  std::size_t group_id = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Group of client `client` when `clients` are split into `groups` even
/// blocks; the remainder is assigned round-robin.
std::size_t group_of(std::size_t client, std::size_t clients, std::size_t groups);

/// Per-class client proportions p_k ~ Dir_m(beta) as a K x m matrix.
Matrix dirichlet_proportions(std::size_t classes, std::size_t clients, double beta, RngStream& rng);

std::vector<ClientDataset> partition(const PartitionSpec& spec, const SampleFactory& factory, std::size_t clients);

std::vector<std::size_t> label_histogram(std::span<const Sample> samples, std::size_t classes);

/// Orthogonal transform rotating `dim`/2 random planes by `degrees`.
Matrix plane_rotation(std::size_t dim, double degrees, RngStream& rng);

class IdxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class IdxFormatError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxConsistencyError : public IdxError {
 public:
  using IdxError::IdxError;
};
class IdxLengthError : public IdxError {
 public:
  using IdxError::IdxError;
};

/// Big-endian IDX pair: images magic 0x00000803 (n, rows, cols), labels
/// magic 0x00000801 (n). Pixels are scaled to [0, 1].
std::vector<Sample> read_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace fedpac::data
