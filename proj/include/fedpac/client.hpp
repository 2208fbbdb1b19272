#pragma once

#include <span>
#include <vector>

#include "fedpac/model.hpp"
#include "fedpac/rng.hpp"

namespace fedpac::client {

/// Local feature statistics computed with the extractor received at the
/// start of a round (before any local update).
struct FeatureStats {
  Vector priors;                     // n_k / n
  Matrix mu;                         // K x d class means; zero rows for absent classes
  std::vector<bool> class_present;   // n_k > 0
  Matrix h;                          // priors[y] * mu[y]
  double variance = 0.0;             // V, clamped at 0
  std::vector<std::size_t> counts;   // n_k
};

struct ClientUpdate {
  std::size_t client_id = 0;
  Extractor theta;
  Matrix phi;
  CentroidSet local_centroids;
  FeatureStats stats;
  std::size_t n = 0;
  double train_loss = 0.0;  // mean loss over the last local epoch
};

struct OptimizerSettings {
  std::size_t batch_size = 50;
  double momentum = 0.0;
  double weight_decay = 0.0;
};

FeatureStats extract_stats(const ModelParams& params, std::span<const Sample> train);

/// One or more epochs of mini-batch SGD on the head only (cross-entropy).
Matrix train_head(const ModelParams& params, std::span<const Sample> train, double eta_g, std::size_t epochs,
                  const OptimizerSettings& opt, RngStream& rng);

struct ExtractorResult {
  Extractor theta;
  double last_epoch_loss = 0.0;
};

/// Mini-batch SGD on the extractor only, minimizing cross-entropy plus the
/// feature-alignment penalty against `centroids`.
ExtractorResult train_extractor(const ModelParams& params, std::span<const Sample> train,
                                const CentroidSet& centroids, double lambda, double eta_f, std::size_t epochs,
                                const OptimizerSettings& opt, RngStream& rng);

struct JointResult {
  ModelParams params;
  double last_epoch_loss = 0.0;
};

/// Mini-batch SGD on extractor and head together (FedAvg-style local step).
JointResult train_joint(const ModelParams& params, std::span<const Sample> train, double eta, std::size_t epochs,
                        const OptimizerSettings& opt, RngStream& rng);

/// Per-class mean feature; classes without samples are marked absent.
CentroidSet local_centroids(const ModelParams& params, std::span<const Sample> train);

double mean_cross_entropy(const ModelParams& params, std::span<const Sample> samples);

enum class LocalStyle {
  kAlternating,  // head for `head_epochs`, then extractor for `epochs`
  kJoint,        // whole model for `epochs`
};

struct RoundSettings {
  LocalStyle style = LocalStyle::kAlternating;
  std::size_t epochs = 5;
  std::size_t head_epochs = 1;
  double eta_f = 0.01;
  double eta_g = 0.1;
  double lambda = 1.0;
  OptimizerSettings opt;
  std::uint64_t seed = 0;
  std::size_t round = 0;
};

/// What the server sends a client: the extractor to start from, the head to
/// start from (the personalized combination for FedPAC) and the current
/// global centroids.
struct Broadcast {
  const Extractor& theta;
  const Matrix& head;
  const CentroidSet& centroids;
};

struct ClientState {
  std::size_t client_id = 0;
  ModelDims dims;
  std::span<const Sample> train;
};

/// One local round: adopt the broadcast, extract statistics, train head
/// then extractor, compute post-update centroids, package the update.
ClientUpdate run_client_round(const Broadcast& broadcast, const ClientState& state, const RoundSettings& settings);

}  // namespace fedpac::client
