#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedpac/client.hpp"
#include "fedpac/data.hpp"
#include "fedpac/model.hpp"
#include "fedpac/server.hpp"

namespace fedpac {

enum class Algorithm { kFedPAC, kFedAvg, kFedAvgFT, kFedRep, kLocal, kFaOnly, kCcOnly };

/// Accepts "none" as an alias of "fedrep" (the ablation baseline).
Algorithm parse_algorithm(const std::string& name);
std::string to_string(Algorithm a);

/// Which parts of FedPAC an algorithm switches on.
struct ModeFlags {
  bool share_extractor = true;
  bool share_head = false;      // FedAvg: the head is averaged too
  bool combine_heads = false;   // classifier collaboration
  bool align_features = false;  // centroid regularizer
  bool joint_training = false;  // no head/extractor alternation
  bool finetune = false;        // local fine-tuning after the last round
};

ModeFlags mode_for(Algorithm a);

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::kFedPAC;
  std::size_t rounds = 60;
  std::size_t clients = 20;
  double sample_rate = 1.0;
  std::size_t epochs = 5;
  std::size_t head_epochs = 1;
  double eta_f = 0.01;
  double eta_g = 0.1;
  double lambda = 1.0;
  std::size_t batch = 50;
  double momentum = 0.5;
  double weight_decay = 5e-4;
  std::size_t finetune_epochs = 5;
  double qp_tol = 1e-8;
  std::vector<std::uint64_t> seeds{1};
  std::size_t workers = 1;

  ModelDims model;
  data::PartitionSpec partition;

  // Data source: synthetic Gaussian classes unless IDX paths are given.
  double class_sep = 4.0;
  std::string idx_images;
  std::string idx_labels;
};

/// Throws std::invalid_argument naming the offending setting.
void validate(const ExperimentConfig& config);

struct RoundReport {
  std::size_t round = 0;
  Vector accuracy;                        // per client
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  Vector train_loss;                      // per client, cross-entropy on the train split
  Matrix weights;                         // combination weights after this round
  std::vector<std::size_t> participants;  // empty for the initial evaluation
  double wall_seconds = 0.0;
};

using RoundCallback = std::function<void(const RoundReport&)>;

struct ExperimentResult {
  std::vector<RoundReport> reports;  // reports[0] evaluates the initial models
  std::vector<ModelParams> final_models;
  server::GlobalState state;
};

/// Builds the configured data source and partitions it for `seed`.
std::vector<data::ClientDataset> build_datasets(const ExperimentConfig& config, std::uint64_t seed);

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                const RoundCallback& on_round = {});
ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                std::span<const data::ClientDataset> datasets, const ModeFlags& flags,
                                const RoundCallback& on_round = {});

/// Top-1 accuracy on `samples`; ties go to the lowest class index.
double evaluate_accuracy(const ModelParams& model, std::span<const Sample> samples);
Vector evaluate(std::span<const ModelParams> models, std::span<const data::ClientDataset> datasets);

/// Uniform sample of ceil(rate * m) clients, sorted by id. Depends only on
/// (seed, round).
std::vector<std::size_t> sample_clients(std::size_t clients, double rate, std::uint64_t seed, std::size_t round);

struct AblationCell {
  std::string name;
  Vector final_accuracy;  // one per seed
  double mean = 0.0;
  double std = 0.0;
};

/// Runs {none, fa_only, cc_only, fedpac} over every configured seed.
std::vector<AblationCell> ablation_suite(const ExperimentConfig& base);
AblationCell run_cell(const ExperimentConfig& base, Algorithm algorithm, const std::string& name);

/// Appends one row per client plus an AGG row per round and flushes, so a
/// killed run keeps every completed round.
class MetricsCsvWriter {
 public:
  MetricsCsvWriter(const std::filesystem::path& path, std::string algorithm, std::uint64_t seed);
  void write(const RoundReport& report);

 private:
  std::ofstream out_;
  std::string algorithm_;
  std::uint64_t seed_;
};

}  // namespace fedpac
