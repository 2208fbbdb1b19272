#include "fedpac/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedpac/format.hpp"

namespace fedpac {

namespace {

// Runs body(i) for i in [0, n) on up to `workers` threads. Each index writes
// only its own slot, so results do not depend on scheduling.
template <typename Body>
void parallel_for(std::size_t n, std::size_t workers, Body&& body) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double population_std(std::span<const double> v) {
  if (v.empty()) return 0.0;
  const double mu = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

Algorithm parse_algorithm(const std::string& name) {
  if (name == "fedpac") return Algorithm::kFedPAC;
  if (name == "fedavg") return Algorithm::kFedAvg;
  if (name == "fedavg_ft") return Algorithm::kFedAvgFT;
  if (name == "fedrep" || name == "none") return Algorithm::kFedRep;
  if (name == "local") return Algorithm::kLocal;
  if (name == "fa_only") return Algorithm::kFaOnly;
  if (name == "cc_only") return Algorithm::kCcOnly;
  throw std::invalid_argument("unknown algorithm '" + name + "'");
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kFedPAC: return "fedpac";
    case Algorithm::kFedAvg: return "fedavg";
    case Algorithm::kFedAvgFT: return "fedavg_ft";
    case Algorithm::kFedRep: return "fedrep";
    case Algorithm::kLocal: return "local";
    case Algorithm::kFaOnly: return "fa_only";
    case Algorithm::kCcOnly: return "cc_only";
  }
  return "?";
}

ModeFlags mode_for(Algorithm a) {
  ModeFlags f;
  switch (a) {
    case Algorithm::kFedPAC:
      f.combine_heads = true;
      f.align_features = true;
      break;
    case Algorithm::kFedAvg:
      f.share_head = true;
      f.joint_training = true;
      break;
    case Algorithm::kFedAvgFT:
      f.share_head = true;
      f.joint_training = true;
      f.finetune = true;
      break;
    case Algorithm::kFedRep:
      break;
    case Algorithm::kLocal:
      f.share_extractor = false;
      break;
    case Algorithm::kFaOnly:
      f.align_features = true;
      break;
    case Algorithm::kCcOnly:
      f.combine_heads = true;
      break;
  }
  return f;
}

void validate(const ExperimentConfig& c) {
  if (c.clients == 0) throw std::invalid_argument("clients: must be at least 1");
  if (!(c.sample_rate > 0.0 && c.sample_rate <= 1.0)) throw std::invalid_argument("sample_rate: must lie in (0, 1]");
  if (c.seeds.empty()) throw std::invalid_argument("seeds: at least one seed is required");
  if (c.batch == 0) throw std::invalid_argument("batch: must be positive");
  if (!(c.eta_f >= 0.0)) throw std::invalid_argument("eta_f: must be nonnegative");
  if (!(c.eta_g >= 0.0)) throw std::invalid_argument("eta_g: must be nonnegative");
  if (!(c.lambda >= 0.0)) throw std::invalid_argument("lambda: must be nonnegative");
  if (!(c.momentum >= 0.0 && c.momentum < 1.0)) throw std::invalid_argument("momentum: must lie in [0, 1)");
  if (!(c.weight_decay >= 0.0)) throw std::invalid_argument("weight_decay: must be nonnegative");
  if (!(c.qp_tol > 0.0)) throw std::invalid_argument("qp_tol: must be positive");
  if (c.workers == 0) throw std::invalid_argument("workers: must be at least 1");
  if (c.model.classes < 2) throw std::invalid_argument("model.classes: need at least two classes");
  if (c.model.input == 0) throw std::invalid_argument("model.input: must be positive");
  if (c.model.feature == 0) throw std::invalid_argument("model.feature: must be positive");
  for (std::size_t h : c.model.hidden)
    if (h == 0) throw std::invalid_argument("model.hidden: widths must be positive");
  if (c.idx_images.empty() != c.idx_labels.empty()) {
    throw std::invalid_argument("data.idx_images: both IDX paths must be given together");
  }
  if (c.idx_images.empty() && !(c.class_sep >= 0.0)) throw std::invalid_argument("data.class_sep: must be nonnegative");
  data::validate(c.partition, c.model.classes);
}

std::vector<data::ClientDataset> build_datasets(const ExperimentConfig& config, std::uint64_t seed) {
  data::PartitionSpec spec = config.partition;
  spec.seed = seed;
  if (!config.idx_images.empty()) {
    const auto pool = data::read_idx(config.idx_images, config.idx_labels);
    data::PoolFactory factory(pool, config.model.classes, seed);
    if (factory.input_dim() != config.model.input) {
      throw std::invalid_argument("model.input: does not match the IDX image size");
    }
    return data::partition(spec, factory, config.clients);
  }
  const auto factory = data::gen_synthetic_world(config.model.classes, config.model.input, config.class_sep, seed);
  return data::partition(spec, factory, config.clients);
}

std::vector<std::size_t> sample_clients(std::size_t clients, double rate, std::uint64_t seed, std::size_t round) {
  std::vector<std::size_t> ids(clients);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const auto k = std::min(clients, static_cast<std::size_t>(std::ceil(rate * static_cast<double>(clients) - 1e-12)));
  if (k >= clients) return ids;
  RngStream rng(seed, {0, round, Purpose::kClientSampling});
  for (std::size_t i = 0; i < k; ++i) std::swap(ids[i], ids[i + rng.below(clients - i)]);
  ids.resize(std::max<std::size_t>(k, 1));
  std::sort(ids.begin(), ids.end());
  return ids;
}

double evaluate_accuracy(const ModelParams& model, std::span<const Sample> samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty test set");
  std::size_t correct = 0;
  for (const Sample& s : samples) correct += predict(model, s.x) == s.y ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

Vector evaluate(std::span<const ModelParams> models, std::span<const data::ClientDataset> datasets) {
  if (models.size() != datasets.size()) throw ShapeError("evaluate: one model per client expected");
  Vector acc(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) acc[i] = evaluate_accuracy(models[i], datasets[i].test);
  return acc;
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed, const RoundCallback& on_round) {
  validate(config);
  const auto datasets = build_datasets(config, seed);
  return run_experiment(config, seed, datasets, mode_for(config.algorithm), on_round);
}

ExperimentResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                                std::span<const data::ClientDataset> datasets, const ModeFlags& flags,
                                const RoundCallback& on_round) {
  validate(config);
  const std::size_t m = datasets.size();
  if (m != config.clients) throw std::invalid_argument("clients: does not match the number of datasets");

  RngStream init_rng(seed, {0, 0, Purpose::kInit});
  const ModelParams initial = init_params(config.model, init_rng);

  server::GlobalState state;
  state.theta = initial.theta;
  state.centroids = CentroidSet::absent(config.model.classes, config.model.feature);
  state.heads.assign(m, initial.phi);
  state.weights = Matrix::identity(m);
  std::vector<Extractor> local_theta(m, initial.theta);

  client::RoundSettings settings;
  settings.style = flags.joint_training ? client::LocalStyle::kJoint : client::LocalStyle::kAlternating;
  settings.epochs = config.epochs;
  settings.head_epochs = config.head_epochs;
  settings.eta_f = config.eta_f;
  settings.eta_g = config.eta_g;
  settings.lambda = flags.align_features ? config.lambda : 0.0;
  settings.opt = {config.batch, config.momentum, config.weight_decay};
  settings.seed = seed;

  auto current_models = [&] {
    std::vector<ModelParams> models(m);
    for (std::size_t i = 0; i < m; ++i) {
      models[i].dims = config.model;
      models[i].theta = flags.share_extractor ? state.theta : local_theta[i];
      models[i].phi = state.heads[i];
    }
    return models;
  };

  ExperimentResult result;
  auto report_round = [&](std::size_t round, std::vector<std::size_t> participants,
                          const std::vector<ModelParams>& models, double seconds) {
    RoundReport r;
    r.round = round;
    r.accuracy.resize(m);
    r.train_loss.resize(m);
    parallel_for(m, config.workers, [&](std::size_t i) {
      r.accuracy[i] = evaluate_accuracy(models[i], datasets[i].test);
      r.train_loss[i] = client::mean_cross_entropy(models[i], datasets[i].train);
    });
    r.mean_accuracy = mean(r.accuracy);
    r.std_accuracy = population_std(r.accuracy);
    r.weights = state.weights;
    r.participants = std::move(participants);
    r.wall_seconds = seconds;
    if (on_round) on_round(r);
    result.reports.push_back(std::move(r));
  };

  report_round(0, {}, current_models(), 0.0);

  for (std::size_t t = 0; t < config.rounds; ++t) {
    const auto started = std::chrono::steady_clock::now();
    const bool last = t + 1 == config.rounds;
    const auto participants = last ? sample_clients(m, 1.0, seed, t) : sample_clients(m, config.sample_rate, seed, t);
    settings.round = t;

    std::vector<client::ClientUpdate> updates(participants.size());
    parallel_for(participants.size(), config.workers, [&](std::size_t k) {
      const std::size_t i = participants[k];
      const Extractor& theta = flags.share_extractor ? state.theta : local_theta[i];
      const client::Broadcast broadcast{theta, state.heads[i], state.centroids};
      const client::ClientState local{i, config.model, datasets[i].train};
      updates[k] = client::run_client_round(broadcast, local, settings);
    });

    if (flags.share_extractor) {
      state.theta = server::aggregate_extractors(updates);
    } else {
      for (const auto& u : updates) local_theta[u.client_id] = u.theta;
    }
    if (flags.align_features) state.centroids = server::aggregate_centroids(updates, state.centroids);

    if (flags.share_head) {
      double total = 0.0;
      for (const auto& u : updates) total += static_cast<double>(u.n);
      Matrix head(config.model.classes, config.model.feature);
      for (const auto& u : updates) head += u.phi * (static_cast<double>(u.n) / total);
      state.heads.assign(m, head);
    } else if (flags.combine_heads) {
      const server::Personalization p = server::personalize_heads(updates, qp::SolverOptions{.tol = config.qp_tol});
      for (std::size_t a = 0; a < participants.size(); ++a) {
        const std::size_t i = participants[a];
        state.heads[i] = p.heads[a];
        auto row = state.weights.row(i);
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t b = 0; b < participants.size(); ++b) row[participants[b]] = p.alpha(a, b);
      }
    } else {
      for (const auto& u : updates) state.heads[u.client_id] = u.phi;
    }
    state.round = t + 1;

    std::vector<ModelParams> models = current_models();
    if (last && flags.finetune) {
      parallel_for(m, config.workers, [&](std::size_t i) {
        RngStream rng(seed, {i, t, Purpose::kFinetuneShuffle});
        models[i] = client::train_joint(models[i], datasets[i].train, config.eta_f, config.finetune_epochs,
                                        settings.opt, rng)
                        .params;
      });
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    report_round(t + 1, participants, models, seconds);
    if (last) result.final_models = std::move(models);
  }
  if (result.final_models.empty()) result.final_models = current_models();
  result.state = std::move(state);
  return result;
}

AblationCell run_cell(const ExperimentConfig& base, Algorithm algorithm, const std::string& name) {
  ExperimentConfig config = base;
  config.algorithm = algorithm;
  AblationCell cell;
  cell.name = name;
  for (std::uint64_t seed : config.seeds) {
    const ExperimentResult r = run_experiment(config, seed);
    cell.final_accuracy.push_back(r.reports.back().mean_accuracy);
  }
  cell.mean = mean(cell.final_accuracy);
  cell.std = population_std(cell.final_accuracy);
  return cell;
}

std::vector<AblationCell> ablation_suite(const ExperimentConfig& base) {
  return {run_cell(base, Algorithm::kFedRep, "none"), run_cell(base, Algorithm::kFaOnly, "fa_only"),
          run_cell(base, Algorithm::kCcOnly, "cc_only"), run_cell(base, Algorithm::kFedPAC, "fedpac")};
}

MetricsCsvWriter::MetricsCsvWriter(const std::filesystem::path& path, std::string algorithm, std::uint64_t seed)
    : out_(path, std::ios::binary | std::ios::trunc), algorithm_(std::move(algorithm)), seed_(seed) {
  if (!out_) throw std::runtime_error("cannot write " + path.string());
  out_ << "round,client_id,accuracy,loss,algorithm,seed\n";
  out_.flush();
}

void MetricsCsvWriter::write(const RoundReport& r) {
  for (std::size_t i = 0; i < r.accuracy.size(); ++i) {
    out_ << r.round << ',' << i << ',' << format_real(r.accuracy[i]) << ',' << format_real(r.train_loss[i]) << ','
         << algorithm_ << ',' << seed_ << '\n';
  }
  out_ << r.round << ",AGG," << format_real(r.mean_accuracy) << ',' << format_real(mean(r.train_loss)) << ','
       << algorithm_ << ',' << seed_ << '\n';
  out_.flush();
}

}  // namespace fedpac
