// fedpac: run experiments, verify the theory suite, inspect partitions.
// Exit codes: 0 success, 1 check or experiment failure, 2 usage or config error.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "fedpac/checkpoint.hpp"
#include "fedpac/config.hpp"
#include "fedpac/orchestrator.hpp"
#include "fedpac/verify.hpp"

namespace fs = std::filesystem;
using namespace fedpac;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rounds;
  std::optional<std::string> algorithm;
  std::optional<std::size_t> workers;
  std::optional<std::string> out;
};

RunConfig resolve(const Overrides& o) {
  RunConfig config;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw ConfigError("", "config file not found: " + o.config_path);
    config = load_config(o.config_path);
  }
  if (o.seed) config.experiment.seeds = {*o.seed};
  if (o.rounds) config.experiment.rounds = *o.rounds;
  if (o.algorithm) apply_setting(config, "algorithm", *o.algorithm);
  if (o.workers) config.experiment.workers = *o.workers;
  if (o.out) config.output_dir = *o.out;
  if (config.output_dir.empty()) {
    const char* env = std::getenv("FEDPAC_OUTPUT_DIR");
    config.output_dir = env && *env ? env : ".";
  }
  try {
    validate(config.experiment);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("", e.what());
  }
  return config;
}

std::string percent(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << 100.0 * v;
  return out.str();
}

int cmd_run(const Overrides& o) {
  const RunConfig config = resolve(o);
  const ExperimentConfig& exp = config.experiment;
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  {
    std::ofstream echo(dir / "effective_config.txt", std::ios::binary | std::ios::trunc);
    echo << render_config(config);
  }
  const std::string alg = to_string(exp.algorithm);
  const bool has_weights = mode_for(exp.algorithm).combine_heads;

  Vector finals;
  for (std::uint64_t seed : exp.seeds) {
    const std::string tag = alg + "_seed" + std::to_string(seed);
    MetricsCsvWriter metrics(dir / ("metrics_" + tag + ".csv"), alg, seed);
    const auto on_round = [&](const RoundReport& r) {
      metrics.write(r);
      if (has_weights && r.round > 0) {
        server::write_weight_csv(dir / ("weights_" + tag + "_round" + std::to_string(r.round) + ".csv"), r.weights);
      }
      std::cerr << "[" << tag << "] round " << r.round << " acc " << percent(r.mean_accuracy) << "%\n";
    };
    const ExperimentResult result = run_experiment(exp, seed, on_round);
    save_checkpoint(dir / ("checkpoint_" + tag + ".json"), result.final_models);
    const RoundReport& last = result.reports.back();
    std::cout << alg << " seed " << seed << ": final accuracy " << percent(last.mean_accuracy) << " ± "
              << percent(last.std_accuracy) << " % (across clients)\n";
    finals.push_back(last.mean_accuracy);
  }
  if (finals.size() > 1) {
    double mean = 0.0;
    for (double v : finals) mean += v;
    mean /= static_cast<double>(finals.size());
    double var = 0.0;
    for (double v : finals) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(finals.size()));
    std::cout << alg << " over " << finals.size() << " seeds: " << percent(mean) << " ± " << percent(sd) << " %\n";
  }
  return kOk;
}

int cmd_verify(const std::string& level, bool inject_fault) {
  verify::Options options;
  options.level = level == "full" ? verify::Level::kFull : verify::Level::kFast;
  options.corrupt_gradient = inject_fault;
  bool ok = true;
  for (const auto& r : verify::run_all(options)) {
    std::cout << verify::format(r) << '\n';
    ok = ok && r.passed;
  }
  return ok ? kOk : kFailure;
}

int cmd_partition_stats(const Overrides& o) {
  const RunConfig config = resolve(o);
  const ExperimentConfig& exp = config.experiment;
  const std::size_t k = exp.model.classes;
  for (std::uint64_t seed : exp.seeds) {
    const auto datasets = build_datasets(exp, seed);
    Vector global(k, 0.0);
    std::size_t total = 0;
    std::vector<std::vector<std::size_t>> hists;
    for (const auto& d : datasets) {
      hists.push_back(data::label_histogram(d.train, k));
      for (std::size_t c = 0; c < k; ++c) global[c] += static_cast<double>(hists.back()[c]);
      total += d.train.size();
    }
    for (double& g : global) g /= static_cast<double>(total);

    std::cout << "seed " << seed << " scheme " << data::to_string(exp.partition.scheme) << '\n';
    std::cout << "client,group,n";
    for (std::size_t c = 0; c < k; ++c) std::cout << ",class" << c;
    std::cout << ",tv_to_global\n";
    double mean_tv = 0.0;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
      const double n = static_cast<double>(datasets[i].train.size());
      double tv = 0.0;
      std::cout << i << ',' << datasets[i].group_id << ',' << datasets[i].train.size();
      for (std::size_t c = 0; c < k; ++c) {
        std::cout << ',' << hists[i][c];
        tv += std::abs(static_cast<double>(hists[i][c]) / n - global[c]);
      }
      tv /= 2.0;
      mean_tv += tv;
      std::cout << ',' << std::fixed << std::setprecision(4) << tv << std::defaultfloat << '\n';
    }
    std::cout << "mean total-variation distance to the pooled label distribution: " << std::fixed
              << std::setprecision(4) << mean_tv / static_cast<double>(datasets.size()) << std::defaultfloat << '\n';
  }
  return kOk;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config_path, "key = value config file");
  cmd->add_option("--seed", o.seed, "single seed (replaces the seeds list)");
  cmd->add_option("--rounds", o.rounds, "communication rounds");
  cmd->add_option("--algorithm", o.algorithm,
                  "fedpac, fedavg, fedavg_ft, fedrep (alias none), local, fa_only, cc_only");
  cmd->add_option("--workers", o.workers, "client threads per round");
  cmd->add_option("--out", o.out, "output directory (default: $FEDPAC_OUTPUT_DIR or .)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated learning simulator with feature alignment and classifier combination"};
  app.require_subcommand(1);

  Overrides run_opts;
  auto* run = app.add_subcommand("run", "train and write metrics, weight matrices and a checkpoint");
  add_common(run, run_opts);

  std::string level = "fast";
  bool inject_fault = false;
  auto* ver = app.add_subcommand("verify", "run the numerical and theory checks");
  ver->add_option("--level", level, "fast (1000 resamples) or full (10000)")
      ->check(CLI::IsMember({"fast", "full"}));
  ver->add_flag("--inject-fault", inject_fault)->group("");

  Overrides stats_opts;
  auto* stats = app.add_subcommand("partition-stats", "print per-client label histograms without training");
  add_common(stats, stats_opts);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) return cmd_run(run_opts);
    if (*ver) return cmd_verify(level, inject_fault);
    if (*stats) return cmd_partition_stats(stats_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const data::IdxError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kUsage;
}
