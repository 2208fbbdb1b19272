#include "fedpac/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "fedpac/format.hpp"

namespace fedpac {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(s);
  while (std::getline(in, part, sep)) parts.push_back(trim(part));
  if (!s.empty() && s.back() == sep) parts.emplace_back();
  return parts;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (text.empty() || ec != std::errc{} || ptr != end) {
    throw ConfigError(key, "cannot parse '" + text + "' as a number");
  }
  return value;
}

double parse_real(const std::string& key, const std::string& text) { return parse_number<double>(key, text); }
std::size_t parse_count(const std::string& key, const std::string& text) {
  return parse_number<std::size_t>(key, text);
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  if (trim(text).empty()) return out;
  for (const auto& item : split(text, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

template <typename T>
std::vector<std::vector<T>> parse_nested(const std::string& key, const std::string& text) {
  std::vector<std::vector<T>> out;
  if (trim(text).empty()) return out;
  for (const auto& group : split(text, ';')) out.push_back(parse_list<T>(key, group));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_real(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

template <typename T>
std::string join_nested(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ';';
    out += join(v[i]);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"algorithm",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.experiment.algorithm = parse_algorithm(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"rounds", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.rounds = parse_count(k, v); }},
      {"clients", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.clients = parse_count(k, v); }},
      {"sample_rate",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.sample_rate = parse_real(k, v); }},
      {"epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.epochs = parse_count(k, v); }},
      {"head_epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.head_epochs = parse_count(k, v); }},
      {"eta_f", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.eta_f = parse_real(k, v); }},
      {"eta_g", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.eta_g = parse_real(k, v); }},
      {"lambda", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.lambda = parse_real(k, v); }},
      {"batch", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.batch = parse_count(k, v); }},
      {"momentum",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.momentum = parse_real(k, v); }},
      {"weight_decay",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.weight_decay = parse_real(k, v); }},
      {"finetune_epochs",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.finetune_epochs = parse_count(k, v); }},
      {"qp_tol", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.qp_tol = parse_real(k, v); }},
      {"seeds",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.seeds = parse_list<std::uint64_t>(k, v);
       }},
      {"seed",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.seeds = {parse_number<std::uint64_t>(k, v)};
       }},
      {"workers", [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.workers = parse_count(k, v); }},
      {"output_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; }},
      {"model.input",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.model.input = parse_count(k, v); }},
      {"model.hidden",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.model.hidden = parse_list<std::size_t>(k, v);
       }},
      {"model.feature",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.model.feature = parse_count(k, v); }},
      {"model.classes",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.model.classes = parse_count(k, v); }},
      {"data.class_sep",
       [](RunConfig& c, const std::string& k, const std::string& v) { c.experiment.class_sep = parse_real(k, v); }},
      {"data.idx_images", [](RunConfig& c, const std::string&, const std::string& v) { c.experiment.idx_images = v; }},
      {"data.idx_labels", [](RunConfig& c, const std::string&, const std::string& v) { c.experiment.idx_labels = v; }},
      {"partition.scheme",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         try {
           c.experiment.partition.scheme = data::parse_scheme(v);
         } catch (const std::invalid_argument& e) {
           throw ConfigError(k, e.what());
         }
       }},
      {"partition.s_percent",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.s_percent = parse_real(k, v);
       }},
      {"partition.num_groups",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.num_groups = parse_count(k, v);
       }},
      {"partition.dominant",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.dominant = parse_nested<std::size_t>(k, v);
       }},
      {"partition.dirichlet_beta",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.dirichlet_beta = parse_real(k, v);
       }},
      {"partition.samples_per_client",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.samples_per_client = parse_list<std::size_t>(k, v);
       }},
      {"partition.test_per_client",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.test_per_client = parse_count(k, v);
       }},
      {"partition.label_permutation",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.label_permutation = parse_nested<std::size_t>(k, v);
       }},
      {"partition.rotation_degrees",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.rotation_degrees = parse_list<double>(k, v);
       }},
      {"partition.group_weights",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.experiment.partition.group_weights = parse_nested<double>(k, v);
       }},
  };
  return table;
}

}  // namespace

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError(key, "unknown key");
  it->second(config, key, value);
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_setting(config, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string render_config(const RunConfig& config) {
  const ExperimentConfig& e = config.experiment;
  const data::PartitionSpec& p = e.partition;
  std::ostringstream out;
  out << "algorithm = " << to_string(e.algorithm) << '\n'
      << "rounds = " << e.rounds << '\n'
      << "clients = " << e.clients << '\n'
      << "sample_rate = " << format_real(e.sample_rate) << '\n'
      << "epochs = " << e.epochs << '\n'
      << "head_epochs = " << e.head_epochs << '\n'
      << "eta_f = " << format_real(e.eta_f) << '\n'
      << "eta_g = " << format_real(e.eta_g) << '\n'
      << "lambda = " << format_real(e.lambda) << '\n'
      << "batch = " << e.batch << '\n'
      << "momentum = " << format_real(e.momentum) << '\n'
      << "weight_decay = " << format_real(e.weight_decay) << '\n'
      << "finetune_epochs = " << e.finetune_epochs << '\n'
      << "qp_tol = " << format_real(e.qp_tol) << '\n'
      << "seeds = " << join(e.seeds) << '\n'
      << "workers = " << e.workers << '\n'
      << "output_dir = " << config.output_dir << '\n'
      << "model.input = " << e.model.input << '\n'
      << "model.hidden = " << join(e.model.hidden) << '\n'
      << "model.feature = " << e.model.feature << '\n'
      << "model.classes = " << e.model.classes << '\n'
      << "data.class_sep = " << format_real(e.class_sep) << '\n'
      << "data.idx_images = " << e.idx_images << '\n'
      << "data.idx_labels = " << e.idx_labels << '\n'
      << "partition.scheme = " << data::to_string(p.scheme) << '\n'
      << "partition.s_percent = " << format_real(p.s_percent) << '\n'
      << "partition.num_groups = " << p.num_groups << '\n'
      << "partition.dominant = " << join_nested(p.dominant) << '\n'
      << "partition.dirichlet_beta = " << format_real(p.dirichlet_beta) << '\n'
      << "partition.samples_per_client = " << join(p.samples_per_client) << '\n'
      << "partition.test_per_client = " << p.test_per_client << '\n'
      << "partition.label_permutation = " << join_nested(p.label_permutation) << '\n'
      << "partition.rotation_degrees = " << join(p.rotation_degrees) << '\n'
      << "partition.group_weights = " << join_nested(p.group_weights) << '\n';
  return out.str();
}

}  // namespace fedpac
