#include "fedpac/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fedpac {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "fedpac-checkpoint";
constexpr int kVersion = 1;

json matrix_to_json(const Matrix& m) {
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"values", std::vector<double>(m.data().begin(), m.data().end())}};
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<std::size_t>();
  const auto cols = j.at("cols").get<std::size_t>();
  auto values = j.at("values").get<Vector>();
  if (values.size() != rows * cols) throw CheckpointError("checkpoint: matrix size does not match its shape");
  return Matrix(rows, cols, std::move(values));
}

}  // namespace

std::string checkpoint_to_json(std::span<const ModelParams> models) {
  json doc{{"format", kFormat}, {"version", kVersion}, {"models", json::array()}};
  for (const ModelParams& p : models) {
    json layers = json::array();
    for (const DenseLayer& l : p.theta.layers) layers.push_back({{"weight", matrix_to_json(l.weight)}, {"bias", l.bias}});
    doc["models"].push_back({{"dims",
                              {{"input", p.dims.input},
                               {"hidden", p.dims.hidden},
                               {"feature", p.dims.feature},
                               {"classes", p.dims.classes}}},
                             {"theta", std::move(layers)},
                             {"phi", matrix_to_json(p.phi)}});
  }
  return doc.dump(1) + "\n";
}

std::vector<ModelParams> checkpoint_from_json(const std::string& text) {
  std::vector<ModelParams> out;
  try {
    const json doc = json::parse(text);
    if (doc.at("format") != kFormat) throw CheckpointError("checkpoint: unexpected format tag");
    if (doc.at("version") != kVersion) throw CheckpointError("checkpoint: unsupported version");
    for (const json& m : doc.at("models")) {
      ModelParams p;
      const json& dims = m.at("dims");
      p.dims.input = dims.at("input").get<std::size_t>();
      p.dims.hidden = dims.at("hidden").get<std::vector<std::size_t>>();
      p.dims.feature = dims.at("feature").get<std::size_t>();
      p.dims.classes = dims.at("classes").get<std::size_t>();
      for (const json& l : m.at("theta")) {
        p.theta.layers.push_back({matrix_from_json(l.at("weight")), l.at("bias").get<Vector>()});
      }
      p.phi = matrix_from_json(m.at("phi"));
      validate_shapes(p);
      out.push_back(std::move(p));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, std::span<const ModelParams> models) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << checkpoint_to_json(models);
}

std::vector<ModelParams> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

}  // namespace fedpac
