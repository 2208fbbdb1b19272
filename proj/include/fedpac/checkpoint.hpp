#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpac/model.hpp"

namespace fedpac {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// JSON document holding one model per client. Reals are written in
/// shortest round-trip form, so save/load is bit-exact.
std::string checkpoint_to_json(std::span<const ModelParams> models);
std::vector<ModelParams> checkpoint_from_json(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, std::span<const ModelParams> models);
std::vector<ModelParams> load_checkpoint(const std::filesystem::path& path);

}  // namespace fedpac
