#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "satkit/model.hpp"

namespace satkit::models {

// Single-file archive: magic + JSON manifest (architecture, classes, tag,
// metadata, per-array shape/offset/sha256) + concatenated f64 LE payloads.
// Reloading reproduces forward outputs bit-exactly on the same platform.
struct CheckpointInfo {
  std::string architecture_id;
  int num_classes = 0;
  InputSpec input;
  std::string training_mode_tag;  // std | adv | sat | ...
  nlohmann::json metadata;
};

void save_checkpoint(const Model& model, const std::filesystem::path& path,
                     const std::string& training_mode_tag,
                     const nlohmann::json& metadata = nlohmann::json::object());

struct LoadedCheckpoint {
  Model model;
  CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace satkit::models
