#pragma once

// A checkpoint is a directory holding params.aft (every model tensor, f32)
// and manifest.json (class map, use_afpa, config text and hash).

#include <filesystem>
#include <string>

#include "afpa/config.hpp"
#include "afpa/model.hpp"

namespace afpa {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    RunConfig config;
    std::string config_hash;
    model::AsdModel model;
};

void save_checkpoint(const std::filesystem::path& dir, const model::AsdModel& model, const RunConfig& config);

// IoError when files are missing, FormatError for a malformed manifest or a
// tensor set that does not match the recorded config.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace afpa
