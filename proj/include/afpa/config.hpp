#pragma once

// Run configuration: one TOML-style file of [section] key = value lines.
// Every key has a default; render() prints the full effective config.

#include <cstdint>
#include <filesystem>
#include <string>

#include "afpa/corpus.hpp"
#include "afpa/model.hpp"
#include "afpa/trainer.hpp"

namespace afpa {

struct RunConfig {
    std::uint64_t seed = 0;
    model::PipelineConfig pipeline;
    trainer::TrainConfig train;
    corpus::CorpusConfig corpus;

    // Propagates the shared settings (seed, use_afpa, sample rate, frame
    // geometry) into every section and validates the result.
    void finalize();
    bool use_afpa() const { return pipeline.use_afpa; }
};

// Applies the file text on top of `base`. Unknown sections or keys and
// malformed values are ConfigErrors carrying the line number.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// Sets one "section.key" to a value written as in the file.
void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value);

std::string render_config(const RunConfig& cfg);
// crc32 of the rendered config, 8 lowercase hex digits.
std::string config_hash(const RunConfig& cfg);

}  // namespace afpa
