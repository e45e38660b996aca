#pragma once

// The four pipeline commands behind the `afpa` binary. They throw afpa::Error
// subclasses; run_guarded maps those to process exit codes.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>

#include "afpa/attention.hpp"
#include "afpa/config.hpp"
#include "afpa/metrics.hpp"

namespace afpa::commands {

struct Overrides {
    std::optional<std::filesystem::path> config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> epochs;
    bool no_afpa = false;
};

// Defaults, then the config file, then flags; finalized.
RunConfig resolve_config(const Overrides& o);

// AFPA_THREADS if set (must be a positive integer), else the hardware concurrency.
std::size_t worker_threads();

void print_config(std::ostream& out, const RunConfig& cfg);

struct SynthSummary {
    std::size_t clips = 0;
    std::size_t machines = 0;
};

SynthSummary cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_dir, bool force, std::ostream& out);

// Writes the checkpoint directory, with train_log.csv inside it.
void cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir, const std::filesystem::path& out_checkpoint,
               std::size_t threads, std::ostream& out);

// Writes <prefix>.scores.csv, <prefix>.report.csv and <prefix>.report.txt.
metrics::MetricReport cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& data_dir,
                               const std::filesystem::path& out_prefix, std::size_t threads, std::ostream& out);

// Writes <prefix>.pattern.aft, <prefix>.pattern.csv and <prefix>.enhanced.aft.
attention::FrequencyPattern cmd_attention(const std::filesystem::path& checkpoint, const std::filesystem::path& wav,
                                          const std::filesystem::path& out_prefix, std::ostream& out);

// Keeps large tensor buffers on the heap between training steps instead of
// returning them to the OS after every op (glibc only; no-op elsewhere).
void tune_allocator();

int run_guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace afpa::commands
