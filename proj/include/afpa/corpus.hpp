#pragma once

// Synthetic machine-sound corpus and the on-disk dataset layout:
//
//   <root>/manifest.csv
//   <root>/<machine_type>/<machine_id>/<split>/<clip>.wav
//
// with split one of train_normal, test_normal, test_anomalous.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "afpa/dsp.hpp"
#include "afpa/metrics.hpp"
#include "afpa/model.hpp"

namespace afpa::corpus {

enum class AnomalyKind { NarrowbandHfTone, HarmonicDetune, TransientClicks };

std::string anomaly_kind_name(AnomalyKind kind);
AnomalyKind parse_anomaly_kind(const std::string& text);

struct AnomalyRecipe {
    AnomalyKind kind = AnomalyKind::NarrowbandHfTone;
    double freq_hz = 6000.0;   // narrowband tone frequency
    double level_db = -10.0;   // tone level relative to the fundamental amplitude
    double detune_cents = 50.0;
    double click_rate_hz = 8.0;
    double click_amplitude = 0.5;
};

struct SynthMachineSpec {
    std::string machine_type;
    std::string machine_id;
    double fundamental_hz = 100.0;
    // Amplitude of harmonic h+1 (index 0 is the fundamental).
    std::vector<double> harmonic_amps;
    double noise_level = 0.01;  // Gaussian noise standard deviation
    // Per-clip random fundamental deviation, as a fraction.
    double jitter = 0.01;
    AnomalyRecipe anomaly;
    double duration_s = 10.0;
    int sample_rate = 16000;
};

void validate(const SynthMachineSpec& spec);

// Harmonic stack plus Gaussian noise, with the recipe's defect injected when
// `anomalous` is set. The normal part depends only on (spec, seed), so a
// normal and an anomalous clip with the same seed differ only by the defect.
dsp::Waveform synth_clip(const SynthMachineSpec& spec, bool anomalous, std::uint64_t seed);

enum class Split { TrainNormal, TestNormal, TestAnomalous };

std::string split_name(Split split);
Split parse_split(const std::string& text);
metrics::Label split_label(Split split);

struct SplitCounts {
    std::size_t train_normal = 40;
    std::size_t test_normal = 10;
    std::size_t test_anomalous = 10;
};

struct CorpusConfig {
    std::size_t machine_types = 4;
    std::size_t ids_per_type = 2;
    SplitCounts counts;
    AnomalyRecipe anomaly;
    double noise_level = 0.01;
    double duration_s = 10.0;
    int sample_rate = 16000;
    std::uint64_t seed = 0;
};

std::vector<SynthMachineSpec> default_specs(const CorpusConfig& cfg);

struct ManifestRow {
    std::string clip;  // path relative to the root
    std::string machine_type;
    std::string machine_id;
    Split split = Split::TrainNormal;
    metrics::Label label = metrics::Label::Normal;

    bool operator==(const ManifestRow&) const = default;
};

inline constexpr const char* kManifestHeader = "clip,machine_type,machine_id,split,label";

// Writes every clip and <root>/manifest.csv. A non-empty root is refused
// with IoError unless `force`, which first removes the manifest and the
// machine-type directories this corpus would write.
std::vector<ManifestRow> build_corpus(const std::vector<SynthMachineSpec>& specs, const SplitCounts& counts,
                                      std::uint64_t seed, const std::filesystem::path& root, bool force = false);

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

struct DatasetEntry {
    std::filesystem::path path;
    model::IdLabel id;
    Split split = Split::TrainNormal;
    metrics::Label label = metrics::Label::Normal;

    std::string clip_id() const;
    dsp::Waveform load() const;
};

// Scans the layout in lexicographic path order. Class indices follow the
// sorted (machine_type, machine_id) pairs. A missing root is an IoError;
// anything that does not fit the layout is a DataError naming the path.
std::vector<DatasetEntry> read_dataset(const std::filesystem::path& root);

std::vector<model::IdLabel> class_map(const std::vector<DatasetEntry>& entries);

// Deterministic seed mixing (splitmix64).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace afpa::corpus
