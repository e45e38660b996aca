#include "afpa/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "afpa/error.hpp"

namespace afpa::corpus {

namespace fs = std::filesystem;

namespace {

constexpr const char* kTypeNames[] = {"fan", "pump", "slider", "valve", "toycar", "toyconveyor"};
constexpr double kTypeFundamentals[] = {60.0, 85.0, 110.0, 140.0, 95.0, 125.0};
constexpr double kHarmonicCeilingHz = 4000.0;
constexpr double kTargetRms = 0.1;

// Adds amp * sin(w*i + phase) by complex rotation, renormalized every block.
void add_tone(std::vector<double>& signal, double amp, double w, double phase) {
    double re = std::cos(phase), im = std::sin(phase);
    const double cr = std::cos(w), ci = std::sin(w);
    for (std::size_t i = 0; i < signal.size(); ++i) {
        signal[i] += amp * im;
        const double nre = re * cr - im * ci;
        im = re * ci + im * cr;
        re = nre;
        if ((i & 1023) == 1023) {
            const double norm = std::sqrt(re * re + im * im);
            re /= norm;
            im /= norm;
        }
    }
}

std::string two_digit(std::size_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%02zu", v);
    return buf;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::string anomaly_kind_name(AnomalyKind kind) {
    switch (kind) {
        case AnomalyKind::NarrowbandHfTone: return "narrowband_hf_tone";
        case AnomalyKind::HarmonicDetune: return "harmonic_detune";
        case AnomalyKind::TransientClicks: return "transient_clicks";
    }
    return "?";
}

AnomalyKind parse_anomaly_kind(const std::string& text) {
    if (text == "narrowband_hf_tone") return AnomalyKind::NarrowbandHfTone;
    if (text == "harmonic_detune") return AnomalyKind::HarmonicDetune;
    if (text == "transient_clicks") return AnomalyKind::TransientClicks;
    throw ConfigError("unknown anomaly recipe '" + text + "'");
}

void validate(const SynthMachineSpec& spec) {
    const double nyquist = spec.sample_rate / 2.0;
    const auto name = spec.machine_type + "/" + spec.machine_id;
    if (spec.sample_rate <= 0 || !(spec.duration_s > 0.0)) throw ConfigError(name + ": bad sample rate or duration");
    if (!(spec.fundamental_hz > 0.0) || spec.fundamental_hz >= nyquist) {
        throw ConfigError(name + ": fundamental must lie in (0, Nyquist)");
    }
    if (spec.harmonic_amps.empty()) throw ConfigError(name + ": no harmonics");
    for (double a : spec.harmonic_amps) {
        if (!std::isfinite(a) || a < 0.0) throw ConfigError(name + ": harmonic amplitudes must be finite and >= 0");
    }
    if (!std::isfinite(spec.noise_level) || spec.noise_level < 0.0) throw ConfigError(name + ": bad noise level");
    if (!(spec.jitter >= 0.0 && spec.jitter < 0.5)) throw ConfigError(name + ": jitter must lie in [0, 0.5)");
    const auto& a = spec.anomaly;
    if (a.kind == AnomalyKind::NarrowbandHfTone && !(a.freq_hz > 0.0 && a.freq_hz < nyquist)) {
        throw ConfigError(name + ": anomaly frequency " + std::to_string(a.freq_hz) + " Hz outside (0, Nyquist)");
    }
    if (!std::isfinite(a.level_db) || !std::isfinite(a.detune_cents)) throw ConfigError(name + ": bad anomaly recipe");
    if (a.kind == AnomalyKind::TransientClicks && !(a.click_rate_hz > 0.0)) {
        throw ConfigError(name + ": click rate must be positive");
    }
}

dsp::Waveform synth_clip(const SynthMachineSpec& spec, bool anomalous, std::uint64_t seed) {
    validate(spec);
    const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate));
    const double sr = spec.sample_rate;
    const double nyquist = sr / 2.0;
    constexpr double two_pi = 2.0 * std::numbers::pi;

    Rng rng(seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_real_distribution<double> phase(0.0, two_pi);
    const double f0 = spec.fundamental_hz * (1.0 + spec.jitter * unit(rng));
    std::vector<double> phases(spec.harmonic_amps.size());
    for (auto& p : phases) p = phase(rng);

    const bool detune = anomalous && spec.anomaly.kind == AnomalyKind::HarmonicDetune;
    const double detune_ratio = std::pow(2.0, spec.anomaly.detune_cents / 1200.0);
    std::vector<double> signal(n, 0.0);
    for (std::size_t h = 0; h < spec.harmonic_amps.size(); ++h) {
        double f = f0 * static_cast<double>(h + 1);
        // Detuning moves every overtone, leaving the fundamental in place.
        if (detune && h > 0) f *= detune_ratio;
        if (f >= nyquist || spec.harmonic_amps[h] == 0.0) continue;
        add_tone(signal, spec.harmonic_amps[h], two_pi * f / sr, phases[h]);
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    if (spec.noise_level > 0.0) {
        for (auto& s : signal) s += spec.noise_level * noise(rng);
    }

    if (anomalous) {
        Rng defect_rng(mix_seed(seed, 0xA5A5));
        const auto& a = spec.anomaly;
        if (a.kind == AnomalyKind::NarrowbandHfTone) {
            const double amp = spec.harmonic_amps[0] * std::pow(10.0, a.level_db / 20.0);
            add_tone(signal, amp, two_pi * a.freq_hz / sr, phase(defect_rng));
        } else if (a.kind == AnomalyKind::TransientClicks) {
            std::exponential_distribution<double> gap(a.click_rate_hz);
            const auto decay = static_cast<std::size_t>(0.004 * sr);
            for (double t = gap(defect_rng); t < spec.duration_s; t += gap(defect_rng)) {
                const auto start = static_cast<std::size_t>(t * sr);
                for (std::size_t k = 0; k < decay && start + k < n; ++k) {
                    signal[start + k] += a.click_amplitude * std::exp(-5.0 * static_cast<double>(k) / decay) * noise(defect_rng);
                }
            }
        }
    }

    dsp::Waveform wave;
    wave.sample_rate = spec.sample_rate;
    wave.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) wave.samples[i] = static_cast<float>(std::clamp(signal[i], -1.0, 1.0));
    return wave;
}

std::string split_name(Split split) {
    switch (split) {
        case Split::TrainNormal: return "train_normal";
        case Split::TestNormal: return "test_normal";
        case Split::TestAnomalous: return "test_anomalous";
    }
    return "?";
}

Split parse_split(const std::string& text) {
    if (text == "train_normal") return Split::TrainNormal;
    if (text == "test_normal") return Split::TestNormal;
    if (text == "test_anomalous") return Split::TestAnomalous;
    throw DataError("unknown split '" + text + "'");
}

metrics::Label split_label(Split split) {
    return split == Split::TestAnomalous ? metrics::Label::Anomalous : metrics::Label::Normal;
}

std::vector<SynthMachineSpec> default_specs(const CorpusConfig& cfg) {
    const auto max_types = std::size(kTypeNames);
    if (cfg.machine_types == 0 || cfg.machine_types > max_types) {
        throw ConfigError("corpus: machine_types must lie in [1, " + std::to_string(max_types) + "]");
    }
    if (cfg.ids_per_type == 0) throw ConfigError("corpus: ids_per_type must be positive");
    std::vector<SynthMachineSpec> specs;
    for (std::size_t t = 0; t < cfg.machine_types; ++t) {
        for (std::size_t i = 0; i < cfg.ids_per_type; ++i) {
            SynthMachineSpec s;
            s.machine_type = kTypeNames[t];
            s.machine_id = "id_" + two_digit(2 * i);
            s.fundamental_hz = kTypeFundamentals[t] * (1.0 + 0.12 * static_cast<double>(i));
            // Decaying stack whose ripple differs per ID.
            const double ripple = 0.35 + 0.4 * static_cast<double>(i) + 0.13 * static_cast<double>(t);
            const auto count = static_cast<std::size_t>(kHarmonicCeilingHz / s.fundamental_hz);
            double energy = 0.0;
            for (std::size_t h = 1; h <= count; ++h) {
                const double a = std::pow(static_cast<double>(h), -0.7) * (1.0 + 0.6 * std::cos(ripple * static_cast<double>(h)));
                s.harmonic_amps.push_back(a);
                energy += a * a / 2.0;
            }
            const double gain = kTargetRms / std::sqrt(energy);
            for (auto& a : s.harmonic_amps) a *= gain;
            s.noise_level = cfg.noise_level;
            s.anomaly = cfg.anomaly;
            s.duration_s = cfg.duration_s;
            s.sample_rate = cfg.sample_rate;
            validate(s);
            specs.push_back(std::move(s));
        }
    }
    return specs;
}

std::vector<ManifestRow> build_corpus(const std::vector<SynthMachineSpec>& specs, const SplitCounts& counts,
                                      std::uint64_t seed, const fs::path& root, bool force) {
    std::set<std::pair<std::string, std::string>> ids;
    for (const auto& s : specs) {
        validate(s);
        if (!ids.insert({s.machine_type, s.machine_id}).second) {
            throw ConfigError("corpus: duplicate machine " + s.machine_type + "/" + s.machine_id);
        }
    }
    if (ids.size() < 2) throw ConfigError("corpus: need at least 2 machine IDs for classification");

    std::error_code ec;
    if (fs::exists(root) && !fs::is_empty(root)) {
        if (!force) throw IoError("output directory " + root.string() + " is not empty (use --force)");
        fs::remove(root / "manifest.csv", ec);
        for (const auto& s : specs) fs::remove_all(root / s.machine_type, ec);
    }
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());

    std::vector<ManifestRow> rows;
    const std::pair<Split, std::size_t> plan[] = {
        {Split::TrainNormal, counts.train_normal},
        {Split::TestNormal, counts.test_normal},
        {Split::TestAnomalous, counts.test_anomalous},
    };
    for (std::size_t si = 0; si < specs.size(); ++si) {
        const auto& spec = specs[si];
        for (const auto& [split, count] : plan) {
            const auto dir = fs::path(spec.machine_type) / spec.machine_id / split_name(split);
            fs::create_directories(root / dir, ec);
            if (ec) throw IoError("cannot create " + (root / dir).string() + ": " + ec.message());
            for (std::size_t k = 0; k < count; ++k) {
                const auto clip_seed = mix_seed(mix_seed(seed, si), static_cast<std::uint64_t>(split) * 100000 + k);
                auto wave = synth_clip(spec, split == Split::TestAnomalous, clip_seed);
                char name[64];
                std::snprintf(name, sizeof name, "%s_%04zu.wav", split_name(split).c_str(), k);
                const auto rel = dir / name;
                dsp::write_wav(root / rel, wave);
                rows.push_back({rel.generic_string(), spec.machine_type, spec.machine_id, split, split_label(split)});
            }
        }
    }
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.clip < b.clip; });

    std::ofstream manifest(root / "manifest.csv", std::ios::trunc);
    if (!manifest) throw IoError("cannot create " + (root / "manifest.csv").string());
    manifest << kManifestHeader << '\n';
    for (const auto& r : rows) {
        manifest << r.clip << ',' << r.machine_type << ',' << r.machine_id << ',' << split_name(r.split) << ','
                 << metrics::label_name(r.label) << '\n';
    }
    if (!manifest) throw IoError("write failed for manifest");
    return rows;
}

std::vector<ManifestRow> read_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    std::string line;
    if (!std::getline(f, line) || line != kManifestHeader) {
        throw DataError(path.string() + ": expected header '" + std::string(kManifestHeader) + "'");
    }
    std::vector<ManifestRow> rows;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream is(line);
        std::string field;
        while (std::getline(is, field, ',')) fields.push_back(field);
        if (fields.size() != 5) throw DataError(path.string() + ": malformed row '" + line + "'");
        rows.push_back({fields[0], fields[1], fields[2], parse_split(fields[3]), metrics::parse_label(fields[4])});
    }
    return rows;
}

std::string DatasetEntry::clip_id() const {
    // <type>/<id>/<split>/<stem>
    return id.machine_type + "/" + id.machine_id + "/" + split_name(split) + "/" + path.stem().string();
}

dsp::Waveform DatasetEntry::load() const {
    auto wave = dsp::load_wav(path);
    wave.source_id = clip_id();
    return wave;
}

namespace {

std::vector<fs::directory_entry> sorted_children(const fs::path& dir) {
    std::vector<fs::directory_entry> out;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(dir, ec)) out.push_back(e);
    if (ec) throw IoError("cannot list " + dir.string() + ": " + ec.message());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path() < b.path(); });
    return out;
}

}  // namespace

std::vector<DatasetEntry> read_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw IoError("dataset root " + root.string() + " is not a directory");
    std::vector<DatasetEntry> entries;
    for (const auto& type_dir : sorted_children(root)) {
        if (!type_dir.is_directory()) {
            if (type_dir.path().filename() == "manifest.csv") continue;
            throw DataError("unexpected file in dataset root: " + type_dir.path().string());
        }
        for (const auto& id_dir : sorted_children(type_dir.path())) {
            if (!id_dir.is_directory()) throw DataError("expected a machine-id directory: " + id_dir.path().string());
            for (const auto& split_dir : sorted_children(id_dir.path())) {
                const auto split_text = split_dir.path().filename().string();
                Split split;
                try {
                    split = parse_split(split_text);
                } catch (const DataError&) {
                    throw DataError("unknown split directory: " + split_dir.path().string());
                }
                if (!split_dir.is_directory()) throw DataError("split is not a directory: " + split_dir.path().string());
                for (const auto& clip : sorted_children(split_dir.path())) {
                    if (!clip.is_regular_file() || clip.path().extension() != ".wav") {
                        throw DataError("expected a .wav file: " + clip.path().string());
                    }
                    DatasetEntry e;
                    e.path = clip.path();
                    e.id.machine_type = type_dir.path().filename().string();
                    e.id.machine_id = id_dir.path().filename().string();
                    e.split = split;
                    e.label = split_label(split);
                    entries.push_back(std::move(e));
                }
            }
        }
    }
    const auto classes = class_map(entries);
    for (auto& e : entries) {
        for (const auto& c : classes) {
            if (c.machine_type == e.id.machine_type && c.machine_id == e.id.machine_id) e.id.class_index = c.class_index;
        }
    }
    return entries;
}

std::vector<model::IdLabel> class_map(const std::vector<DatasetEntry>& entries) {
    std::set<std::pair<std::string, std::string>> keys;
    for (const auto& e : entries) keys.insert({e.id.machine_type, e.id.machine_id});
    std::vector<model::IdLabel> out;
    for (const auto& [type, id] : keys) out.push_back({type, id, out.size()});
    return out;
}

}  // namespace afpa::corpus
