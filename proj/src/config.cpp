#include "afpa/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "afpa/error.hpp"
#include "afpa/tensor_file.hpp"

namespace afpa {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
}

std::string fmt_list(const std::vector<std::size_t>& v) {
    std::string s = "[";
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s + "]";
}

std::string unquote(const std::string& v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
    std::uint64_t out = 0;
    const auto v = trim(text);
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& text) {
    double out = 0.0;
    const auto v = trim(text);
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& text) {
    const auto v = trim(text);
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
    auto v = trim(text);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']') throw ConfigError(key + ": expected a list like [1, 2]");
    v = trim(v.substr(1, v.size() - 2));
    std::vector<std::size_t> out;
    if (v.empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(key, item));
    return out;
}

struct Entry {
    std::string section;
    std::string key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define SIZE_KEY(sec, name, field)                                                   \
    Entry{sec, name, [](const RunConfig& c) { return std::to_string(c.field); },     \
          [](RunConfig& c, const std::string& v) { c.field = parse_u64(sec "." name, v); }}
#define INT_KEY(sec, name, field)                                                    \
    Entry{sec, name, [](const RunConfig& c) { return std::to_string(c.field); },     \
          [](RunConfig& c, const std::string& v) { c.field = static_cast<int>(parse_u64(sec "." name, v)); }}
#define REAL_KEY(sec, name, field)                                                   \
    Entry{sec, name, [](const RunConfig& c) { return fmt_double(c.field); },         \
          [](RunConfig& c, const std::string& v) { c.field = parse_double(sec "." name, v); }}
#define BOOL_KEY(sec, name, field)                                                       \
    Entry{sec, name, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
          [](RunConfig& c, const std::string& v) { c.field = parse_bool(sec "." name, v); }}
#define LIST_KEY(sec, name, field)                                                   \
    Entry{sec, name, [](const RunConfig& c) { return fmt_list(c.field); },           \
          [](RunConfig& c, const std::string& v) { c.field = parse_list(sec "." name, v); }}

const std::vector<Entry>& registry() {
    static const std::vector<Entry> entries = {
        SIZE_KEY("run", "seed", seed),

        INT_KEY("dsp", "sample_rate", pipeline.dsp.sample_rate),
        SIZE_KEY("dsp", "n_fft", pipeline.dsp.n_fft),
        SIZE_KEY("dsp", "hop", pipeline.dsp.hop),
        SIZE_KEY("dsp", "n_mels", pipeline.dsp.n_mels),
        SIZE_KEY("dsp", "n_frames", pipeline.dsp.n_frames),
        REAL_KEY("dsp", "f_min", pipeline.dsp.f_min),
        REAL_KEY("dsp", "f_max", pipeline.dsp.f_max),

        SIZE_KEY("tgram", "blocks", pipeline.tgram.blocks),
        REAL_KEY("tgram", "slope", pipeline.tgram.slope),
        REAL_KEY("tgram", "norm_eps", pipeline.tgram.norm_eps),

        BOOL_KEY("afpa", "enabled", pipeline.use_afpa),
        SIZE_KEY("afpa", "heads", pipeline.afpa.heads),
        REAL_KEY("afpa", "init_noise", pipeline.afpa.init_noise),

        SIZE_KEY("model", "stem_channels", pipeline.classifier.stem_channels),
        LIST_KEY("model", "block_channels", pipeline.classifier.block_channels),
        LIST_KEY("model", "block_strides", pipeline.classifier.block_strides),
        SIZE_KEY("model", "embed_dim", pipeline.classifier.embed_dim),
        REAL_KEY("model", "margin", pipeline.classifier.margin),
        REAL_KEY("model", "scale", pipeline.classifier.scale),
        REAL_KEY("model", "slope", pipeline.classifier.slope),
        REAL_KEY("model", "norm_eps", pipeline.classifier.norm_eps),

        SIZE_KEY("trainer", "epochs", train.epochs),
        SIZE_KEY("trainer", "batch", train.batch),
        REAL_KEY("trainer", "lr_max", train.lr_max),
        REAL_KEY("trainer", "lr_min", train.lr_min),
        REAL_KEY("trainer", "beta1", train.beta1),
        REAL_KEY("trainer", "beta2", train.beta2),
        REAL_KEY("trainer", "eps", train.eps),
        REAL_KEY("trainer", "val_fraction", train.val_fraction),

        SIZE_KEY("corpus", "machine_types", corpus.machine_types),
        SIZE_KEY("corpus", "ids_per_type", corpus.ids_per_type),
        SIZE_KEY("corpus", "train_normal", corpus.counts.train_normal),
        SIZE_KEY("corpus", "test_normal", corpus.counts.test_normal),
        SIZE_KEY("corpus", "test_anomalous", corpus.counts.test_anomalous),
        REAL_KEY("corpus", "noise_level", corpus.noise_level),
        REAL_KEY("corpus", "duration_s", corpus.duration_s),
        Entry{"corpus", "anomaly",
              [](const RunConfig& c) { return "\"" + corpus::anomaly_kind_name(c.corpus.anomaly.kind) + "\""; },
              [](RunConfig& c, const std::string& v) { c.corpus.anomaly.kind = corpus::parse_anomaly_kind(unquote(trim(v))); }},
        REAL_KEY("corpus", "anomaly_freq_hz", corpus.anomaly.freq_hz),
        REAL_KEY("corpus", "anomaly_level_db", corpus.anomaly.level_db),
        REAL_KEY("corpus", "detune_cents", corpus.anomaly.detune_cents),
        REAL_KEY("corpus", "click_rate_hz", corpus.anomaly.click_rate_hz),
        REAL_KEY("corpus", "click_amplitude", corpus.anomaly.click_amplitude),
    };
    return entries;
}

#undef SIZE_KEY
#undef INT_KEY
#undef REAL_KEY
#undef BOOL_KEY
#undef LIST_KEY

const Entry* find_entry(const std::string& section, const std::string& key) {
    for (const auto& e : registry()) {
        if (e.section == section && e.key == key) return &e;
    }
    return nullptr;
}

}  // namespace

void RunConfig::finalize() {
    pipeline = model::harmonize(pipeline);
    train.use_afpa = pipeline.use_afpa;
    train.seed = seed;
    corpus.seed = seed;
    corpus.sample_rate = pipeline.dsp.sample_rate;
    trainer::validate(train);
    const auto& d = pipeline.dsp;
    if (d.sample_rate <= 0 || d.n_fft < 2 || d.hop == 0 || d.n_mels == 0 || d.n_frames == 0) {
        throw ConfigError("dsp: sample_rate, n_fft, hop, n_mels and n_frames must be positive");
    }
    if (!(d.f_min >= 0.0 && d.f_max > d.f_min && d.f_max <= d.sample_rate / 2.0)) {
        throw ConfigError("dsp: need 0 <= f_min < f_max <= sample_rate / 2");
    }
    if (pipeline.afpa.heads == 0 || d.n_frames % pipeline.afpa.heads != 0) {
        throw ConfigError("afpa: n_frames " + std::to_string(d.n_frames) + " is not divisible by heads " +
                          std::to_string(pipeline.afpa.heads));
    }
    if (!(pipeline.classifier.margin >= 0.0 && pipeline.classifier.scale > 0.0)) {
        throw ConfigError("model: margin must be >= 0 and scale > 0");
    }
}

void set_config_value(RunConfig& cfg, const std::string& dotted_key, const std::string& value) {
    const auto dot = dotted_key.find('.');
    if (dot == std::string::npos) throw ConfigError("config key '" + dotted_key + "' must be section.key");
    const auto* e = find_entry(dotted_key.substr(0, dot), dotted_key.substr(dot + 1));
    if (!e) throw ConfigError("unknown config key '" + dotted_key + "'");
    e->set(cfg, value);
}

RunConfig parse_config(const std::string& text, RunConfig base) {
    std::istringstream in(text);
    std::string raw, section;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = raw;
        // '#' starts a comment unless inside quotes
        bool quoted = false;
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (line[i] == '"') quoted = !quoted;
            if (line[i] == '#' && !quoted) {
                line.resize(i);
                break;
            }
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto where = "config line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + "unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const auto& e : registry()) known = known || e.section == section;
            if (!known) throw ConfigError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (section.empty()) throw ConfigError(where + "key '" + key + "' appears before any [section]");
        const auto* e = find_entry(section, key);
        if (!e) throw ConfigError(where + "unknown key '" + key + "' in [" + section + "]");
        try {
            e->set(base, trim(line.substr(eq + 1)));
        } catch (const ConfigError& err) {
            throw ConfigError(where + err.what());
        }
    }
    return base;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string render_config(const RunConfig& cfg) {
    std::ostringstream os;
    std::string section;
    for (const auto& e : registry()) {
        if (e.section != section) {
            if (!section.empty()) os << '\n';
            section = e.section;
            os << '[' << section << "]\n";
        }
        os << e.key << " = " << e.get(cfg) << '\n';
    }
    return os.str();
}

std::string config_hash(const RunConfig& cfg) {
    const auto text = render_config(cfg);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%08x",
                  crc32_of(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
    return buf;
}

}  // namespace afpa
