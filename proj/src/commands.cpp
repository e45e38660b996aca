#include "afpa/commands.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "afpa/checkpoint.hpp"
#include "afpa/corpus.hpp"
#include "afpa/error.hpp"
#include "afpa/tensor_file.hpp"
#include "afpa/trainer.hpp"

namespace afpa::commands {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

fs::path with_suffix(const fs::path& prefix, const std::string& suffix) { return fs::path(prefix.string() + suffix); }

void ensure_parent(const fs::path& prefix) {
    const auto parent = prefix.parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec) throw IoError("cannot create " + parent.string() + ": " + ec.message());
}

}  // namespace

RunConfig resolve_config(const Overrides& o) {
    RunConfig cfg = o.config_path ? load_config(*o.config_path) : RunConfig{};
    if (o.seed) cfg.seed = *o.seed;
    if (o.epochs) cfg.train.epochs = *o.epochs;
    if (o.no_afpa) cfg.pipeline.use_afpa = false;
    cfg.finalize();
    return cfg;
}

std::size_t worker_threads() {
    const char* env = std::getenv("AFPA_THREADS");
    if (env && *env) {
        std::size_t n = 0;
        const std::string text(env);
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
        if (ec != std::errc{} || p != text.data() + text.size() || n == 0) {
            throw ConfigError("AFPA_THREADS must be a positive integer, got '" + text + "'");
        }
        return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void print_config(std::ostream& out, const RunConfig& cfg) {
    out << "# effective config (hash " << config_hash(cfg) << ")\n" << render_config(cfg) << '\n';
}

SynthSummary cmd_synth(const RunConfig& cfg, const fs::path& out_dir, bool force, std::ostream& out) {
    const auto specs = corpus::default_specs(cfg.corpus);
    const auto rows = corpus::build_corpus(specs, cfg.corpus.counts, cfg.seed, out_dir, force);
    std::map<std::string, std::map<std::string, std::size_t>> per_machine;
    for (const auto& r : rows) per_machine[r.machine_type + "/" + r.machine_id][corpus::split_name(r.split)] += 1;
    out << "wrote " << rows.size() << " clips for " << specs.size() << " machines to " << out_dir.string() << '\n';
    for (const auto& [machine, splits] : per_machine) {
        out << "  " << machine;
        for (const auto& [split, n] : splits) out << "  " << split << '=' << n;
        out << '\n';
    }
    return {rows.size(), specs.size()};
}

void cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out_checkpoint, std::size_t threads,
               std::ostream& out) {
    std::vector<corpus::DatasetEntry> entries;
    for (auto& e : corpus::read_dataset(data_dir)) {
        if (e.split == corpus::Split::TrainNormal) entries.push_back(std::move(e));
    }
    if (entries.empty()) throw DataError("no train_normal clips under " + data_dir.string());
    auto classes = corpus::class_map(entries);
    if (classes.size() < 2) throw DataError("training needs at least 2 machine IDs, found " + std::to_string(classes.size()));
    auto model = model::AsdModel::init(cfg.pipeline, classes, cfg.seed);

    const auto examples = trainer::load_examples(model, entries, threads);
    std::vector<trainer::ClipExample> train_set, val_set;
    trainer::split_validation(examples, cfg.train.val_fraction, cfg.seed, train_set, val_set);
    out << "training on " << train_set.size() << " clips (" << val_set.size() << " held out), " << classes.size()
        << " classes, attention " << (cfg.use_afpa() ? "on" : "off") << '\n';

    const auto log = trainer::train(model, train_set, val_set, cfg.train, [&](const trainer::EpochLog& e) {
        char line[128];
        std::snprintf(line, sizeof line, "epoch %3zu/%zu  loss %.5f  val %.5f  lr %.3g\n", e.epoch, cfg.train.epochs,
                      e.mean_loss, e.val_loss, e.lr);
        out << line << std::flush;
    });
    save_checkpoint(out_checkpoint, model, cfg);
    write_text(out_checkpoint / "train_log.csv", trainer::train_log_csv(log));
    out << "checkpoint written to " << out_checkpoint.string() << '\n';
}

metrics::MetricReport cmd_eval(const fs::path& checkpoint, const fs::path& data_dir, const fs::path& out_prefix,
                               std::size_t threads, std::ostream& out) {
    const auto ck = load_checkpoint(checkpoint);
    print_config(out, ck.config);
    std::vector<corpus::DatasetEntry> entries;
    for (auto& e : corpus::read_dataset(data_dir)) {
        if (e.split != corpus::Split::TrainNormal) entries.push_back(std::move(e));
    }
    if (entries.empty()) throw DataError("no test clips under " + data_dir.string());
    const auto scores = trainer::score_entries(ck.model, entries, threads);
    const auto rep = metrics::report(scores);

    ensure_parent(out_prefix);
    metrics::write_scores_csv(with_suffix(out_prefix, ".scores.csv"), scores);
    write_text(with_suffix(out_prefix, ".report.csv"), metrics::report_csv(rep));
    const auto table = metrics::report_table(rep);
    write_text(with_suffix(out_prefix, ".report.txt"), "config " + ck.config_hash + "\n" + table);
    out << table;
    return rep;
}

attention::FrequencyPattern cmd_attention(const fs::path& checkpoint, const fs::path& wav, const fs::path& out_prefix,
                                          std::ostream& out) {
    const auto ck = load_checkpoint(checkpoint);
    if (!ck.config.use_afpa()) {
        throw ConfigError("checkpoint " + checkpoint.string() +
                          " was trained with --no-afpa and has no learnt frequency patterns");
    }
    const auto wave = dsp::load_wav(wav);
    const auto feature = dsp::log_mel(wave, ck.config.pipeline.dsp);
    NoGradGuard no_grad;
    auto enhanced = attention::residual_enhance(attention::to_tensor(feature.data), ck.model.afpa);
    enhanced.pattern.clip_id = wav.filename().string();

    ensure_parent(out_prefix);
    attention::export_pattern(enhanced.pattern, out_prefix);
    tensor_write(with_suffix(out_prefix, ".enhanced.aft"), {{"enhanced", ArrayF32::from_tensor(enhanced.out)}});
    out << "wrote " << out_prefix.string() << ".pattern.aft, .pattern.csv and .enhanced.aft ("
        << enhanced.pattern.maps.size() << " heads)\n";
    return enhanced.pattern;
}

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

int run_guarded(const std::function<void()>& body, std::ostream& err) {
    try {
        body();
        return 0;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code_for(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return 3;
    } catch (const std::bad_alloc&) {
        err << "error: out of memory\n";
        return 1;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace afpa::commands
