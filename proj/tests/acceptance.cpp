// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--work DIR] [--only N ...]
//
// The ablation (5) and localization (6) checks train two models on the
// default corpus and dominate the runtime.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "afpa/attention.hpp"
#include "afpa/checkpoint.hpp"
#include "afpa/commands.hpp"
#include "afpa/corpus.hpp"
#include "afpa/dsp.hpp"
#include "afpa/error.hpp"
#include "afpa/gradcheck.hpp"
#include "afpa/metrics.hpp"
#include "afpa/model.hpp"
#include "afpa/tensor_file.hpp"
#include "gradient_cases.hpp"
#include "oracles.hpp"
#include "reference_results.hpp"
#include "small_run.hpp"
#include "support.hpp"
#include "tiny.hpp"

using namespace afpa;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(clk::time_point t0) { return std::chrono::duration<double>(clk::now() - t0).count(); }

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---- 1: gradients ---------------------------------------------------------

Outcome gradients() {
    const auto t0 = clk::now();
    double worst = 0.0;
    std::string worst_name;
    std::size_t cases = 0;
    auto note = [&](const std::string& name, double err) {
        ++cases;
        if (!(err <= worst)) {
            worst = err;
            worst_name = name;
        }
    };
    gradient_cases::primitives([&](const char* name, double err) { note(name, err); });

    auto cfg = tiny::pipeline();
    const auto model = model::AsdModel::init(cfg, tiny::classes(), 17);
    const auto wave = tiny::waveform(3);
    const auto mel = attention::to_tensor(dsp::log_mel(wave, cfg.dsp).data);
    const auto wave_t = tgram::waveform_tensor(wave);

    // The log-Mel front end is fixed; the learnt path from the samples is the Tgram branch.
    auto wave_leaf = tgram::waveform_tensor(wave, true);
    note("loss wrt waveform", grad_check([&](const Tensor& t) { return model::clip_loss(model, mel, t, 1); },
                                         wave_leaf, 1e-6, 64));
    auto mel_leaf = attention::to_tensor(dsp::log_mel(wave, cfg.dsp).data, true);
    note("loss wrt log-Mel", grad_check([&](const Tensor& t) { return model::clip_loss(model, t, wave_t, 1); },
                                        mel_leaf, 1e-6, 64));
    for (const auto& p : model.parameters()) {
        note("loss wrt " + p.name,
             grad_check([&](const Tensor&) { return model::clip_loss(model, mel, wave_t, 0); }, p.tensor, 1e-6, 24));
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-5 && secs < 60.0, std::to_string(cases) + " cases, max rel err " + fmt("%.2e", worst) + " (" +
                                             worst_name + "), " + fmt("%.1f", secs) + " s"};
}

// ---- 2: attention invariants ----------------------------------------------

Outcome attention_invariants() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> pick_m(2, 12), pick_heads(1, 4), pick_width(1, 5);
    double row_err = 0.0, single_err = 0.0;
    bool negative = false, identity_exact = true, segment_exact = true;
    for (int trial = 0; trial < 100; ++trial) {
        const auto m = pick_m(rng), heads = pick_heads(rng), n = heads * pick_width(rng);
        auto x = attention::to_tensor(oracle::random_matrix(m, n, rng, 3.0));
        attention::AfpaConfig ac;
        ac.heads = heads;
        ac.init_noise = 0.5;
        Rng init(rng());
        auto p = attention::AfpaParams::init(n, ac, init);

        const auto out = attention::mhsa(x, p);
        for (const auto& map : out.pattern.maps) {
            for (std::size_t r = 0; r < map.rows; ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < map.cols; ++c) {
                    s += map(r, c);
                    negative = negative || map(r, c) < 0.0;
                }
                row_err = std::max(row_err, std::abs(s - 1.0));
            }
        }

        const auto parts = attention::segment(x, heads);
        const auto joined = ops::concat(parts, 1);
        segment_exact = segment_exact && joined.shape() == x.shape() &&
                        std::equal(joined.values().begin(), joined.values().end(), x.values().begin());

        auto zero_v = p;
        zero_v.w_v = Tensor::zeros({n, n});
        const auto same = attention::residual_enhance(x, zero_v).out;
        identity_exact = identity_exact && std::equal(same.values().begin(), same.values().end(), x.values().begin());

        auto one = p;
        one.heads = 1;
        const auto whole = attention::mhsa(x, one).out;
        const auto proj = attention::project_qkv(x, one);
        const auto head = attention::attention_head(proj.q, proj.k, proj.v).attended;
        for (std::size_t i = 0; i < whole.numel(); ++i) {
            single_err = std::max(single_err, std::abs(whole.values()[i] - head.values()[i]));
        }
    }
    const bool pass = row_err <= 1e-6 && !negative && identity_exact && segment_exact && single_err <= 1e-12;
    return {pass, "row-sum err " + fmt("%.1e", row_err) + ", W_V=0 identity " + (identity_exact ? "exact" : "inexact") +
                      ", segment/concat " + (segment_exact ? "exact" : "inexact") + ", I=1 diff " +
                      fmt("%.1e", single_err)};
}

// ---- 3: metric oracles ----------------------------------------------------

Outcome metric_oracles() {
    const auto t0 = clk::now();
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> size(2, 200);
    std::uniform_int_distribution<int> levels(2, 50);
    std::bernoulli_distribution coin(0.5);
    double worst = 0.0;
    for (int set = 0; set < 1000; ++set) {
        const auto n = size(rng);
        // scores on a coarse grid so ties are frequent
        std::uniform_int_distribution<int> q(0, levels(rng));
        std::vector<metrics::ScoreRecord> r;
        for (std::size_t i = 0; i < n; ++i) {
            const auto label = i == 0 ? metrics::Label::Normal
                               : i == 1 ? metrics::Label::Anomalous
                                        : (coin(rng) ? metrics::Label::Anomalous : metrics::Label::Normal);
            r.push_back({"c" + std::to_string(i), "t", "id", label, q(rng) * 0.1});
        }
        std::shuffle(r.begin(), r.end(), rng);
        worst = std::max(worst, std::abs(metrics::auc(r) - oracle::auc(r)));
        for (double p : {0.1, 0.25, 1.0}) worst = std::max(worst, std::abs(metrics::pauc(r, p) - oracle::pauc_sweep(r, p)));
        if (set % 100 == 0) {
            worst = std::max(worst, std::abs(metrics::pauc(r, 0.1) - oracle::pauc_threshold_grid(r, 0.1, 100'000)));
        }
    }
    const double secs = seconds_since(t0);
    return {worst <= 1e-6 && secs < 60.0, "1000 sets, max diff " + fmt("%.1e", worst) + ", " + fmt("%.1f", secs) + " s"};
}

// ---- 4: reference averages ------------------------------------------------

Outcome reference_averages() {
    bool pass = true;
    std::ostringstream detail;
    for (const auto& [name, row] : {std::pair{"AFPA", &reference::kAfpa}, std::pair{"backbone", &reference::kBackbone}}) {
        std::vector<metrics::ScoreRecord> records;
        std::vector<metrics::MetricCell> cells;
        for (std::size_t i = 0; i < reference::kTypes.size(); ++i) {
            const auto type = std::string(reference::kTypes[i]);
            auto rec = reference::records_with_auc(row->auc[i], type);
            records.insert(records.end(), rec.begin(), rec.end());
            cells.push_back({type, "id_00", row->auc[i] / 100.0, row->pauc[i] / 100.0, ""});
        }
        const double from_scores = 100.0 * *metrics::report(records).average_auc;
        const auto agg = metrics::aggregate(cells);
        const double a = 100.0 * *agg.average_auc, pa = 100.0 * *agg.average_pauc;
        pass = pass && std::abs(from_scores - row->average_auc) < 0.005 && std::abs(a - row->average_auc) < 0.005 &&
               std::abs(pa - row->average_pauc) < 0.005;
        detail << name << " " << fmt("%.3f", a) << " / " << fmt("%.3f", pa) << " (printed " << row->average_auc << " / "
               << row->average_pauc << ") ";
    }
    return {pass, detail.str()};
}

// ---- 5 and 6: scaled ablation and localization ----------------------------

struct AblationRun {
    double afpa_auc = 0.0, backbone_auc = 0.0;
    double train_seconds = 0.0;
    fs::path afpa_checkpoint, data;
    std::string error;
};

AblationRun ablation(const fs::path& work) {
    AblationRun run;
    try {
        RunConfig cfg;
        cfg.seed = 0;
        cfg.train.epochs = 30;
        cfg.finalize();
        std::ostringstream log;
        run.data = work / "corpus";
        if (!fs::exists(run.data / "manifest.csv")) commands::cmd_synth(cfg, run.data, true, log);
        const auto threads = commands::worker_threads();

        auto backbone = cfg;
        backbone.pipeline.use_afpa = false;
        backbone.finalize();

        const auto t0 = clk::now();
        run.afpa_checkpoint = work / "ck_afpa";
        fs::remove_all(run.afpa_checkpoint);
        commands::cmd_train(cfg, run.data, run.afpa_checkpoint, threads, log);
        fs::remove_all(work / "ck_backbone");
        commands::cmd_train(backbone, run.data, work / "ck_backbone", threads, log);
        run.train_seconds = seconds_since(t0);

        run.afpa_auc = *commands::cmd_eval(run.afpa_checkpoint, run.data, work / "eval_afpa", threads, log).average_auc;
        run.backbone_auc =
            *commands::cmd_eval(work / "ck_backbone", run.data, work / "eval_backbone", threads, log).average_auc;
    } catch (const std::exception& e) {
        run.error = e.what();
    }
    return run;
}

Outcome ablation_outcome(const AblationRun& run) {
    if (!run.error.empty()) return {false, run.error};
    const bool pass = run.afpa_auc >= run.backbone_auc && run.afpa_auc >= 0.85;
    return {pass, "AFPA " + fmt("%.4f", run.afpa_auc) + " vs backbone " + fmt("%.4f", run.backbone_auc) +
                      ", both trainings " + fmt("%.0f", run.train_seconds) + " s on " +
                      std::to_string(std::thread::hardware_concurrency()) + " core(s)"};
}

Outcome localization(const AblationRun& run) {
    if (!run.error.empty()) return {false, run.error};
    try {
        const auto ck = load_checkpoint(run.afpa_checkpoint);
        const auto& dsp_cfg = ck.config.pipeline.dsp;
        const auto fb = dsp::mel_filterbank(dsp_cfg.n_mels, dsp_cfg.n_fft, dsp_cfg.sample_rate, dsp_cfg.f_min,
                                            dsp_cfg.f_max);
        const double hz = ck.config.corpus.anomaly.freq_hz;
        std::vector<std::size_t> band;
        for (std::size_t m = 0; m < fb.size(); ++m) {
            if (fb.points_hz[m] < hz && hz < fb.points_hz[m + 2]) band.push_back(m);
        }
        if (band.empty()) return {false, "no Mel filter covers " + fmt("%.0f", hz) + " Hz"};

        NoGradGuard no_grad;
        std::size_t clips = 0, above = 0;
        double mean_mass = 0.0;
        const double uniform = 1.0 / static_cast<double>(fb.size());
        for (const auto& e : corpus::read_dataset(run.data)) {
            if (e.label != metrics::Label::Anomalous) continue;
            const auto feature = dsp::log_mel(e.load(), dsp_cfg);
            const auto pooled = attention::mhsa(attention::to_tensor(feature.data), ck.model.afpa).pattern.pooled;
            double mass = 0.0;
            for (auto c : band) {
                for (std::size_t r = 0; r < pooled.rows; ++r) mass += pooled(r, c);
            }
            mass /= static_cast<double>(band.size() * pooled.rows);
            mean_mass += mass;
            ++clips;
            if (mass > uniform) ++above;
        }
        if (clips == 0) return {false, "no defect clips"};
        const double share = static_cast<double>(above) / static_cast<double>(clips);
        return {share >= 0.8, std::to_string(above) + "/" + std::to_string(clips) + " defect clips above 1/M = " +
                                   fmt("%.5f", uniform) + ", mean band mass " +
                                   fmt("%.5f", mean_mass / static_cast<double>(clips)) + " over " +
                                   std::to_string(band.size()) + " bins"};
    } catch (const std::exception& e) {
        return {false, e.what()};
    }
}

// ---- 7: determinism -------------------------------------------------------

Outcome determinism(const fs::path& work) {
    try {
        const auto cfg = small_run::config();
        std::ostringstream log;
        auto run = [&](const std::string& tag) {
            const auto dir = work / tag;
            fs::remove_all(dir);
            commands::cmd_synth(cfg, dir / "data", false, log);
            commands::cmd_train(cfg, dir / "data", dir / "ck", commands::worker_threads(), log);
            commands::cmd_eval(dir / "ck", dir / "data", dir / "ev", commands::worker_threads(), log);
            return dir;
        };
        const auto a = run("det_a"), b = run("det_b");
        std::vector<std::string> differ;
        std::size_t compared = 0;
        for (const auto* rel : {"ck/params.aft", "ck/manifest.json", "ck/train_log.csv", "ev.scores.csv",
                                "ev.report.csv", "ev.report.txt", "data/manifest.csv"}) {
            ++compared;
            const auto x = support::read_bytes(a / rel), y = support::read_bytes(b / rel);
            if (x.empty() || x != y) differ.push_back(rel);
        }
        if (!differ.empty()) return {false, "differs: " + differ.front()};
        return {true, std::to_string(compared) + " artifacts bit-identical across two runs"};
    } catch (const std::exception& e) {
        return {false, e.what()};
    }
}

// ---- 8: format round trips ------------------------------------------------

Outcome round_trips(const fs::path& work) {
    try {
        std::mt19937_64 rng(8);
        std::vector<std::string> failed;

        dsp::Waveform w;
        std::uniform_int_distribution<int> pcm(-32768, 32767);
        for (int i = 0; i < 4000; ++i) w.samples.push_back(static_cast<float>(pcm(rng)) / 32768.0f);
        dsp::write_wav(work / "pcm.wav", w);
        if (dsp::load_wav(work / "pcm.wav").samples != w.samples) failed.push_back("wav pcm16");
        std::uniform_real_distribution<float> u(-1.5f, 1.5f);
        for (auto& s : w.samples) s = u(rng);
        dsp::write_wav(work / "f32.wav", w, dsp::WavEncoding::Float32);
        if (dsp::load_wav(work / "f32.wav").samples != w.samples) failed.push_back("wav float32");

        TensorMap tensors;
        tensors["grid"] = ArrayF32::from_matrix(oracle::random_matrix(128, 312, rng));
        tensors["scalar"] = ArrayF32{{}, {2.5f}};
        tensors["empty"] = ArrayF32{{3, 0}, {}};
        tensor_write(work / "t.aft", tensors);
        if (tensor_read(work / "t.aft") != tensors) failed.push_back("tensor file");

        auto model = model::AsdModel::init(tiny::pipeline(), tiny::classes(), 5);
        auto params = model.all_tensors();
        round_to_f32(params);
        RunConfig cfg;
        cfg.pipeline = tiny::pipeline();
        save_checkpoint(work / "ck", model, cfg);
        const auto loaded = load_checkpoint(work / "ck").model.all_tensors();
        bool same = loaded.size() == params.size();
        for (std::size_t i = 0; same && i < params.size(); ++i) {
            same = loaded[i].name == params[i].name && loaded[i].tensor.shape() == params[i].tensor.shape() &&
                   std::equal(loaded[i].tensor.values().begin(), loaded[i].tensor.values().end(),
                              params[i].tensor.values().begin());
        }
        if (!same) failed.push_back("checkpoint");

        std::vector<metrics::ScoreRecord> scores;
        for (int i = 0; i < 50; ++i) {
            scores.push_back({"clip" + std::to_string(i), "valve", "id_04",
                              i % 3 ? metrics::Label::Normal : metrics::Label::Anomalous,
                              std::ldexp(static_cast<double>(rng() >> 11), -53) * 1e3 - 500.0});
        }
        metrics::write_scores_csv(work / "s.csv", scores);
        if (metrics::read_scores_csv(work / "s.csv") != scores) failed.push_back("score csv");

        auto bytes = support::read_bytes(work / "t.aft");
        bytes[bytes.size() / 2] ^= 0x10;
        support::write_bytes(work / "bad.aft", bytes);
        bool detected = false;
        try {
            tensor_read(work / "bad.aft");
        } catch (const CorruptionError&) {
            detected = true;
        }
        if (!detected) failed.push_back("crc");

        if (!failed.empty()) return {false, "failed: " + failed.front()};
        return {true, "wav pcm16/float32, tensor file, checkpoint and score csv lossless; flipped bit caught by CRC"};
    } catch (const std::exception& e) {
        return {false, e.what()};
    }
}

}  // namespace

int main(int argc, char** argv) {
    commands::tune_allocator();
    CLI::App app{"Acceptance checks"};
    std::string work_arg;
    std::vector<int> only;
    app.add_option("--work", work_arg, "Keep artifacts in this directory instead of a temporary one");
    app.add_option("--only", only, "Run only these criteria")->check(CLI::Range(1, 8));
    CLI11_PARSE(app, argc, argv);

    std::optional<support::TempDir> temp;
    fs::path work;
    if (work_arg.empty()) {
        temp.emplace("acceptance");
        work = temp->path();
    } else {
        work = work_arg;
        fs::create_directories(work);
    }
    const std::set<int> wanted(only.begin(), only.end());
    auto want = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };

    int failures = 0;
    auto emit = [&](int n, const char* name, const Outcome& o) {
        if (!o.pass) ++failures;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail << std::endl;
    };
    auto guarded = [](const std::function<Outcome()>& f) {
        try {
            return f();
        } catch (const std::exception& e) {
            return Outcome{false, e.what()};
        }
    };

    if (want(1)) emit(1, "gradient suite", guarded(gradients));
    if (want(2)) emit(2, "attention invariants", guarded(attention_invariants));
    if (want(3)) emit(3, "metric oracle equivalence", guarded(metric_oracles));
    if (want(4)) emit(4, "reference averages", guarded(reference_averages));
    if (want(5) || want(6)) {
        const auto run = ablation(work / "ablation");
        if (want(5)) emit(5, "scaled ablation", ablation_outcome(run));
        if (want(6)) emit(6, "frequency-pattern localization", localization(run));
    }
    if (want(7)) emit(7, "determinism", guarded([&] { return determinism(work); }));
    if (want(8)) {
        fs::create_directories(work / "formats");
        emit(8, "format round trips", guarded([&] { return round_trips(work / "formats"); }));
    }
    return failures == 0 ? 0 : 1;
}
