#include "afpa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <sstream>
#include <thread>

#include "afpa/error.hpp"
#include "afpa/ops.hpp"

namespace afpa::trainer {

void validate(const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ConfigError("trainer: epochs must be >= 1");
    if (cfg.batch < 1) throw ConfigError("trainer: batch must be >= 1");
    if (!(cfg.lr_max > cfg.lr_min && cfg.lr_min >= 0.0)) throw ConfigError("trainer: need lr_max > lr_min >= 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
        throw ConfigError("trainer: Adam betas must lie in [0, 1)");
    }
    if (!(cfg.eps > 0.0)) throw ConfigError("trainer: Adam eps must be positive");
    if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("trainer: val_fraction must lie in [0, 1)");
}

double cosine_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
    if (total_steps == 0) throw ContractError("cosine_lr: total_steps must be positive");
    if (step > total_steps) throw ContractError("cosine_lr: step beyond total_steps");
    if (step == total_steps) return cfg.lr_min;
    const double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps);
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + std::cos(phase));
}

void adam_step(ParamList& params, AdamState& state, double lr, const TrainConfig& cfg) {
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.tensor.numel(), 0.0);
            state.v.emplace_back(p.tensor.numel(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ContractError("adam_step: optimizer state does not match parameters");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (state.m[i].size() != params[i].tensor.numel()) {
            throw ShapeError("adam_step: moment shape differs for " + params[i].name);
        }
        for (double g : params[i].tensor.grad()) {
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + params[i].name);
        }
    }
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto values = params[i].tensor.mutable_values();
        const auto grad = params[i].tensor.grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t k = 0; k < values.size(); ++k) {
            const double g = grad.empty() ? 0.0 : grad[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
            values[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
        }
    }
}

ClipExample make_example(const model::AsdModel& model, const dsp::Waveform& wave, std::size_t class_index) {
    ClipExample ex;
    ex.clip_id = wave.source_id;
    ex.class_index = class_index;
    ex.log_mel = dsp::log_mel(wave, model.cfg.dsp).data;
    ex.samples = wave.samples;
    return ex;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

Tensor wave_tensor(const std::vector<float>& samples) {
    return Tensor::from({1, samples.size()}, std::vector<double>(samples.begin(), samples.end()));
}

}  // namespace

std::vector<ClipExample> load_examples(const model::AsdModel& model, const std::vector<corpus::DatasetEntry>& entries,
                                       std::size_t threads) {
    std::vector<ClipExample> out(entries.size());
    parallel_for(entries.size(), threads, [&](std::size_t i) {
        const auto& e = entries[i];
        auto cls = model.class_of(e.id.machine_type, e.id.machine_id);
        if (!cls) throw DataError("clip " + e.path.string() + " belongs to a machine unknown to the model");
        out[i] = make_example(model, e.load(), *cls);
    });
    return out;
}

void split_validation(const std::vector<ClipExample>& all, double val_fraction, std::uint64_t seed,
                      std::vector<ClipExample>& train, std::vector<ClipExample>& val) {
    train.clear();
    val.clear();
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < all.size(); ++i) by_class[all[i].class_index].push_back(i);
    std::vector<bool> held(all.size(), false);
    Rng rng(corpus::mix_seed(seed, 0x5EED));
    for (auto& [cls, idx] : by_class) {
        if (val_fraction <= 0.0 || idx.size() < 2) continue;
        auto take = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(idx.size())));
        take = std::clamp<std::size_t>(take, 1, idx.size() - 1);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t k = 0; k < take; ++k) held[idx[k]] = true;
    }
    for (std::size_t i = 0; i < all.size(); ++i) (held[i] ? val : train).push_back(all[i]);
}

double mean_loss(const model::AsdModel& model, const std::vector<ClipExample>& set) {
    if (set.empty()) return 0.0;
    NoGradGuard no_grad;
    double total = 0.0;
    for (const auto& ex : set) {
        total += model::clip_loss(model, attention::to_tensor(ex.log_mel), wave_tensor(ex.samples), ex.class_index).item();
    }
    return total / static_cast<double>(set.size());
}

std::vector<EpochLog> train(model::AsdModel& model, const std::vector<ClipExample>& train_set,
                            const std::vector<ClipExample>& val_set, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
    validate(cfg);
    if (train_set.empty()) throw DataError("train: no training clips");
    std::vector<bool> seen(model.classes.size(), false);
    for (const auto& ex : train_set) {
        if (ex.class_index >= model.classes.size()) throw DataError("train: clip " + ex.clip_id + " has an unknown class");
        seen[ex.class_index] = true;
    }
    if (std::count(seen.begin(), seen.end(), true) < 2) throw DataError("train: need clips from at least 2 classes");
    if (model.cfg.use_afpa != cfg.use_afpa) throw ContractError("train: model and config disagree on use_afpa");

    auto params = model.parameters();
    for (auto& p : params) p.tensor.zero_grad();
    AdamState state;
    Rng rng(corpus::mix_seed(cfg.seed, 0x7A1));
    const std::size_t batches = (train_set.size() + cfg.batch - 1) / cfg.batch;
    const std::size_t total_steps = batches * cfg.epochs;
    const double inv_batch = 1.0 / static_cast<double>(cfg.batch);

    std::vector<std::size_t> order(train_set.size());
    std::vector<EpochLog> log;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        std::size_t epoch_clips = 0;
        double lr = 0.0;
        for (std::size_t b = 0; b < batches; ++b, ++step) {
            for (std::size_t k = 0; k < cfg.batch; ++k) {
                const auto& ex = train_set[order[(b * cfg.batch + k) % order.size()]];
                Tensor loss;
                try {
                    loss = model::clip_loss(model, attention::to_tensor(ex.log_mel), wave_tensor(ex.samples),
                                            ex.class_index);
                } catch (const NumericError& e) {
                    throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step) + " (clip " + ex.clip_id + ")");
                }
                const double value = loss.item();
                if (!std::isfinite(value)) {
                    throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step) + " (clip " + ex.clip_id + ")");
                }
                epoch_loss += value;
                ++epoch_clips;
                ops::scale(loss, inv_batch).backward();
            }
            lr = cosine_lr(step, total_steps, cfg);
            try {
                adam_step(params, state, lr, cfg);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
            }
            for (auto& p : params) p.tensor.zero_grad();
        }
        EpochLog entry{epoch, epoch_loss / static_cast<double>(epoch_clips), mean_loss(model, val_set), lr};
        log.push_back(entry);
        if (on_epoch) on_epoch(entry);
    }
    // f32, as stored in checkpoints
    auto stored = model.all_tensors();
    round_to_f32(stored);
    return log;
}

std::vector<metrics::ScoreRecord> score_entries(const model::AsdModel& model,
                                                const std::vector<corpus::DatasetEntry>& entries, std::size_t threads) {
    std::vector<metrics::ScoreRecord> out(entries.size());
    parallel_for(entries.size(), threads, [&](std::size_t i) {
        const auto& e = entries[i];
        auto cls = model.class_of(e.id.machine_type, e.id.machine_id);
        if (!cls) throw DataError("clip " + e.path.string() + " belongs to a machine unknown to the model");
        const auto wave = e.load();
        out[i] = {e.clip_id(), e.id.machine_type, e.id.machine_id, e.label, model::clip_score(model, wave, *cls)};
    });
    return out;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << kTrainLogHeader << '\n';
    char line[96];
    for (const auto& e : log) {
        std::snprintf(line, sizeof line, "%zu,%.9g,%.9g\n", e.epoch, e.mean_loss, e.lr);
        os << line;
    }
    return os.str();
}

}  // namespace afpa::trainer
