#pragma once

// Adam with a per-step cosine-annealed learning rate over normal training clips.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "afpa/corpus.hpp"
#include "afpa/model.hpp"

namespace afpa::trainer {

struct TrainConfig {
    double lr_max = 1e-4;
    double lr_min = 0.0;
    std::size_t epochs = 30;
    std::size_t batch = 16;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    bool use_afpa = true;
    double val_fraction = 0.1;
};

void validate(const TrainConfig& cfg);

// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total_steps)) / 2
double cosine_lr(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// One bias-corrected Adam update from the accumulated gradients of `params`.
// Parameters without a gradient are treated as having a zero gradient.
void adam_step(ParamList& params, AdamState& state, double lr, const TrainConfig& cfg);

// Log-Mel and waveform of one clip, kept in memory for training.
struct ClipExample {
    std::string clip_id;
    std::size_t class_index = 0;
    Matrix log_mel;
    std::vector<float> samples;
};

ClipExample make_example(const model::AsdModel& model, const dsp::Waveform& wave, std::size_t class_index);

// Loads and featurizes entries, using up to `threads` workers. Order follows `entries`.
std::vector<ClipExample> load_examples(const model::AsdModel& model, const std::vector<corpus::DatasetEntry>& entries,
                                       std::size_t threads = 1);

struct EpochLog {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double val_loss = 0.0;
    double lr = 0.0;
};

inline constexpr const char* kTrainLogHeader = "epoch,mean_loss,lr";

// Holds out val_fraction of each class (at least one clip when a class has
// two or more) for loss monitoring only.
void split_validation(const std::vector<ClipExample>& all, double val_fraction, std::uint64_t seed,
                      std::vector<ClipExample>& train, std::vector<ClipExample>& val);

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains `model` in place. Every batch has exactly cfg.batch clips; the last
// batch of an epoch is filled by repeating clips from the start of the epoch order.
std::vector<EpochLog> train(model::AsdModel& model, const std::vector<ClipExample>& train_set,
                            const std::vector<ClipExample>& val_set, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

// Mean ArcFace loss over a set, without recording gradients.
double mean_loss(const model::AsdModel& model, const std::vector<ClipExample>& set);

std::vector<metrics::ScoreRecord> score_entries(const model::AsdModel& model,
                                                const std::vector<corpus::DatasetEntry>& entries,
                                                std::size_t threads = 1);

std::string train_log_csv(const std::vector<EpochLog>& log);

}  // namespace afpa::trainer
