#pragma once

// The small pipeline used for gradient checks: 8 Mel bins, 12 frames,
// 2 heads, 2 classes.

#include <cmath>
#include <numbers>
#include <random>

#include "afpa/model.hpp"

namespace tiny {

inline constexpr std::size_t kMels = 8;
inline constexpr std::size_t kFrames = 12;
inline constexpr std::size_t kFft = 64;
inline constexpr std::size_t kHop = 32;
inline constexpr std::size_t kSamples = kFft + (kFrames - 1) * kHop;

inline afpa::model::PipelineConfig pipeline() {
    afpa::model::PipelineConfig cfg;
    cfg.dsp.n_fft = kFft;
    cfg.dsp.hop = kHop;
    cfg.dsp.n_mels = kMels;
    cfg.dsp.n_frames = kFrames;
    cfg.tgram.blocks = 2;
    cfg.afpa.heads = 2;
    cfg.classifier.stem_channels = 4;
    cfg.classifier.block_channels = {4, 6};
    cfg.classifier.block_strides = {2, 1};
    cfg.classifier.embed_dim = 6;
    return afpa::model::harmonize(cfg);
}

inline std::vector<afpa::model::IdLabel> classes() { return {{"pump", "id_00", 0}, {"pump", "id_02", 1}}; }

// Two tones plus noise, long enough for exactly kFrames STFT frames.
inline afpa::dsp::Waveform waveform(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    afpa::dsp::Waveform w;
    for (std::size_t t = 0; t < kSamples; ++t) {
        const double x = static_cast<double>(t) / 16000.0;
        w.samples.push_back(static_cast<float>(0.3 * std::sin(2 * std::numbers::pi * 1500.0 * x) +
                                               0.1 * std::sin(2 * std::numbers::pi * 5200.0 * x) + noise(rng)));
    }
    return w;
}

}  // namespace tiny
