#pragma once

// Learnable temporal encoder: a strided 1-D convolution over the raw waveform
// followed by blocks of [LayerNorm over channels, LeakyReLU, Conv1d k=3].

#include <cstddef>
#include <vector>

#include "afpa/dsp.hpp"
#include "afpa/params.hpp"

namespace afpa::tgram {

struct TgramConfig {
    std::size_t channels = 128;  // equals the number of Mel bins
    std::size_t kernel = 1024;   // equals n_fft
    std::size_t stride = 512;    // equals hop
    std::size_t blocks = 3;
    std::size_t n_frames = 312;
    double slope = 0.01;
    double norm_eps = 1e-5;
};

struct TgramBlock {
    Tensor norm_gamma;  // [channels]
    Tensor norm_beta;   // [channels]
    Tensor conv;        // [channels x channels x 3]
};

struct TgramNetParams {
    TgramConfig cfg;
    Tensor front;  // [channels x 1 x kernel]
    std::vector<TgramBlock> blocks;

    static TgramNetParams init(const TgramConfig& cfg, Rng& rng);
    ParamList parameters(const std::string& prefix = "tgram.") const;
};

// wave [1 x L] -> [channels x n_frames]
Tensor tgram_forward(const Tensor& wave, const TgramNetParams& p);

Tensor waveform_tensor(const dsp::Waveform& wave, bool requires_grad = false);

}  // namespace afpa::tgram
