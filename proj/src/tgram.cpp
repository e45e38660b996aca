#include "afpa/tgram.hpp"

#include <cmath>

#include "afpa/error.hpp"
#include "afpa/ops.hpp"

namespace afpa::tgram {

TgramNetParams TgramNetParams::init(const TgramConfig& cfg, Rng& rng) {
    if (cfg.channels == 0 || cfg.kernel == 0 || cfg.stride == 0 || cfg.n_frames == 0) {
        throw ConfigError("tgram: channels, kernel, stride and n_frames must be positive");
    }
    TgramNetParams p;
    p.cfg = cfg;
    p.front = randn({cfg.channels, 1, cfg.kernel}, 1.0 / std::sqrt(static_cast<double>(cfg.kernel)), rng);
    const double conv_std = std::sqrt(2.0 / static_cast<double>(cfg.channels * 3));
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
        TgramBlock block;
        block.norm_gamma = Tensor::full({cfg.channels}, 1.0, true);
        block.norm_beta = Tensor::zeros({cfg.channels}, true);
        block.conv = randn({cfg.channels, cfg.channels, 3}, conv_std, rng);
        p.blocks.push_back(std::move(block));
    }
    return p;
}

ParamList TgramNetParams::parameters(const std::string& prefix) const {
    ParamList out{{prefix + "front", front}};
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto base = prefix + "block" + std::to_string(b) + ".";
        out.push_back({base + "norm_gamma", blocks[b].norm_gamma});
        out.push_back({base + "norm_beta", blocks[b].norm_beta});
        out.push_back({base + "conv", blocks[b].conv});
    }
    return out;
}

Tensor tgram_forward(const Tensor& wave, const TgramNetParams& p) {
    if (wave.rank() != 2 || wave.dim(0) != 1) {
        throw ShapeError("tgram_forward: expected waveform [1 x L], got " + shape_str(wave.shape()));
    }
    const auto& cfg = p.cfg;
    // Padding by half a kernel centers each frame on t * stride.
    auto x = ops::conv1d(wave, p.front, Tensor{}, cfg.stride, cfg.kernel / 2);
    x = ops::fit_columns(x, cfg.n_frames);
    for (const auto& block : p.blocks) {
        x = ops::layer_norm(x, block.norm_gamma, block.norm_beta, 0, cfg.norm_eps);
        x = ops::leaky_relu(x, cfg.slope);
        x = ops::conv1d(x, block.conv, Tensor{}, 1, 1);
    }
    return x;
}

Tensor waveform_tensor(const dsp::Waveform& wave, bool requires_grad) {
    if (wave.samples.empty()) throw DataError("waveform '" + wave.source_id + "' is empty");
    std::vector<double> values(wave.samples.begin(), wave.samples.end());
    const std::size_t n = values.size();
    return Tensor::from({1, n}, std::move(values), requires_grad);
}

}  // namespace afpa::tgram
