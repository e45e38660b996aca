#include "afpa/model.hpp"

#include <cmath>

#include "afpa/error.hpp"
#include "afpa/ops.hpp"

namespace afpa::model {

namespace {

ChannelNorm make_norm(std::size_t channels) {
    return {Tensor::full({channels}, 1.0, true), Tensor::zeros({channels}, true)};
}

// Layer norm across channels at every spatial position of [C x H x W].
Tensor channel_norm(const Tensor& x, const ChannelNorm& norm, double eps) {
    const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto flat = ops::layer_norm(ops::reshape(x, {c, h * w}), norm.gamma, norm.beta, 0, eps);
    return ops::reshape(flat, {c, h, w});
}

void push_norm(ParamList& out, const std::string& base, const ChannelNorm& norm) {
    out.push_back({base + "gamma", norm.gamma});
    out.push_back({base + "beta", norm.beta});
}

}  // namespace

ClassifierParams ClassifierParams::init(const ClassifierConfig& cfg, std::size_t num_classes, Rng& rng) {
    if (num_classes < 2) throw ConfigError("classifier: need at least 2 classes, got " + std::to_string(num_classes));
    if (cfg.block_channels.size() != cfg.block_strides.size()) {
        throw ConfigError("classifier: block_channels and block_strides differ in length");
    }
    ClassifierParams p;
    p.cfg = cfg;
    p.stem = randn({cfg.stem_channels, cfg.in_channels, 3, 3}, std::sqrt(2.0 / static_cast<double>(cfg.in_channels * 9)), rng);
    p.stem_norm = make_norm(cfg.stem_channels);
    auto channels = cfg.stem_channels;
    for (std::size_t b = 0; b < cfg.block_channels.size(); ++b) {
        SeparableBlock block;
        block.stride = cfg.block_strides[b];
        block.depthwise = randn({channels, 3, 3}, std::sqrt(2.0 / 9.0), rng);
        block.norm1 = make_norm(channels);
        block.pointwise = randn({cfg.block_channels[b], channels}, std::sqrt(2.0 / static_cast<double>(channels)), rng);
        block.norm2 = make_norm(cfg.block_channels[b]);
        channels = cfg.block_channels[b];
        p.blocks.push_back(std::move(block));
    }
    p.fc_weight = randn({cfg.embed_dim, channels}, 1.0 / std::sqrt(static_cast<double>(channels)), rng);
    p.fc_bias = Tensor::zeros({cfg.embed_dim}, true);
    p.class_weight = randn({num_classes, cfg.embed_dim}, 1.0 / std::sqrt(static_cast<double>(cfg.embed_dim)), rng);
    return p;
}

ParamList ClassifierParams::parameters(const std::string& prefix) const {
    ParamList out{{prefix + "stem", stem}};
    push_norm(out, prefix + "stem_norm.", stem_norm);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        const auto base = prefix + "block" + std::to_string(b) + ".";
        out.push_back({base + "depthwise", blocks[b].depthwise});
        push_norm(out, base + "norm1.", blocks[b].norm1);
        out.push_back({base + "pointwise", blocks[b].pointwise});
        push_norm(out, base + "norm2.", blocks[b].norm2);
    }
    out.push_back({prefix + "fc_weight", fc_weight});
    out.push_back({prefix + "fc_bias", fc_bias});
    out.push_back({prefix + "class_weight", class_weight});
    return out;
}

Tensor classifier_forward(const Tensor& x, const ClassifierParams& p) {
    const auto& cfg = p.cfg;
    if (x.rank() != 3 || x.dim(0) != cfg.in_channels) {
        throw ShapeError("classifier_forward: expected [" + std::to_string(cfg.in_channels) + " x M x N], got " +
                         shape_str(x.shape()));
    }
    auto h = ops::conv2d(x, p.stem, Tensor{}, 2, 1);
    h = ops::leaky_relu(channel_norm(h, p.stem_norm, cfg.norm_eps), cfg.slope);
    for (const auto& block : p.blocks) {
        h = ops::depthwise_conv2d(h, block.depthwise, Tensor{}, block.stride, 1);
        h = ops::leaky_relu(channel_norm(h, block.norm1, cfg.norm_eps), cfg.slope);
        h = ops::pointwise_conv2d(h, block.pointwise, Tensor{});
        h = ops::leaky_relu(channel_norm(h, block.norm2, cfg.norm_eps), cfg.slope);
    }
    return ops::linear(ops::global_avg_pool(h), p.fc_weight, p.fc_bias);
}

Tensor class_cosines(const Tensor& embedding, const ClassifierParams& p) {
    if (embedding.rank() != 1 || embedding.dim(0) != p.class_weight.dim(1)) {
        throw ShapeError("class_cosines: embedding " + shape_str(embedding.shape()) + " does not fit class weights " +
                         shape_str(p.class_weight.shape()));
    }
    const auto e = ops::l2_normalize(embedding);
    const auto w = ops::l2_normalize(p.class_weight);
    return ops::reshape(ops::matmul(w, ops::reshape(e, {e.dim(0), 1})), {w.dim(0)});
}

Tensor arcface_logits(const Tensor& embedding, const ClassifierParams& p, std::optional<std::size_t> target) {
    const auto cosines = class_cosines(embedding, p);
    if (target) return ops::arc_margin(cosines, *target, p.cfg.margin, p.cfg.scale);
    return ops::scale(cosines, p.cfg.scale);
}

Tensor id_loss(const Tensor& logits, std::size_t target) { return ops::cross_entropy_with_logits(logits, target); }

double score_from_logits(const Tensor& logits, std::size_t claimed) {
    NoGradGuard no_grad;
    return ops::cross_entropy_with_logits(logits, claimed).item();
}

double anomaly_score(const Tensor& x, const ClassifierParams& p, std::size_t claimed) {
    NoGradGuard no_grad;
    if (claimed >= p.num_classes()) {
        throw ContractError("anomaly_score: claimed class " + std::to_string(claimed) + " out of range");
    }
    return score_from_logits(arcface_logits(classifier_forward(x, p), p, std::nullopt), claimed);
}

PipelineConfig harmonize(PipelineConfig cfg) {
    cfg.tgram.channels = cfg.dsp.n_mels;
    cfg.tgram.kernel = cfg.dsp.n_fft;
    cfg.tgram.stride = cfg.dsp.hop;
    cfg.tgram.n_frames = cfg.dsp.n_frames;
    cfg.classifier.in_channels = 2;
    return cfg;
}

AsdModel AsdModel::init(const PipelineConfig& cfg_in, std::vector<IdLabel> classes, std::uint64_t seed) {
    const auto cfg = harmonize(cfg_in);
    for (std::size_t i = 0; i < classes.size(); ++i) {
        if (classes[i].class_index != i) throw ContractError("class map must be indexed 0..C-1 in order");
    }
    Rng rng(seed);
    AsdModel m;
    m.cfg = cfg;
    m.tgram = tgram::TgramNetParams::init(cfg.tgram, rng);
    m.afpa = attention::AfpaParams::init(cfg.dsp.n_frames, cfg.afpa, rng);
    m.classifier = ClassifierParams::init(cfg.classifier, classes.size(), rng);
    m.classes = std::move(classes);
    return m;
}

ParamList AsdModel::parameters() const {
    ParamList out = tgram.parameters();
    if (cfg.use_afpa) {
        for (auto& p : afpa.parameters()) out.push_back(p);
    }
    for (auto& p : classifier.parameters()) out.push_back(p);
    return out;
}

ParamList AsdModel::all_tensors() const {
    ParamList out = tgram.parameters();
    for (auto& p : afpa.parameters()) out.push_back(p);
    for (auto& p : classifier.parameters()) out.push_back(p);
    return out;
}

std::optional<std::size_t> AsdModel::class_of(const std::string& machine_type, const std::string& machine_id) const {
    for (const auto& c : classes) {
        if (c.machine_type == machine_type && c.machine_id == machine_id) return c.class_index;
    }
    return std::nullopt;
}

ForwardResult forward(const AsdModel& model, const Tensor& log_mel, const Tensor& wave) {
    const auto& dsp = model.cfg.dsp;
    if (log_mel.shape() != Shape{dsp.n_mels, dsp.n_frames}) {
        throw ShapeError("forward: log-Mel " + shape_str(log_mel.shape()) + " does not match configured [" +
                         std::to_string(dsp.n_mels) + "x" + std::to_string(dsp.n_frames) + "]");
    }
    ForwardResult r;
    r.temporal = tgram::tgram_forward(wave, model.tgram);
    if (model.cfg.use_afpa) {
        auto enhanced = attention::residual_enhance(log_mel, model.afpa);
        r.spectral = enhanced.out;
        r.pattern = std::move(enhanced.pattern);
    } else {
        r.spectral = log_mel;
    }
    r.fused = attention::fuse(r.spectral, r.temporal);
    r.embedding = classifier_forward(r.fused, model.classifier);
    return r;
}

Tensor clip_loss(const AsdModel& model, const Tensor& log_mel, const Tensor& wave, std::size_t target) {
    const auto r = forward(model, log_mel, wave);
    return id_loss(arcface_logits(r.embedding, model.classifier, target), target);
}

double clip_score(const AsdModel& model, const Matrix& log_mel, const dsp::Waveform& wave, std::size_t claimed) {
    NoGradGuard no_grad;
    if (claimed >= model.classes.size()) {
        throw ContractError("clip_score: claimed class " + std::to_string(claimed) + " out of range");
    }
    const auto r = forward(model, attention::to_tensor(log_mel), tgram::waveform_tensor(wave));
    return score_from_logits(arcface_logits(r.embedding, model.classifier, std::nullopt), claimed);
}

double clip_score(const AsdModel& model, const dsp::Waveform& wave, std::size_t claimed) {
    return clip_score(model, dsp::log_mel(wave, model.cfg.dsp).data, wave, claimed);
}

}  // namespace afpa::model
