#pragma once

// Machine-ID classifier over the fused [2 x M x N] representation, ArcFace
// logits, and the end-to-end pipeline that ties the front ends to it.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "afpa/attention.hpp"
#include "afpa/dsp.hpp"
#include "afpa/params.hpp"
#include "afpa/tgram.hpp"

namespace afpa::model {

struct ClassifierConfig {
    std::size_t in_channels = 2;
    std::size_t stem_channels = 32;
    // One depthwise-separable block per entry.
    std::vector<std::size_t> block_channels = {64, 64, 128, 128};
    std::vector<std::size_t> block_strides = {2, 2, 2, 1};
    std::size_t embed_dim = 128;
    double margin = 1.0;  // radians
    double scale = 30.0;
    double slope = 0.01;
    double norm_eps = 1e-5;
};

struct ChannelNorm {
    Tensor gamma;
    Tensor beta;
};

struct SeparableBlock {
    std::size_t stride = 1;
    Tensor depthwise;  // [C_in x 3 x 3]
    ChannelNorm norm1;
    Tensor pointwise;  // [C_out x C_in]
    ChannelNorm norm2;
};

struct ClassifierParams {
    ClassifierConfig cfg;
    Tensor stem;  // [stem x in x 3 x 3], stride 2
    ChannelNorm stem_norm;
    std::vector<SeparableBlock> blocks;
    Tensor fc_weight;  // [embed x last]
    Tensor fc_bias;    // [embed]
    Tensor class_weight;  // [C x embed]

    static ClassifierParams init(const ClassifierConfig& cfg, std::size_t num_classes, Rng& rng);
    ParamList parameters(const std::string& prefix = "classifier.") const;
    std::size_t num_classes() const { return class_weight.dim(0); }
};

// [2 x M x N] -> unnormalized embedding [embed_dim]
Tensor classifier_forward(const Tensor& x, const ClassifierParams& p);

// Cosine of the normalized embedding against every normalized class weight, [C].
Tensor class_cosines(const Tensor& embedding, const ClassifierParams& p);

// With a target: s*cos(theta_t + m) at the target and s*cos(theta) elsewhere.
// Without: s*cos(theta) everywhere.
Tensor arcface_logits(const Tensor& embedding, const ClassifierParams& p, std::optional<std::size_t> target);

Tensor id_loss(const Tensor& logits, std::size_t target);

// -ln softmax(logits)[claimed]
double score_from_logits(const Tensor& logits, std::size_t claimed);
// Margin-free anomaly score of a fused input against a claimed class.
double anomaly_score(const Tensor& x, const ClassifierParams& p, std::size_t claimed);

struct IdLabel {
    std::string machine_type;
    std::string machine_id;
    std::size_t class_index = 0;

    std::string key() const { return machine_type + "/" + machine_id; }
};

struct PipelineConfig {
    dsp::DspConfig dsp;
    tgram::TgramConfig tgram;
    attention::AfpaConfig afpa;
    ClassifierConfig classifier;
    bool use_afpa = true;
};

// Keeps the per-module configs consistent with the DSP shape (M, N, n_fft, hop).
PipelineConfig harmonize(PipelineConfig cfg);

struct AsdModel {
    PipelineConfig cfg;
    tgram::TgramNetParams tgram;
    attention::AfpaParams afpa;
    ClassifierParams classifier;
    std::vector<IdLabel> classes;

    static AsdModel init(const PipelineConfig& cfg, std::vector<IdLabel> classes, std::uint64_t seed);
    // Trainable parameters; attention weights only when use_afpa is set.
    ParamList parameters() const;
    // Every stored tensor, including unused attention weights.
    ParamList all_tensors() const;
    std::optional<std::size_t> class_of(const std::string& machine_type, const std::string& machine_id) const;
};

struct ForwardResult {
    Tensor spectral;  // X_F, or the enhanced feature when attention is on
    Tensor temporal;
    Tensor fused;
    Tensor embedding;
    std::optional<attention::FrequencyPattern> pattern;
};

// log_mel [M x N] and wave [1 x L] -> fused features and embedding.
ForwardResult forward(const AsdModel& model, const Tensor& log_mel, const Tensor& wave);

// ArcFace cross-entropy for one clip.
Tensor clip_loss(const AsdModel& model, const Tensor& log_mel, const Tensor& wave, std::size_t target);

// Margin-free anomaly score of one clip; runs without recording gradients.
double clip_score(const AsdModel& model, const dsp::Waveform& wave, std::size_t claimed);
double clip_score(const AsdModel& model, const Matrix& log_mel, const dsp::Waveform& wave, std::size_t claimed);

}  // namespace afpa::model
