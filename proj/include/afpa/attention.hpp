#pragma once

// Frequency-pattern self-attention over a log-Mel spectrogram.
//
// The spectrogram X [M x N] is projected by N x N matrices into Q, K, V.
// The projections are then split along time into `heads` segments of width
// n = N / heads; segment i attends over frequency rows:
//
//   D_i = softmax_rows(Q_i K_i^T / sqrt(n))   [M x M]
//   A_i = D_i V_i                              [M x n]
//
// The head outputs are joined back along time and added to X.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "afpa/matrix.hpp"
#include "afpa/params.hpp"

namespace afpa::attention {

struct AfpaConfig {
    std::size_t heads = 6;
    double init_noise = 0.02;
};

struct AfpaParams {
    std::size_t heads = 6;
    Tensor w_q;  // [N x N]
    Tensor w_k;
    Tensor w_v;

    // Identity plus N(0, init_noise^2) noise.
    static AfpaParams init(std::size_t n_frames, const AfpaConfig& cfg, Rng& rng);
    ParamList parameters(const std::string& prefix = "afpa.") const;
    std::size_t frames() const { return w_q.dim(0); }
};

// Splits [M x N] into `heads` column blocks of width N / heads.
std::vector<Tensor> segment(const Tensor& x, std::size_t heads);

struct Projections {
    Tensor q, k, v;
};

Projections project_qkv(const Tensor& x, const AfpaParams& p);

struct HeadOutput {
    Tensor attended;  // A_i [M x n]
    Tensor weights;   // D_i [M x M]
};

HeadOutput attention_head(const Tensor& q, const Tensor& k, const Tensor& v);

struct FrequencyPattern {
    std::vector<Matrix> maps;  // one M x M map per head
    Matrix pooled;             // elementwise mean of maps
    std::string clip_id;
};

struct AttentionOutput {
    Tensor out;
    FrequencyPattern pattern;
};

AttentionOutput mhsa(const Tensor& x, const AfpaParams& p);
// mhsa(x) + x
AttentionOutput residual_enhance(const Tensor& x, const AfpaParams& p);

// [2 x M x N]; channel 0 is the spectral input, channel 1 the temporal feature.
Tensor fuse(const Tensor& spectral, const Tensor& temporal);

Matrix to_matrix(const Tensor& t);
Tensor to_tensor(const Matrix& m, bool requires_grad = false);

// Writes <prefix>.pattern.aft (tensors "pooled", "head0".."head{I-1}") and
// <prefix>.pattern.csv (pooled map, one row per query frequency).
void export_pattern(const FrequencyPattern& pattern, const std::filesystem::path& prefix);
FrequencyPattern read_pattern(const std::filesystem::path& aft_path);

}  // namespace afpa::attention
