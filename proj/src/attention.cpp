#include "afpa/attention.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "afpa/error.hpp"
#include "afpa/ops.hpp"
#include "afpa/tensor_file.hpp"

namespace afpa::attention {

AfpaParams AfpaParams::init(std::size_t n_frames, const AfpaConfig& cfg, Rng& rng) {
    if (cfg.heads == 0 || n_frames % cfg.heads != 0) {
        throw ConfigError("afpa: " + std::to_string(n_frames) + " frames cannot be split into " +
                          std::to_string(cfg.heads) + " equal segments");
    }
    auto identity_plus_noise = [&] {
        auto w = randn({n_frames, n_frames}, cfg.init_noise, rng);
        auto v = w.mutable_values();
        for (std::size_t i = 0; i < n_frames; ++i) v[i * n_frames + i] += 1.0;
        return w;
    };
    AfpaParams p;
    p.heads = cfg.heads;
    p.w_q = identity_plus_noise();
    p.w_k = identity_plus_noise();
    p.w_v = identity_plus_noise();
    return p;
}

ParamList AfpaParams::parameters(const std::string& prefix) const {
    return {{prefix + "w_q", w_q}, {prefix + "w_k", w_k}, {prefix + "w_v", w_v}};
}

std::vector<Tensor> segment(const Tensor& x, std::size_t heads) {
    if (x.rank() != 2) throw ShapeError("segment: expected [M x N], got " + shape_str(x.shape()));
    const auto frames = x.dim(1);
    if (heads == 0 || frames % heads != 0) {
        throw ConfigError("segment: " + std::to_string(frames) + " frames not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const auto width = frames / heads;
    std::vector<Tensor> parts;
    parts.reserve(heads);
    for (std::size_t i = 0; i < heads; ++i) parts.push_back(ops::slice(x, 1, i * width, (i + 1) * width));
    return parts;
}

Projections project_qkv(const Tensor& x, const AfpaParams& p) {
    if (x.rank() != 2 || x.dim(1) != p.frames()) {
        throw ShapeError("project_qkv: input " + shape_str(x.shape()) + " does not fit projections " +
                         shape_str(p.w_q.shape()));
    }
    return {ops::matmul(x, p.w_q), ops::matmul(x, p.w_k), ops::matmul(x, p.w_v)};
}

HeadOutput attention_head(const Tensor& q, const Tensor& k, const Tensor& v) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape()) {
        throw ShapeError("attention_head: Q, K, V must share one [M x n] shape, got " + shape_str(q.shape()) +
                         ", " + shape_str(k.shape()) + ", " + shape_str(v.shape()));
    }
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
    auto logits = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt_n);
    auto weights = ops::softmax_rows(logits);
    auto attended = ops::matmul(weights, v);
    for (double a : attended.values()) {
        if (!std::isfinite(a)) throw NumericError("attention_head: non-finite output");
    }
    return {attended, weights};
}

Matrix to_matrix(const Tensor& t) {
    if (t.rank() != 2) throw ShapeError("to_matrix: expected rank 2, got " + shape_str(t.shape()));
    Matrix m(t.dim(0), t.dim(1));
    std::copy(t.values().begin(), t.values().end(), m.data.begin());
    return m;
}

Tensor to_tensor(const Matrix& m, bool requires_grad) { return Tensor::from({m.rows, m.cols}, m.data, requires_grad); }

AttentionOutput mhsa(const Tensor& x, const AfpaParams& p) {
    const auto proj = project_qkv(x, p);
    const auto qs = segment(proj.q, p.heads);
    const auto ks = segment(proj.k, p.heads);
    const auto vs = segment(proj.v, p.heads);
    std::vector<Tensor> outputs;
    FrequencyPattern pattern;
    const auto m = x.dim(0);
    pattern.pooled = Matrix(m, m, 0.0);
    for (std::size_t i = 0; i < p.heads; ++i) {
        auto head = attention_head(qs[i], ks[i], vs[i]);
        outputs.push_back(head.attended);
        pattern.maps.push_back(to_matrix(head.weights));
        const auto& map = pattern.maps.back();
        for (std::size_t e = 0; e < map.data.size(); ++e) pattern.pooled.data[e] += map.data[e];
    }
    for (auto& v : pattern.pooled.data) v /= static_cast<double>(p.heads);
    return {ops::concat(outputs, 1), std::move(pattern)};
}

AttentionOutput residual_enhance(const Tensor& x, const AfpaParams& p) {
    auto attended = mhsa(x, p);
    return {ops::add(attended.out, x), std::move(attended.pattern)};
}

Tensor fuse(const Tensor& spectral, const Tensor& temporal) {
    if (spectral.rank() != 2 || spectral.shape() != temporal.shape()) {
        throw ShapeError("fuse: spectral " + shape_str(spectral.shape()) + " and temporal " +
                         shape_str(temporal.shape()) + " must share one [M x N] shape");
    }
    const auto m = spectral.dim(0), n = spectral.dim(1);
    return ops::concat({ops::reshape(spectral, {1, m, n}), ops::reshape(temporal, {1, m, n})}, 0);
}

void export_pattern(const FrequencyPattern& pattern, const std::filesystem::path& prefix) {
    const auto m = pattern.pooled.rows;
    TensorMap tensors;
    tensors["pooled"] = ArrayF32::from_matrix(pattern.pooled);
    for (std::size_t i = 0; i < pattern.maps.size(); ++i) {
        tensors["head" + std::to_string(i)] = ArrayF32::from_matrix(pattern.maps[i]);
    }
    tensor_write(prefix.string() + ".pattern.aft", tensors);

    const auto csv_path = prefix.string() + ".pattern.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw IoError("cannot create " + csv_path);
    char buf[32];
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < m; ++c) {
            std::snprintf(buf, sizeof buf, "%.9g", pattern.pooled(r, c));
            if (c) csv << ',';
            csv << buf;
        }
        csv << '\n';
    }
    if (!csv) throw IoError("write failed for " + csv_path);
}

FrequencyPattern read_pattern(const std::filesystem::path& aft_path) {
    auto tensors = tensor_read(aft_path);
    auto it = tensors.find("pooled");
    if (it == tensors.end()) throw FormatError(aft_path.string() + ": no 'pooled' map");
    FrequencyPattern pattern;
    pattern.pooled = it->second.to_matrix();
    for (std::size_t i = 0;; ++i) {
        auto head = tensors.find("head" + std::to_string(i));
        if (head == tensors.end()) break;
        pattern.maps.push_back(head->second.to_matrix());
    }
    auto name = aft_path.filename().string();
    const std::string suffix = ".pattern.aft";
    if (name.size() > suffix.size() && name.ends_with(suffix)) name.resize(name.size() - suffix.size());
    pattern.clip_id = name;
    return pattern;
}

}  // namespace afpa::attention
