#include <doctest.h>

#include <cmath>
#include <random>

#include "afpa/checkpoint.hpp"
#include "afpa/error.hpp"
#include "afpa/gradcheck.hpp"
#include "afpa/model.hpp"
#include "afpa/ops.hpp"
#include "afpa/tgram.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "tiny.hpp"

using namespace afpa;
using namespace afpa::model;

namespace {

ClassifierParams orthonormal_head(std::size_t classes, std::size_t embed) {
    Rng rng(1);
    ClassifierConfig cfg;
    cfg.embed_dim = embed;
    auto p = ClassifierParams::init(cfg, classes, rng);
    std::vector<double> w(classes * embed, 0.0);
    for (std::size_t c = 0; c < classes; ++c) w[c * embed + c] = 1.0;
    p.class_weight = Tensor::from({classes, embed}, w, true);
    return p;
}

Tensor unit(std::size_t n, std::size_t k, double scale = 1.0) {
    std::vector<double> v(n, 0.0);
    v[k] = scale;
    return Tensor::from({n}, v);
}

}  // namespace

TEST_CASE("tgram zero waveform") {
    Rng rng(0);
    auto p = tgram::TgramNetParams::init(tiny::pipeline().tgram, rng);
    const auto y = tgram::tgram_forward(Tensor::zeros({1, tiny::kSamples}), p);
    CHECK(y.shape() == Shape{tiny::kMels, tiny::kFrames});
    for (std::size_t c = 0; c < y.dim(0); ++c)
        for (std::size_t t = 0; t < y.dim(1); ++t) {
            CHECK(std::isfinite(y.at(c, t)));
            CHECK(y.at(c, t) == y.at(c, 0));
        }
}

TEST_CASE("tgram default shape matches the log-Mel") {
    Rng rng(0);
    auto p = tgram::TgramNetParams::init(tgram::TgramConfig{}, rng);
    dsp::Waveform w;
    std::mt19937_64 r(3);
    for (double v : oracle::randu(160000, r, -0.1, 0.1)) w.samples.push_back(static_cast<float>(v));
    NoGradGuard guard;
    const auto y = tgram::tgram_forward(tgram::waveform_tensor(w), p);
    const auto x = dsp::log_mel(w, dsp::DspConfig{});
    CHECK(y.shape() == Shape{x.data.rows, x.data.cols});
    CHECK(y.shape() == Shape{128, 312});
}

TEST_CASE("tgram shape follows the log-Mel for other clip lengths") {
    auto cfg = tiny::pipeline();
    Rng rng(0);
    auto p = tgram::TgramNetParams::init(cfg.tgram, rng);
    for (std::size_t len : {300u, 416u, 700u}) {
        dsp::Waveform w;
        w.samples.assign(len, 0.01f);
        const auto x = dsp::log_mel(w, cfg.dsp);
        const auto y = tgram::tgram_forward(tgram::waveform_tensor(w), p);
        CHECK(y.shape() == Shape{x.data.rows, x.data.cols});
    }
}

TEST_CASE("tgram front weight gradient") {
    auto cfg = tiny::pipeline();
    Rng rng(2);
    auto p = tgram::TgramNetParams::init(cfg.tgram, rng);
    const auto wave = tiny::waveform(5);
    const auto x = tgram::waveform_tensor(wave);
    CHECK(grad_check([&](const Tensor& t) { auto q = p; q.front = t; return ops::mean(tgram::tgram_forward(x, q)); },
                     p.front) < 1e-5);
}

TEST_CASE("classifier forward") {
    auto cfg = tiny::pipeline().classifier;
    Rng rng(4);
    auto p = ClassifierParams::init(cfg, 2, rng);
    const auto zero = classifier_forward(Tensor::zeros({2, tiny::kMels, tiny::kFrames}), p);
    CHECK(zero.shape() == Shape{cfg.embed_dim});
    for (double v : zero.values()) CHECK(std::isfinite(v));

    Rng big(5);
    auto full = ClassifierParams::init(ClassifierConfig{}, 4, big);
    std::mt19937_64 r(1);
    NoGradGuard guard;
    const auto e = classifier_forward(Tensor::from({2, 128, 312}, oracle::randu(2 * 128 * 312, r)), full);
    CHECK(e.shape() == Shape{128});
    CHECK_THROWS_AS(classifier_forward(Tensor::zeros({3, 8, 12}), p), ShapeError);
    CHECK_THROWS_AS(ClassifierParams::init(cfg, 1, big), ConfigError);
}

TEST_CASE("classifier embedding gradient") {
    auto cfg = tiny::pipeline().classifier;
    Rng rng(6);
    auto p = ClassifierParams::init(cfg, 2, rng);
    std::mt19937_64 r(7);
    auto x = Tensor::from({2, tiny::kMels, tiny::kFrames}, oracle::randu(2 * tiny::kMels * tiny::kFrames, r), true);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(classifier_forward(t, p)); }, x) < 1e-5);
    CHECK(grad_check([&](const Tensor& t) { auto q = p; q.stem = t; return ops::sum(classifier_forward(x, q)); }, p.stem) < 1e-5);
}

TEST_CASE("arcface logits") {
    // m = 0, s = 1 gives plain cosines
    Rng rng(8);
    ClassifierConfig cfg;
    cfg.embed_dim = 6;
    cfg.margin = 0.0;
    cfg.scale = 1.0;
    auto p = ClassifierParams::init(cfg, 3, rng);
    std::mt19937_64 r(9);
    auto e = Tensor::from({6}, oracle::randu(6, r));
    const auto logits = arcface_logits(e, p, std::size_t{1});
    const auto cos = class_cosines(e, p);
    for (std::size_t c = 0; c < 3; ++c) CHECK(std::abs(logits.at(c) - cos.at(c)) <= 1e-12);

    // oracle cosine from raw vectors
    for (std::size_t c = 0; c < 3; ++c) {
        double dot = 0.0, ne = 0.0, nw = 0.0;
        for (std::size_t k = 0; k < 6; ++k) {
            const double w = p.class_weight.at(c, k);
            dot += w * e.at(k);
            ne += e.at(k) * e.at(k);
            nw += w * w;
        }
        CHECK(std::abs(cos.at(c) - dot / std::sqrt(ne * nw)) <= 1e-12);
    }

    auto head = orthonormal_head(4, 8);
    const auto aligned = arcface_logits(unit(8, 0, 3.0), head, std::size_t{0});
    CHECK(aligned.at(0) == doctest::Approx(30.0 * std::cos(1.0)).epsilon(1e-6));
    CHECK(aligned.at(0) == doctest::Approx(16.2091).epsilon(1e-5));
    for (std::size_t c = 1; c < 4; ++c) CHECK(std::abs(aligned.at(c)) <= 1e-12);
    CHECK_THROWS_AS(arcface_logits(unit(8, 0), head, std::size_t{4}), ContractError);
}

TEST_CASE("arcface is invariant to embedding scale") {
    Rng rng(10);
    ClassifierConfig cfg;
    cfg.embed_dim = 5;
    auto p = ClassifierParams::init(cfg, 3, rng);
    std::mt19937_64 r(11);
    const auto base = oracle::randu(5, r);
    const auto a = arcface_logits(Tensor::from({5}, base), p, std::size_t{2});
    for (double c : {0.01, 7.0, 1e4}) {
        auto scaled = base;
        for (auto& v : scaled) v *= c;
        const auto b = arcface_logits(Tensor::from({5}, scaled), p, std::size_t{2});
        for (std::size_t k = 0; k < 3; ++k) CHECK(std::abs(a.at(k) - b.at(k)) <= 1e-9);
    }
}

TEST_CASE("arcface target logit stays monotone past the wrap point") {
    double last = INFINITY;
    for (double theta = 0.05; theta < std::numbers::pi - 0.01; theta += 0.01) {
        const double v = ops::arc_margin(Tensor::from({2}, {std::cos(theta), 0.0}), 0, 1.0, 30.0).at(0);
        CHECK(v < last);
        last = v;
    }
}

TEST_CASE("id loss") {
    CHECK(id_loss(Tensor::from({4}, {2, 2, 2, 2}), 1).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    double last = INFINITY;
    for (double big : {0.0, 2.0, 5.0, 10.0, 20.0, 40.0}) {
        const double l = id_loss(Tensor::from({3}, {big, 0.5, -0.5}), 0).item();
        CHECK(l < last);
        last = l;
    }
    CHECK(last < 1e-15);
    std::mt19937_64 r(12);
    for (int trial = 0; trial < 20; ++trial) {
        const auto z = oracle::randu(5, r, -20.0, 20.0);
        double mx = -1e300, s = 0.0;
        for (double v : z) mx = std::max(mx, v);
        for (double v : z) s += std::exp(v - mx);
        const double expect = -(z[3] - mx - std::log(s));
        CHECK(std::abs(id_loss(Tensor::from({5}, z), 3).item() - expect) <= 1e-12);
    }
}

TEST_CASE("anomaly score examples") {
    CHECK(score_from_logits(Tensor::from({3}, {1, 1, 1}), 2) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
    CHECK(score_from_logits(Tensor::from({2}, {800, 0}), 0) == 0.0);
    const auto two = Tensor::from({2}, {std::log(0.9), std::log(0.1)});
    CHECK(score_from_logits(two, 0) == doctest::Approx(-std::log(0.9)).epsilon(1e-12));
    CHECK(score_from_logits(two, 0) == doctest::Approx(0.10536).epsilon(1e-4));
    // strictly decreasing in the claimed posterior
    double last = INFINITY;
    for (double p = 0.05; p < 1.0; p += 0.05) {
        const double s = score_from_logits(Tensor::from({2}, {std::log(p), std::log(1.0 - p)}), 0);
        CHECK(s < last);
        last = s;
    }
    Rng rng(13);
    auto head = ClassifierParams::init(tiny::pipeline().classifier, 2, rng);
    CHECK_THROWS_AS(anomaly_score(Tensor::zeros({2, tiny::kMels, tiny::kFrames}), head, 2), ContractError);
}

TEST_CASE("pipeline forward and ablation switch") {
    auto cfg = tiny::pipeline();
    auto with = AsdModel::init(cfg, tiny::classes(), 3);
    cfg.use_afpa = false;
    auto without = AsdModel::init(cfg, tiny::classes(), 3);
    const auto wave = tiny::waveform(8);
    const auto x = dsp::log_mel(wave, with.cfg.dsp);
    const auto xt = attention::to_tensor(x.data);
    const auto a = forward(with, xt, tgram::waveform_tensor(wave));
    const auto b = forward(without, xt, tgram::waveform_tensor(wave));
    CHECK(a.pattern.has_value());
    CHECK_FALSE(b.pattern.has_value());
    const auto n = tiny::kMels * tiny::kFrames;
    // channel 1 identical, channel 0 differs
    CHECK(std::equal(a.fused.values().begin() + n, a.fused.values().end(), b.fused.values().begin() + n));
    CHECK_FALSE(std::equal(a.fused.values().begin(), a.fused.values().begin() + n, b.fused.values().begin()));
    CHECK(std::equal(b.fused.values().begin(), b.fused.values().begin() + n, x.data.data.begin()));

    // W_V = 0 makes the two pipelines agree exactly
    with.afpa.w_v = Tensor::zeros(with.afpa.w_v.shape(), true);
    const auto la = clip_loss(with, xt, tgram::waveform_tensor(wave), 1).item();
    const auto lb = clip_loss(without, xt, tgram::waveform_tensor(wave), 1).item();
    CHECK(la == lb);

    // the backbone exposes no attention parameters
    for (const auto& p : without.parameters()) CHECK(p.name.rfind("afpa.", 0) != 0);
    CHECK(without.all_tensors().size() == without.parameters().size() + 3);
}

TEST_CASE("checkpoint round trip") {
    support::TempDir dir("ckpt");
    RunConfig cfg;
    cfg.pipeline = tiny::pipeline();
    cfg.finalize();
    auto model = AsdModel::init(cfg.pipeline, tiny::classes(), 9);
    auto all = model.all_tensors();
    round_to_f32(all);
    save_checkpoint(dir / "ck", model, cfg);
    const auto back = load_checkpoint(dir / "ck");
    CHECK(back.config_hash == config_hash(cfg));
    CHECK(back.model.classes.size() == 2);
    CHECK(back.model.classes[1].machine_id == model.classes[1].machine_id);
    const auto a = model.all_tensors();
    const auto b = back.model.all_tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].name == b[i].name);
        CHECK(std::equal(a[i].tensor.values().begin(), a[i].tensor.values().end(), b[i].tensor.values().begin(),
                         b[i].tensor.values().end()));
    }
    const auto wave = tiny::waveform(4);
    CHECK(clip_score(model, wave, 1) == clip_score(back.model, wave, 1));

    save_checkpoint(dir / "ck2", back.model, back.config);
    CHECK(support::read_bytes(dir / "ck2" / "params.aft") == support::read_bytes(dir / "ck" / "params.aft"));
    CHECK(support::read_bytes(dir / "ck2" / "manifest.json") == support::read_bytes(dir / "ck" / "manifest.json"));

    CHECK_THROWS_AS(load_checkpoint(dir / "nothing"), IoError);
    support::write_bytes(dir / "ck" / "manifest.json", {'{', 'x'});
    CHECK_THROWS_AS(load_checkpoint(dir / "ck"), FormatError);
}
