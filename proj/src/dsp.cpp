#include "afpa/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <mutex>
#include <numbers>

#include "afpa/error.hpp"

namespace afpa::dsp {

namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint16_t read_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t read_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

}  // namespace

Waveform load_wav(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    const auto name = path.string();
    if (bytes.size() < 12) throw IoError(name + ": truncated RIFF header");
    if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError(name + ": not a RIFF/WAVE file");
    }

    std::uint16_t format = 0, channels = 0, bits = 0;
    std::uint32_t rate = 0;
    bool have_fmt = false;
    std::size_t pos = 12;
    while (true) {
        if (pos + 8 > bytes.size()) throw IoError(name + ": truncated before data chunk");
        const auto* chunk = bytes.data() + pos;
        const auto size = read_u32(chunk + 4);
        const auto body = pos + 8;
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (size < 16 || body + size > bytes.size()) throw IoError(name + ": truncated fmt chunk");
            format = read_u16(bytes.data() + body);
            channels = read_u16(bytes.data() + body + 2);
            rate = read_u32(bytes.data() + body + 4);
            bits = read_u16(bytes.data() + body + 14);
            if (format == kFormatExtensible) {
                if (size < 26) throw FormatError(name + ": short WAVE_FORMAT_EXTENSIBLE header");
                format = read_u16(bytes.data() + body + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            if (!have_fmt) throw FormatError(name + ": data chunk before fmt chunk");
            if (channels != 1) throw FormatError(name + ": expected mono, got " + std::to_string(channels) + " channels");
            const bool pcm16 = format == kFormatPcm && bits == 16;
            const bool f32 = format == kFormatFloat && bits == 32;
            if (!pcm16 && !f32) {
                throw FormatError(name + ": unsupported encoding (format " + std::to_string(format) + ", " +
                                  std::to_string(bits) + " bits)");
            }
            if (body + size > bytes.size()) throw IoError(name + ": truncated data chunk");
            const std::size_t width = bits / 8;
            if (size % width != 0) throw IoError(name + ": data chunk is not a whole number of samples");
            Waveform wave;
            wave.sample_rate = static_cast<int>(rate);
            wave.source_id = path.stem().string();
            wave.samples.resize(size / width);
            const auto* p = bytes.data() + body;
            for (std::size_t i = 0; i < wave.samples.size(); ++i) {
                if (pcm16) {
                    auto raw = static_cast<std::int16_t>(read_u16(p + 2 * i));
                    wave.samples[i] = static_cast<float>(raw) / 32768.0f;
                } else {
                    std::uint32_t bitsv = read_u32(p + 4 * i);
                    float v;
                    std::memcpy(&v, &bitsv, sizeof v);
                    wave.samples[i] = v;
                }
            }
            return wave;
        }
        pos = body + size + (size & 1u);
    }
}

void write_wav(const std::filesystem::path& path, const Waveform& wave, WavEncoding encoding) {
    const bool pcm16 = encoding == WavEncoding::Pcm16;
    const std::uint16_t bits = pcm16 ? 16 : 32;
    const std::uint32_t data_size = static_cast<std::uint32_t>(wave.samples.size() * (bits / 8));
    std::string out;
    out.reserve(44 + data_size);
    out += "RIFF";
    put_u32(out, 36 + data_size);
    out += "WAVEfmt ";
    put_u32(out, 16);
    put_u16(out, pcm16 ? kFormatPcm : kFormatFloat);
    put_u16(out, 1);
    put_u32(out, static_cast<std::uint32_t>(wave.sample_rate));
    put_u32(out, static_cast<std::uint32_t>(wave.sample_rate) * (bits / 8));
    put_u16(out, bits / 8);
    put_u16(out, bits);
    out += "data";
    put_u32(out, data_size);
    for (float s : wave.samples) {
        if (pcm16) {
            double q = std::nearbyint(static_cast<double>(s) * 32768.0);
            q = std::clamp(q, -32768.0, 32767.0);
            put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
        } else {
            std::uint32_t v;
            std::memcpy(&v, &s, sizeof v);
            put_u32(out, v);
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot create " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate, double f_min, double f_max) {
    if (n_mels < 1) throw ConfigError("mel_filterbank: need at least one filter");
    if (n_fft < 2 || n_fft % 2 != 0) throw ConfigError("mel_filterbank: n_fft must be even and >= 2");
    if (sample_rate <= 0) throw ConfigError("mel_filterbank: sample rate must be positive");
    if (!(f_min >= 0.0 && f_min < f_max && f_max <= sample_rate / 2.0)) {
        throw ConfigError("mel_filterbank: need 0 <= f_min < f_max <= sample_rate/2");
    }
    const std::size_t n_bins = n_fft / 2 + 1;
    const double lo = hz_to_mel(f_min), hi = hz_to_mel(f_max);
    const double bin_hz = static_cast<double>(sample_rate) / static_cast<double>(n_fft);

    MelFilterbank fb;
    fb.n_fft = n_fft;
    fb.sample_rate = sample_rate;
    fb.f_min = f_min;
    fb.f_max = f_max;
    fb.bins.resize(n_mels + 2);
    fb.points_hz.resize(n_mels + 2);
    for (std::size_t i = 0; i < n_mels + 2; ++i) {
        const double mel = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1);
        const auto bin = static_cast<std::size_t>(std::nearbyint(mel_to_hz(mel) / bin_hz));
        fb.bins[i] = std::min(bin, n_bins - 1);
        fb.points_hz[i] = static_cast<double>(fb.bins[i]) * bin_hz;
        if (i > 0 && fb.bins[i] <= fb.bins[i - 1]) {
            throw ConfigError("mel_filterbank: " + std::to_string(n_mels) + " filters is too many for n_fft " +
                              std::to_string(n_fft) + " (points " + std::to_string(i - 1) + " and " +
                              std::to_string(i) + " share FFT bin " + std::to_string(fb.bins[i]) + ")");
        }
    }
    fb.weights = Matrix(n_mels, n_bins, 0.0);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const auto left = fb.bins[m], center = fb.bins[m + 1], right = fb.bins[m + 2];
        for (std::size_t k = left; k <= center; ++k) {
            fb.weights(m, k) = static_cast<double>(k - left) / static_cast<double>(center - left);
        }
        for (std::size_t k = center + 1; k <= right; ++k) {
            fb.weights(m, k) = static_cast<double>(right - k) / static_cast<double>(right - center);
        }
    }
    return fb;
}

std::vector<double> hann_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
    }
    return w;
}

namespace {

struct FftwDeleter {
    void operator()(void* p) const { fftw_free(p); }
};

// Planning is not thread-safe in FFTW; execution on distinct buffers is.
fftw_plan r2c_plan(std::size_t n) {
    static std::mutex mu;
    static std::vector<std::pair<std::size_t, fftw_plan>> plans;
    std::lock_guard lock(mu);
    for (auto& [size, plan] : plans) {
        if (size == n) return plan;
    }
    std::unique_ptr<double, FftwDeleter> in(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
    std::unique_ptr<fftw_complex, FftwDeleter> out(
        static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1))));
    auto plan = fftw_plan_dft_r2c_1d(static_cast<int>(n), in.get(), out.get(), FFTW_ESTIMATE);
    plans.emplace_back(n, plan);
    return plan;
}

}  // namespace

Matrix stft_power(const Waveform& wave, std::size_t n_fft, std::size_t hop) {
    if (n_fft < 2 || hop < 1) throw ConfigError("stft_power: need n_fft >= 2 and hop >= 1");
    const auto length = wave.samples.size();
    if (length < n_fft) {
        throw DataError("stft_power: clip '" + wave.source_id + "' has " + std::to_string(length) +
                        " samples, fewer than one frame of " + std::to_string(n_fft));
    }
    const std::size_t frames = (length - n_fft) / hop + 1;
    const std::size_t n_bins = n_fft / 2 + 1;
    const auto window = hann_window(n_fft);
    auto plan = r2c_plan(n_fft);
    std::unique_ptr<double, FftwDeleter> in(static_cast<double*>(fftw_malloc(sizeof(double) * n_fft)));
    std::unique_ptr<fftw_complex, FftwDeleter> out(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n_bins)));

    Matrix power(n_bins, frames, 0.0);
    for (std::size_t t = 0; t < frames; ++t) {
        const float* src = wave.samples.data() + t * hop;
        for (std::size_t i = 0; i < n_fft; ++i) in.get()[i] = window[i] * static_cast<double>(src[i]);
        fftw_execute_dft_r2c(plan, in.get(), out.get());
        for (std::size_t k = 0; k < n_bins; ++k) {
            const double re = out.get()[k][0], im = out.get()[k][1];
            power(k, t) = re * re + im * im;
        }
    }
    return power;
}

Matrix fit_frames(const Matrix& m, std::size_t n_frames) {
    Matrix out(m.rows, n_frames);
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < n_frames; ++c) out(r, c) = m(r, std::min(c, m.cols - 1));
    return out;
}

SpectralFeature log_mel(const Waveform& wave, const MelFilterbank& fb, std::size_t n_fft, std::size_t hop,
                        std::size_t n_frames) {
    if (fb.n_fft != n_fft) throw ConfigError("log_mel: filterbank built for a different n_fft");
    const auto power = stft_power(wave, n_fft, hop);
    const auto n_mels = fb.size();
    Matrix mel(n_mels, power.cols, 0.0);
    for (std::size_t m = 0; m < n_mels; ++m) {
        const auto lo = fb.bins[m], hi = fb.bins[m + 2];
        for (std::size_t t = 0; t < power.cols; ++t) {
            double acc = 0.0;
            for (std::size_t k = lo; k <= hi; ++k) acc += fb.weights(m, k) * power(k, t);
            mel(m, t) = std::log(acc + kLogFloor);
        }
    }
    return SpectralFeature{fit_frames(mel, n_frames), FeatureKind::LogMel, wave.source_id};
}

SpectralFeature log_mel(const Waveform& wave, const DspConfig& cfg) {
    if (wave.sample_rate != cfg.sample_rate) {
        throw ConfigError("log_mel: clip '" + wave.source_id + "' has sample rate " +
                          std::to_string(wave.sample_rate) + ", expected " + std::to_string(cfg.sample_rate));
    }
    const auto fb = mel_filterbank(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max);
    return log_mel(wave, fb, cfg.n_fft, cfg.hop, cfg.n_frames);
}

}  // namespace afpa::dsp
