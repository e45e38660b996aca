#pragma once

// Waveform I/O and the log-Mel front end.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "afpa/matrix.hpp"

namespace afpa::dsp {

// Mono clip. Samples are nominally in [-1, 1].
struct Waveform {
    std::vector<float> samples;
    int sample_rate = 16000;
    std::string source_id;
};

enum class WavEncoding { Pcm16, Float32 };

// Reads a mono RIFF/WAVE file holding 16-bit PCM (scaled by 1/32768) or 32-bit float.
Waveform load_wav(const std::filesystem::path& path);
// 16-bit output rounds x*32768 to nearest and clamps to [-32768, 32767].
void write_wav(const std::filesystem::path& path, const Waveform& wave, WavEncoding encoding = WavEncoding::Pcm16);

struct DspConfig {
    int sample_rate = 16000;
    std::size_t n_fft = 1024;
    std::size_t hop = 512;
    std::size_t n_mels = 128;
    std::size_t n_frames = 312;
    double f_min = 0.0;
    double f_max = 8000.0;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
    // n_mels x (n_fft/2 + 1), triangular rows with peak 1.
    Matrix weights;
    // n_mels + 2 edge/center frequencies in Hz after snapping to FFT bins;
    // filter m rises from points[m], peaks at points[m+1], falls to points[m+2].
    std::vector<double> points_hz;
    std::vector<std::size_t> bins;
    std::size_t n_fft = 0;
    int sample_rate = 0;
    double f_min = 0.0;
    double f_max = 0.0;

    std::size_t size() const { return weights.rows; }
    double center_hz(std::size_t m) const { return points_hz.at(m + 1); }
};

// HTK-style filterbank: centers uniform on the mel scale, snapped to the
// nearest FFT bin. Two points landing on one bin is a ConfigError.
MelFilterbank mel_filterbank(std::size_t n_mels, std::size_t n_fft, int sample_rate, double f_min, double f_max);

// Power |DFT|^2 of periodic-Hann-windowed frames, no centering.
// Result is (n_fft/2 + 1) x floor((L - n_fft)/hop + 1).
Matrix stft_power(const Waveform& wave, std::size_t n_fft, std::size_t hop);

std::vector<double> hann_window(std::size_t n);

enum class FeatureKind { LogMel, Temporal, Enhanced };

struct SpectralFeature {
    Matrix data;
    FeatureKind kind = FeatureKind::LogMel;
    std::string clip_id;
};

inline constexpr double kLogFloor = 1e-10;

// ln(fb * power + 1e-10), trailing frames cropped or the last frame repeated
// to reach exactly `n_frames` columns.
SpectralFeature log_mel(const Waveform& wave, const MelFilterbank& fb, std::size_t n_fft, std::size_t hop,
                        std::size_t n_frames);
SpectralFeature log_mel(const Waveform& wave, const DspConfig& cfg);

// Crops trailing columns or repeats the last one.
Matrix fit_frames(const Matrix& m, std::size_t n_frames);

}  // namespace afpa::dsp
