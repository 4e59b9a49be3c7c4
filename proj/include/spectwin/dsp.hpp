// Copyright 2026 The spectwin authors
// Log-mel spectrogram extraction: Hanning-windowed STFT, triangular mel
// filterbank, log compression, dataset normalisation, time resize, and the
// binary/CSV spectrogram containers.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spectwin/common.hpp"
#include "spectwin/fft.hpp"
#include "spectwin/matrix.hpp"
#include "spectwin/wav.hpp"

namespace spectwin {

/// Feature configuration. Defaults give 128-bin fbank features from a 25 ms
/// Hanning window hopping every 10 ms at 32 kHz, resized to 592 frames.
struct DspConfig {
    int sample_rate_hz = 32000;
    double window_ms = 25.0;
    double hop_ms = 10.0;
    int n_mels = 128;
    int fft_size = 1024;
    double log_floor = 1e-10;
    int target_frames = 592;

    int window_samples() const {
        return static_cast<int>(std::lround(window_ms * sample_rate_hz / 1000.0));
    }
    int hop_samples() const {
        return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0));
    }

    void validate() const {
        if (sample_rate_hz <= 0) throw config_error("dsp: sample_rate_hz must be positive");
        if (n_mels < 1) throw config_error("dsp: n_mels must be >= 1");
        if (log_floor <= 0.0) throw config_error("dsp: log_floor must be positive");
        if (!is_power_of_two(fft_size)) throw config_error("dsp: fft_size must be a power of two");
        if (fft_size < window_samples())
            throw config_error("dsp: fft_size smaller than the analysis window");
        if (target_frames < 1) throw config_error("dsp: target_frames must be >= 1");
        if (hop_samples() < 1 || window_samples() < 1)
            throw config_error("dsp: window/hop too small for the sample rate");
    }
};

/// T x F matrix of log-mel energies.
template <typename S>
struct Spectrogram {
    Matrix<S> values;  // T rows (time), F cols (mel bins)
    double frame_hop_ms = 10.0;

    int frames() const { return values.rows(); }
    int mel_bins() const { return values.cols(); }
};

using SpectrogramF = Spectrogram<float>;
using SpectrogramD = Spectrogram<double>;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filterbank, rows n_mels x (fft_size/2 + 1), HTK-style
/// spacing over [0, sr/2]. Every filter must own at least one FFT bin.
inline Matrix<double> mel_filterbank_matrix(const DspConfig& cfg) {
    cfg.validate();
    const int n_bins = cfg.fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(cfg.sample_rate_hz / 2.0);

    std::vector<double> edges(static_cast<size_t>(cfg.n_mels) + 2);
    for (int i = 0; i < cfg.n_mels + 2; ++i)
        edges[static_cast<size_t>(i)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (cfg.n_mels + 1));

    Matrix<double> fb(cfg.n_mels, n_bins);
    const double bin_hz = static_cast<double>(cfg.sample_rate_hz) / cfg.fft_size;
    for (int m = 0; m < cfg.n_mels; ++m) {
        const double lo = edges[static_cast<size_t>(m)];
        const double mid = edges[static_cast<size_t>(m) + 1];
        const double hi = edges[static_cast<size_t>(m) + 2];
        int nonzero = 0;
        for (int k = 0; k < n_bins; ++k) {
            const double f = k * bin_hz;
            double w = 0.0;
            if (f > lo && f < mid) w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi) w = (hi - f) / (hi - mid);
            if (w > 0.0) ++nonzero;
            fb(m, k) = w;
        }
        if (nonzero == 0)
            throw config_error("dsp: n_mels too large for the fft resolution (empty filter)");
    }
    return fb;
}

/// Symmetric Hanning window of length n.
inline std::vector<double> hanning_window(int n) {
    std::vector<double> w(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        w[static_cast<size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / (n - 1));
    return w;
}

/// STFT power -> mel projection -> ln(e + floor). Frame t covers samples
/// [t*hop, t*hop + window); T = floor((len - window)/hop) + 1.
template <typename S = float>
Spectrogram<S> compute_log_mel(const Waveform& w, const DspConfig& cfg) {
    cfg.validate();
    const int win = cfg.window_samples();
    const int hop = cfg.hop_samples();
    const long len = static_cast<long>(w.samples.size());
    if (len < win) throw data_error("dsp: waveform shorter than one analysis window");

    const int n_frames = static_cast<int>((len - win) / hop) + 1;
    const Matrix<double> fb = mel_filterbank_matrix(cfg);
    const std::vector<double> window = hanning_window(win);

    // triangular filters have contiguous support; skip the zero tails
    std::vector<std::pair<int, int>> support(static_cast<size_t>(cfg.n_mels));
    for (int m = 0; m < cfg.n_mels; ++m) {
        int first = 0, last = fb.cols();
        while (first < fb.cols() && fb(m, first) == 0.0) ++first;
        while (last > first && fb(m, last - 1) == 0.0) --last;
        support[static_cast<size_t>(m)] = {first, last};
    }

    Spectrogram<S> out;
    out.frame_hop_ms = cfg.hop_ms;
    out.values.resize(n_frames, cfg.n_mels);

    std::vector<double> frame(static_cast<size_t>(win));
    for (int t = 0; t < n_frames; ++t) {
        const double* src = w.samples.data() + static_cast<size_t>(t) * hop;
        for (int i = 0; i < win; ++i) frame[static_cast<size_t>(i)] = src[i] * window[static_cast<size_t>(i)];
        const std::vector<double> pow = power_spectrum(frame.data(), win, cfg.fft_size);
        for (int m = 0; m < cfg.n_mels; ++m) {
            const double* fbr = fb.row(m);
            const auto [first, last] = support[static_cast<size_t>(m)];
            double e = 0.0;
            for (int k = first; k < last; ++k) e += fbr[k] * pow[static_cast<size_t>(k)];
            out.values(t, m) = static_cast<S>(std::log(e + cfg.log_floor));
        }
    }
    return out;
}

/// Linear interpolation along the time axis to new_frames rows; knots agree
/// exactly when positions land on source frames.
template <typename S>
Spectrogram<S> resize_time(const Spectrogram<S>& s, int new_frames) {
    if (new_frames < 1) throw config_error("dsp: resize target must be >= 1");
    const int t_in = s.frames();
    const int f = s.mel_bins();
    Spectrogram<S> out;
    out.frame_hop_ms = s.frame_hop_ms * (t_in > 1 && new_frames > 1
                                             ? static_cast<double>(t_in - 1) / (new_frames - 1)
                                             : 1.0);
    out.values.resize(new_frames, f);
    for (int t = 0; t < new_frames; ++t) {
        const double pos = (new_frames > 1 && t_in > 1)
                               ? static_cast<double>(t) * (t_in - 1) / (new_frames - 1)
                               : 0.0;
        const int i0 = static_cast<int>(std::floor(pos));
        const int i1 = std::min(i0 + 1, t_in - 1);
        const double a = pos - i0;
        const S* r0 = s.values.row(i0);
        const S* r1 = s.values.row(i1);
        S* dst = out.values.row(t);
        for (int c = 0; c < f; ++c)
            dst[c] = static_cast<S>((1.0 - a) * r0[c] + a * r1[c]);
    }
    return out;
}

/// (s - mean) / (divisor * std); divisor is 2 by convention, 1 via config.
template <typename S>
Spectrogram<S> normalize(const Spectrogram<S>& s, double mean, double stddev,
                         double divisor = 2.0) {
    if (!(stddev > 0.0)) throw config_error("dsp: normalization std must be positive");
    if (!std::isfinite(mean) || !std::isfinite(stddev))
        throw config_error("dsp: non-finite normalization statistics");
    Spectrogram<S> out = s;
    const double scale = 1.0 / (divisor * stddev);
    for (auto& v : out.values.raw()) v = static_cast<S>((static_cast<double>(v) - mean) * scale);
    return out;
}

/// Dataset-level statistics over a set of spectrograms (single pass).
template <typename S>
void spectrogram_stats(const std::vector<Spectrogram<S>>& specs, double& mean, double& stddev) {
    double sum = 0.0, sumsq = 0.0;
    long count = 0;
    for (const auto& s : specs) {
        for (const auto v : s.values.raw()) {
            sum += static_cast<double>(v);
            sumsq += static_cast<double>(v) * static_cast<double>(v);
            ++count;
        }
    }
    if (count == 0) throw data_error("dsp: no spectrogram data for statistics");
    mean = sum / count;
    const double var = std::max(0.0, sumsq / count - mean * mean);
    stddev = std::sqrt(var);
}

// ---------------------------------------------------------------------------
// Spectrogram container: magic, version, T, F, hop_ms, row-major f32 payload.
// ---------------------------------------------------------------------------

inline constexpr char kSpectrogramMagic[8] = {'S', 'P', 'T', 'W', 'S', 'P', 'E', 'C'};
inline constexpr uint32_t kSpectrogramVersion = 1;

template <typename S>
void save_spectrogram(const std::string& path, const Spectrogram<S>& s) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("spectrogram: cannot write " + path);
    out.write(kSpectrogramMagic, 8);
    const uint32_t ver = kSpectrogramVersion;
    const uint32_t t = static_cast<uint32_t>(s.frames());
    const uint32_t f = static_cast<uint32_t>(s.mel_bins());
    const float hop = static_cast<float>(s.frame_hop_ms);
    out.write(reinterpret_cast<const char*>(&ver), 4);
    out.write(reinterpret_cast<const char*>(&t), 4);
    out.write(reinterpret_cast<const char*>(&f), 4);
    out.write(reinterpret_cast<const char*>(&hop), 4);
    for (const auto v : s.values.raw()) {
        const float x = static_cast<float>(v);
        out.write(reinterpret_cast<const char*>(&x), 4);
    }
    if (!out) throw data_error("spectrogram: short write to " + path);
}

template <typename S = float>
Spectrogram<S> load_spectrogram(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("spectrogram: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kSpectrogramMagic, 8) != 0)
        throw data_error("spectrogram: bad magic in " + path);
    uint32_t ver = 0, t = 0, f = 0;
    float hop = 0.f;
    in.read(reinterpret_cast<char*>(&ver), 4);
    in.read(reinterpret_cast<char*>(&t), 4);
    in.read(reinterpret_cast<char*>(&f), 4);
    in.read(reinterpret_cast<char*>(&hop), 4);
    if (!in || ver != kSpectrogramVersion)
        throw data_error("spectrogram: unsupported version in " + path);
    Spectrogram<S> s;
    s.frame_hop_ms = hop;
    s.values.resize(static_cast<int>(t), static_cast<int>(f));
    for (auto& v : s.values.raw()) {
        float x = 0.f;
        in.read(reinterpret_cast<char*>(&x), 4);
        v = static_cast<S>(x);
    }
    if (!in) throw data_error("spectrogram: truncated payload in " + path);
    return s;
}

/// Debug CSV: one row per frame.
template <typename S>
void save_spectrogram_csv(const std::string& path, const Spectrogram<S>& s) {
    std::ofstream out(path);
    if (!out) throw data_error("spectrogram: cannot write " + path);
    for (int t = 0; t < s.frames(); ++t) {
        std::ostringstream line;
        for (int c = 0; c < s.mel_bins(); ++c) {
            if (c) line << ',';
            line << static_cast<double>(s.values(t, c));
        }
        out << line.str() << '\n';
    }
}

}  // namespace spectwin
