// Copyright 2026 The spectwin authors
// Band-limited sample-rate conversion: windowed-sinc interpolation with a
// Kaiser window, 64 taps.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <vector>

#include "spectwin/common.hpp"
#include "spectwin/wav.hpp"

namespace spectwin {

namespace resample_detail {

/// Zeroth-order modified Bessel function of the first kind (series form).
inline double bessel_i0(double x) {
    double sum = 1.0;
    double term = 1.0;
    const double half_x = x / 2.0;
    for (int k = 1; k < 64; ++k) {
        term *= (half_x / k) * (half_x / k);
        sum += term;
        if (term < 1e-18 * sum) break;
    }
    return sum;
}

inline double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    const double px = kPi * x;
    return std::sin(px) / px;
}

}  // namespace resample_detail

/// Resample mono audio. When downsampling, the sinc cutoff sits just below
/// the destination Nyquist so aliasing is suppressed by the Kaiser sidelobes.
inline std::vector<double> resample(const std::vector<double>& in, int src_rate,
                                    int dst_rate, int taps = 64, double kaiser_beta = 10.0) {
    if (src_rate <= 0 || dst_rate <= 0) throw data_error("resample: rates must be positive");
    if (in.empty()) throw data_error("resample: empty input");
    if (src_rate == dst_rate) return in;

    using namespace resample_detail;
    const double ratio = static_cast<double>(dst_rate) / src_rate;
    // Cutoff in source-rate units, 2.5% rolloff margin below the tighter Nyquist.
    const double cutoff = 0.5 * std::min(1.0, ratio) * 0.975;
    const double i0_beta = bessel_i0(kaiser_beta);
    const int half = taps / 2;

    const size_t out_len = static_cast<size_t>(std::floor(
        static_cast<double>(in.size()) * ratio));
    std::vector<double> out(out_len);

    for (size_t n = 0; n < out_len; ++n) {
        const double t = static_cast<double>(n) / ratio;  // position in source samples
        const long center = static_cast<long>(std::floor(t));
        double acc = 0.0;
        for (long k = center - half + 1; k <= center + half; ++k) {
            if (k < 0 || k >= static_cast<long>(in.size())) continue;
            const double d = t - static_cast<double>(k);
            // Kaiser window over the tap span.
            const double u = d / half;
            if (u <= -1.0 || u >= 1.0) continue;
            const double win = bessel_i0(kaiser_beta * std::sqrt(1.0 - u * u)) / i0_beta;
            acc += in[static_cast<size_t>(k)] * 2.0 * cutoff * sinc(2.0 * cutoff * d) * win;
        }
        out[n] = acc;
    }
    return out;
}

/// WAV decode (mono-mix) plus band-limited resample to target_sr.
inline Waveform load_and_resample(const std::string& path, int target_sr) {
    Waveform w = load_wav(path);
    if (w.sample_rate != target_sr) {
        w.samples = resample(w.samples, w.sample_rate, target_sr);
        w.sample_rate = target_sr;
    }
    return w;
}

inline Waveform load_and_resample(const std::vector<uint8_t>& bytes, int target_sr) {
    Waveform w = decode_wav(bytes);
    if (w.sample_rate != target_sr) {
        w.samples = resample(w.samples, w.sample_rate, target_sr);
        w.sample_rate = target_sr;
    }
    return w;
}

}  // namespace spectwin
