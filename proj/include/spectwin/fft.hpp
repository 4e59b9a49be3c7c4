// Copyright 2026 The spectwin authors
// Iterative radix-2 FFT, double precision, power-of-two sizes.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "spectwin/common.hpp"

namespace spectwin {

inline bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

/// In-place forward FFT over a complex buffer whose length is a power of two.
inline void fft_inplace(std::vector<std::complex<double>>& a) {
    const int n = static_cast<int>(a.size());
    if (!is_power_of_two(n)) throw numeric_error("fft: size must be a power of two");

    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * kPi / len;
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int j = 0; j < len / 2; ++j) {
                const std::complex<double> u = a[i + j];
                const std::complex<double> v = a[i + j + len / 2] * w;
                a[i + j] = u + v;
                a[i + j + len / 2] = u - v;
                w *= wlen;
            }
        }
    }
}

/// Power spectrum |X_k|^2 of a real frame zero-padded to fft_size,
/// bins 0 .. fft_size/2 inclusive.
inline std::vector<double> power_spectrum(const double* frame, int frame_len, int fft_size) {
    std::vector<std::complex<double>> buf(static_cast<size_t>(fft_size), {0.0, 0.0});
    for (int i = 0; i < frame_len; ++i) buf[static_cast<size_t>(i)] = {frame[i], 0.0};
    fft_inplace(buf);
    std::vector<double> pow(static_cast<size_t>(fft_size / 2 + 1));
    for (int k = 0; k <= fft_size / 2; ++k) pow[static_cast<size_t>(k)] = std::norm(buf[static_cast<size_t>(k)]);
    return pow;
}

}  // namespace spectwin
