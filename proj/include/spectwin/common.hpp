// Copyright 2026 The spectwin authors
// Error types, version tag and small shared utilities.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace spectwin {

inline constexpr const char* kVersionTag = "spectwin-0.1.0";

// Exit-code contract of the CLI: 0 ok, 2 config, 3 data, 4 numeric fault.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename S>
inline bool is_finite(S v) {
    return std::isfinite(static_cast<double>(v));
}

inline constexpr double kPi = 3.14159265358979323846;

// Transcendentals in the working precision: the float overloads keep the
// training loop off the double-precision libm path.
inline float fast_exp(float x) { return ::expf(x); }
inline double fast_exp(double x) { return std::exp(x); }
inline float fast_log(float x) { return ::logf(x); }
inline double fast_log(double x) { return std::log(x); }
inline float fast_erf(float x) { return ::erff(x); }
inline double fast_erf(double x) { return std::erf(x); }

}  // namespace spectwin
