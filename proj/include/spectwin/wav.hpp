// Copyright 2026 The spectwin authors
// Minimal 16-bit PCM WAV reader/writer. Mono or stereo in, mono out.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spectwin/common.hpp"

namespace spectwin {

/// Mono waveform: samples in [-1, 1] plus the rate they were captured at.
struct Waveform {
    std::vector<double> samples;
    int sample_rate = 0;

    double duration_s() const {
        return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
    }
};

namespace wav_detail {

inline uint32_t read_u32(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline uint16_t read_u16(const uint8_t* p) {
    return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

inline void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
}

}  // namespace wav_detail

/// Decode a 16-bit PCM WAV byte buffer. Stereo is averaged to mono.
inline Waveform decode_wav(const std::vector<uint8_t>& bytes) {
    using namespace wav_detail;
    if (bytes.size() < 44 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
        std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw data_error("wav: not a RIFF/WAVE container");
    }

    int sample_rate = 0;
    int channels = 0;
    int bits = 0;
    const uint8_t* data_ptr = nullptr;
    size_t data_len = 0;

    size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
        const uint32_t chunk_len = read_u32(bytes.data() + pos + 4);
        const size_t body = pos + 8;
        if (body + chunk_len > bytes.size()) throw data_error("wav: truncated chunk");
        if (std::memcmp(id, "fmt ", 4) == 0) {
            if (chunk_len < 16) throw data_error("wav: fmt chunk too small");
            const uint16_t format = read_u16(bytes.data() + body);
            if (format != 1) throw data_error("wav: only PCM (format 1) supported");
            channels = read_u16(bytes.data() + body + 2);
            sample_rate = static_cast<int>(read_u32(bytes.data() + body + 4));
            bits = read_u16(bytes.data() + body + 14);
        } else if (std::memcmp(id, "data", 4) == 0) {
            data_ptr = bytes.data() + body;
            data_len = chunk_len;
        }
        pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
    }

    if (sample_rate <= 0 || channels <= 0) throw data_error("wav: missing fmt chunk");
    if (bits != 16) throw data_error("wav: only 16-bit PCM supported");
    if (channels > 2) throw data_error("wav: more than 2 channels unsupported");
    if (data_ptr == nullptr) throw data_error("wav: missing data chunk");

    const size_t frame_bytes = static_cast<size_t>(channels) * 2;
    const size_t n_frames = data_len / frame_bytes;
    if (n_frames == 0) throw data_error("wav: zero-length audio");

    Waveform w;
    w.sample_rate = sample_rate;
    w.samples.resize(n_frames);
    for (size_t i = 0; i < n_frames; ++i) {
        double acc = 0.0;
        for (int ch = 0; ch < channels; ++ch) {
            const uint8_t* sp = data_ptr + i * frame_bytes + static_cast<size_t>(ch) * 2;
            const int16_t s = static_cast<int16_t>(sp[0] | (sp[1] << 8));
            acc += static_cast<double>(s) / 32768.0;
        }
        w.samples[i] = acc / channels;
    }
    return w;
}

inline Waveform load_wav(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("wav: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return decode_wav(bytes);
}

/// Encode mono samples as 16-bit PCM with clamping.
inline std::vector<uint8_t> encode_wav(const std::vector<double>& samples, int sample_rate) {
    using namespace wav_detail;
    std::vector<uint8_t> out;
    const uint32_t data_len = static_cast<uint32_t>(samples.size() * 2);
    out.reserve(44 + data_len);
    out.insert(out.end(), {'R', 'I', 'F', 'F'});
    put_u32(out, 36 + data_len);
    out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
    put_u32(out, 16);
    put_u16(out, 1);  // PCM
    put_u16(out, 1);  // mono
    put_u32(out, static_cast<uint32_t>(sample_rate));
    put_u32(out, static_cast<uint32_t>(sample_rate * 2));
    put_u16(out, 2);
    put_u16(out, 16);
    out.insert(out.end(), {'d', 'a', 't', 'a'});
    put_u32(out, data_len);
    for (double v : samples) {
        double c = v;
        if (c > 1.0) c = 1.0;
        if (c < -1.0) c = -1.0;
        const int16_t s = static_cast<int16_t>(std::lround(c * 32767.0));
        put_u16(out, static_cast<uint16_t>(s));
    }
    return out;
}

inline void save_wav(const std::string& path, const std::vector<double>& samples,
                     int sample_rate) {
    const auto bytes = encode_wav(samples, sample_rate);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("wav: cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("wav: short write to " + path);
}

}  // namespace spectwin
