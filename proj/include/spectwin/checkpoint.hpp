// Copyright 2026 The spectwin authors
// Checkpoint container: magic, version, text header (flat key = value
// lines), then named tensors as name / dtype / shape / row-major payload.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spectwin/common.hpp"
#include "spectwin/matrix.hpp"

namespace spectwin {

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'T', 'W', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

enum class TensorDtype : uint8_t { f32 = 0, f64 = 1 };

template <typename S>
struct NamedTensors {
    std::string header;  // flat key = value text, free-form
    std::vector<std::pair<std::string, Matrix<S>>> tensors;

    const Matrix<S>* find(const std::string& name) const {
        for (const auto& [n, m] : tensors)
            if (n == name) return &m;
        return nullptr;
    }
};

namespace ckpt_detail {

inline void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u16(std::ostream& out, uint16_t v) {
    out.write(reinterpret_cast<const char*>(&v), 2);
}
inline uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
inline uint16_t read_u16(std::istream& in) {
    uint16_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 2);
    return v;
}

}  // namespace ckpt_detail

template <typename S>
void save_checkpoint(const std::string& path, const NamedTensors<S>& ckpt) {
    using namespace ckpt_detail;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("checkpoint: cannot write " + path);
    out.write(kCheckpointMagic, 8);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<uint32_t>(ckpt.header.size()));
    out.write(ckpt.header.data(), static_cast<std::streamsize>(ckpt.header.size()));
    write_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
    const TensorDtype dtype = sizeof(S) == 4 ? TensorDtype::f32 : TensorDtype::f64;
    for (const auto& [name, m] : ckpt.tensors) {
        write_u16(out, static_cast<uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const uint8_t dt = static_cast<uint8_t>(dtype);
        out.write(reinterpret_cast<const char*>(&dt), 1);
        write_u32(out, static_cast<uint32_t>(m.rows()));
        write_u32(out, static_cast<uint32_t>(m.cols()));
        out.write(reinterpret_cast<const char*>(m.data()),
                  static_cast<std::streamsize>(m.size() * sizeof(S)));
    }
    if (!out) throw data_error("checkpoint: short write to " + path);
}

template <typename S>
NamedTensors<S> load_checkpoint(const std::string& path) {
    using namespace ckpt_detail;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw data_error("checkpoint: bad magic in " + path);
    const uint32_t version = read_u32(in);
    if (version != kCheckpointVersion)
        throw data_error("checkpoint: unsupported version in " + path);

    NamedTensors<S> ckpt;
    const uint32_t header_len = read_u32(in);
    ckpt.header.resize(header_len);
    in.read(ckpt.header.data(), header_len);

    const uint32_t count = read_u32(in);
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = read_u16(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint8_t dt = 0;
        in.read(reinterpret_cast<char*>(&dt), 1);
        const uint32_t rows = read_u32(in);
        const uint32_t cols = read_u32(in);
        if (!in) throw data_error("checkpoint: truncated tensor table in " + path);
        Matrix<S> m(static_cast<int>(rows), static_cast<int>(cols));
        const size_t n = m.size();
        if (static_cast<TensorDtype>(dt) == TensorDtype::f32) {
            std::vector<float> buf(n);
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(n * sizeof(float)));
            for (size_t j = 0; j < n; ++j) m.data()[j] = static_cast<S>(buf[j]);
        } else if (static_cast<TensorDtype>(dt) == TensorDtype::f64) {
            std::vector<double> buf(n);
            in.read(reinterpret_cast<char*>(buf.data()),
                    static_cast<std::streamsize>(n * sizeof(double)));
            for (size_t j = 0; j < n; ++j) m.data()[j] = static_cast<S>(buf[j]);
        } else {
            throw data_error("checkpoint: unknown dtype in " + path);
        }
        if (!in) throw data_error("checkpoint: truncated payload in " + path);
        ckpt.tensors.emplace_back(std::move(name), std::move(m));
    }
    return ckpt;
}

/// Parse the flat "key = value" header into a map (mirrors the config file
/// syntax; '#' starts a comment).
inline std::map<std::string, std::string> parse_header(const std::string& header) {
    std::map<std::string, std::string> kv;
    std::istringstream in(header);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (!key.empty()) kv[key] = val;
    }
    return kv;
}

}  // namespace spectwin
