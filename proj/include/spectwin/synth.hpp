// Copyright 2026 The spectwin authors
// Synthetic labelled audio: sines, linear chirps, band-limited noise bursts
// and AM tones, written as WAV files with a CSV manifest. Fully seeded.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spectwin/common.hpp"
#include "spectwin/rng.hpp"
#include "spectwin/wav.hpp"

namespace spectwin {

struct SyntheticSpec {
    int num_classes = 4;  // sine, chirp, noise_burst, am_tone (in this order)
    int clips_per_class = 500;
    double duration_s = 6.0;
    int sample_rate = 32000;
    uint64_t seed = 1;
    double test_fraction = 0.2;

    void validate() const {
        if (num_classes < 2 || num_classes > 4)
            throw config_error("synth: between 2 and 4 classes supported");
        if (clips_per_class < 0) throw config_error("synth: clips_per_class must be >= 0");
        if (duration_s < 1.0) throw config_error("synth: duration must be >= 1 s");
        if (sample_rate <= 0) throw config_error("synth: sample rate must be positive");
        if (test_fraction < 0.0 || test_fraction >= 1.0)
            throw config_error("synth: test fraction in [0, 1)");
    }
};

inline const char* synth_class_name(int cls) {
    switch (cls) {
        case 0: return "sine";
        case 1: return "chirp";
        case 2: return "noise_burst";
        case 3: return "am_tone";
        default: return "unknown";
    }
}

struct ManifestEntry {
    std::string wav_path;
    std::vector<int> labels;
    std::string split;
};

/// Generate one clip of the given class. Parameters recorded via *info.
inline std::vector<double> synth_clip(int cls, const SyntheticSpec& spec, Rng& rng,
                                      std::string* info = nullptr) {
    const size_t n = static_cast<size_t>(spec.duration_s * spec.sample_rate);
    std::vector<double> x(n, 0.0);
    const double sr = spec.sample_rate;
    const double amp = rng.uniform(0.25, 0.8);
    std::ostringstream meta;

    // Every class draws from the same frequency band so that spectral
    // location alone cannot separate them; what differs is structure
    // (steady tone vs sweep vs wideband burst vs modulation).
    switch (cls) {
        case 0: {  // pure sine
            const double f = rng.uniform(200.0, 6000.0);
            for (size_t i = 0; i < n; ++i)
                x[i] = amp * std::sin(2.0 * kPi * f * static_cast<double>(i) / sr);
            meta << "sine f=" << f;
            break;
        }
        case 1: {  // linear chirp, up or down
            const double f0 = rng.uniform(200.0, 5000.0);
            const double delta = rng.uniform(1000.0, 4000.0);
            const bool up = rng.bernoulli(0.5);
            const double f1 = std::min(7500.0, std::max(150.0, up ? f0 + delta : f0 - delta));
            const double t_end = spec.duration_s;
            for (size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / sr;
                const double phase = 2.0 * kPi * (f0 * t + 0.5 * (f1 - f0) / t_end * t * t);
                x[i] = amp * std::sin(phase);
            }
            meta << "chirp f0=" << f0 << " f1=" << f1;
            break;
        }
        case 2: {  // band-limited noise burst with random onset
            const double center = rng.uniform(400.0, 5800.0);
            const double width = rng.uniform(300.0, 2500.0);
            const double f_lo = std::max(150.0, center - width / 2.0);
            const double f_hi = center + width / 2.0;
            const double onset = rng.uniform(0.0, 0.5) * spec.duration_s;
            const double length = rng.uniform(0.3, 0.9) * (spec.duration_s - onset);
            // sum of random-phase sinusoids inside the band
            const int partials = 24;
            std::vector<double> freqs(partials), phases(partials);
            for (int p = 0; p < partials; ++p) {
                freqs[static_cast<size_t>(p)] = rng.uniform(f_lo, f_hi);
                phases[static_cast<size_t>(p)] = rng.uniform(0.0, 2.0 * kPi);
            }
            const size_t i0 = static_cast<size_t>(onset * sr);
            const size_t i1 = std::min(n, i0 + static_cast<size_t>(length * sr));
            double peak = 0.0;
            for (size_t i = i0; i < i1; ++i) {
                const double t = static_cast<double>(i) / sr;
                double v = 0.0;
                for (int p = 0; p < partials; ++p)
                    v += std::sin(2.0 * kPi * freqs[static_cast<size_t>(p)] * t +
                                  phases[static_cast<size_t>(p)]);
                x[i] = v;
                peak = std::max(peak, std::abs(v));
            }
            if (peak > 0.0)
                for (size_t i = i0; i < i1; ++i) x[i] *= amp / peak;
            meta << "noise_burst band=[" << f_lo << "," << f_hi << "] onset=" << onset;
            break;
        }
        case 3: {  // amplitude-modulated tone
            const double carrier = rng.uniform(200.0, 6000.0);
            const double mod_rate = rng.uniform(2.0, 12.0);
            const double depth = rng.uniform(0.5, 1.0);
            for (size_t i = 0; i < n; ++i) {
                const double t = static_cast<double>(i) / sr;
                const double env = 1.0 - depth * 0.5 * (1.0 + std::cos(2.0 * kPi * mod_rate * t));
                x[i] = amp * env * std::sin(2.0 * kPi * carrier * t);
            }
            meta << "am_tone carrier=" << carrier << " rate=" << mod_rate;
            break;
        }
        default:
            throw config_error("synth: unknown class index");
    }
    if (info) *info = meta.str();
    return x;
}

/// Write WAVs plus manifest.csv under out_dir; returns the entries. Rows are
/// (wav_path, label_list, split) with ';'-separated labels.
inline std::vector<ManifestEntry> generate_synthetic_dataset(const SyntheticSpec& spec,
                                                             const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw data_error("synth: cannot create " + out_dir);

    std::vector<ManifestEntry> entries;
    for (int cls = 0; cls < spec.num_classes; ++cls) {
        for (int i = 0; i < spec.clips_per_class; ++i) {
            Rng rng = Rng::derive(spec.seed, static_cast<uint64_t>(cls),
                                  static_cast<uint64_t>(i));
            const auto samples = synth_clip(cls, spec, rng);
            std::ostringstream name;
            name << synth_class_name(cls) << "_" << i << ".wav";
            const std::string path = (fs::path(out_dir) / name.str()).string();
            save_wav(path, samples, spec.sample_rate);

            ManifestEntry e;
            e.wav_path = path;
            e.labels = {cls};
            // deterministic split: last test_fraction of each class is test
            e.split = (i >= static_cast<int>((1.0 - spec.test_fraction) * spec.clips_per_class))
                          ? "test"
                          : "train";
            entries.push_back(std::move(e));
        }
    }

    std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
    if (!manifest) throw data_error("synth: cannot write manifest in " + out_dir);
    manifest << "wav_path,labels,split\n";
    for (const auto& e : entries) {
        manifest << e.wav_path << ',';
        for (size_t i = 0; i < e.labels.size(); ++i) {
            if (i) manifest << ';';
            manifest << e.labels[i];
        }
        manifest << ',' << e.split << '\n';
    }
    if (!manifest) throw data_error("synth: short manifest write");
    return entries;
}

/// Parse a manifest CSV of (wav_path, label_list, split).
inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("manifest: cannot open " + path);
    std::vector<ManifestEntry> entries;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first && line.rfind("wav_path", 0) == 0) {
            first = false;
            continue;  // header
        }
        first = false;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw data_error("manifest: malformed row '" + line + "'");
        ManifestEntry e;
        e.wav_path = line.substr(0, c1);
        const std::string labels = line.substr(c1 + 1, c2 - c1 - 1);
        std::istringstream ls(labels);
        std::string tok;
        while (std::getline(ls, tok, ';'))
            if (!tok.empty()) e.labels.push_back(std::stoi(tok));
        e.split = line.substr(c2 + 1);
        while (!e.split.empty() && (e.split.back() == '\r' || e.split.back() == ' '))
            e.split.pop_back();
        if (e.split != "train" && e.split != "test" && e.split != "val")
            throw data_error("manifest: unknown split '" + e.split + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace spectwin
