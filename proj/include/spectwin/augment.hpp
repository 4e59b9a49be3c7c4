// Copyright 2026 The spectwin authors
// View generation (random time-crop + resize) and block corruption: pixel
// masks as unions of random rectangles, zero or alien-fill, token masks.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spectwin/common.hpp"
#include "spectwin/dsp.hpp"
#include "spectwin/matrix.hpp"
#include "spectwin/rng.hpp"

namespace spectwin {

template <typename S>
struct ViewPair {
    Spectrogram<S> view_a;
    Spectrogram<S> view_b;
    std::string source_id;
};

enum class CorruptionMode : uint8_t { zero = 0, alien = 1 };

inline const char* to_string(CorruptionMode m) {
    return m == CorruptionMode::zero ? "zero" : "alien";
}

/// Pixel mask M (1 = manipulated), the token mask it induces, and how the
/// mask was drawn.
struct CorruptionRecord {
    Matrix<uint8_t> pixel_mask;       // T x F
    std::vector<uint8_t> token_mask;  // length n
    CorruptionMode mode = CorruptionMode::zero;
    double requested_ratio = 0.0;
    double realized_ratio = 0.0;
};

struct MaskConfig {
    double ratio_zero = 0.7;        // per-mode coverage when zero-filling
    double ratio_alien = 0.3;       // per-mode coverage when alien-filling
    double mode_prob_zero = 0.5;    // P(mode == zero)
    int block_min = 8;              // rectangle side range in pixels
    int block_max = 48;
    bool align_to_patches = false;  // snap rectangle corners to the patch grid
    int patch_size = 16;
    double tolerance = 0.02;        // |realized - requested| bound
};

/// Two independent random time-crops, each uniform in [0.6, 1.0] of the
/// source length, resized to target_frames. Frequency axis untouched.
template <typename S>
ViewPair<S> make_views(const Spectrogram<S>& s, int target_frames, Rng& rng,
                       const std::string& source_id = {}) {
    const int t = s.frames();
    if (t < static_cast<int>(std::ceil(0.6 * target_frames)))
        throw data_error("augment: spectrogram too short for view cropping");

    auto crop_one = [&]() {
        const double frac = rng.uniform(0.6, 1.0);
        int len = std::max(2, static_cast<int>(std::lround(frac * t)));
        len = std::min(len, t);
        const int max_start = t - len;
        const int start = max_start > 0 ? static_cast<int>(rng.uniform_int(
                                              static_cast<uint64_t>(max_start) + 1))
                                        : 0;
        Spectrogram<S> crop;
        crop.frame_hop_ms = s.frame_hop_ms;
        crop.values.resize(len, s.mel_bins());
        for (int r = 0; r < len; ++r)
            std::copy(s.values.row(start + r), s.values.row(start + r) + s.mel_bins(),
                      crop.values.row(r));
        return resize_time(crop, target_frames);
    };

    ViewPair<S> vp;
    vp.view_a = crop_one();
    vp.view_b = crop_one();
    vp.source_id = source_id;
    return vp;
}

namespace mask_detail {

struct Rect {
    int r0, c0, r1, c1;  // half-open [r0, r1) x [c0, c1)
};

inline long count_new_pixels(const Matrix<uint8_t>& mask, const Rect& rc) {
    long fresh = 0;
    for (int r = rc.r0; r < rc.r1; ++r) {
        const uint8_t* row = mask.row(r);
        for (int c = rc.c0; c < rc.c1; ++c) fresh += (row[c] == 0);
    }
    return fresh;
}

inline void paint(Matrix<uint8_t>& mask, const Rect& rc) {
    for (int r = rc.r0; r < rc.r1; ++r) {
        uint8_t* row = mask.row(r);
        for (int c = rc.c0; c < rc.c1; ++c) row[c] = 1;
    }
}

}  // namespace mask_detail

/// Union of random axis-aligned rectangles covering `ratio` of the grid,
/// within +/- tolerance. No time/frequency prior: positions are uniform over
/// the whole plane. Optionally snapped to the patch grid. At least one
/// rectangle is always placed.
inline Matrix<uint8_t> sample_block_mask(int t, int f, double ratio, const MaskConfig& cfg,
                                         Rng& rng, std::vector<mask_detail::Rect>* rects_out = nullptr) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw config_error("augment: corruption ratio must lie in (0, 1)");
    if (t < 1 || f < 1) throw config_error("augment: empty mask shape");

    using mask_detail::Rect;
    Matrix<uint8_t> mask(t, f, 0);
    const long total = static_cast<long>(t) * f;
    const long target_px = static_cast<long>(std::lround(ratio * total));
    const long band = static_cast<long>(std::floor(cfg.tolerance * total));
    long covered = 0;

    const int p = std::max(1, cfg.patch_size);
    auto snap_down = [&](int v) { return (v / p) * p; };
    auto snap_up = [&](int v) { return ((v + p - 1) / p) * p; };

    int placed = 0;
    int stalled = 0;
    // Keep adding blocks until coverage enters [target - band, target + band].
    while (placed == 0 || covered < target_px - band) {
        Rect rc;
        const int side_span = cfg.block_max - cfg.block_min + 1;
        int h = cfg.block_min + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(side_span)));
        int w = cfg.block_min + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(side_span)));
        h = std::min(h, t);
        w = std::min(w, f);
        int r0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(t - h) + 1));
        int c0 = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(f - w) + 1));
        if (cfg.align_to_patches) {
            r0 = snap_down(r0);
            c0 = snap_down(c0);
            rc = Rect{r0, c0, std::min(snap_up(r0 + h), t), std::min(snap_up(c0 + w), f)};
        } else {
            rc = Rect{r0, c0, r0 + h, c0 + w};
        }
        if (rc.r1 <= rc.r0 || rc.c1 <= rc.c0) continue;

        // Trim rows/cols off the far edge until the union stays below the band top.
        long fresh = mask_detail::count_new_pixels(mask, rc);
        while (fresh > 0 && covered + fresh > target_px + band) {
            if (cfg.align_to_patches) {
                if (rc.r1 - rc.r0 > p) rc.r1 -= p;
                else if (rc.c1 - rc.c0 > p) rc.c1 -= p;
                else break;
            } else {
                if (rc.r1 - rc.r0 > 1 && (rc.r1 - rc.r0) >= (rc.c1 - rc.c0)) --rc.r1;
                else if (rc.c1 - rc.c0 > 1) --rc.c1;
                else break;
            }
            fresh = mask_detail::count_new_pixels(mask, rc);
        }
        if (placed > 0 && fresh == 0) continue;  // fully inside the existing union
        // Patch-aligned blocks on tiny grids may never fit the band; after
        // enough rejected candidates accept the trimmed one to terminate.
        if (placed > 0 && covered + fresh > target_px + band && ++stalled < 1000) continue;
        stalled = 0;

        mask_detail::paint(mask, rc);
        covered += fresh;
        ++placed;
        if (rects_out) rects_out->push_back(rc);
        if (covered >= target_px - band) break;
    }
    return mask;
}

/// Token i is flagged iff any pixel of its patch_size x patch_size tile is
/// masked. Tiles are row-major over the (time, frequency) grid; the mask is
/// zero-padded to tile multiples.
inline std::vector<uint8_t> derive_token_mask(const Matrix<uint8_t>& pixel_mask, int patch) {
    const int t = pixel_mask.rows();
    const int f = pixel_mask.cols();
    const int gt = (t + patch - 1) / patch;
    const int gf = (f + patch - 1) / patch;
    std::vector<uint8_t> tokens(static_cast<size_t>(gt) * gf, 0);
    for (int r = 0; r < t; ++r) {
        const uint8_t* row = pixel_mask.row(r);
        const int tr = r / patch;
        for (int c = 0; c < f; ++c) {
            if (row[c]) tokens[static_cast<size_t>(tr) * gf + c / patch] = 1;
        }
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// Corruption-record container (debugging aid): magic, version, shape, mode,
// ratios, pixel mask bytes, token mask bytes.
// ---------------------------------------------------------------------------

inline constexpr char kMaskMagic[8] = {'S', 'P', 'T', 'W', 'M', 'A', 'S', 'K'};

inline void save_corruption_record(const std::string& path, const CorruptionRecord& rec) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("corruption record: cannot write " + path);
    out.write(kMaskMagic, 8);
    const uint32_t version = 1;
    const uint32_t t = static_cast<uint32_t>(rec.pixel_mask.rows());
    const uint32_t f = static_cast<uint32_t>(rec.pixel_mask.cols());
    const uint32_t n = static_cast<uint32_t>(rec.token_mask.size());
    const uint8_t mode = static_cast<uint8_t>(rec.mode);
    out.write(reinterpret_cast<const char*>(&version), 4);
    out.write(reinterpret_cast<const char*>(&t), 4);
    out.write(reinterpret_cast<const char*>(&f), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
    out.write(reinterpret_cast<const char*>(&mode), 1);
    out.write(reinterpret_cast<const char*>(&rec.requested_ratio), 8);
    out.write(reinterpret_cast<const char*>(&rec.realized_ratio), 8);
    out.write(reinterpret_cast<const char*>(rec.pixel_mask.data()),
              static_cast<std::streamsize>(rec.pixel_mask.size()));
    out.write(reinterpret_cast<const char*>(rec.token_mask.data()),
              static_cast<std::streamsize>(rec.token_mask.size()));
    if (!out) throw data_error("corruption record: short write to " + path);
}

inline CorruptionRecord load_corruption_record(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("corruption record: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMaskMagic, 8) != 0)
        throw data_error("corruption record: bad magic in " + path);
    uint32_t version = 0, t = 0, f = 0, n = 0;
    uint8_t mode = 0;
    in.read(reinterpret_cast<char*>(&version), 4);
    in.read(reinterpret_cast<char*>(&t), 4);
    in.read(reinterpret_cast<char*>(&f), 4);
    in.read(reinterpret_cast<char*>(&n), 4);
    in.read(reinterpret_cast<char*>(&mode), 1);
    if (!in || version != 1) throw data_error("corruption record: unsupported version");
    CorruptionRecord rec;
    rec.mode = static_cast<CorruptionMode>(mode);
    in.read(reinterpret_cast<char*>(&rec.requested_ratio), 8);
    in.read(reinterpret_cast<char*>(&rec.realized_ratio), 8);
    rec.pixel_mask.resize(static_cast<int>(t), static_cast<int>(f));
    in.read(reinterpret_cast<char*>(rec.pixel_mask.data()),
            static_cast<std::streamsize>(rec.pixel_mask.size()));
    rec.token_mask.resize(n);
    in.read(reinterpret_cast<char*>(rec.token_mask.data()), static_cast<std::streamsize>(n));
    if (!in) throw data_error("corruption record: truncated payload in " + path);
    return rec;
}

/// GMML corruption of a (normalised) spectrogram: zero-fill (per-mode
/// coverage ratio_zero) or alien-fill from the co-located pixels of another
/// spectrogram (ratio_alien). Unmasked pixels pass through bit-identical.
template <typename S>
std::pair<Spectrogram<S>, CorruptionRecord> apply_corruption(const Spectrogram<S>& x,
                                                             const Spectrogram<S>& alien,
                                                             const MaskConfig& cfg, Rng& rng) {
    if (x.frames() != alien.frames() || x.mel_bins() != alien.mel_bins())
        throw config_error("augment: alien spectrogram shape mismatch");

    CorruptionRecord rec;
    rec.mode = rng.bernoulli(cfg.mode_prob_zero) ? CorruptionMode::zero : CorruptionMode::alien;
    rec.requested_ratio = rec.mode == CorruptionMode::zero ? cfg.ratio_zero : cfg.ratio_alien;

    Spectrogram<S> out = x;
    const int t = x.frames();
    const int f = x.mel_bins();
    if (rec.requested_ratio <= 0.0) {
        rec.pixel_mask.resize(t, f, 0);
        rec.token_mask = derive_token_mask(rec.pixel_mask, cfg.patch_size);
        rec.realized_ratio = 0.0;
        return {out, rec};
    }

    rec.pixel_mask = sample_block_mask(t, f, rec.requested_ratio, cfg, rng);
    rec.token_mask = derive_token_mask(rec.pixel_mask, cfg.patch_size);

    long masked = 0;
    for (int r = 0; r < t; ++r) {
        const uint8_t* mrow = rec.pixel_mask.row(r);
        S* orow = out.values.row(r);
        const S* arow = alien.values.row(r);
        for (int c = 0; c < f; ++c) {
            if (mrow[c]) {
                orow[c] = rec.mode == CorruptionMode::zero ? S(0) : arow[c];
                ++masked;
            }
        }
    }
    rec.realized_ratio = static_cast<double>(masked) / (static_cast<double>(t) * f);
    return {out, rec};
}

}  // namespace spectwin
