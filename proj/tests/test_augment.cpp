// Copyright 2026 The spectwin authors
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "oracles.hpp"
#include "spectwin/augment.hpp"
#include "spectwin/rng.hpp"

using namespace spectwin;

namespace {

Spectrogram<double> random_spec(int t, int f, uint64_t seed) {
    Rng rng(seed);
    Spectrogram<double> s;
    s.values.resize(t, f);
    for (auto& v : s.values.raw()) v = rng.uniform(-1.0, 1.0);
    return s;
}

double coverage(const Matrix<uint8_t>& mask) {
    long on = 0;
    for (const auto v : mask.raw()) on += v;
    return static_cast<double>(on) / static_cast<double>(mask.size());
}

}  // namespace

TEST_CASE("full-length crops reproduce the source") {
    const auto s = random_spec(200, 8, 1);
    // crop fraction is always 1.0 when the uniform draw hits the top; force it
    // by checking the deterministic resize path instead: resize(T -> T) is id.
    const auto r = resize_time(s, s.frames());
    CHECK(r.values == s.values);
}

TEST_CASE("crop-and-resize matches direct linear interpolation") {
    const auto s = random_spec(600, 4, 2);
    // deterministic crop: frames [0, 360) resized to 592
    Spectrogram<double> crop;
    crop.values.resize(360, 4);
    for (int t = 0; t < 360; ++t)
        for (int c = 0; c < 4; ++c) crop.values(t, c) = s.values(t, c);
    const auto out = resize_time(crop, 592);
    for (int c = 0; c < 4; ++c) {
        std::vector<double> col(360);
        for (int t = 0; t < 360; ++t) col[static_cast<size_t>(t)] = crop.values(t, c);
        const auto expect = oracle::lerp_sequence(col, 592);
        for (int t = 0; t < 592; ++t)
            CHECK(out.values(t, c) ==
                  doctest::Approx(expect[static_cast<size_t>(t)]).epsilon(1e-12));
    }
}

TEST_CASE("make_views is deterministic under a fixed seed and shape-correct") {
    const auto s = random_spec(598, 128, 3);
    Rng r1(77), r2(77);
    const auto a = make_views(s, 592, r1, "clip");
    const auto b = make_views(s, 592, r2, "clip");
    CHECK(a.view_a.values == b.view_a.values);
    CHECK(a.view_b.values == b.view_b.values);
    CHECK(a.view_a.frames() == 592);
    CHECK(a.view_b.frames() == 592);
    CHECK(a.view_a.mel_bins() == 128);
    // independent crops: views almost surely differ
    CHECK(!(a.view_a.values == a.view_b.values));
}

TEST_CASE("make_views rejects too-short inputs") {
    const auto s = random_spec(100, 8, 4);
    Rng rng(1);
    CHECK_THROWS_AS(make_views(s, 400, rng), data_error);
}

TEST_CASE("minimal-ratio mask is a single block within tolerance") {
    MaskConfig cfg;
    cfg.block_min = 8;
    cfg.block_max = 8;
    Rng rng(5);
    std::vector<mask_detail::Rect> rects;
    const auto mask = sample_block_mask(592, 128, 0.02, cfg, rng, &rects);
    CHECK(rects.size() == 1);
    const double cov = coverage(mask);
    CHECK(std::abs(cov - 0.02) <= cfg.tolerance);
}

TEST_CASE("mask coverage concentrates around the requested ratio") {
    MaskConfig cfg;
    Rng rng(9);
    for (const double ratio : {0.3, 0.5, 0.7}) {
        double mean_cov = 0.0;
        const int n = 60;  // the acceptance suite runs the full 500-draw version
        for (int i = 0; i < n; ++i) {
            const auto mask = sample_block_mask(592, 128, ratio, cfg, rng);
            const double cov = coverage(mask);
            CHECK(std::abs(cov - ratio) <= cfg.tolerance + 1e-12);
            mean_cov += cov;
        }
        mean_cov /= n;
        CHECK(std::abs(mean_cov - ratio) <= 0.02);
    }
}

TEST_CASE("mask equals the union of its reported rectangles") {
    MaskConfig cfg;
    Rng rng(13);
    std::vector<mask_detail::Rect> rects;
    const auto mask = sample_block_mask(592, 128, 0.5, cfg, rng, &rects);
    Matrix<uint8_t> rebuilt(592, 128, 0);
    for (const auto& rc : rects)
        for (int r = rc.r0; r < rc.r1; ++r)
            for (int c = rc.c0; c < rc.c1; ++c) rebuilt(r, c) = 1;
    CHECK(rebuilt == mask);
}

TEST_CASE("aligned masks land on the patch grid") {
    MaskConfig cfg;
    cfg.align_to_patches = true;
    cfg.patch_size = 16;
    Rng rng(21);
    std::vector<mask_detail::Rect> rects;
    const auto mask = sample_block_mask(592, 128, 0.4, cfg, rng, &rects);
    for (const auto& rc : rects) {
        CHECK(rc.r0 % 16 == 0);
        CHECK(rc.c0 % 16 == 0);
        CHECK((rc.r1 % 16 == 0 || rc.r1 == 592));
        CHECK((rc.c1 % 16 == 0 || rc.c1 == 128));
    }
    // aligned masks flag whole tiles: every 16x16 tile is all-0 or all-1
    for (int tr = 0; tr < 592 / 16; ++tr) {
        for (int tc = 0; tc < 128 / 16; ++tc) {
            int on = 0;
            for (int r = tr * 16; r < (tr + 1) * 16; ++r)
                for (int c = tc * 16; c < (tc + 1) * 16; ++c) on += mask(r, c);
            CHECK((on == 0 || on == 256));
        }
    }
}

TEST_CASE("ratio outside (0,1) is rejected") {
    MaskConfig cfg;
    Rng rng(1);
    CHECK_THROWS_AS(sample_block_mask(64, 64, 0.0, cfg, rng), config_error);
    CHECK_THROWS_AS(sample_block_mask(64, 64, 1.0, cfg, rng), config_error);
    CHECK_THROWS_AS(sample_block_mask(64, 64, 1.5, cfg, rng), config_error);
}

TEST_CASE("token mask matches the exhaustive scan oracle") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        MaskConfig cfg;
        const int t = 64 + static_cast<int>(rng.uniform_int(200));
        const int f = 32 + static_cast<int>(rng.uniform_int(96));
        const auto mask = sample_block_mask(t, f, 0.3, cfg, rng);
        CHECK(derive_token_mask(mask, 16) == oracle::token_mask_scan(mask, 16));
    }
}

TEST_CASE("token mask basics: empty, single pixel, known block") {
    Matrix<uint8_t> none(64, 64, 0);
    for (const auto v : derive_token_mask(none, 16)) CHECK(v == 0);

    Matrix<uint8_t> one(64, 64, 0);
    one(0, 0) = 1;
    const auto tm = derive_token_mask(one, 16);
    CHECK(tm[0] == 1);
    for (size_t i = 1; i < tm.size(); ++i) CHECK(tm[i] == 0);

    // 20x20 block at (10,10) with p=16 touches tiles (0,0),(0,1),(1,0),(1,1)
    Matrix<uint8_t> block(64, 64, 0);
    for (int r = 10; r < 30; ++r)
        for (int c = 10; c < 30; ++c) block(r, c) = 1;
    const auto bm = derive_token_mask(block, 16);
    const int gf = 4;
    for (int tr = 0; tr < 4; ++tr)
        for (int tc = 0; tc < 4; ++tc)
            CHECK(bm[static_cast<size_t>(tr) * gf + tc] == ((tr < 2 && tc < 2) ? 1 : 0));
}

TEST_CASE("corruption preserves unmasked pixels exactly, both modes") {
    const auto x = random_spec(128, 64, 41);
    const auto alien = random_spec(128, 64, 42);
    MaskConfig cfg;
    cfg.patch_size = 16;
    Rng rng(55);
    for (int trial = 0; trial < 8; ++trial) {
        const auto [xc, rec] = apply_corruption(x, alien, cfg, rng);
        for (int r = 0; r < 128; ++r) {
            for (int c = 0; c < 64; ++c) {
                if (rec.pixel_mask(r, c)) {
                    if (rec.mode == CorruptionMode::zero) CHECK(xc.values(r, c) == 0.0);
                    else CHECK(xc.values(r, c) == alien.values(r, c));
                } else {
                    CHECK(xc.values(r, c) == x.values(r, c));
                }
            }
        }
        CHECK(std::abs(rec.realized_ratio - rec.requested_ratio) <= cfg.tolerance + 1e-12);
        // token mask consistent with the pixel mask
        CHECK(rec.token_mask == oracle::token_mask_scan(rec.pixel_mask, cfg.patch_size));
    }
}

TEST_CASE("alien self-replacement is the identity while masks stay nonzero") {
    const auto x = random_spec(96, 48, 61);
    MaskConfig cfg;
    cfg.mode_prob_zero = 0.0;  // force alien mode
    Rng rng(2);
    const auto [xc, rec] = apply_corruption(x, x, cfg, rng);
    CHECK(rec.mode == CorruptionMode::alien);
    CHECK(xc.values == x.values);
    CHECK(coverage(rec.pixel_mask) > 0.0);
}

TEST_CASE("zero requested ratio leaves the input untouched") {
    const auto x = random_spec(96, 48, 62);
    const auto alien = random_spec(96, 48, 63);
    MaskConfig cfg;
    cfg.ratio_zero = 0.0;
    cfg.ratio_alien = 0.0;
    Rng rng(3);
    const auto [xc, rec] = apply_corruption(x, alien, cfg, rng);
    CHECK(xc.values == x.values);
    for (const auto v : rec.token_mask) CHECK(v == 0);
    CHECK(rec.realized_ratio == 0.0);
}

TEST_CASE("corruption is deterministic given the seed") {
    const auto x = random_spec(128, 64, 70);
    const auto alien = random_spec(128, 64, 71);
    MaskConfig cfg;
    Rng r1(99), r2(99);
    const auto [a, ra] = apply_corruption(x, alien, cfg, r1);
    const auto [b, rb] = apply_corruption(x, alien, cfg, r2);
    CHECK(a.values == b.values);
    CHECK(ra.pixel_mask == rb.pixel_mask);
    CHECK(ra.token_mask == rb.token_mask);
    CHECK(ra.mode == rb.mode);
}

TEST_CASE("shape mismatch between input and alien is rejected") {
    const auto x = random_spec(96, 48, 80);
    const auto alien = random_spec(100, 48, 81);
    MaskConfig cfg;
    Rng rng(1);
    CHECK_THROWS_AS(apply_corruption(x, alien, cfg, rng), config_error);
}

TEST_CASE("unaligned masks cross patch boundaries somewhere") {
    MaskConfig cfg;
    cfg.align_to_patches = false;
    Rng rng(123);
    bool crossed = false;
    for (int i = 0; i < 20 && !crossed; ++i) {
        const auto mask = sample_block_mask(592, 128, 0.7, cfg, rng);
        for (int tr = 0; tr < 592 / 16 && !crossed; ++tr) {
            for (int tc = 0; tc < 128 / 16 && !crossed; ++tc) {
                int on = 0;
                for (int r = tr * 16; r < (tr + 1) * 16; ++r)
                    for (int c = tc * 16; c < (tc + 1) * 16; ++c) on += mask(r, c);
                if (on > 0 && on < 256) crossed = true;  // partially-masked tile
            }
        }
    }
    CHECK(crossed);
}

TEST_CASE("corruption record container round-trips") {
    const auto x = random_spec(96, 48, 91);
    const auto alien = random_spec(96, 48, 92);
    MaskConfig cfg;
    Rng rng(7);
    const auto [xc, rec] = apply_corruption(x, alien, cfg, rng);
    const std::string path = "/tmp/spectwin_test_mask.bin";
    save_corruption_record(path, rec);
    const auto back = load_corruption_record(path);
    CHECK(back.pixel_mask == rec.pixel_mask);
    CHECK(back.token_mask == rec.token_mask);
    CHECK(back.mode == rec.mode);
    CHECK(back.requested_ratio == rec.requested_ratio);
    CHECK(back.realized_ratio == rec.realized_ratio);
    std::remove(path.c_str());
}
