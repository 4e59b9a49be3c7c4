// Copyright 2026 The spectwin authors
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "spectwin/train.hpp"

using namespace spectwin;

namespace {

ModelConfig toy_model() {
    ModelConfig mc = ModelConfig::tiny(32, 32);
    mc.backbone.depth = 2;
    mc.backbone.embed_dim = 32;
    mc.backbone.n_heads = 2;
    mc.head_hidden = 32;
    mc.head_bottleneck = 16;
    mc.local_classes = 16;
    mc.global_classes = 32;
    return mc;
}

template <typename S>
Spectrogram<S> synth_spec(int t, int f, uint64_t seed) {
    Rng rng(seed);
    Spectrogram<S> s;
    s.values.resize(t, f);
    // smooth structured content: a couple of "harmonics" plus noise
    const double f0 = rng.uniform(2.0, 10.0);
    for (int r = 0; r < t; ++r)
        for (int c = 0; c < f; ++c)
            s.values(r, c) = static_cast<S>(
                std::sin(2.0 * kPi * (f0 * c / f)) * std::cos(0.1 * r) +
                0.2 * rng.normal());
    return s;
}

template <typename S>
TrainBatch<S> toy_batch(int clips, uint64_t seed, int frames = 32) {
    TrainBatch<S> batch;
    for (int i = 0; i < clips; ++i) {
        const auto s = synth_spec<S>(frames * 2, 32, seed + static_cast<uint64_t>(i));
        Rng view_rng = Rng::derive(seed, static_cast<uint64_t>(i), 0);
        batch.pairs.push_back(make_views(s, frames, view_rng, "clip" + std::to_string(i)));
        batch.rngs.push_back(Rng::derive(seed, static_cast<uint64_t>(i), 1));
        batch.ids.push_back("clip" + std::to_string(i));
    }
    return batch;
}

MaskConfig toy_mask() {
    MaskConfig m;
    m.patch_size = 16;
    m.block_min = 4;
    m.block_max = 16;
    return m;
}

}  // namespace

TEST_CASE("train_step runs, returns finite losses, advances the step") {
    Rng rng(1);
    TwinModelState<double> state;
    state.init(toy_model(), rng);
    Trainer<double> trainer(DistillConfig{}, TrainConfig{}, toy_mask(), 100);

    auto batch = toy_batch<double>(3, 11);
    const StepMetrics m = train_step(state, batch, trainer);
    CHECK(state.step == 1);
    CHECK(std::isfinite(m.loss_total));
    CHECK(m.loss_recon >= 0.0);
    CHECK(m.loss_local >= 0.0);
    CHECK(m.loss_global >= 0.0);
    CHECK(m.lambda == doctest::Approx(0.996));
    CHECK(m.lr > 0.0);
}

TEST_CASE("teacher is bit-identical through forward/backward, moves only via EMA") {
    Rng rng(2);
    TwinModelState<double> state;
    state.init(toy_model(), rng);

    DistillConfig dc;
    dc.lambda_start = 1.0;  // freeze the teacher entirely
    dc.lambda_end = 1.0;
    Trainer<double> trainer(dc, TrainConfig{}, toy_mask(), 100);

    std::vector<Matrix<double>> teacher_before;
    visit_params(state.teacher,
                 [&](const std::string&, Matrix<double>& m) { teacher_before.push_back(m); });

    auto batch = toy_batch<double>(2, 22);
    train_step(state, batch, trainer);

    size_t i = 0;
    bool identical = true;
    visit_params(state.teacher, [&](const std::string&, Matrix<double>& m) {
        if (!(m == teacher_before[i++])) identical = false;
    });
    CHECK(identical);

    // while the student moved
    bool student_moved = false;
    i = 0;
    visit_params(state.student, [&](const std::string&, Matrix<double>& m) {
        if (!(m == teacher_before[i++])) student_moved = true;
    });
    CHECK(student_moved);
}

TEST_CASE("lambda = 0 copies the student into the teacher after the update") {
    Rng rng(3);
    TwinModelState<double> state;
    state.init(toy_model(), rng);
    DistillConfig dc;
    dc.lambda_start = 0.0;
    dc.lambda_end = 0.0;
    Trainer<double> trainer(dc, TrainConfig{}, toy_mask(), 100);
    auto batch = toy_batch<double>(2, 33);
    train_step(state, batch, trainer);

    std::vector<const Matrix<double>*> th, ph;
    visit_params(state.student, [&](const std::string&, Matrix<double>& m) { th.push_back(&m); });
    visit_params(state.teacher, [&](const std::string&, Matrix<double>& m) { ph.push_back(&m); });
    bool equal = true;
    for (size_t i = 0; i < th.size(); ++i)
        if (!(*th[i] == *ph[i])) equal = false;
    CHECK(equal);
}

TEST_CASE("train_step is deterministic given identical seeds") {
    auto run_once = [&]() {
        Rng rng(4);
        TwinModelState<double> state;
        state.init(toy_model(), rng);
        Trainer<double> trainer(DistillConfig{}, TrainConfig{}, toy_mask(), 100);
        std::vector<double> losses;
        for (int step = 0; step < 3; ++step) {
            auto batch = toy_batch<double>(2, 44 + static_cast<uint64_t>(step));
            losses.push_back(train_step(state, batch, trainer).loss_total);
        }
        return losses;
    };
    CHECK(run_once() == run_once());
}

TEST_CASE("recon-only toggle trains without the distillation heads") {
    Rng rng(5);
    TwinModelState<double> state;
    state.init(toy_model(), rng);
    TrainConfig tc;
    tc.toggles.local = false;
    tc.toggles.global_ = false;
    Trainer<double> trainer(DistillConfig{}, tc, toy_mask(), 100);
    auto batch = toy_batch<double>(2, 55);
    const StepMetrics m = train_step(state, batch, trainer);
    CHECK(m.loss_local == 0.0);
    CHECK(m.loss_global == 0.0);
    CHECK(m.loss_total == doctest::Approx(m.loss_recon));
    CHECK(std::isfinite(m.loss_total));
}

TEST_CASE("single-view corruption mode works") {
    Rng rng(6);
    TwinModelState<double> state;
    state.init(toy_model(), rng);
    TrainConfig tc;
    tc.corrupt_both_views = false;
    Trainer<double> trainer(DistillConfig{}, tc, toy_mask(), 100);
    auto batch = toy_batch<double>(3, 66);
    const StepMetrics m = train_step(state, batch, trainer);
    CHECK(std::isfinite(m.loss_total));
    CHECK(m.loss_recon > 0.0);
}

TEST_CASE("masked-loss locality holds inside a real step's data") {
    // build one corrupted view and check the two loss localities directly
    Rng rng(7);
    const auto spec = synth_spec<double>(64, 32, 99);
    Rng view_rng(1);
    const auto views = make_views(spec, 32, view_rng);
    MaskConfig mc = toy_mask();
    Rng crng(2);
    const auto [corrupted, rec] = apply_corruption(views.view_a, views.view_b, mc, crng);

    // recon: perturb reconstruction at unmasked pixels only
    Matrix<double> fake_rec(32, 32);
    for (auto& v : fake_rec.raw()) v = rng.uniform(-1, 1);
    const double base = recon_loss(views.view_a.values, fake_rec, rec.pixel_mask);
    Matrix<double> perturbed = fake_rec;
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c)
            if (!rec.pixel_mask(r, c)) perturbed(r, c) += rng.uniform(-2, 2);
    CHECK(recon_loss(views.view_a.values, perturbed, rec.pixel_mask) == base);
}

TEST_CASE("empty batch and mismatched rng streams are rejected") {
    Rng rng(8);
    TwinModelState<double> state;
    state.init(toy_model(), rng);
    Trainer<double> trainer(DistillConfig{}, TrainConfig{}, toy_mask(), 100);
    TrainBatch<double> empty;
    CHECK_THROWS_AS(train_step(state, empty, trainer), data_error);

    auto batch = toy_batch<double>(2, 77);
    batch.rngs.pop_back();
    CHECK_THROWS_AS(train_step(state, batch, trainer), data_error);
}

TEST_CASE("distill config validation enforces the temperature ordering") {
    DistillConfig dc;
    dc.tau_teacher = 0.2;  // not sharper than the student
    CHECK_THROWS_AS(dc.validate(), config_error);
    TrainConfig tc;
    tc.toggles.recon = tc.toggles.local = tc.toggles.global_ = false;
    CHECK_THROWS_AS(tc.validate(), config_error);
}

TEST_CASE("short overfit run cuts the reconstruction loss on a fixed batch") {
    // trimmed version of the acceptance overfit; the full three-term variant
    // runs there with the real tiny configuration and 200 steps
    Rng rng(9);
    ModelConfig mc = toy_model();
    TwinModelState<double> state;
    state.init(mc, rng);
    TrainConfig tc;
    tc.base_lr = 1e-3;
    tc.toggles.local = false;
    tc.toggles.global_ = false;
    Trainer<double> trainer(DistillConfig{}, tc, toy_mask(), 60);

    double first = 0.0, last = 0.0;
    for (int step = 0; step < 60; ++step) {
        auto batch = toy_batch<double>(4, 123);  // same batch every step
        const StepMetrics m = train_step(state, batch, trainer);
        if (step == 0) first = m.loss_total;
        last = m.loss_total;
    }
    CHECK(last < first);
}
