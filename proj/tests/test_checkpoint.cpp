// Copyright 2026 The spectwin authors
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "spectwin/checkpoint.hpp"
#include "spectwin/config.hpp"
#include "spectwin/runner.hpp"
#include "spectwin/train.hpp"

using namespace spectwin;

TEST_CASE("named tensor container round-trips with header") {
    Rng rng(1);
    NamedTensors<double> ckpt;
    ckpt.header = "version = test\nstep = 7\n";
    ckpt.tensors.emplace_back("a.w", Matrix<double>::randn(3, 4, rng));
    ckpt.tensors.emplace_back("b.v", Matrix<double>::randn(1, 9, rng));

    const std::string path = "/tmp/spectwin_test_ckpt.bin";
    save_checkpoint(path, ckpt);
    const auto loaded = load_checkpoint<double>(path);
    CHECK(loaded.header == ckpt.header);
    REQUIRE(loaded.tensors.size() == 2);
    CHECK(loaded.tensors[0].first == "a.w");
    CHECK(*loaded.find("a.w") == ckpt.tensors[0].second);
    CHECK(*loaded.find("b.v") == ckpt.tensors[1].second);
    CHECK(loaded.find("missing") == nullptr);

    const auto kv = parse_header(loaded.header);
    CHECK(kv.at("step") == "7");
    std::remove(path.c_str());
}

TEST_CASE("f32 payloads load into double matrices") {
    Rng rng(2);
    NamedTensors<float> ckpt;
    ckpt.tensors.emplace_back("x", Matrix<float>::randn(2, 2, rng));
    const std::string path = "/tmp/spectwin_test_ckpt_f32.bin";
    save_checkpoint(path, ckpt);
    const auto loaded = load_checkpoint<double>(path);
    const auto* x = loaded.find("x");
    REQUIRE(x != nullptr);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 2; ++c)
            CHECK(static_cast<float>((*x)(r, c)) == ckpt.tensors[0].second(r, c));
    std::remove(path.c_str());
}

TEST_CASE("corrupt containers are rejected") {
    const std::string path = "/tmp/spectwin_test_ckpt_bad.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "garbage data here";
    }
    CHECK_THROWS_AS(load_checkpoint<float>(path), data_error);
    CHECK_THROWS_AS(load_checkpoint<float>("/tmp/nonexistent_spectwin.ckpt"), data_error);
    std::remove(path.c_str());
}

TEST_CASE("twin state checkpoints resume training exactly") {
    RunConfig cfg;
    cfg.variant = "tiny";
    cfg.backbone_depth = 1;
    cfg.backbone_dim = 32;
    cfg.backbone_heads = 2;
    cfg.head_hidden = 16;
    cfg.head_bottleneck = 8;
    cfg.local_classes = 8;
    cfg.global_classes = 8;
    cfg.dsp.target_frames = 32;
    cfg.dsp.n_mels = 32;
    cfg.mask.patch_size = 16;
    cfg.mask.block_min = 4;
    cfg.mask.block_max = 16;

    auto make_batch = [&](uint64_t seed) {
        TrainBatch<float> batch;
        Rng srng(seed);
        for (int i = 0; i < 2; ++i) {
            Spectrogram<float> s;
            s.values.resize(64, 32);
            for (auto& v : s.values.raw()) v = static_cast<float>(srng.normal());
            Rng view_rng = Rng::derive(seed, static_cast<uint64_t>(i), 0);
            batch.pairs.push_back(make_views(s, 32, view_rng));
            batch.rngs.push_back(Rng::derive(seed, static_cast<uint64_t>(i), 1));
            batch.ids.push_back("c" + std::to_string(i));
        }
        return batch;
    };

    // run A: 5 continuous steps
    Rng rng_a(cfg.seed);
    TwinModelState<float> state_a;
    state_a.init(cfg.model_config(), rng_a);
    Trainer<float> trainer_a(cfg.distill, cfg.train, cfg.mask, 100);
    for (int s = 0; s < 5; ++s) {
        auto b = make_batch(static_cast<uint64_t>(s));
        train_step(state_a, b, trainer_a);
    }

    // run B: 3 steps, checkpoint, reload, 2 more steps
    Rng rng_b(cfg.seed);
    TwinModelState<float> state_b;
    state_b.init(cfg.model_config(), rng_b);
    Trainer<float> trainer_b(cfg.distill, cfg.train, cfg.mask, 100);
    for (int s = 0; s < 3; ++s) {
        auto b = make_batch(static_cast<uint64_t>(s));
        train_step(state_b, b, trainer_b);
    }
    const std::string path = "/tmp/spectwin_test_resume.ckpt";
    save_checkpoint(path, pack_twin_state(state_b, trainer_b.adam, cfg));

    TwinModelState<float> state_c;
    Trainer<float> trainer_c(cfg.distill, cfg.train, cfg.mask, 100);
    const auto loaded = load_checkpoint<float>(path);
    unpack_twin_state(loaded, state_c, &trainer_c.adam);
    CHECK(state_c.step == 3);

    for (int s = 3; s < 5; ++s) {
        auto b = make_batch(static_cast<uint64_t>(s));
        train_step(state_c, b, trainer_c);
    }

    // resumed run must match the continuous one bit for bit
    std::vector<const Matrix<float>*> ta, tc;
    visit_params(state_a.student, [&](const std::string&, Matrix<float>& m) { ta.push_back(&m); });
    visit_params(state_c.student, [&](const std::string&, Matrix<float>& m) { tc.push_back(&m); });
    bool equal = true;
    for (size_t i = 0; i < ta.size(); ++i)
        if (!(*ta[i] == *tc[i])) equal = false;
    CHECK(equal);
    CHECK(state_a.center_global == state_c.center_global);
    CHECK(state_a.center_local == state_c.center_local);
    CHECK(state_a.step == state_c.step);
    std::remove(path.c_str());
}
