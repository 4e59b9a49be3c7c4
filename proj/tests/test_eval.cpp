// Copyright 2026 The spectwin authors
// Licensed under the Apache License, Version 2.0

#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "spectwin/eval.hpp"

using namespace spectwin;

namespace {

Matrix<double> col(const std::vector<double>& v) {
    Matrix<double> m(static_cast<int>(v.size()), 1);
    for (size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i), 0) = v[i];
    return m;
}

Matrix<uint8_t> colb(const std::vector<int>& v) {
    Matrix<uint8_t> m(static_cast<int>(v.size()), 1);
    for (size_t i = 0; i < v.size(); ++i) m(static_cast<int>(i), 0) = static_cast<uint8_t>(v[i]);
    return m;
}

}  // namespace

TEST_CASE("mAP: perfect ranking gives 1.0") {
    Matrix<double> scores(4, 2);
    Matrix<uint8_t> targets(4, 2, 0);
    for (int c = 0; c < 2; ++c) {
        scores(0, c) = 0.9;
        scores(1, c) = 0.8;
        scores(2, c) = 0.2;
        scores(3, c) = 0.1;
        targets(0, c) = 1;
        targets(1, c) = 1;
    }
    CHECK(mean_average_precision(scores, targets) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("mAP: documented hand examples") {
    // scores (0.9, 0.8, 0.7), targets (1, 0, 1) -> (1/1 + 2/3)/2 = 0.8333...
    CHECK(mean_average_precision(col({0.9, 0.8, 0.7}), colb({1, 0, 1})) ==
          doctest::Approx((1.0 + 2.0 / 3.0) / 2.0).epsilon(1e-12));
    // reversed perfect ranking, 1 positive of 3 -> AP = 1/3
    CHECK(mean_average_precision(col({0.1, 0.2, 0.9}), colb({1, 0, 0})) ==
          doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("mAP matches the pair-counting oracle on random matrices") {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_int(12));
        const int classes = 1 + static_cast<int>(rng.uniform_int(4));
        Matrix<double> scores(n, classes);
        Matrix<uint8_t> targets(n, classes, 0);
        bool any_positive = false;
        for (int c = 0; c < classes; ++c) {
            for (int r = 0; r < n; ++r) {
                // quantised scores force ties through the stable tie-break path
                scores(r, c) = std::round(rng.uniform(0.0, 1.0) * 4.0) / 4.0;
                targets(r, c) = rng.bernoulli(0.4) ? 1 : 0;
                if (targets(r, c)) any_positive = true;
            }
        }
        if (!any_positive) {
            targets(0, 0) = 1;
        }

        std::vector<double> per_class;
        std::vector<int> skipped;
        const double got = mean_average_precision(scores, targets, &per_class, &skipped);

        double expect = 0.0;
        int used = 0;
        for (int c = 0; c < classes; ++c) {
            std::vector<double> s(static_cast<size_t>(n));
            std::vector<int> t(static_cast<size_t>(n));
            long pos = 0;
            for (int r = 0; r < n; ++r) {
                s[static_cast<size_t>(r)] = scores(r, c);
                t[static_cast<size_t>(r)] = targets(r, c);
                pos += targets(r, c);
            }
            if (pos == 0) continue;
            expect += oracle::average_precision_paircount(s, t);
            ++used;
        }
        expect /= used;
        CHECK(std::abs(got - expect) <= 1e-12);
    }
}

TEST_CASE("mAP: swapping a positive upward never decreases AP") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 6 + static_cast<int>(rng.uniform_int(6));
        std::vector<double> scores(static_cast<size_t>(n));
        std::vector<int> targets(static_cast<size_t>(n));
        long pos = 0;
        for (int r = 0; r < n; ++r) {
            scores[static_cast<size_t>(r)] = rng.uniform(0, 1);
            targets[static_cast<size_t>(r)] = rng.bernoulli(0.3) ? 1 : 0;
            pos += targets[static_cast<size_t>(r)];
        }
        if (pos == 0) targets[0] = 1;

        const double base = mean_average_precision(col(scores), colb(targets));

        // push one positive's score above everything else
        int pos_idx = -1;
        for (int r = 0; r < n; ++r)
            if (targets[static_cast<size_t>(r)]) pos_idx = r;
        std::vector<double> boosted = scores;
        boosted[static_cast<size_t>(pos_idx)] = 2.0;
        const double better = mean_average_precision(col(boosted), colb(targets));
        CHECK(better >= base - 1e-12);
    }
}

TEST_CASE("mAP is invariant to strictly increasing score transforms") {
    Rng rng(9);
    std::vector<double> scores(12);
    std::vector<int> targets(12);
    for (size_t i = 0; i < scores.size(); ++i) {
        scores[i] = rng.uniform(-3, 3);
        targets[i] = rng.bernoulli(0.4) ? 1 : 0;
    }
    targets[3] = 1;
    const double base = mean_average_precision(col(scores), colb(targets));

    std::vector<double> warped = scores;
    for (auto& v : warped) v = std::atan(v) * 5.0 + std::exp(v * 0.1);
    CHECK(mean_average_precision(col(warped), colb(targets)) ==
          doctest::Approx(base).epsilon(1e-15));
}

TEST_CASE("mAP excludes and reports zero-positive classes") {
    Matrix<double> scores(3, 2);
    Matrix<uint8_t> targets(3, 2, 0);
    scores(0, 0) = 0.9;
    scores(1, 0) = 0.5;
    scores(2, 0) = 0.1;
    targets(0, 0) = 1;
    std::vector<double> per_class;
    std::vector<int> skipped;
    const double v = mean_average_precision(scores, targets, &per_class, &skipped);
    CHECK(v == doctest::Approx(1.0));
    REQUIRE(skipped.size() == 1);
    CHECK(skipped[0] == 1);
}

TEST_CASE("linear probe separates a separable toy problem") {
    Rng rng(11);
    const int n = 80;
    Matrix<double> features(n, 3);
    std::vector<std::vector<int>> labels(static_cast<size_t>(n));
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < n; ++i) {
        const int cls = i % 2;
        features(i, 0) = (cls ? 2.0 : -2.0) + rng.normal(0, 0.2);
        features(i, 1) = rng.normal(0, 1.0);
        features(i, 2) = rng.normal(0, 1.0);
        labels[static_cast<size_t>(i)] = {cls};
        (i < 60 ? train_rows : test_rows).push_back(i);
    }
    ProbeConfig cfg;
    const auto report = linear_probe(features, labels, train_rows, test_rows, 2, cfg);
    CHECK(report.metric == "accuracy");
    CHECK(report.value == doctest::Approx(1.0));
    CHECK(report.num_examples == 20);
}

TEST_CASE("linear probe on shuffled labels sits near chance") {
    Rng rng(13);
    const int n = 400, classes = 4;
    Matrix<double> features(n, 8);
    for (auto& v : features.raw()) v = rng.normal();
    std::vector<std::vector<int>> labels(static_cast<size_t>(n));
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < n; ++i) {
        labels[static_cast<size_t>(i)] = {static_cast<int>(rng.uniform_int(classes))};
        (i < 300 ? train_rows : test_rows).push_back(i);
    }
    ProbeConfig cfg;
    cfg.epochs = 40;
    const auto report = linear_probe(features, labels, train_rows, test_rows, classes, cfg);
    CHECK(report.value > 0.25 - 0.12);
    CHECK(report.value < 0.25 + 0.12);
}

TEST_CASE("duplicating every training point leaves the probe decision unchanged") {
    Rng rng(17);
    const int n = 40;
    Matrix<double> features(2 * n, 4);
    std::vector<std::vector<int>> labels(static_cast<size_t>(2 * n));
    std::vector<int> train_rows, train_rows_dup, test_rows;
    for (int i = 0; i < n; ++i) {
        const int cls = i % 2;
        for (int c = 0; c < 4; ++c) {
            features(i, c) = (cls ? 1.5 : -1.5) + rng.normal(0, 0.3);
            features(n + i, c) = features(i, c);  // duplicate block
        }
        labels[static_cast<size_t>(i)] = {cls};
        labels[static_cast<size_t>(n + i)] = {cls};
        if (i < 30) {
            train_rows.push_back(i);
            train_rows_dup.push_back(i);
            train_rows_dup.push_back(n + i);
        } else {
            test_rows.push_back(i);
        }
    }
    ProbeConfig cfg;
    const auto a = linear_probe(features, labels, train_rows, test_rows, 2, cfg);
    const auto b = linear_probe(features, labels, train_rows_dup, test_rows, 2, cfg);
    // at the argmin duplication only rescales the loss; with the fixed SGD
    // recipe the test predictions agree on this margin
    CHECK(a.value == doctest::Approx(b.value));
}

TEST_CASE("probe is deterministic and rejects degenerate splits") {
    Rng rng(19);
    Matrix<double> features(20, 3);
    for (auto& v : features.raw()) v = rng.normal();
    std::vector<std::vector<int>> labels(20);
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < 20; ++i) {
        labels[static_cast<size_t>(i)] = {i % 2};
        (i < 14 ? train_rows : test_rows).push_back(i);
    }
    ProbeConfig cfg;
    const auto a = linear_probe(features, labels, train_rows, test_rows, 2, cfg);
    const auto b = linear_probe(features, labels, train_rows, test_rows, 2, cfg);
    CHECK(a.value == b.value);
    CHECK(a.per_class == b.per_class);

    // class 2 absent from training -> degenerate-split error
    std::vector<std::vector<int>> labels3 = labels;
    labels3[static_cast<size_t>(test_rows[0])] = {2};
    CHECK_THROWS_AS(linear_probe(features, labels3, train_rows, test_rows, 3, cfg),
                    data_error);
}

TEST_CASE("extract_features: determinism, shape, and sensitivity to weights") {
    ModelConfig mc = ModelConfig::tiny(32, 32);
    mc.backbone.depth = 1;
    Rng rng(23);
    ModelParams<double> model;
    model.init(mc, rng);

    Spectrogram<double> clip;
    clip.values.resize(64, 32);
    for (auto& v : clip.values.raw()) v = rng.normal();
    std::vector<const Spectrogram<double>*> clips{&clip, &clip};

    const auto f1 = extract_features(model, clips);
    const auto f2 = extract_features(model, clips);
    CHECK(f1 == f2);
    CHECK(f1.rows() == 2);
    CHECK(f1.cols() == mc.backbone.embed_dim);
    // same clip twice -> identical embeddings
    for (int c = 0; c < f1.cols(); ++c) CHECK(f1(0, c) == f1(1, c));

    // different weights -> different embedding
    ModelParams<double> other;
    Rng rng2(24);
    other.init(mc, rng2);
    const auto f3 = extract_features(other, clips);
    double dist = 0.0;
    for (int c = 0; c < f1.cols(); ++c) dist += std::abs(f1(0, c) - f3(0, c));
    CHECK(dist > 0.0);

    // meanpool variant differs from the class token
    const auto f4 = extract_features(model, clips, FeaturePooling::mean_tokens);
    double delta = 0.0;
    for (int c = 0; c < f1.cols(); ++c) delta += std::abs(f1(0, c) - f4(0, c));
    CHECK(delta > 0.0);
}

TEST_CASE("finetune with zero epochs equals a random-head evaluation, deterministic") {
    ModelConfig mc = ModelConfig::tiny(32, 32);
    mc.backbone.depth = 1;
    Rng rng(29);
    ModelParams<double> model;
    model.init(mc, rng);

    const int n = 24;
    std::vector<Spectrogram<double>> clips(static_cast<size_t>(n));
    std::vector<const Spectrogram<double>*> clip_ptrs;
    std::vector<std::vector<int>> labels(static_cast<size_t>(n));
    std::vector<int> train_rows, test_rows;
    Rng drng(31);
    for (int i = 0; i < n; ++i) {
        clips[static_cast<size_t>(i)].values.resize(32, 32);
        const int cls = i % 2;
        for (auto& v : clips[static_cast<size_t>(i)].values.raw())
            v = drng.normal(cls ? 1.0 : -1.0, 0.3);
        labels[static_cast<size_t>(i)] = {cls};
        (i < 16 ? train_rows : test_rows).push_back(i);
        clip_ptrs.push_back(&clips[static_cast<size_t>(i)]);
    }

    FinetuneConfig fc;
    fc.epochs = 0;
    const auto a = finetune(model, clip_ptrs, labels, train_rows, {}, test_rows, 2, fc);
    const auto b = finetune(model, clip_ptrs, labels, train_rows, {}, test_rows, 2, fc);
    CHECK(a.value == b.value);  // deterministic given the seed

    // a couple of epochs on this separable toy should do at least as well
    fc.epochs = 2;
    const auto c = finetune(model, clip_ptrs, labels, train_rows, {}, test_rows, 2, fc);
    CHECK(c.value >= a.value - 0.05);
    CHECK(c.value > 0.9);  // separable: finetuning nails it
}
