// Copyright 2026 The spectwin authors
// Downstream evaluation: frozen-backbone feature extraction, linear probe,
// full finetuning, accuracy and multilabel mean average precision.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "spectwin/dsp.hpp"
#include "spectwin/losses.hpp"
#include "spectwin/model.hpp"
#include "spectwin/optim.hpp"
#include "spectwin/rng.hpp"

namespace spectwin {

/// A clip ready for supervised evaluation: features/spectrogram plus one or
/// more class labels.
template <typename S>
struct LabeledClip {
    Spectrogram<S> spectrogram;
    std::vector<int> labels;  // single-label tasks use exactly one entry
    std::string split = "train";
    std::string id;
};

struct EvalReport {
    std::string metric;  // "accuracy" or "map"
    double value = 0.0;
    std::vector<double> per_class;
    long num_examples = 0;
    std::string config_fingerprint;
    std::vector<int> skipped_classes;  // zero-positive classes excluded from mAP
};

enum class FeaturePooling : uint8_t { class_token = 0, mean_tokens = 1 };

// ---------------------------------------------------------------------------
// Feature extraction
// ---------------------------------------------------------------------------

/// Run frozen backbone over clips (heads ignored); one embedding per clip.
/// Clips are resized along time to the model's input frames.
template <typename S>
Matrix<S> extract_features(ModelParams<S>& model, const std::vector<const Spectrogram<S>*>& clips,
                           FeaturePooling pooling = FeaturePooling::class_token,
                           int batch_size = 32) {
    const int d = model.cfg.backbone.embed_dim;
    const int frames = model.cfg.input_frames;
    const int n = model.backbone.grid.tokens();
    Matrix<S> features(static_cast<int>(clips.size()), d);

    std::vector<Spectrogram<S>> resized;
    EncoderCache<S> cache;
    for (size_t start = 0; start < clips.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(clips.size(), start + static_cast<size_t>(batch_size));
        const int b = static_cast<int>(end - start);
        resized.clear();
        std::vector<const Matrix<S>*> views;
        for (size_t i = start; i < end; ++i) {
            if (clips[i]->frames() != frames) resized.push_back(resize_time(*clips[i], frames));
            else resized.push_back(*clips[i]);
        }
        for (const auto& s : resized) views.push_back(&s.values);
        const Matrix<S> patches = batch_patches(views, model.cfg.backbone.patch_size);
        encoder_forward(model.backbone, patches, b, cache, /*train_mode=*/false);
        const int seq = n + 1;
        for (int i = 0; i < b; ++i) {
            S* dst = features.row(static_cast<int>(start) + i);
            if (pooling == FeaturePooling::class_token) {
                std::copy(cache.out.row(i * seq), cache.out.row(i * seq) + d, dst);
            } else {
                for (int c = 0; c < d; ++c) dst[c] = S(0);
                for (int t = 0; t < n; ++t) {
                    const S* src = cache.out.row(i * seq + t + 1);
                    for (int c = 0; c < d; ++c) dst[c] += src[c];
                }
                for (int c = 0; c < d; ++c)
                    dst[c] = static_cast<S>(static_cast<double>(dst[c]) / n);
            }
        }
    }
    return features;
}

// ---------------------------------------------------------------------------
// Linear probe
// ---------------------------------------------------------------------------

struct ProbeConfig {
    double lr = 0.01;
    int epochs = 100;
    int batch_size = 32;
    uint64_t seed = 7;
    bool multilabel = false;
};

namespace eval_detail {

/// Column-wise standardisation fitted on the training rows.
template <typename S>
void fit_standardiser(const Matrix<S>& x, const std::vector<int>& rows, std::vector<double>& mean,
                      std::vector<double>& inv_std) {
    const int d = x.cols();
    mean.assign(static_cast<size_t>(d), 0.0);
    inv_std.assign(static_cast<size_t>(d), 0.0);
    for (const int r : rows)
        for (int c = 0; c < d; ++c) mean[static_cast<size_t>(c)] += static_cast<double>(x(r, c));
    for (auto& v : mean) v /= static_cast<double>(rows.size());
    for (const int r : rows)
        for (int c = 0; c < d; ++c) {
            const double t = static_cast<double>(x(r, c)) - mean[static_cast<size_t>(c)];
            inv_std[static_cast<size_t>(c)] += t * t;
        }
    for (auto& v : inv_std) v = 1.0 / (std::sqrt(v / static_cast<double>(rows.size())) + 1e-8);
}

}  // namespace eval_detail

/// Multinomial (or per-class binary) logistic regression on frozen features,
/// plain SGD with a fixed recipe. Features are standardised on the training
/// split. Returns scores for the requested rows.
template <typename S>
class LinearProbe {
public:
    LinearProbe(int feat_dim, int num_classes, const ProbeConfig& cfg)
        : cfg_(cfg), d_(feat_dim), classes_(num_classes),
          w_(num_classes, feat_dim, S(0)), b_(1, num_classes, S(0)) {}

    void fit(const Matrix<S>& features, const std::vector<std::vector<int>>& labels,
             const std::vector<int>& train_rows) {
        eval_detail::fit_standardiser(features, train_rows, mean_, inv_std_);
        Rng rng(cfg_.seed);
        std::vector<int> order = train_rows;
        std::vector<double> x(static_cast<size_t>(d_));
        std::vector<double> p(static_cast<size_t>(classes_));
        for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
            // Fisher-Yates with our own stream
            for (size_t i = order.size(); i > 1; --i) {
                const size_t j = rng.uniform_int(i);
                std::swap(order[i - 1], order[j]);
            }
            for (const int r : order) {
                standardise(features, r, x);
                forward(x, p);
                const auto& lab = labels[static_cast<size_t>(r)];
                if (cfg_.multilabel) {
                    // independent sigmoids, gradient (sigma - y)
                    for (int c = 0; c < classes_; ++c) {
                        const double y =
                            std::find(lab.begin(), lab.end(), c) != lab.end() ? 1.0 : 0.0;
                        const double g = p[static_cast<size_t>(c)] - y;
                        update_row(c, g, x);
                    }
                } else {
                    const int y = lab.empty() ? 0 : lab[0];
                    for (int c = 0; c < classes_; ++c) {
                        const double g = p[static_cast<size_t>(c)] - (c == y ? 1.0 : 0.0);
                        update_row(c, g, x);
                    }
                }
            }
        }
    }

    /// Class scores (probabilities) for one row.
    void scores(const Matrix<S>& features, int row, std::vector<double>& out) const {
        std::vector<double> x(static_cast<size_t>(d_));
        standardise(features, row, x);
        out.resize(static_cast<size_t>(classes_));
        forward(x, out);
    }

    int predict(const Matrix<S>& features, int row) const {
        std::vector<double> p;
        scores(features, row, p);
        return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    }

private:
    void standardise(const Matrix<S>& features, int row, std::vector<double>& x) const {
        for (int c = 0; c < d_; ++c)
            x[static_cast<size_t>(c)] = (static_cast<double>(features(row, c)) -
                                         mean_[static_cast<size_t>(c)]) *
                                        inv_std_[static_cast<size_t>(c)];
    }

    void forward(const std::vector<double>& x, std::vector<double>& p) const {
        for (int c = 0; c < classes_; ++c) {
            double z = static_cast<double>(b_(0, c));
            const S* wr = w_.row(c);
            for (int j = 0; j < d_; ++j) z += static_cast<double>(wr[j]) * x[static_cast<size_t>(j)];
            p[static_cast<size_t>(c)] = z;
        }
        if (cfg_.multilabel) {
            for (auto& v : p) v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double mx = *std::max_element(p.begin(), p.end());
            double sum = 0.0;
            for (auto& v : p) {
                v = std::exp(v - mx);
                sum += v;
            }
            for (auto& v : p) v /= sum;
        }
    }

    void update_row(int c, double grad, const std::vector<double>& x) {
        S* wr = w_.row(c);
        for (int j = 0; j < d_; ++j)
            wr[j] = static_cast<S>(static_cast<double>(wr[j]) -
                                   cfg_.lr * grad * x[static_cast<size_t>(j)]);
        b_(0, c) = static_cast<S>(static_cast<double>(b_(0, c)) - cfg_.lr * grad);
    }

    ProbeConfig cfg_;
    int d_, classes_;
    Matrix<S> w_, b_;
    std::vector<double> mean_, inv_std_;
};

/// Train on the train rows, report accuracy (single-label) or mAP
/// (multilabel) on the test rows.
template <typename S>
EvalReport linear_probe(const Matrix<S>& features, const std::vector<std::vector<int>>& labels,
                        const std::vector<int>& train_rows, const std::vector<int>& test_rows,
                        int num_classes, const ProbeConfig& cfg);

// ---------------------------------------------------------------------------
// Mean average precision
// ---------------------------------------------------------------------------

/// AP per class: sum of precision@k over the ranks of positives divided by
/// the positive count; ranking by descending score, ties broken by original
/// index. Classes with no positive are excluded and reported.
inline double mean_average_precision(const Matrix<double>& scores,
                                     const Matrix<uint8_t>& targets,
                                     std::vector<double>* per_class = nullptr,
                                     std::vector<int>* skipped = nullptr) {
    if (scores.rows() != targets.rows() || scores.cols() != targets.cols())
        throw config_error("map: score/target shape mismatch");
    const int n = scores.rows(), classes = scores.cols();
    if (per_class) per_class->assign(static_cast<size_t>(classes), 0.0);
    if (skipped) skipped->clear();

    double sum_ap = 0.0;
    int used = 0;
    std::vector<int> order(static_cast<size_t>(n));
    for (int c = 0; c < classes; ++c) {
        long positives = 0;
        for (int r = 0; r < n; ++r) positives += targets(r, c);
        if (positives == 0) {
            if (skipped) skipped->push_back(c);
            continue;
        }
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return scores(a, c) > scores(b, c);  // stable keeps index order on ties
        });
        double ap = 0.0;
        long hits = 0;
        for (int k = 0; k < n; ++k) {
            if (targets(order[static_cast<size_t>(k)], c)) {
                ++hits;
                ap += static_cast<double>(hits) / static_cast<double>(k + 1);
            }
        }
        ap /= static_cast<double>(positives);
        if (per_class) (*per_class)[static_cast<size_t>(c)] = ap;
        sum_ap += ap;
        ++used;
    }
    if (used == 0) throw data_error("map: no class has a positive example");
    return sum_ap / static_cast<double>(used);
}

template <typename S>
EvalReport linear_probe(const Matrix<S>& features, const std::vector<std::vector<int>>& labels,
                        const std::vector<int>& train_rows, const std::vector<int>& test_rows,
                        int num_classes, const ProbeConfig& cfg) {
    if (train_rows.empty() || test_rows.empty())
        throw data_error("probe: empty train or test split");
    // every class must appear in the training split (single-label tasks)
    if (!cfg.multilabel) {
        std::vector<bool> seen(static_cast<size_t>(num_classes), false);
        for (const int r : train_rows)
            if (!labels[static_cast<size_t>(r)].empty())
                seen[static_cast<size_t>(labels[static_cast<size_t>(r)][0])] = true;
        for (int c = 0; c < num_classes; ++c)
            if (!seen[static_cast<size_t>(c)])
                throw data_error("probe: class " + std::to_string(c) +
                                 " missing from the training split");
    }

    LinearProbe<S> probe(features.cols(), num_classes, cfg);
    probe.fit(features, labels, train_rows);

    EvalReport report;
    report.num_examples = static_cast<long>(test_rows.size());
    if (cfg.multilabel) {
        Matrix<double> scores(static_cast<int>(test_rows.size()), num_classes);
        Matrix<uint8_t> targets(static_cast<int>(test_rows.size()), num_classes, 0);
        std::vector<double> p;
        for (size_t i = 0; i < test_rows.size(); ++i) {
            probe.scores(features, test_rows[i], p);
            for (int c = 0; c < num_classes; ++c) scores(static_cast<int>(i), c) = p[static_cast<size_t>(c)];
            for (const int lab : labels[static_cast<size_t>(test_rows[i])])
                targets(static_cast<int>(i), lab) = 1;
        }
        report.metric = "map";
        report.value = mean_average_precision(scores, targets, &report.per_class,
                                              &report.skipped_classes);
    } else {
        report.metric = "accuracy";
        std::vector<long> correct(static_cast<size_t>(num_classes), 0);
        std::vector<long> total(static_cast<size_t>(num_classes), 0);
        long hits = 0;
        for (const int r : test_rows) {
            const int pred = probe.predict(features, r);
            const int truth = labels[static_cast<size_t>(r)][0];
            ++total[static_cast<size_t>(truth)];
            if (pred == truth) {
                ++hits;
                ++correct[static_cast<size_t>(truth)];
            }
        }
        report.value = static_cast<double>(hits) / static_cast<double>(test_rows.size());
        report.per_class.resize(static_cast<size_t>(num_classes), 0.0);
        for (int c = 0; c < num_classes; ++c)
            report.per_class[static_cast<size_t>(c)] =
                total[static_cast<size_t>(c)] > 0
                    ? static_cast<double>(correct[static_cast<size_t>(c)]) /
                          static_cast<double>(total[static_cast<size_t>(c)])
                    : 0.0;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Finetuning
// ---------------------------------------------------------------------------

struct FinetuneConfig {
    double lr = 1e-4;
    int epochs = 5;
    int batch_size = 16;
    uint64_t seed = 11;
    bool multilabel = false;
    FeaturePooling pooling = FeaturePooling::class_token;
};

/// New linear head on the class token, full-model training with Adam.
/// Selects the best epoch by validation accuracy (validation rows fall back
/// to the training rows when absent) and reports on the test rows.
template <typename S>
EvalReport finetune(ModelParams<S> model,  // by value: finetuning owns a copy
                    const std::vector<const Spectrogram<S>*>& clips,
                    const std::vector<std::vector<int>>& labels,
                    const std::vector<int>& train_rows, const std::vector<int>& val_rows,
                    const std::vector<int>& test_rows, int num_classes,
                    const FinetuneConfig& cfg) {
    if (train_rows.empty() || test_rows.empty())
        throw data_error("finetune: empty train or test split");
    const int d = model.cfg.backbone.embed_dim;
    const int frames = model.cfg.input_frames;
    const int n = model.backbone.grid.tokens();
    const int seq = n + 1;

    Rng rng(cfg.seed);
    LinearParam<S> head;
    head.init(d, num_classes, rng);
    Adam<S> adam;

    // pre-resize every clip once
    std::vector<Spectrogram<S>> prepared;
    prepared.reserve(clips.size());
    for (const auto* c : clips)
        prepared.push_back(c->frames() == frames ? *c : resize_time(*c, frames));

    auto forward_features = [&](const std::vector<int>& rows, ModelParams<S>& m,
                                EncoderCache<S>& cache, Matrix<S>& feats) {
        std::vector<const Matrix<S>*> views;
        for (const int r : rows) views.push_back(&prepared[static_cast<size_t>(r)].values);
        const Matrix<S> patches = batch_patches(views, m.cfg.backbone.patch_size);
        encoder_forward(m.backbone, patches, static_cast<int>(rows.size()), cache, true);
        feats.resize(static_cast<int>(rows.size()), d);
        for (size_t i = 0; i < rows.size(); ++i) {
            S* dst = feats.row(static_cast<int>(i));
            if (cfg.pooling == FeaturePooling::class_token) {
                std::copy(cache.out.row(static_cast<int>(i) * seq),
                          cache.out.row(static_cast<int>(i) * seq) + d, dst);
            } else {
                for (int c = 0; c < d; ++c) dst[c] = S(0);
                for (int t = 0; t < n; ++t) {
                    const S* src = cache.out.row(static_cast<int>(i) * seq + t + 1);
                    for (int c = 0; c < d; ++c) dst[c] += src[c];
                }
                for (int c = 0; c < d; ++c)
                    dst[c] = static_cast<S>(static_cast<double>(dst[c]) / n);
            }
        }
    };

    auto evaluate = [&](const std::vector<int>& rows, ModelParams<S>& m,
                        LinearParam<S>& h) -> double {
        if (rows.empty()) return 0.0;
        long hits = 0;
        EncoderCache<S> cache;
        Matrix<S> feats, logits;
        const int bs = cfg.batch_size;
        for (size_t start = 0; start < rows.size(); start += static_cast<size_t>(bs)) {
            const size_t end = std::min(rows.size(), start + static_cast<size_t>(bs));
            std::vector<int> chunk(rows.begin() + static_cast<long>(start),
                                   rows.begin() + static_cast<long>(end));
            forward_features(chunk, m, cache, feats);
            linear_forward(feats, h, logits);
            for (size_t i = 0; i < chunk.size(); ++i) {
                int arg = 0;
                for (int c = 1; c < num_classes; ++c)
                    if (logits(static_cast<int>(i), c) > logits(static_cast<int>(i), arg)) arg = c;
                if (arg == labels[static_cast<size_t>(chunk[i])][0]) ++hits;
            }
        }
        return static_cast<double>(hits) / static_cast<double>(rows.size());
    };

    const std::vector<int>& val = val_rows.empty() ? train_rows : val_rows;
    ModelParams<S> best_model = model;
    LinearParam<S> best_head = head;
    double best_val = evaluate(val, model, head);  // epoch-0 baseline

    std::vector<int> order = train_rows;
    long adam_t = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = rng.uniform_int(i);
            std::swap(order[i - 1], order[j]);
        }
        EncoderCache<S> cache;
        Matrix<S> feats, logits;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            std::vector<int> chunk(order.begin() + static_cast<long>(start),
                                   order.begin() + static_cast<long>(end));
            const int b = static_cast<int>(chunk.size());
            forward_features(chunk, model, cache, feats);
            linear_forward(feats, head, logits);

            // softmax CE (single-label) or sigmoid BCE (multilabel)
            Matrix<S> d_logits(b, num_classes);
            if (cfg.multilabel) {
                for (int i = 0; i < b; ++i) {
                    const auto& lab = labels[static_cast<size_t>(chunk[static_cast<size_t>(i)])];
                    for (int c = 0; c < num_classes; ++c) {
                        const double z = static_cast<double>(logits(i, c));
                        const double sig = 1.0 / (1.0 + std::exp(-z));
                        const double y =
                            std::find(lab.begin(), lab.end(), c) != lab.end() ? 1.0 : 0.0;
                        d_logits(i, c) = static_cast<S>((sig - y) / b);
                    }
                }
            } else {
                Matrix<S> probs = logits;
                softmax_rows(probs);
                for (int i = 0; i < b; ++i) {
                    const int y = labels[static_cast<size_t>(chunk[static_cast<size_t>(i)])][0];
                    for (int c = 0; c < num_classes; ++c)
                        d_logits(i, c) = static_cast<S>(
                            (static_cast<double>(probs(i, c)) - (c == y ? 1.0 : 0.0)) / b);
                }
            }

            LinearParam<S> head_grad;
            head_grad.w = Matrix<S>(d, num_classes, S(0));
            head_grad.b = Matrix<S>(1, num_classes, S(0));
            Matrix<S> d_feats;
            linear_backward(feats, head, d_logits, d_feats, head_grad);

            // spread the feature gradient back onto the token layout
            Matrix<S> d_enc(b * seq, d, S(0));
            for (int i = 0; i < b; ++i) {
                if (cfg.pooling == FeaturePooling::class_token) {
                    std::copy(d_feats.row(i), d_feats.row(i) + d, d_enc.row(i * seq));
                } else {
                    for (int t = 0; t < n; ++t) {
                        S* dst = d_enc.row(i * seq + t + 1);
                        const S* src = d_feats.row(i);
                        for (int c = 0; c < d; ++c)
                            dst[c] = static_cast<S>(static_cast<double>(src[c]) / n);
                    }
                }
            }
            BackboneParams<S> bb_grads = model.backbone;
            visit_params(bb_grads, [](const std::string&, Matrix<S>& m) { m.fill(S(0)); }, "");
            encoder_backward(model.backbone, cache, d_enc, bb_grads);

            ++adam_t;
            std::vector<std::pair<std::string, Matrix<S>*>> params, grads;
            visit_params(model.backbone,
                         [&](const std::string& name, Matrix<S>& m) { params.emplace_back(name, &m); });
            visit_params(bb_grads,
                         [&](const std::string& name, Matrix<S>& m) { grads.emplace_back(name, &m); });
            params.emplace_back("head.w", &head.w);
            params.emplace_back("head.b", &head.b);
            grads.emplace_back("head.w", &head_grad.w);
            grads.emplace_back("head.b", &head_grad.b);
            for (size_t i = 0; i < params.size(); ++i)
                adam.step_tensor(params[i].first, *params[i].second, *grads[i].second, cfg.lr,
                                 0.0, adam_t);
        }
        const double val_acc = evaluate(val, model, head);
        if (val_acc > best_val) {
            best_val = val_acc;
            best_model = model;
            best_head = head;
        }
    }

    EvalReport report;
    report.metric = "accuracy";
    report.num_examples = static_cast<long>(test_rows.size());
    report.value = evaluate(test_rows, best_model, best_head);
    report.per_class.assign(static_cast<size_t>(num_classes), 0.0);
    std::vector<long> correct(static_cast<size_t>(num_classes), 0), total(static_cast<size_t>(num_classes), 0);
    {
        EncoderCache<S> cache;
        Matrix<S> feats, logits;
        for (const int r : test_rows) {
            std::vector<int> one{r};
            forward_features(one, best_model, cache, feats);
            linear_forward(feats, best_head, logits);
            int arg = 0;
            for (int c = 1; c < num_classes; ++c)
                if (logits(0, c) > logits(0, arg)) arg = c;
            const int truth = labels[static_cast<size_t>(r)][0];
            ++total[static_cast<size_t>(truth)];
            if (arg == truth) ++correct[static_cast<size_t>(truth)];
        }
        for (int c = 0; c < num_classes; ++c)
            report.per_class[static_cast<size_t>(c)] =
                total[static_cast<size_t>(c)] > 0
                    ? static_cast<double>(correct[static_cast<size_t>(c)]) /
                          static_cast<double>(total[static_cast<size_t>(c)])
                    : 0.0;
    }
    return report;
}

}  // namespace spectwin
