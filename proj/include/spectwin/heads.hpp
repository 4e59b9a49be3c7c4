// Copyright 2026 The spectwin authors
// Projection heads: the reconstruction decoder (3-layer MLP + transposed
// convolution back to spectrogram space) and the local/global heads
// (3-layer MLP, l2-normalised bottleneck, weight-normalised classifier).
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <string>

#include "spectwin/matrix.hpp"
#include "spectwin/rng.hpp"
#include "spectwin/vit.hpp"

namespace spectwin {

inline constexpr double kL2NormEps = 1e-8;

struct HeadConfig {
    int hidden = 2048;      // width of the two GELU layers
    int bottleneck = 256;   // final MLP layer
    int out_dim = 1024;     // K (local) or C (global) classifier size

    void validate() const {
        if (hidden < 1 || bottleneck < 1 || out_dim < 1)
            throw config_error("head: dims must be positive");
    }
};

// ---------------------------------------------------------------------------
// Reconstruction head: token MLP -> transposed conv (kernel = stride = p)
// ---------------------------------------------------------------------------

template <typename S>
struct ReconHeadParams {
    LinearParam<S> fc1, fc2, fc3;
    Matrix<S> tconv_w;  // bottleneck x p*p
    Matrix<S> tconv_b;  // 1 x 1, one output channel

    void init(int embed_dim, int hidden, int bottleneck, int patch, Rng& rng) {
        fc1.init(embed_dim, hidden, rng);
        fc2.init(hidden, hidden, rng);
        fc3.init(hidden, bottleneck, rng);
        tconv_w = Matrix<S>::trunc_normal(bottleneck, patch * patch, rng, 0.02);
        tconv_b = Matrix<S>(1, 1, S(0));
    }
};

template <typename S, typename F>
void visit_params(ReconHeadParams<S>& p, F&& f, const std::string& prefix) {
    f(prefix + "fc1.w", p.fc1.w);
    f(prefix + "fc1.b", p.fc1.b);
    f(prefix + "fc2.w", p.fc2.w);
    f(prefix + "fc2.b", p.fc2.b);
    f(prefix + "fc3.w", p.fc3.w);
    f(prefix + "fc3.b", p.fc3.b);
    f(prefix + "tconv.w", p.tconv_w);
    f(prefix + "tconv.b", p.tconv_b);
}

template <typename S>
struct ReconHeadCache {
    Matrix<S> tokens_in;  // (B*n) x d
    Matrix<S> h1_pre, h1_phi, h1_act, h2_pre, h2_phi, h2_act, z;  // z: (B*n) x bottleneck
    Matrix<S> tiles;  // (B*n) x p*p
};

/// Data tokens -> per-token tiles. Reassembly into T x F happens per sample
/// with unpatchify.
template <typename S>
void recon_head_forward(const ReconHeadParams<S>& p, const Matrix<S>& tokens,
                        ReconHeadCache<S>& cache) {
    cache.tokens_in = tokens;
    linear_forward(tokens, p.fc1, cache.h1_pre);
    gelu_forward(cache.h1_pre, cache.h1_act, cache.h1_phi);
    linear_forward(cache.h1_act, p.fc2, cache.h2_pre);
    gelu_forward(cache.h2_pre, cache.h2_act, cache.h2_phi);
    linear_forward(cache.h2_act, p.fc3, cache.z);

    // transposed conv with kernel = stride = p and one output channel:
    // each bottleneck vector maps linearly to its own p x p tile.
    cache.tiles.reshape(cache.z.rows(), p.tconv_w.cols());
    const S bias = p.tconv_b(0, 0);
    for (auto& v : cache.tiles.raw()) v = bias;
    gemm_nn(cache.z, p.tconv_w, cache.tiles);
}

template <typename S>
void recon_head_backward(const ReconHeadParams<S>& p, const ReconHeadCache<S>& cache,
                         const Matrix<S>& d_tiles, ReconHeadParams<S>& grads,
                         Matrix<S>& d_tokens) {
    // tconv backward
    Matrix<S> d_z(cache.z.rows(), cache.z.cols());
    gemm_tn(cache.z, d_tiles, grads.tconv_w);
    gemm_nt(d_tiles, p.tconv_w, d_z);
    double b_acc = 0.0;
    for (const auto v : d_tiles.raw()) b_acc += static_cast<double>(v);
    grads.tconv_b(0, 0) += static_cast<S>(b_acc);

    Matrix<S> d_h2_act, d_h1_act;
    linear_backward(cache.h2_act, p.fc3, d_z, d_h2_act, grads.fc3);
    gelu_backward(cache.h2_pre, cache.h2_phi, d_h2_act);
    linear_backward(cache.h1_act, p.fc2, d_h2_act, d_h1_act, grads.fc2);
    gelu_backward(cache.h1_pre, cache.h1_phi, d_h1_act);
    linear_backward(cache.tokens_in, p.fc1, d_h1_act, d_tokens, grads.fc1);
}

// ---------------------------------------------------------------------------
// Projection heads (local K-way, global C-way)
// ---------------------------------------------------------------------------

template <typename S>
struct ProjHeadParams {
    LinearParam<S> fc1, fc2, fc3;
    Matrix<S> classifier_v;  // out_dim x bottleneck; effective rows v / ||v||

    void init(int embed_dim, const HeadConfig& cfg, Rng& rng) {
        cfg.validate();
        fc1.init(embed_dim, cfg.hidden, rng);
        fc2.init(cfg.hidden, cfg.hidden, rng);
        fc3.init(cfg.hidden, cfg.bottleneck, rng);
        classifier_v = Matrix<S>::randn(cfg.out_dim, cfg.bottleneck, rng, 1.0);
        for (int r = 0; r < classifier_v.rows(); ++r) {
            S* row = classifier_v.row(r);
            double norm = 0.0;
            for (int c = 0; c < classifier_v.cols(); ++c)
                norm += static_cast<double>(row[c]) * static_cast<double>(row[c]);
            norm = std::sqrt(norm);
            for (int c = 0; c < classifier_v.cols(); ++c)
                row[c] = static_cast<S>(static_cast<double>(row[c]) / norm);
        }
    }
};

template <typename S, typename F>
void visit_params(ProjHeadParams<S>& p, F&& f, const std::string& prefix) {
    f(prefix + "fc1.w", p.fc1.w);
    f(prefix + "fc1.b", p.fc1.b);
    f(prefix + "fc2.w", p.fc2.w);
    f(prefix + "fc2.b", p.fc2.b);
    f(prefix + "fc3.w", p.fc3.w);
    f(prefix + "fc3.b", p.fc3.b);
    f(prefix + "classifier.v", p.classifier_v);
}

template <typename S>
struct ProjHeadCache {
    Matrix<S> tokens_in;
    Matrix<S> h1_pre, h1_phi, h1_act, h2_pre, h2_phi, h2_act, z;  // z pre-normalisation
    Matrix<S> z_hat;                              // l2-normalised bottleneck
    std::vector<S> z_norm;                        // ||z|| per row
    Matrix<S> w_hat;                              // row-normalised classifier
    std::vector<S> v_norm;                        // ||v|| per classifier row
    Matrix<S> logits;                             // rows x out_dim, in [-1, 1]
};

/// Rows of input -> cosine-similarity logits against unit classifier rows.
template <typename S>
void proj_head_forward(const ProjHeadParams<S>& p, const Matrix<S>& tokens,
                       ProjHeadCache<S>& cache) {
    cache.tokens_in = tokens;
    linear_forward(tokens, p.fc1, cache.h1_pre);
    gelu_forward(cache.h1_pre, cache.h1_act, cache.h1_phi);
    linear_forward(cache.h1_act, p.fc2, cache.h2_pre);
    gelu_forward(cache.h2_pre, cache.h2_act, cache.h2_phi);
    linear_forward(cache.h2_act, p.fc3, cache.z);

    // l2-normalise the bottleneck rows
    const int rows = cache.z.rows();
    const int bd = cache.z.cols();
    cache.z_hat.reshape(rows, bd);
    cache.z_norm.resize(static_cast<size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const S* zr = cache.z.row(r);
        double norm = 0.0;
        for (int c = 0; c < bd; ++c) norm += static_cast<double>(zr[c]) * static_cast<double>(zr[c]);
        norm = std::sqrt(norm);
        cache.z_norm[static_cast<size_t>(r)] = static_cast<S>(norm);
        const double inv = 1.0 / (norm + kL2NormEps);
        S* zh = cache.z_hat.row(r);
        for (int c = 0; c < bd; ++c) zh[c] = static_cast<S>(static_cast<double>(zr[c]) * inv);
    }

    // weight-normalised classifier rows
    const int out = p.classifier_v.rows();
    cache.w_hat.reshape(out, bd);
    cache.v_norm.resize(static_cast<size_t>(out));
    for (int r = 0; r < out; ++r) {
        const S* vr = p.classifier_v.row(r);
        double norm = 0.0;
        for (int c = 0; c < bd; ++c) norm += static_cast<double>(vr[c]) * static_cast<double>(vr[c]);
        norm = std::sqrt(norm);
        cache.v_norm[static_cast<size_t>(r)] = static_cast<S>(norm);
        const double inv = 1.0 / (norm + kL2NormEps);
        S* wh = cache.w_hat.row(r);
        for (int c = 0; c < bd; ++c) wh[c] = static_cast<S>(static_cast<double>(vr[c]) * inv);
    }

    cache.logits.reshape(rows, out);
    cache.logits.fill(S(0));
    gemm_nt(cache.z_hat, cache.w_hat, cache.logits);
}

template <typename S>
void proj_head_backward(const ProjHeadParams<S>& p, const ProjHeadCache<S>& cache,
                        const Matrix<S>& d_logits, ProjHeadParams<S>& grads,
                        Matrix<S>& d_tokens) {
    const int rows = cache.z.rows();
    const int bd = cache.z.cols();
    const int out = p.classifier_v.rows();

    // logits = z_hat * w_hat^T
    Matrix<S> d_z_hat(rows, bd);
    gemm_nn(d_logits, cache.w_hat, d_z_hat);
    Matrix<S> d_w_hat(out, bd);
    gemm_tn(d_logits, cache.z_hat, d_w_hat);

    // Backward of y = x/(||x|| + eps) given cached y and ||x||:
    //   dx = (dy - y * <y, dy> * (||x||+eps)/||x||) / (||x||+eps)
    // (zero-norm rows have y = 0, so the radial term vanishes there).
    auto norm_backward = [](const S* y, const S* dy, double norm, S* dx, int n,
                            bool accumulate) {
        const double denom = norm + kL2NormEps;
        double dot = 0.0;
        for (int c = 0; c < n; ++c)
            dot += static_cast<double>(y[c]) * static_cast<double>(dy[c]);
        const double radial = norm > 0.0 ? dot * denom / norm : 0.0;
        for (int c = 0; c < n; ++c) {
            const S g = static_cast<S>(
                (static_cast<double>(dy[c]) - static_cast<double>(y[c]) * radial) / denom);
            if (accumulate) dx[c] += g;
            else dx[c] = g;
        }
    };

    for (int r = 0; r < out; ++r) {
        norm_backward(cache.w_hat.row(r), d_w_hat.row(r),
                      static_cast<double>(cache.v_norm[static_cast<size_t>(r)]),
                      grads.classifier_v.row(r), bd, true);
    }

    Matrix<S> d_z(rows, bd);
    for (int r = 0; r < rows; ++r) {
        norm_backward(cache.z_hat.row(r), d_z_hat.row(r),
                      static_cast<double>(cache.z_norm[static_cast<size_t>(r)]),
                      d_z.row(r), bd, false);
    }

    Matrix<S> d_h2_act, d_h1_act;
    linear_backward(cache.h2_act, p.fc3, d_z, d_h2_act, grads.fc3);
    gelu_backward(cache.h2_pre, cache.h2_phi, d_h2_act);
    linear_backward(cache.h1_act, p.fc2, d_h2_act, d_h1_act, grads.fc2);
    gelu_backward(cache.h1_pre, cache.h1_phi, d_h1_act);
    linear_backward(cache.tokens_in, p.fc1, d_h1_act, d_tokens, grads.fc1);
}

}  // namespace spectwin
