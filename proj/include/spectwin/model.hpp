// Copyright 2026 The spectwin authors
// Full model: backbone plus reconstruction/local/global heads, the
// student-teacher twin state, and the composed forward/backward used by the
// training step.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <string>
#include <vector>

#include "spectwin/augment.hpp"
#include "spectwin/dsp.hpp"
#include "spectwin/heads.hpp"
#include "spectwin/matrix.hpp"
#include "spectwin/vit.hpp"

namespace spectwin {

struct ModelConfig {
    BackboneConfig backbone;
    int head_hidden = 2048;
    int head_bottleneck = 256;
    int local_classes = 1024;   // K
    int global_classes = 8192;  // C
    int input_frames = 592;
    int input_mels = 128;

    PatchGrid grid() const {
        return PatchGrid::for_shape(input_frames, input_mels, backbone.patch_size);
    }

    void validate() const {
        backbone.validate();
        if (head_hidden < 1 || head_bottleneck < 1)
            throw config_error("model: head dims must be positive");
        if (local_classes < 1 || global_classes < 1)
            throw config_error("model: K and C must be positive");
        if (input_frames < 1 || input_mels < 1)
            throw config_error("model: input shape must be positive");
    }

    /// Desk-scale preset: small enough for single-core training runs.
    static ModelConfig tiny(int frames = 96, int mels = 128) {
        ModelConfig c;
        c.backbone = BackboneConfig::preset("tiny");
        c.head_hidden = 256;
        c.head_bottleneck = 64;
        c.local_classes = 256;
        c.global_classes = 512;
        c.input_frames = frames;
        c.input_mels = mels;
        return c;
    }
};

template <typename S>
struct ModelParams {
    ModelConfig cfg;
    BackboneParams<S> backbone;
    ReconHeadParams<S> recon;
    ProjHeadParams<S> local;
    ProjHeadParams<S> global_;

    void init(const ModelConfig& c, Rng& rng) {
        c.validate();
        cfg = c;
        backbone.init(c.backbone, c.grid(), rng);
        recon.init(c.backbone.embed_dim, c.head_hidden, c.head_bottleneck,
                   c.backbone.patch_size, rng);
        HeadConfig lc{c.head_hidden, c.head_bottleneck, c.local_classes};
        HeadConfig gc{c.head_hidden, c.head_bottleneck, c.global_classes};
        local.init(c.backbone.embed_dim, lc, rng);
        global_.init(c.backbone.embed_dim, gc, rng);
    }
};

template <typename S, typename F>
void visit_params(ModelParams<S>& p, F&& f) {
    visit_params(p.backbone, f, "backbone.");
    visit_params(p.recon, f, "recon.");
    visit_params(p.local, f, "local.");
    visit_params(p.global_, f, "global.");
}

template <typename S>
long param_count(ModelParams<S>& p, bool backbone_only = false) {
    long count = 0;
    if (backbone_only) {
        visit_params(p.backbone, [&](const std::string&, Matrix<S>& m) {
            count += static_cast<long>(m.size());
        });
    } else {
        visit_params(p, [&](const std::string&, Matrix<S>& m) {
            count += static_cast<long>(m.size());
        });
    }
    return count;
}

/// Gradient buffers shaped like the model, zeroed.
template <typename S>
ModelParams<S> make_grads(ModelParams<S>& like) {
    ModelParams<S> g = like;
    visit_params(g, [](const std::string&, Matrix<S>& m) { m.fill(S(0)); });
    return g;
}

template <typename S>
void zero_params(ModelParams<S>& g) {
    visit_params(g, [](const std::string&, Matrix<S>& m) { m.fill(S(0)); });
}

// ---------------------------------------------------------------------------
// Composed forward/backward
// ---------------------------------------------------------------------------

template <typename S>
struct ModelCache {
    int batch = 0;
    int n_tokens = 0;
    EncoderCache<S> enc;
    Matrix<S> data_tokens;  // (B*n) x d
    Matrix<S> cls_tokens;   // B x d
    ReconHeadCache<S> recon;
    ProjHeadCache<S> local;
    ProjHeadCache<S> global_;
    bool ran_recon = false, ran_local = false, ran_global = false;
};

/// Stack a batch of equally-shaped spectrograms into one patch matrix.
template <typename S>
Matrix<S> batch_patches(const std::vector<const Matrix<S>*>& specs, int patch) {
    const int n = PatchGrid::for_shape(specs[0]->rows(), specs[0]->cols(), patch).tokens();
    Matrix<S> out(static_cast<int>(specs.size()) * n, patch * patch);
    for (size_t b = 0; b < specs.size(); ++b) {
        const Matrix<S> p = patchify(*specs[b], patch);
        for (int r = 0; r < n; ++r)
            std::copy(p.row(r), p.row(r) + p.cols(), out.row(static_cast<int>(b) * n + r));
    }
    return out;
}

/// Encoder + selected heads over a batch of spectrogram views.
template <typename S>
void model_forward(ModelParams<S>& params, const std::vector<const Matrix<S>*>& views,
                   ModelCache<S>& cache, bool want_recon, bool want_local, bool want_global,
                   bool train_mode = false, Rng* rng = nullptr) {
    const int batch = static_cast<int>(views.size());
    const int n = params.backbone.grid.tokens();
    const int d = params.cfg.backbone.embed_dim;
    const int seq = n + 1;

    const Matrix<S> patches = batch_patches(views, params.cfg.backbone.patch_size);
    encoder_forward(params.backbone, patches, batch, cache.enc, train_mode, rng);
    if (!cache.enc.out.all_finite())
        throw numeric_error("model: non-finite activations in the encoder output");

    cache.batch = batch;
    cache.n_tokens = n;
    cache.data_tokens.reshape(batch * n, d);
    cache.cls_tokens.reshape(batch, d);
    for (int b = 0; b < batch; ++b) {
        std::copy(cache.enc.out.row(b * seq), cache.enc.out.row(b * seq) + d,
                  cache.cls_tokens.row(b));
        for (int i = 0; i < n; ++i)
            std::copy(cache.enc.out.row(b * seq + i + 1), cache.enc.out.row(b * seq + i + 1) + d,
                      cache.data_tokens.row(b * n + i));
    }

    cache.ran_recon = want_recon;
    cache.ran_local = want_local;
    cache.ran_global = want_global;
    if (want_recon) recon_head_forward(params.recon, cache.data_tokens, cache.recon);
    if (want_local) proj_head_forward(params.local, cache.data_tokens, cache.local);
    if (want_global) proj_head_forward(params.global_, cache.cls_tokens, cache.global_);
}

/// Backward from head-output gradients into parameter gradients. Null
/// gradient pointers skip the corresponding head.
template <typename S>
void model_backward(ModelParams<S>& params, ModelCache<S>& cache, const Matrix<S>* d_tiles,
                    const Matrix<S>* d_local_logits, const Matrix<S>* d_global_logits,
                    ModelParams<S>& grads) {
    const int batch = cache.batch;
    const int n = cache.n_tokens;
    const int d = params.cfg.backbone.embed_dim;
    const int seq = n + 1;

    Matrix<S> d_data(batch * n, d, S(0));
    Matrix<S> d_cls(batch, d, S(0));

    Matrix<S> d_tmp;
    if (d_tiles) {
        if (!cache.ran_recon) throw config_error("model: recon head was not run forward");
        recon_head_backward(params.recon, cache.recon, *d_tiles, grads.recon, d_tmp);
        axpy(S(1), d_tmp, d_data);
    }
    if (d_local_logits) {
        if (!cache.ran_local) throw config_error("model: local head was not run forward");
        proj_head_backward(params.local, cache.local, *d_local_logits, grads.local, d_tmp);
        axpy(S(1), d_tmp, d_data);
    }
    if (d_global_logits) {
        if (!cache.ran_global) throw config_error("model: global head was not run forward");
        proj_head_backward(params.global_, cache.global_, *d_global_logits, grads.global_, d_tmp);
        axpy(S(1), d_tmp, d_cls);
    }

    Matrix<S> d_enc_out(batch * seq, d, S(0));
    for (int b = 0; b < batch; ++b) {
        std::copy(d_cls.row(b), d_cls.row(b) + d, d_enc_out.row(b * seq));
        for (int i = 0; i < n; ++i)
            std::copy(d_data.row(b * n + i), d_data.row(b * n + i) + d,
                      d_enc_out.row(b * seq + i + 1));
    }
    encoder_backward(params.backbone, cache.enc, d_enc_out, grads.backbone);
}

// ---------------------------------------------------------------------------
// Twin state
// ---------------------------------------------------------------------------

/// Student, EMA teacher, and the centring vectors. The teacher carries no
/// gradient or optimiser state; it only ever changes through ema_update.
template <typename S>
struct TwinModelState {
    ModelParams<S> student;
    ModelParams<S> teacher;
    Matrix<S> center_global;  // 1 x C
    Matrix<S> center_local;   // 1 x K
    long step = 0;

    void init(const ModelConfig& cfg, Rng& rng) {
        student.init(cfg, rng);
        teacher = student;  // teacher starts as an exact copy
        center_global = Matrix<S>(1, cfg.global_classes, S(0));
        center_local = Matrix<S>(1, cfg.local_classes, S(0));
        step = 0;
    }
};

/// phi <- lambda * phi + (1 - lambda) * theta, elementwise. Student untouched.
template <typename S>
void ema_update(TwinModelState<S>& state, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0))
        throw config_error("ema_update: lambda must lie in [0, 1]");
    std::vector<Matrix<S>*> student_tensors, teacher_tensors;
    visit_params(state.student,
                 [&](const std::string&, Matrix<S>& m) { student_tensors.push_back(&m); });
    visit_params(state.teacher,
                 [&](const std::string&, Matrix<S>& m) { teacher_tensors.push_back(&m); });
    if (student_tensors.size() != teacher_tensors.size())
        throw data_error("ema_update: twin parameter lists diverge (corrupt state)");
    for (size_t i = 0; i < student_tensors.size(); ++i) {
        Matrix<S>& th = *student_tensors[i];
        Matrix<S>& ph = *teacher_tensors[i];
        if (th.rows() != ph.rows() || th.cols() != ph.cols())
            throw data_error("ema_update: tensor shape mismatch (corrupt state)");
        S* pp = ph.data();
        const S* tp = th.data();
        for (size_t j = 0; j < ph.size(); ++j)
            pp[j] = static_cast<S>(lambda * static_cast<double>(pp[j]) +
                                   (1.0 - lambda) * static_cast<double>(tp[j]));
    }
}

}  // namespace spectwin
