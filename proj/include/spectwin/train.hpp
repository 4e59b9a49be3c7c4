// Copyright 2026 The spectwin authors
// The pretraining step: corrupt both views, run the clean views through the
// EMA teacher and the corrupted views through the student, combine the three
// objectives, update the student with Adam, then the teacher and centres.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "spectwin/augment.hpp"
#include "spectwin/losses.hpp"
#include "spectwin/model.hpp"
#include "spectwin/optim.hpp"
#include "spectwin/schedule.hpp"

namespace spectwin {

/// Distillation knobs. Teacher must be sharper than the student.
struct DistillConfig {
    double tau_teacher = 0.07;
    double tau_student = 0.1;
    double lambda_start = 0.996;  // EMA coefficient, cosine to lambda_end
    double lambda_end = 1.0;
    double center_momentum = 0.9;
    bool center_local_head = true;  // centre the local head as well as the global

    void validate() const {
        if (!(tau_teacher > 0.0 && tau_student > 0.0))
            throw config_error("distill: temperatures must be positive");
        if (!(tau_teacher < tau_student))
            throw config_error("distill: teacher temperature must be below the student's");
        if (lambda_start < 0.0 || lambda_start > 1.0 || lambda_end < 0.0 || lambda_end > 1.0)
            throw config_error("distill: lambda must lie in [0, 1]");
        if (!(center_momentum > 0.0 && center_momentum < 1.0))
            throw config_error("distill: centre momentum must lie in (0, 1)");
    }
};

struct TrainConfig {
    double base_lr = 5e-4;
    double final_lr = 1e-6;
    double warmup_frac = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay_start = 0.04;
    double weight_decay_end = 0.4;
    int batch_size = 32;
    int epochs = 30;
    uint64_t seed = 42;
    LossToggles toggles;
    LossWeights weights;
    LossReduction reduction = LossReduction::mean_over_masked;
    bool corrupt_both_views = true;  // false: only view_a is corrupted/learned from
    int checkpoint_every_epochs = 10;

    void validate() const {
        if (!(base_lr > 0.0)) throw config_error("train: base_lr must be positive");
        if (batch_size < 1) throw config_error("train: batch_size must be >= 1");
        if (epochs < 0) throw config_error("train: epochs must be >= 0");
        if (warmup_frac < 0.0 || warmup_frac > 1.0)
            throw config_error("train: warmup_frac must lie in [0, 1]");
        if (toggles.enabled_count() == 0)
            throw config_error("train: all loss toggles are off");
    }
};

struct StepMetrics {
    long step = 0;
    double lr = 0.0;
    double weight_decay = 0.0;
    double lambda = 0.0;
    double loss_recon = 0.0;
    double loss_local = 0.0;
    double loss_global = 0.0;
    double loss_total = 0.0;
};

/// One training batch: clean view pairs plus a per-clip random stream for
/// the corruption draws (derived from global seed, clip id and epoch by the
/// data pipeline).
template <typename S>
struct TrainBatch {
    std::vector<ViewPair<S>> pairs;
    std::vector<Rng> rngs;
    std::vector<std::string> ids;
};

namespace train_detail {

/// Concatenated token mask for a batch of corruption records.
inline std::vector<uint8_t> stack_token_masks(const std::vector<CorruptionRecord>& recs) {
    std::vector<uint8_t> out;
    for (const auto& r : recs) out.insert(out.end(), r.token_mask.begin(), r.token_mask.end());
    return out;
}

}  // namespace train_detail

/// Everything train_step needs beyond the twin state, including reusable
/// forward/backward workspaces (the multi-megabyte activation caches would
/// otherwise be reallocated every step).
template <typename S>
struct Trainer {
    DistillConfig distill;
    TrainConfig train;
    MaskConfig mask;
    Adam<S> adam;
    long total_steps = 1;  // schedule horizon

    ModelCache<S> teacher_cache;
    ModelCache<S> student_cache;
    ModelParams<S> grads;
    bool grads_ready = false;

    Trainer(const DistillConfig& d, const TrainConfig& t, const MaskConfig& m, long steps)
        : distill(d), train(t), mask(m), adam(AdamConfig{t.beta1, t.beta2, 1e-8}),
          total_steps(std::max(1L, steps)) {
        d.validate();
        t.validate();
#if defined(__GLIBC__)
        // keep the big activation buffers inside the arena instead of
        // mmap/munmap churn (kernel page zeroing dominated step time)
        mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
#endif
    }
};

/// One optimisation step over a batch of clean view pairs. Returns the loss
/// parts; the twin state advances in place. Deterministic given the batch
/// rng streams.
template <typename S>
StepMetrics train_step(TwinModelState<S>& state, TrainBatch<S>& batch, Trainer<S>& trainer) {
    if (batch.pairs.empty()) throw data_error("train_step: empty batch");
    if (batch.rngs.size() != batch.pairs.size())
        throw data_error("train_step: one rng stream per pair required");

    const auto& toggles = trainer.train.toggles;
    const int patch = state.student.cfg.backbone.patch_size;
    const int b_clips = static_cast<int>(batch.pairs.size());
    const bool both_views = trainer.train.corrupt_both_views;
    const int views_per_clip = both_views ? 2 : 1;
    const int b_views = b_clips * views_per_clip;

    // --- corruption -------------------------------------------------------
    // Alien fill comes from the other view of the previous clip in the batch
    // (a different recording after shuffling).
    std::vector<Spectrogram<S>> corrupted(static_cast<size_t>(b_views));
    std::vector<CorruptionRecord> records(static_cast<size_t>(b_views));
    std::vector<const Matrix<S>*> clean_views(static_cast<size_t>(b_views));
    std::vector<const Matrix<S>*> student_views(static_cast<size_t>(b_views));
    for (int i = 0; i < b_clips; ++i) {
        const auto& vp = batch.pairs[static_cast<size_t>(i)];
        const auto& alien_vp = batch.pairs[static_cast<size_t>((i + b_clips - 1) % b_clips)];
        Rng& rng = batch.rngs[static_cast<size_t>(i)];
        {
            auto [xc, rec] = apply_corruption(vp.view_a, alien_vp.view_b, trainer.mask, rng);
            corrupted[static_cast<size_t>(i * views_per_clip)] = std::move(xc);
            records[static_cast<size_t>(i * views_per_clip)] = std::move(rec);
            clean_views[static_cast<size_t>(i * views_per_clip)] = &vp.view_a.values;
        }
        if (both_views) {
            auto [xc, rec] = apply_corruption(vp.view_b, alien_vp.view_a, trainer.mask, rng);
            corrupted[static_cast<size_t>(i * 2 + 1)] = std::move(xc);
            records[static_cast<size_t>(i * 2 + 1)] = std::move(rec);
            clean_views[static_cast<size_t>(i * 2 + 1)] = &vp.view_b.values;
        }
    }
    for (int v = 0; v < b_views; ++v)
        student_views[static_cast<size_t>(v)] = &corrupted[static_cast<size_t>(v)].values;

    // Teacher always sees both clean views (the global loss is cross-view).
    std::vector<const Matrix<S>*> teacher_views(static_cast<size_t>(2 * b_clips));
    for (int i = 0; i < b_clips; ++i) {
        teacher_views[static_cast<size_t>(2 * i)] = &batch.pairs[static_cast<size_t>(i)].view_a.values;
        teacher_views[static_cast<size_t>(2 * i + 1)] = &batch.pairs[static_cast<size_t>(i)].view_b.values;
    }

    // --- forward ----------------------------------------------------------
    ModelCache<S>& teacher_cache = trainer.teacher_cache;
    model_forward(state.teacher, teacher_views, teacher_cache, /*recon=*/false,
                  toggles.local, toggles.global_, /*train_mode=*/false);

    ModelCache<S>& student_cache = trainer.student_cache;
    model_forward(state.student, student_views, student_cache, toggles.recon, toggles.local,
                  toggles.global_, /*train_mode=*/true,
                  &batch.rngs[0]);

    const int n_tok = state.student.backbone.grid.tokens();

    // --- losses -----------------------------------------------------------
    double loss_recon = 0.0, loss_local = 0.0, loss_global = 0.0;
    Matrix<S> d_tiles, d_local, d_global;

    if (toggles.recon) {
        // Tile-space comparison: same pixels, same masked set; padded tile
        // entries are never masked.
        Matrix<S> clean_tiles(b_views * n_tok, patch * patch);
        Matrix<uint8_t> mask_tiles(b_views * n_tok, patch * patch);
        for (int v = 0; v < b_views; ++v) {
            const Matrix<S> ct = patchify(*clean_views[static_cast<size_t>(v)], patch);
            const Matrix<uint8_t> mt = patchify(records[static_cast<size_t>(v)].pixel_mask, patch);
            for (int r = 0; r < n_tok; ++r) {
                std::copy(ct.row(r), ct.row(r) + ct.cols(), clean_tiles.row(v * n_tok + r));
                std::copy(mt.row(r), mt.row(r) + mt.cols(), mask_tiles.row(v * n_tok + r));
            }
        }
        loss_recon = recon_loss(clean_tiles, student_cache.recon.tiles, mask_tiles, &d_tiles,
                                trainer.train.reduction);
    }

    std::vector<uint8_t> token_mask;
    if (toggles.local) {
        token_mask = train_detail::stack_token_masks(records);
        // Teacher tokens for the same views the student saw (view order is
        // identical when both views are corrupted; otherwise take view_a).
        Matrix<S> teacher_probs;
        if (both_views) {
            teacher_probs = center_then_sharpen(teacher_cache.local.logits, state.center_local,
                                                trainer.distill.tau_teacher);
        } else {
            Matrix<S> t_logits(b_clips * n_tok, state.student.cfg.local_classes);
            for (int i = 0; i < b_clips; ++i)
                for (int r = 0; r < n_tok; ++r)
                    std::copy(teacher_cache.local.logits.row((2 * i) * n_tok + r),
                              teacher_cache.local.logits.row((2 * i) * n_tok + r) +
                                  t_logits.cols(),
                              t_logits.row(i * n_tok + r));
            teacher_probs =
                center_then_sharpen(t_logits, state.center_local, trainer.distill.tau_teacher);
        }
        loss_local = local_distill_loss(student_cache.local.logits, teacher_probs, token_mask,
                                        trainer.distill.tau_student, &d_local,
                                        trainer.train.reduction);
    }

    if (toggles.global_) {
        // split per-view class logits into the two views
        const int c_dim = state.student.cfg.global_classes;
        Matrix<S> s_a(b_clips, c_dim), s_b(b_clips, c_dim);
        Matrix<S> t_a(b_clips, c_dim), t_b(b_clips, c_dim);
        for (int i = 0; i < b_clips; ++i) {
            std::copy(teacher_cache.global_.logits.row(2 * i),
                      teacher_cache.global_.logits.row(2 * i) + c_dim, t_a.row(i));
            std::copy(teacher_cache.global_.logits.row(2 * i + 1),
                      teacher_cache.global_.logits.row(2 * i + 1) + c_dim, t_b.row(i));
            if (both_views) {
                std::copy(student_cache.global_.logits.row(2 * i),
                          student_cache.global_.logits.row(2 * i) + c_dim, s_a.row(i));
                std::copy(student_cache.global_.logits.row(2 * i + 1),
                          student_cache.global_.logits.row(2 * i + 1) + c_dim, s_b.row(i));
            } else {
                std::copy(student_cache.global_.logits.row(i),
                          student_cache.global_.logits.row(i) + c_dim, s_a.row(i));
            }
        }
        const Matrix<S> pt_a =
            center_then_sharpen(t_a, state.center_global, trainer.distill.tau_teacher);
        const Matrix<S> pt_b =
            center_then_sharpen(t_b, state.center_global, trainer.distill.tau_teacher);
        Matrix<S> d_s_a, d_s_b;
        if (both_views) {
            loss_global = global_distill_loss(s_a, s_b, pt_a, pt_b, trainer.distill.tau_student,
                                              &d_s_a, &d_s_b);
        } else {
            // single corrupted view: match it to the teacher's other view only
            d_s_a.resize(b_clips, c_dim);
            double acc = 0.0;
            const double scale = 1.0 / static_cast<double>(b_clips);
            for (int r = 0; r < b_clips; ++r)
                acc += loss_detail::ce_row_through_softmax(pt_b.row(r), s_a.row(r), c_dim,
                                                           trainer.distill.tau_student, scale,
                                                           d_s_a.row(r));
            loss_global = acc * scale;
        }

        // reassemble the per-view gradient layout
        d_global.resize(student_cache.global_.logits.rows(), c_dim);
        d_global.fill(S(0));
        for (int i = 0; i < b_clips; ++i) {
            if (both_views) {
                std::copy(d_s_a.row(i), d_s_a.row(i) + c_dim, d_global.row(2 * i));
                std::copy(d_s_b.row(i), d_s_b.row(i) + c_dim, d_global.row(2 * i + 1));
            } else {
                std::copy(d_s_a.row(i), d_s_a.row(i) + c_dim, d_global.row(i));
            }
        }
    }

    const double total =
        total_loss(loss_recon, loss_local, loss_global, toggles, trainer.train.weights);
    if (!std::isfinite(total)) {
        std::ostringstream msg;
        msg << "train_step: non-finite loss at step " << state.step << " (recon=" << loss_recon
            << ", local=" << loss_local << ", global=" << loss_global << "; batch:";
        for (const auto& id : batch.ids) msg << ' ' << id;
        msg << ")";
        throw numeric_error(msg.str());
    }

    // --- backward through the student only ---------------------------------
    const double n_enabled = toggles.enabled_count();
    const auto& w = trainer.train.weights;
    if (toggles.recon) {
        const S s = static_cast<S>(w.alpha_recon / n_enabled);
        for (auto& v : d_tiles.raw()) v *= s;
    }
    if (toggles.local) {
        const S s = static_cast<S>(w.alpha_local / n_enabled);
        for (auto& v : d_local.raw()) v *= s;
    }
    if (toggles.global_) {
        const S s = static_cast<S>(w.alpha_global / n_enabled);
        for (auto& v : d_global.raw()) v *= s;
    }

    if (!trainer.grads_ready) {
        trainer.grads = make_grads(state.student);
        trainer.grads_ready = true;
    } else {
        zero_params(trainer.grads);
    }
    ModelParams<S>& grads = trainer.grads;
    model_backward(state.student, student_cache, toggles.recon ? &d_tiles : nullptr,
                   toggles.local ? &d_local : nullptr, toggles.global_ ? &d_global : nullptr,
                   grads);

    // --- optimiser, EMA, centres -------------------------------------------
    StepMetrics metrics;
    metrics.step = state.step;
    metrics.lr = lr_at_step(state.step, trainer.total_steps, trainer.train.base_lr,
                            trainer.train.final_lr, trainer.train.warmup_frac);
    metrics.weight_decay = cosine_schedule(trainer.train.weight_decay_start,
                                           trainer.train.weight_decay_end, state.step,
                                           trainer.total_steps);
    metrics.lambda = cosine_schedule(trainer.distill.lambda_start, trainer.distill.lambda_end,
                                     state.step, trainer.total_steps);
    metrics.loss_recon = loss_recon;
    metrics.loss_local = loss_local;
    metrics.loss_global = loss_global;
    metrics.loss_total = total;

    const long adam_t = state.step + 1;
    std::vector<std::pair<std::string, Matrix<S>*>> param_list, grad_list;
    visit_params(state.student, [&](const std::string& name, Matrix<S>& m) {
        param_list.emplace_back(name, &m);
    });
    visit_params(grads, [&](const std::string& name, Matrix<S>& m) {
        grad_list.emplace_back(name, &m);
    });
    for (size_t i = 0; i < param_list.size(); ++i)
        trainer.adam.step_tensor(param_list[i].first, *param_list[i].second,
                                 *grad_list[i].second, metrics.lr, metrics.weight_decay, adam_t);

    ema_update(state, metrics.lambda);

    if (toggles.local && trainer.distill.center_local_head)
        update_center(state.center_local, teacher_cache.local.logits,
                      trainer.distill.center_momentum);
    if (toggles.global_)
        update_center(state.center_global, teacher_cache.global_.logits,
                      trainer.distill.center_momentum);

    ++state.step;
    return metrics;
}

}  // namespace spectwin
