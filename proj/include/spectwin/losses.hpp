// Copyright 2026 The spectwin authors
// The three training objectives: masked L1 reconstruction, local token
// distillation, cross-view global distillation, plus softmax sharpening and
// teacher centring. Each loss returns its value and the gradient w.r.t. the
// student-side input; teacher inputs are treated as constants.
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <cmath>
#include <type_traits>
#include <cstdint>
#include <vector>

#include "spectwin/common.hpp"
#include "spectwin/matrix.hpp"

namespace spectwin {

enum class LossReduction : uint8_t { mean_over_masked = 0, raw_sum = 1 };

/// Masked L1: sum over masked pixels of |x - x_rec|, divided by the masked
/// count (or left as the raw sum). Batch entries are concatenated rows.
/// Returns 0 with `empty_mask` set when nothing is masked.
template <typename S>
double recon_loss(const Matrix<S>& x, const Matrix<S>& x_rec, const Matrix<uint8_t>& mask,
                  std::type_identity_t<Matrix<S>>* d_x_rec = nullptr,
                  LossReduction reduction = LossReduction::mean_over_masked,
                  bool* empty_mask = nullptr) {
    if (x.rows() != x_rec.rows() || x.cols() != x_rec.cols() || x.rows() != mask.rows() ||
        x.cols() != mask.cols())
        throw config_error("recon_loss: shape mismatch");

    long masked = 0;
    for (const auto v : mask.raw()) masked += v;
    if (empty_mask) *empty_mask = (masked == 0);
    if (d_x_rec) {
        d_x_rec->resize(x.rows(), x.cols());
        d_x_rec->fill(S(0));
    }
    if (masked == 0) return 0.0;

    const double scale = reduction == LossReduction::mean_over_masked
                             ? 1.0 / static_cast<double>(masked)
                             : 1.0;
    double acc = 0.0;
    for (int r = 0; r < x.rows(); ++r) {
        const S* xr = x.row(r);
        const S* rr = x_rec.row(r);
        const uint8_t* mr = mask.row(r);
        S* dr = d_x_rec ? d_x_rec->row(r) : nullptr;
        for (int c = 0; c < x.cols(); ++c) {
            if (!mr[c]) continue;
            const double diff = static_cast<double>(xr[c]) - static_cast<double>(rr[c]);
            acc += std::abs(diff);
            if (dr) {
                // d|x - y|/dy = -sign(x - y); zero at the kink
                dr[c] = static_cast<S>(diff > 0.0 ? -scale : (diff < 0.0 ? scale : 0.0));
            }
        }
    }
    return acc * scale;
}

/// softmax(logits / tau) row-wise, max-subtracted.
template <typename S>
Matrix<S> sharpen(const Matrix<S>& logits, double tau) {
    if (!(tau > 0.0)) throw config_error("sharpen: temperature must be positive");
    const S inv_tau = static_cast<S>(1.0 / tau);
    Matrix<S> p(logits.rows(), logits.cols());
    for (int r = 0; r < logits.rows(); ++r) {
        const S* lr = logits.row(r);
        S* pr = p.row(r);
        S mx = lr[0];
        for (int c = 1; c < logits.cols(); ++c) mx = std::max(mx, lr[c]);
        double sum = 0.0;
        for (int c = 0; c < logits.cols(); ++c) {
            const S e = fast_exp((lr[c] - mx) * inv_tau);
            pr[c] = e;
            sum += static_cast<double>(e);
        }
        const S inv = static_cast<S>(1.0 / sum);
        for (int c = 0; c < logits.cols(); ++c) pr[c] *= inv;
    }
    return p;
}

namespace loss_detail {

/// Row cross-entropy -sum_j p_t(j) log softmax(z/tau)_j via log-sum-exp,
/// writing the gradient (softmax - p_t)/tau * scale when requested. Returns
/// the row CE. One log per row instead of one per class.
template <typename S>
double ce_row_through_softmax(const S* teacher, const S* logits, int n, double tau,
                              double scale, S* grad) {
    const S inv_tau = static_cast<S>(1.0 / tau);
    S mx = logits[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, logits[c]);
    double sum = 0.0;
    double dot = 0.0;  // sum_j p_t(j) * (z_j - mx)/tau
    for (int c = 0; c < n; ++c) {
        const S shifted = (logits[c] - mx) * inv_tau;
        const S e = fast_exp(shifted);
        if (grad) grad[c] = e;  // scratch: normalised below
        sum += static_cast<double>(e);
        dot += static_cast<double>(teacher[c]) * static_cast<double>(shifted);
    }
    const double lse = std::log(sum);
    if (grad) {
        const S inv = static_cast<S>(1.0 / sum);
        const S g_scale = static_cast<S>(scale / tau);
        for (int c = 0; c < n; ++c)
            grad[c] = (grad[c] * inv - teacher[c]) * g_scale;
    }
    return lse - dot;
}

}  // namespace loss_detail

/// Teacher path: subtract the running centre, then sharpen.
template <typename S>
Matrix<S> center_then_sharpen(const Matrix<S>& logits, const Matrix<S>& center, double tau) {
    if (center.rows() != 1 || center.cols() != logits.cols())
        throw config_error("center_then_sharpen: centre shape mismatch");
    Matrix<S> shifted = logits;
    for (int r = 0; r < shifted.rows(); ++r) {
        S* row = shifted.row(r);
        const S* c = center.data();
        for (int j = 0; j < shifted.cols(); ++j) row[j] -= c[j];
    }
    return sharpen(shifted, tau);
}

/// Cross-entropy distillation on masked tokens:
///   sum_i T_i * sum_j -p_t(i,j) log p_s(i,j),
/// normalised by the masked-token count. Rows of student_logits/teacher_probs
/// are tokens (batch concatenated); d_student_logits gets the gradient
/// through the student softmax at temperature tau_s.
template <typename S>
double local_distill_loss(const Matrix<S>& student_logits, const Matrix<S>& teacher_probs,
                          const std::vector<uint8_t>& token_mask, double tau_s,
                          std::type_identity_t<Matrix<S>>* d_student_logits = nullptr,
                          LossReduction reduction = LossReduction::mean_over_masked,
                          bool* empty_mask = nullptr) {
    if (student_logits.rows() != teacher_probs.rows() ||
        student_logits.cols() != teacher_probs.cols())
        throw config_error("local_distill_loss: logits shape mismatch");
    if (static_cast<int>(token_mask.size()) != student_logits.rows())
        throw config_error("local_distill_loss: token mask length mismatch");

    long masked = 0;
    for (const auto v : token_mask) masked += v;
    if (empty_mask) *empty_mask = (masked == 0);
    if (d_student_logits) {
        d_student_logits->resize(student_logits.rows(), student_logits.cols());
        d_student_logits->fill(S(0));
    }
    if (masked == 0) return 0.0;

    const double scale = reduction == LossReduction::mean_over_masked
                             ? 1.0 / static_cast<double>(masked)
                             : 1.0;
    double acc = 0.0;
    for (int r = 0; r < student_logits.rows(); ++r) {
        if (!token_mask[static_cast<size_t>(r)]) continue;
        acc += loss_detail::ce_row_through_softmax(
            teacher_probs.row(r), student_logits.row(r), student_logits.cols(), tau_s, scale,
            d_student_logits ? d_student_logits->row(r) : nullptr);
    }
    return acc * scale;
}

/// Cross-view class-token distillation, symmetric over the two views:
///   0.5 * [ CE(p_t(b) || p_s(a)) + CE(p_t(a) || p_s(b)) ], batch-averaged.
/// Rows are batch entries. A view is never compared with itself.
template <typename S>
double global_distill_loss(const Matrix<S>& student_logits_a, const Matrix<S>& student_logits_b,
                           const Matrix<S>& teacher_probs_a, const Matrix<S>& teacher_probs_b,
                           double tau_s, std::type_identity_t<Matrix<S>>* d_student_a = nullptr,
                           std::type_identity_t<Matrix<S>>* d_student_b = nullptr) {
    if (student_logits_a.rows() != student_logits_b.rows() ||
        teacher_probs_a.rows() != student_logits_a.rows() ||
        teacher_probs_b.rows() != student_logits_a.rows())
        throw config_error("global_distill_loss: batch mismatch");

    const int batch = student_logits_a.rows();
    const int dim = student_logits_a.cols();
    const double scale = 0.5 / static_cast<double>(batch);

    if (d_student_a) d_student_a->resize(batch, dim);
    if (d_student_b) d_student_b->resize(batch, dim);

    double acc = 0.0;
    for (int r = 0; r < batch; ++r) {
        // student view a chases the teacher's view b and vice versa
        acc += loss_detail::ce_row_through_softmax(
            teacher_probs_b.row(r), student_logits_a.row(r), dim, tau_s, scale,
            d_student_a ? d_student_a->row(r) : nullptr);
        acc += loss_detail::ce_row_through_softmax(
            teacher_probs_a.row(r), student_logits_b.row(r), dim, tau_s, scale,
            d_student_b ? d_student_b->row(r) : nullptr);
    }
    return acc * scale;
}

struct LossToggles {
    bool recon = true;
    bool local = true;
    bool global_ = true;

    int enabled_count() const {
        return (recon ? 1 : 0) + (local ? 1 : 0) + (global_ ? 1 : 0);
    }
};

struct LossWeights {
    double alpha_recon = 1.0;
    double alpha_local = 1.0;
    double alpha_global = 1.0;
};

/// Mean of the enabled, alpha-weighted parts.
inline double total_loss(double recon, double local, double global_, const LossToggles& t,
                         const LossWeights& w = {}) {
    if (t.enabled_count() == 0)
        throw config_error("total_loss: at least one objective must be enabled");
    double sum = 0.0;
    if (t.recon) sum += w.alpha_recon * recon;
    if (t.local) sum += w.alpha_local * local;
    if (t.global_) sum += w.alpha_global * global_;
    return sum / t.enabled_count();
}

/// center <- m * center + (1 - m) * column mean of the batch logits.
template <typename S>
void update_center(Matrix<S>& center, const Matrix<S>& teacher_batch_logits, double m) {
    if (!(m > 0.0 && m < 1.0)) throw config_error("update_center: momentum must be in (0,1)");
    if (center.cols() != teacher_batch_logits.cols() || center.rows() != 1)
        throw config_error("update_center: shape mismatch");
    const int rows = teacher_batch_logits.rows();
    if (rows == 0) return;
    for (int c = 0; c < center.cols(); ++c) {
        double mean = 0.0;
        for (int r = 0; r < rows; ++r)
            mean += static_cast<double>(teacher_batch_logits(r, c));
        mean /= rows;
        center(0, c) = static_cast<S>(m * static_cast<double>(center(0, c)) + (1.0 - m) * mean);
    }
}

}  // namespace spectwin
