// Copyright 2026 The spectwin authors
// Dense row-major matrix plus the GEMM kernels the training loop lives on.
// Kernels are axpy-ordered so the inner loop is contiguous and the
// accumulation order of every output element is fixed (bitwise reproducible
// runs regardless of optimisation level).
//
// Licensed under the Apache License, Version 2.0

#pragma once

#include <algorithm>
#include <cassert>
#include <cstddef>
#include <vector>

#include "spectwin/common.hpp"
#include "spectwin/rng.hpp"

namespace spectwin {

template <typename S>
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, S fill = S(0))
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

    static Matrix randn(int rows, int cols, Rng& rng, double stddev = 1.0) {
        Matrix m(rows, cols);
        for (auto& v : m.data_) v = static_cast<S>(rng.normal(0.0, stddev));
        return m;
    }

    static Matrix trunc_normal(int rows, int cols, Rng& rng, double stddev) {
        Matrix m(rows, cols);
        for (auto& v : m.data_) v = static_cast<S>(rng.truncated_normal(stddev));
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    S* data() { return data_.data(); }
    const S* data() const { return data_.data(); }
    S* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
    const S* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

    S& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    S operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    bool operator==(const Matrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
    }

    void fill(S v) { std::fill(data_.begin(), data_.end(), v); }
    void resize(int rows, int cols, S fill = S(0)) {
        rows_ = rows;
        cols_ = cols;
        data_.assign(static_cast<size_t>(rows) * cols, fill);
    }

    /// Shape for overwriting: skips the fill when the size already matches
    /// (contents are stale until written).
    void reshape(int rows, int cols) {
        const size_t need = static_cast<size_t>(rows) * cols;
        if (data_.size() != need) data_.resize(need);
        rows_ = rows;
        cols_ = cols;
    }

    bool all_finite() const {
        for (S v : data_)
            if (!is_finite(v)) return false;
        return true;
    }

    template <typename T>
    Matrix<T> cast() const {
        Matrix<T> out(rows_, cols_);
        for (size_t i = 0; i < data_.size(); ++i) out.data()[i] = static_cast<T>(data_[i]);
        return out;
    }

    Matrix transposed() const {
        Matrix out(cols_, rows_);
        for (int r = 0; r < rows_; ++r)
            for (int c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
        return out;
    }

    std::vector<S>& raw() { return data_; }
    const std::vector<S>& raw() const { return data_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<S> data_;
};

namespace detail {

// C[i*ldc ..] += A[i*lda ..] * B, 4 rows of A per pass. All pointers row-major.
template <typename S>
void gemm_nn_strided(const S* a, int lda, const S* b, int ldb, S* c, int ldc,
                     int m, int k, int n) {
    int i = 0;
    for (; i + 4 <= m; i += 4) {
        const S* a0 = a + static_cast<size_t>(i) * lda;
        const S* a1 = a0 + lda;
        const S* a2 = a1 + lda;
        const S* a3 = a2 + lda;
        S* c0 = c + static_cast<size_t>(i) * ldc;
        S* c1 = c0 + ldc;
        S* c2 = c1 + ldc;
        S* c3 = c2 + ldc;
        for (int p = 0; p < k; ++p) {
            const S* br = b + static_cast<size_t>(p) * ldb;
            const S v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            for (int j = 0; j < n; ++j) {
                const S bj = br[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < m; ++i) {
        const S* ar = a + static_cast<size_t>(i) * lda;
        S* cr = c + static_cast<size_t>(i) * ldc;
        for (int p = 0; p < k; ++p) {
            const S v = ar[p];
            const S* br = b + static_cast<size_t>(p) * ldb;
            for (int j = 0; j < n; ++j) cr[j] += v * br[j];
        }
    }
}

}  // namespace detail

/// C += A * B.  A: m x k, B: k x n, C: m x n.
template <typename S>
void gemm_nn(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
    assert(a.cols() == b.rows() && a.rows() == c.rows() && b.cols() == c.cols());
    detail::gemm_nn_strided(a.data(), a.cols(), b.data(), b.cols(), c.data(), c.cols(),
                            a.rows(), a.cols(), b.cols());
}

/// C += A^T * B.  A: m x k, B: m x n, C: k x n. Rank-4 updates: processing
/// four rows of A/B per pass cuts the C read/write traffic fourfold, which
/// dominates this kernel for tall inputs (weight gradients).
template <typename S>
void gemm_tn(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
    assert(a.rows() == b.rows() && a.cols() == c.rows() && b.cols() == c.cols());
    const int m = a.rows(), k = a.cols(), n = b.cols();
    int r = 0;
    for (; r + 4 <= m; r += 4) {
        const S* a0 = a.row(r);
        const S* a1 = a.row(r + 1);
        const S* a2 = a.row(r + 2);
        const S* a3 = a.row(r + 3);
        const S* b0 = b.row(r);
        const S* b1 = b.row(r + 1);
        const S* b2 = b.row(r + 2);
        const S* b3 = b.row(r + 3);
        for (int i = 0; i < k; ++i) {
            const S v0 = a0[i], v1 = a1[i], v2 = a2[i], v3 = a3[i];
            S* cr = c.row(i);
            for (int j = 0; j < n; ++j)
                cr[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
        }
    }
    for (; r < m; ++r) {
        const S* ar = a.row(r);
        const S* br = b.row(r);
        for (int i = 0; i < k; ++i) {
            const S v = ar[i];
            S* cr = c.row(i);
            for (int j = 0; j < n; ++j) cr[j] += v * br[j];
        }
    }
}

/// C += A * B^T.  A: m x k, B: n x k, C: m x n. B is transposed into a
/// reused scratch; the O(nk) copy is noise next to the O(mnk) product.
template <typename S>
void gemm_nt(const Matrix<S>& a, const Matrix<S>& b, Matrix<S>& c) {
    assert(a.cols() == b.cols() && a.rows() == c.rows() && b.rows() == c.cols());
    thread_local Matrix<S> bt;
    bt.reshape(b.cols(), b.rows());
    for (int r = 0; r < b.rows(); ++r)
        for (int j = 0; j < b.cols(); ++j) bt(j, r) = b(r, j);
    gemm_nn(a, bt, c);
}

/// y += alpha * x, elementwise over equal-shaped matrices.
template <typename S>
void axpy(S alpha, const Matrix<S>& x, Matrix<S>& y) {
    assert(x.rows() == y.rows() && x.cols() == y.cols());
    const S* xp = x.data();
    S* yp = y.data();
    const size_t sz = x.size();
    for (size_t i = 0; i < sz; ++i) yp[i] += alpha * xp[i];
}

}  // namespace spectwin
