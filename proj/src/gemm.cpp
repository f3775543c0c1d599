// SPDX-License-Identifier: Apache-2.0
#include "gemm.hpp"

#include <algorithm>
#include <cstring>

namespace biflow::gemm {

namespace {

// Four-wide lanes via GCC vector extensions; each lane is an independent
// multiply then add, so the arithmetic per element matches the scalar path.
using v4d = double __attribute__((vector_size(32)));

constexpr std::size_t kRows = 4;
constexpr std::size_t kVecs = 4;
constexpr std::size_t kCols = 4 * kVecs;

inline v4d load(const double* p) {
    v4d v;
    std::memcpy(&v, p, sizeof v);
    return v;
}

inline void store(double* p, v4d v) { std::memcpy(p, &v, sizeof v); }

inline void tile(const double* A, const double* B, double* C, std::size_t k, std::size_t lda, std::size_t ldb,
                 std::size_t ldc, bool accumulate) {
    v4d c[kRows][kVecs] = {};
    for (std::size_t p = 0; p < k; ++p) {
        const double* b = B + p * ldb;
        v4d bv[kVecs];
        for (std::size_t j = 0; j < kVecs; ++j) bv[j] = load(b + 4 * j);
        for (std::size_t r = 0; r < kRows; ++r) {
            const v4d a = v4d{} + A[r * lda + p];
            for (std::size_t j = 0; j < kVecs; ++j) c[r][j] += a * bv[j];
        }
    }
    for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t j = 0; j < kVecs; ++j) {
            double* out = C + r * ldc + 4 * j;
            store(out, accumulate ? load(out) + c[r][j] : c[r][j]);
        }
}

// Ragged edges: one row at a time, four-wide where possible, same order.
void edge(const double* A, const double* B, double* C, std::size_t rows, std::size_t cols, std::size_t k,
          std::size_t lda, std::size_t ldb, std::size_t ldc, bool accumulate) {
    for (std::size_t r = 0; r < rows; ++r) {
        const double* a_row = A + r * lda;
        double* c_row = C + r * ldc;
        std::size_t j = 0;
        for (; j + 4 <= cols; j += 4) {
            v4d acc{};
            for (std::size_t p = 0; p < k; ++p) acc += (v4d{} + a_row[p]) * load(B + p * ldb + j);
            store(c_row + j, accumulate ? load(c_row + j) + acc : acc);
        }
        for (; j < cols; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * B[p * ldb + j];
            c_row[j] = accumulate ? c_row[j] + acc : acc;
        }
    }
}

}  // namespace

void nn(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
    const std::size_t n_full = n - n % kRows;
    const std::size_t m_full = m - m % kCols;
    for (std::size_t i = 0; i < n_full; i += kRows) {
        for (std::size_t j = 0; j < m_full; j += kCols) tile(A + i * k, B + j, C + i * m + j, k, k, m, m, accumulate);
        if (m_full < m) edge(A + i * k, B + m_full, C + i * m + m_full, kRows, m - m_full, k, k, m, m, accumulate);
    }
    if (n_full < n) edge(A + n_full * k, B, C + n_full * m, n - n_full, m, k, k, m, m, accumulate);
}

void transpose(const double* src, double* out, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
}

}  // namespace biflow::gemm
