// SPDX-License-Identifier: Apache-2.0
// Row-major C = A * B with a fixed summation order: every output element is
// 0 + a0*b0 + a1*b1 + ... in ascending inner index, whatever the blocking
// and however the buffers happen to be aligned. Results are therefore
// reproducible bit for bit across runs, threads and resumed processes.
#pragma once

#include <cstddef>
#include <vector>

namespace biflow::gemm {

/// C[n x m] (=|+=) A[n x k] * B[k x m].
void nn(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m, bool accumulate);

/// Dense transpose of a rows x cols block into out (cols x rows).
void transpose(const double* src, double* out, std::size_t rows, std::size_t cols);

}  // namespace biflow::gemm
