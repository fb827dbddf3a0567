#pragma once

#include <cblas.h>

#include "mfpinn/common.hpp"

namespace mfpinn {

// Thin typed wrappers over cblas. All matrices are column-major.

/// C = alpha * op(A) * op(B) + beta * C
inline void gemm(bool transA, bool transB, int m, int n, int k, double alpha,
                 const double* A, int lda, const double* B, int ldb, double beta,
                 double* C, int ldc) {
    cblas_dgemm(CblasColMajor, transA ? CblasTrans : CblasNoTrans,
                transB ? CblasTrans : CblasNoTrans, m, n, k, alpha, A, lda, B, ldb,
                beta, C, ldc);
}

inline void gemm(bool transA, bool transB, int m, int n, int k, float alpha,
                 const float* A, int lda, const float* B, int ldb, float beta,
                 float* C, int ldc) {
    cblas_sgemm(CblasColMajor, transA ? CblasTrans : CblasNoTrans,
                transB ? CblasTrans : CblasNoTrans, m, n, k, alpha, A, lda, B, ldb,
                beta, C, ldc);
}

/// C (m x n) = A (m x k) * B (k x n), accumulating when beta = 1.
template <class T>
void matmul(const Mat<T>& A, const Mat<T>& B, Mat<T>& C, T beta = T(0)) {
    gemm(false, false, A.rows, B.cols, A.cols, T(1), A.data(), A.rows, B.data(),
         B.rows, beta, C.data(), C.rows);
}

/// C += A^T * B
template <class T>
void matmul_tn(const Mat<T>& A, const Mat<T>& B, Mat<T>& C, T beta = T(1)) {
    gemm(true, false, A.cols, B.cols, A.rows, T(1), A.data(), A.rows, B.data(),
         B.rows, beta, C.data(), C.rows);
}

/// C += A * B^T
template <class T>
void matmul_nt(const Mat<T>& A, const Mat<T>& B, Mat<T>& C, T beta = T(1)) {
    gemm(false, true, A.rows, B.rows, A.cols, T(1), A.data(), A.rows, B.data(),
         B.rows, beta, C.data(), C.rows);
}

}  // namespace mfpinn
