#ifndef DRIVEGEN_BLAS_UTIL_HPP
#define DRIVEGEN_BLAS_UTIL_HPP

// Thin row-major GEMM wrappers over OpenBLAS, overloaded on scalar type
// so templated graph ops dispatch to sgemm or dgemm.

#include <cblas.h>

namespace dg {

// C[m,n] = alpha * op(A)[m,k] * op(B)[k,n] + beta * C
inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta,
                 double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

}  // namespace dg

#endif
