#include "mapl/simd/kernels.hpp"

#include <cmath>

namespace mapl::simd::detail {
namespace {

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * lda + p] * b[p * ldb + j];
            c[i * ldc + j] += acc;
        }
    }
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[p * lda + i] * b[p * ldb + j];
            c[i * ldc + j] += acc;
        }
    }
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * lda + p] * b[j * ldb + p];
            c[i * ldc + j] += acc;
        }
    }
}

double dot(std::size_t n, const double* x, const double* y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

double abs_diff(std::size_t n, const double* a, const double* b, double* out) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = std::fabs(a[i] - b[i]);
        if (out) out[i] = d;
        acc += d;
    }
    return acc;
}

void abs_diff_backward(std::size_t n, const double* x, const double* m, const double* g, double* dx) {
    for (std::size_t i = 0; i < n; ++i) {
        const double d = x[i] - m[i];
        if (d > 0.0)
            dx[i] += g[i];
        else if (d < 0.0)
            dx[i] -= g[i];
    }
}

void leaky_relu(std::size_t n, double slope, const double* x, double* y) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_backward(std::size_t n, double slope, const double* y, const double* dy, double* dx) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = y[i] >= 0.0 ? dy[i] : slope * dy[i];
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{Isa::scalar,      "scalar", gemm_nn,    gemm_tn,
                                   gemm_nt,          dot,      axpy,       abs_diff,
                                   abs_diff_backward, leaky_relu, leaky_relu_backward};
    return table;
}

}  // namespace mapl::simd::detail
