// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include "mapl/simd/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace mapl::simd::detail {
namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    const __m128d swapped = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

template <bool TransA>
inline double a_at(const double* a, int lda, int i, int p) {
    return TransA ? a[p * lda + i] : a[i * lda + p];
}

// R rows of C starting at row i, all columns. Accumulators stay in registers
// over the whole k loop.
template <int R, bool TransA>
inline void row_block(int i, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    int j = 0;
    for (; j + 8 <= n; j += 8) {
        __m256d acc0[R], acc1[R];
        for (int r = 0; r < R; ++r) {
            acc0[r] = _mm256_setzero_pd();
            acc1[r] = _mm256_setzero_pd();
        }
        for (int p = 0; p < k; ++p) {
            const double* bp = b + p * ldb + j;
            const __m256d b0 = _mm256_loadu_pd(bp);
            const __m256d b1 = _mm256_loadu_pd(bp + 4);
            for (int r = 0; r < R; ++r) {
                const __m256d av = _mm256_set1_pd(a_at<TransA>(a, lda, i + r, p));
                acc0[r] = _mm256_fmadd_pd(av, b0, acc0[r]);
                acc1[r] = _mm256_fmadd_pd(av, b1, acc1[r]);
            }
        }
        for (int r = 0; r < R; ++r) {
            double* cp = c + (i + r) * ldc + j;
            _mm256_storeu_pd(cp, _mm256_add_pd(_mm256_loadu_pd(cp), acc0[r]));
            _mm256_storeu_pd(cp + 4, _mm256_add_pd(_mm256_loadu_pd(cp + 4), acc1[r]));
        }
    }
    for (; j + 4 <= n; j += 4) {
        __m256d acc[R];
        for (int r = 0; r < R; ++r) acc[r] = _mm256_setzero_pd();
        for (int p = 0; p < k; ++p) {
            const __m256d bv = _mm256_loadu_pd(b + p * ldb + j);
            for (int r = 0; r < R; ++r)
                acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(a_at<TransA>(a, lda, i + r, p)), bv, acc[r]);
        }
        for (int r = 0; r < R; ++r) {
            double* cp = c + (i + r) * ldc + j;
            _mm256_storeu_pd(cp, _mm256_add_pd(_mm256_loadu_pd(cp), acc[r]));
        }
    }
    for (; j < n; ++j) {
        for (int r = 0; r < R; ++r) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc = std::fma(a_at<TransA>(a, lda, i + r, p), b[p * ldb + j], acc);
            c[(i + r) * ldc + j] += acc;
        }
    }
}

template <bool TransA>
void gemm_xn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    int i = 0;
    for (; i + 4 <= m; i += 4) row_block<4, TransA>(i, n, k, a, lda, b, ldb, c, ldc);
    for (; i < m; ++i) row_block<1, TransA>(i, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_nn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    gemm_xn<false>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_tn(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    gemm_xn<true>(m, n, k, a, lda, b, ldb, c, ldc);
}

void gemm_nt(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        const double* ar = a + i * lda;
        int j = 0;
        for (; j + 4 <= n; j += 4) {
            const double* b0 = b + (j + 0) * ldb;
            const double* b1 = b + (j + 1) * ldb;
            const double* b2 = b + (j + 2) * ldb;
            const double* b3 = b + (j + 3) * ldb;
            __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
            __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
            int p = 0;
            for (; p + 4 <= k; p += 4) {
                const __m256d av = _mm256_loadu_pd(ar + p);
                s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
                s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
                s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
                s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
            }
            double t0 = hsum(s0), t1 = hsum(s1), t2 = hsum(s2), t3 = hsum(s3);
            for (; p < k; ++p) {
                t0 = std::fma(ar[p], b0[p], t0);
                t1 = std::fma(ar[p], b1[p], t1);
                t2 = std::fma(ar[p], b2[p], t2);
                t3 = std::fma(ar[p], b3[p], t3);
            }
            double* cp = c + i * ldc + j;
            cp[0] += t0;
            cp[1] += t1;
            cp[2] += t2;
            cp[3] += t3;
        }
        for (; j < n; ++j) {
            const double* br = b + j * ldb;
            __m256d s = _mm256_setzero_pd();
            int p = 0;
            for (; p + 4 <= k; p += 4) s = _mm256_fmadd_pd(_mm256_loadu_pd(ar + p), _mm256_loadu_pd(br + p), s);
            double t = hsum(s);
            for (; p < k; ++p) t = std::fma(ar[p], br[p], t);
            c[i * ldc + j] += t;
        }
    }
}

double dot(std::size_t n, const double* x, const double* y) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
    }
    for (; i + 4 <= n; i += 4) s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    double t = hsum(_mm256_add_pd(s0, s1));
    for (; i < n; ++i) t = std::fma(x[i], y[i], t);
    return t;
}

void axpy(std::size_t n, double alpha, const double* x, double* y) {
    const __m256d av = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

double abs_diff(std::size_t n, const double* a, const double* b, double* out) {
    const __m256d sign = _mm256_set1_pd(-0.0);
    __m256d s = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_andnot_pd(sign, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        if (out) _mm256_storeu_pd(out + i, d);
        s = _mm256_add_pd(s, d);
    }
    double t = hsum(s);
    for (; i < n; ++i) {
        const double d = std::fabs(a[i] - b[i]);
        if (out) out[i] = d;
        t += d;
    }
    return t;
}

void abs_diff_backward(std::size_t n, const double* x, const double* m, const double* g, double* dx) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(m + i));
        const __m256d gv = _mm256_loadu_pd(g + i);
        const __m256d pos = _mm256_and_pd(_mm256_cmp_pd(d, zero, _CMP_GT_OQ), gv);
        const __m256d neg = _mm256_and_pd(_mm256_cmp_pd(d, zero, _CMP_LT_OQ), gv);
        _mm256_storeu_pd(dx + i, _mm256_sub_pd(_mm256_add_pd(_mm256_loadu_pd(dx + i), pos), neg));
    }
    for (; i < n; ++i) {
        const double d = x[i] - m[i];
        if (d > 0.0)
            dx[i] += g[i];
        else if (d < 0.0)
            dx[i] -= g[i];
    }
}

void leaky_relu(std::size_t n, double slope, const double* x, double* y) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d sv = _mm256_set1_pd(slope);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        const __m256d keep = _mm256_cmp_pd(v, zero, _CMP_GE_OQ);
        _mm256_storeu_pd(y + i, _mm256_blendv_pd(_mm256_mul_pd(sv, v), v, keep));
    }
    for (; i < n; ++i) y[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
}

void leaky_relu_backward(std::size_t n, double slope, const double* y, const double* dy, double* dx) {
    const __m256d zero = _mm256_setzero_pd();
    const __m256d sv = _mm256_set1_pd(slope);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d keep = _mm256_cmp_pd(_mm256_loadu_pd(y + i), zero, _CMP_GE_OQ);
        const __m256d g = _mm256_loadu_pd(dy + i);
        _mm256_storeu_pd(dx + i, _mm256_blendv_pd(_mm256_mul_pd(sv, g), g, keep));
    }
    for (; i < n; ++i) dx[i] = y[i] >= 0.0 ? dy[i] : slope * dy[i];
}

}  // namespace

const KernelTable& avx2_table() {
    static const KernelTable table{Isa::avx2,        "avx2",   gemm_nn,    gemm_tn,
                                   gemm_nt,          dot,      axpy,       abs_diff,
                                   abs_diff_backward, leaky_relu, leaky_relu_backward};
    return table;
}

}  // namespace mapl::simd::detail
