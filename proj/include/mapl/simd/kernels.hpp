#pragma once

// Hot inner loops of the pipeline, with a scalar reference implementation
// and an AVX2/FMA implementation picked at runtime. All matrices are
// row-major with explicit leading dimensions. GEMM variants accumulate into C.

#include <cstddef>
#include <string_view>

namespace mapl::simd {

enum class Isa { scalar, avx2 };

struct KernelTable {
    Isa isa;
    const char* name;

    /// C[M,N] += A[M,K] * B[K,N]
    void (*gemm_nn)(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc);
    /// C[M,N] += A[K,M]^T * B[K,N]
    void (*gemm_tn)(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc);
    /// C[M,N] += A[M,K] * B[N,K]^T
    void (*gemm_nt)(int m, int n, int k, const double* a, int lda, const double* b, int ldb, double* c, int ldc);

    double (*dot)(std::size_t n, const double* x, const double* y);
    /// y += alpha * x
    void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
    /// out = |a - b| elementwise (out may be null); returns the sum of |a - b|.
    double (*abs_diff)(std::size_t n, const double* a, const double* b, double* out);
    /// dx += g * sign(x - m), with sign(0) = 0
    void (*abs_diff_backward)(std::size_t n, const double* x, const double* m, const double* g, double* dx);
    /// y = x >= 0 ? x : slope * x   (in place allowed)
    void (*leaky_relu)(std::size_t n, double slope, const double* x, double* y);
    /// dx = y >= 0 ? dy : slope * dy, y being the activation output (in place allowed)
    void (*leaky_relu_backward)(std::size_t n, double slope, const double* y, const double* dy, double* dx);
};

/// Kernels currently in use. Selected on first call: AVX2 when compiled in
/// and supported by the CPU, unless MAPL_SIMD=scalar is set in the environment.
const KernelTable& kernels();

/// A specific implementation; throws ParameterError when unsupported here.
const KernelTable& kernels(Isa isa);

bool isa_supported(Isa isa);

/// Override the active implementation (tests, benchmarks).
void set_active_isa(Isa isa);

std::string_view isa_name(Isa isa);

namespace detail {
const KernelTable& scalar_table();
#if defined(MAPL_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
}  // namespace detail

}  // namespace mapl::simd
