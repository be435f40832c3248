#include "mapl/error.hpp"
#include "mapl/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace mapl::simd {
namespace {

bool cpu_has_avx2() {
#if defined(MAPL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa default_isa() {
    if (const char* env = std::getenv("MAPL_SIMD")) {
        const std::string v(env);
        if (v == "scalar") return Isa::scalar;
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<const KernelTable*>& active() {
    static std::atomic<const KernelTable*> table{&kernels(default_isa())};
    return table;
}

}  // namespace

bool isa_supported(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return true;
        case Isa::avx2:
            return cpu_has_avx2();
    }
    return false;
}

const KernelTable& kernels(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return detail::scalar_table();
        case Isa::avx2:
#if defined(MAPL_HAVE_AVX2)
            if (cpu_has_avx2()) return detail::avx2_table();
#endif
            break;
    }
    throw ParameterError("instruction set '" + std::string(isa_name(isa)) + "' not available");
}

const KernelTable& kernels() { return *active().load(std::memory_order_acquire); }

void set_active_isa(Isa isa) { active().store(&kernels(isa), std::memory_order_release); }

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::scalar:
            return "scalar";
        case Isa::avx2:
            return "avx2";
    }
    return "unknown";
}

}  // namespace mapl::simd
