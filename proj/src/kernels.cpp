#include "pumba/kernels.hpp"

#include <atomic>

namespace pumba::kern {

namespace {

const Kernels* detect() {
#if defined(__x86_64__) || defined(_M_X64)
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) {
        if (const Kernels* t = avx2_table()) return t;
    }
#endif
    return &scalar_table();
}

std::atomic<const Kernels*> g_forced{nullptr};

}  // namespace

const Kernels& active() {
    const Kernels* forced = g_forced.load(std::memory_order_acquire);
    if (forced) return *forced;
    static const Kernels* selected = detect();
    return *selected;
}

void force_table(const Kernels* table) {
    g_forced.store(table, std::memory_order_release);
}

}  // namespace pumba::kern
