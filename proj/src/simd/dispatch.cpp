#include <atomic>
#include <cstdlib>
#include <string>

#include "ultr/common.hpp"
#include "ultr/simd/kernels.hpp"

namespace ultr::simd {
namespace {

const KernelTable& table_for(Isa isa) {
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::avx2) return avx2_kernels();
#endif
  return scalar_kernels();
}

const KernelTable* initial_table() {
  if (const char* env = std::getenv("ULTR_SIMD"); env != nullptr && *env != '\0') {
    const Isa requested = parse_isa(env);
    if (!isa_supported(requested)) {
      throw Error("ULTR_SIMD=" + std::string(env) + " is not supported on this host");
    }
    return &table_for(requested);
  }
  return isa_supported(Isa::avx2) ? &table_for(Isa::avx2) : &scalar_kernels();
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") != 0;
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& active() { return *current().load(std::memory_order_acquire); }

void set_active(Isa isa) {
  if (!isa_supported(isa)) {
    throw Error("SIMD ISA '" + std::string(isa_name(isa)) + "' is not supported on this host");
  }
  current().store(&table_for(isa), std::memory_order_release);
}

Isa parse_isa(std::string_view name) {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  throw Error("unknown SIMD ISA '" + std::string(name) + "' (expected scalar|avx2)");
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

}  // namespace ultr::simd
