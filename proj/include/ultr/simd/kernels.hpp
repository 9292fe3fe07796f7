#pragma once

// Data-parallel inner loops used by the dense layers and the optimizer.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2
// variant chosen at runtime. The scalar kernels accumulate in the same
// 4-lane order the vector kernels use, so both paths produce bit-identical
// results and training runs do not depend on the host ISA.

#include <cstddef>
#include <span>
#include <string_view>

namespace ultr::simd {

enum class Isa { scalar, avx2 };

struct AdamCoefficients {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias_correction1;  // 1 - beta1^t
  double bias_correction2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // In-place bias-corrected Adam update over n parameters.
  void (*adam)(double* param, const double* grad, double* m, double* v, std::size_t n,
               const AdamCoefficients& c);
};

const KernelTable& scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
const KernelTable& avx2_kernels();
#endif

bool isa_supported(Isa isa);

/// Kernels in use. Defaults to the widest supported ISA unless the
/// ULTR_SIMD environment variable names another one ("scalar" or "avx2").
const KernelTable& active();

/// Forces a kernel set; throws ultr::Error when the host lacks the ISA.
void set_active(Isa isa);

Isa parse_isa(std::string_view name);
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> x, std::span<const double> y) {
  return active().dot(x.data(), y.data(), x.size());
}

inline void axpy(double a, std::span<const double> x, std::span<double> y) {
  active().axpy(a, x.data(), y.data(), x.size());
}

}  // namespace ultr::simd
