#pragma once

#include <cstddef>
#include <string>

namespace tram::kernels {

// Dense double-precision inner loops used by the tensor ops and the
// optimizer updates. Every entry has a scalar reference implementation and,
// on x86-64 with AVX2, a vectorized variant selected once at startup.
//
// Equivalence contract between variants:
//   - elementwise ops and matmul / matmul_tn are bit-identical to the scalar
//     reference (same per-element operation sequence, no FMA contraction);
//   - sum / dot / matmul_nt reduce with lane accumulators, so they agree with
//     the scalar reference only up to rounding (tested at 1e-13 relative).
struct KernelTable {
  const char* name;

  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // out[i] += a[i] * b[i]
  void (*mul_acc)(const double* a, const double* b, double* out, std::size_t n);
  void (*scale)(const double* a, double c, double* out, std::size_t n);
  // y[i] += c * x[i]
  void (*axpy)(double c, const double* x, double* y, std::size_t n);
  void (*relu)(const double* a, double* out, std::size_t n);
  // dout[i] += (a[i] > 0) ? din[i] : 0
  void (*relu_bwd_acc)(const double* a, const double* din, double* dout,
                       std::size_t n);

  double (*sum)(const double* a, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);

  // Row-major. matmul:    C(m,n) = A(m,k) * B(k,n)
  //            matmul_tn: C(m,n) = A^T * B with A stored (k,m)
  //            matmul_nt: C(m,n) = A * B^T with B stored (n,k)
  void (*matmul)(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n);
  void (*matmul_tn)(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n);
  void (*matmul_nt)(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n);
};

const KernelTable& scalar();

// Null when this build has no AVX2 variant or the CPU lacks AVX2.
const KernelTable* avx2();

// Selected once per process: TRAM_KERNELS=scalar|avx2 overrides, otherwise
// the widest variant the CPU supports.
const KernelTable& active();

// Name of the table active() resolves to ("scalar" or "avx2").
std::string active_name();

}  // namespace tram::kernels
