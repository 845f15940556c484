// AVX2 kernel variants. This translation unit is compiled with -mavx2 and
// -ffp-contract=off; everything else in the project targets baseline x86-64.
// Elementwise ops and matmul/matmul_tn keep the scalar reference's exact
// per-element operation order (mul then add, never FMA) so their results are
// bit-identical to the scalar table. sum/dot/matmul_nt use 4-lane
// accumulators and agree only up to rounding.

#include "tram/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#define TRAM_KERNELS_HAVE_AVX2 1
#include <immintrin.h>
#else
#define TRAM_KERNELS_HAVE_AVX2 0
#endif

namespace tram::kernels {

#if TRAM_KERNELS_HAVE_AVX2

namespace {

void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i),
                                            _mm256_loadu_pd(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc_avx2(const double* a, const double* b, double* out,
                  std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod =
        _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(out + i), prod));
  }
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

void scale_avx2(const double* a, double c, double* out, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(out + i, _mm256_mul_pd(vc, _mm256_loadu_pd(a + i)));
  }
  for (; i < n; ++i) out[i] = c * a[i];
}

void axpy_avx2(double c, const double* x, double* y, std::size_t n) {
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(vc, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += c * x[i];
}

void relu_avx2(const double* a, double* out, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    // maxpd returns the second operand on equality, so (x, 0) maps -0.0 to
    // +0.0 exactly like the scalar (a > 0 ? a : 0).
    _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(a + i), zero));
  }
  for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_bwd_acc_avx2(const double* a, const double* din, double* dout,
                       std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(a + i), zero, _CMP_GT_OQ);
    __m256d gated = _mm256_and_pd(mask, _mm256_loadu_pd(din + i));
    _mm256_storeu_pd(dout + i,
                     _mm256_add_pd(_mm256_loadu_pd(dout + i), gated));
  }
  for (; i < n; ++i) {
    if (a[i] > 0.0) dout[i] += din[i];
  }
}

double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d shuf = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double sum_avx2(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}

double dot_avx2(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc = _mm256_add_pd(
        acc, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Same ikj order as the scalar reference, vectorized across j.
void matmul_avx2(const double* a, const double* b, double* c, std::size_t m,
                 std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const __m256d va = _mm256_set1_pd(aip);
      const double* brow = b + p * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j,
                         _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void matmul_tn_avx2(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aip = arow[i];
      const __m256d va = _mm256_set1_pd(aip);
      double* crow = c + i * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4) {
        __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(brow + j));
        _mm256_storeu_pd(crow + j,
                         _mm256_add_pd(_mm256_loadu_pd(crow + j), prod));
      }
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void matmul_nt_avx2(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      __m256d acc = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        acc = _mm256_add_pd(acc, _mm256_mul_pd(_mm256_loadu_pd(arow + p),
                                               _mm256_loadu_pd(brow + p)));
      }
      double s = hsum(acc);
      for (; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] = s;
    }
  }
}

const KernelTable kAvx2Table = {
    "avx2",     add_avx2,       mul_avx2,    mul_acc_avx2,
    scale_avx2, axpy_avx2,      relu_avx2,   relu_bwd_acc_avx2,
    sum_avx2,   dot_avx2,       matmul_avx2, matmul_tn_avx2,
    matmul_nt_avx2};

}  // namespace

const KernelTable* avx2() {
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &kAvx2Table : nullptr;
}

#else

const KernelTable* avx2() { return nullptr; }

#endif  // TRAM_KERNELS_HAVE_AVX2

}  // namespace tram::kernels
