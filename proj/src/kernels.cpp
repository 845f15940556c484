#include "tram/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

namespace tram::kernels {

namespace {

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc_scalar(const double* a, const double* b, double* out,
                    std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

void scale_scalar(const double* a, double c, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = c * a[i];
}

void axpy_scalar(double c, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
}

void relu_scalar(const double* a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

void relu_bwd_acc_scalar(const double* a, const double* din, double* dout,
                         std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] > 0.0) dout[i] += din[i];
  }
}

double sum_scalar(const double* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i];
  return s;
}

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

// ikj order: each C(i,j) accumulates over k in increasing order, which the
// AVX2 variant reproduces exactly.
void matmul_scalar(const double* a, const double* b, double* c, std::size_t m,
                   std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* brow = b + p * n;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C(m,n) = A^T B, A stored (k,m)
void matmul_tn_scalar(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double aip = arow[i];
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// C(m,n) = A B^T, B stored (n,k): row-by-row dot products.
void matmul_nt_scalar(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] = s;
    }
  }
}

const KernelTable kScalarTable = {
    "scalar",        add_scalar,       mul_scalar,    mul_acc_scalar,
    scale_scalar,    axpy_scalar,      relu_scalar,   relu_bwd_acc_scalar,
    sum_scalar,      dot_scalar,       matmul_scalar, matmul_tn_scalar,
    matmul_nt_scalar};

const KernelTable* resolve_active() {
  const char* env = std::getenv("TRAM_KERNELS");
  if (env != nullptr) {
    const std::string want(env);
    if (want == "scalar") return &kScalarTable;
    if (want == "avx2") {
      const KernelTable* t = avx2();
      if (t == nullptr)
        throw std::runtime_error(
            "TRAM_KERNELS=avx2 requested but AVX2 is unavailable");
      return t;
    }
    throw std::runtime_error("unknown TRAM_KERNELS value: " + want);
  }
  if (const KernelTable* t = avx2()) return t;
  return &kScalarTable;
}

}  // namespace

const KernelTable& scalar() { return kScalarTable; }

const KernelTable& active() {
  static const KernelTable* table = resolve_active();
  return *table;
}

std::string active_name() { return active().name; }

}  // namespace tram::kernels
