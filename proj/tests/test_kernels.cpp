#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "tram/kernels.hpp"
#include "tram/rng.hpp"

using tram::Rng;
using tram::kernels::KernelTable;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double rel_err(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), 1e-30});
  return std::fabs(a - b) / scale;
}

// Sizes straddle the 4-lane vector width to cover full blocks plus tails.
const std::size_t kSizes[] = {1, 3, 4, 5, 8, 17, 64, 67};

}  // namespace

TEST_CASE("scalar and avx2 elementwise kernels are bit-identical") {
  const KernelTable& s = tram::kernels::scalar();
  const KernelTable* v = tram::kernels::avx2();
  if (v == nullptr) {
    MESSAGE("no avx2 table on this machine; scalar-only");
    return;
  }
  Rng rng(42);
  for (std::size_t n : kSizes) {
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    auto base = random_vec(rng, n);

    std::vector<double> r1(n), r2(n);
    s.add(a.data(), b.data(), r1.data(), n);
    v->add(a.data(), b.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));

    s.mul(a.data(), b.data(), r1.data(), n);
    v->mul(a.data(), b.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));

    r1 = base;
    r2 = base;
    s.mul_acc(a.data(), b.data(), r1.data(), n);
    v->mul_acc(a.data(), b.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));

    s.scale(a.data(), 1.7, r1.data(), n);
    v->scale(a.data(), 1.7, r2.data(), n);
    CHECK(bitwise_equal(r1, r2));

    r1 = base;
    r2 = base;
    s.axpy(-0.3, a.data(), r1.data(), n);
    v->axpy(-0.3, a.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));

    s.relu(a.data(), r1.data(), n);
    v->relu(a.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));

    r1 = base;
    r2 = base;
    s.relu_bwd_acc(a.data(), b.data(), r1.data(), n);
    v->relu_bwd_acc(a.data(), b.data(), r2.data(), n);
    CHECK(bitwise_equal(r1, r2));
  }
}

TEST_CASE("relu maps negative zero to positive zero in both variants") {
  const double in[5] = {-0.0, 0.0, -1.0, 1.0, -0.0};
  double out[5];
  tram::kernels::scalar().relu(in, out, 5);
  CHECK(!std::signbit(out[0]));
  CHECK(!std::signbit(out[4]));
  if (const KernelTable* v = tram::kernels::avx2()) {
    double vout[5];
    v->relu(in, vout, 5);
    CHECK(std::memcmp(out, vout, sizeof(out)) == 0);
    CHECK(!std::signbit(vout[0]));
  }
}

TEST_CASE("scalar and avx2 matmul variants are bit-identical") {
  const KernelTable& s = tram::kernels::scalar();
  const KernelTable* v = tram::kernels::avx2();
  if (v == nullptr) return;
  Rng rng(7);
  const std::size_t shapes[][3] = {{1, 1, 1}, {2, 3, 4}, {5, 7, 3}, {8, 8, 8}, {3, 5, 13}, {32, 2, 32}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], k = sh[1], n = sh[2];
    auto a = random_vec(rng, m * k);
    auto b = random_vec(rng, k * n);
    std::vector<double> c1(m * n), c2(m * n);
    s.matmul(a.data(), b.data(), c1.data(), m, k, n);
    v->matmul(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(bitwise_equal(c1, c2));

    auto at = random_vec(rng, k * m);  // stored (k, m)
    s.matmul_tn(at.data(), b.data(), c1.data(), m, k, n);
    v->matmul_tn(at.data(), b.data(), c2.data(), m, k, n);
    CHECK(bitwise_equal(c1, c2));
  }
}

TEST_CASE("reduction kernels agree within 1e-13 relative") {
  const KernelTable& s = tram::kernels::scalar();
  const KernelTable* v = tram::kernels::avx2();
  if (v == nullptr) return;
  Rng rng(11);
  for (std::size_t n : kSizes) {
    auto a = random_vec(rng, n);
    auto b = random_vec(rng, n);
    CHECK(rel_err(s.sum(a.data(), n), v->sum(a.data(), n)) < 1e-13);
    CHECK(rel_err(s.dot(a.data(), b.data(), n), v->dot(a.data(), b.data(), n)) < 1e-13);
  }
  const std::size_t m = 9, k = 33, n = 6;
  auto a = random_vec(rng, m * k);
  auto bt = random_vec(rng, n * k);  // stored (n, k)
  std::vector<double> c1(m * n), c2(m * n);
  s.matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
  v->matmul_nt(a.data(), bt.data(), c2.data(), m, k, n);
  for (std::size_t i = 0; i < m * n; ++i) CHECK(rel_err(c1[i], c2[i]) < 1e-13);
}

TEST_CASE("matmul matches a plain triple loop") {
  Rng rng(3);
  const std::size_t m = 4, k = 6, n = 5;
  auto a = random_vec(rng, m * k);
  auto b = random_vec(rng, k * n);
  std::vector<double> got(m * n);
  tram::kernels::active().matmul(a.data(), b.data(), got.data(), m, k, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double want = 0.0;
      for (std::size_t p = 0; p < k; ++p) want += a[i * k + p] * b[p * n + j];
      CHECK(got[i * n + j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("active table resolves to the widest supported variant") {
  const std::string name = tram::kernels::active_name();
  if (const char* forced = std::getenv("TRAM_KERNELS")) {
    CHECK(name == forced);
  } else if (tram::kernels::avx2() != nullptr) {
    CHECK(name == "avx2");
  } else {
    CHECK(name == "scalar");
  }
  CHECK(std::string(tram::kernels::scalar().name) == "scalar");
}
