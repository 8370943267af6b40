#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "meso/linalg.hpp"

using namespace meso::linalg;

namespace {

// Independent triple-loop product (jki order, scalar accumulate) used as the
// oracle for matmul.
Mat naive_product(const Mat& a, const Mat& b) {
  Mat c(a.rows(), b.cols());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      c(i, j) = acc;
    }
  }
  return c;
}

Mat random_mat(std::size_t r, std::size_t c, RngState& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.data()) v = scale * (2.0 * rng.next_unit() - 1.0);
  return m;
}

// Eigenvalues of a symmetric matrix by bisection on the characteristic
// polynomial: Sylvester inertia via LDL^T pivot signs at each shift.
std::size_t eigs_below(const Mat& a, double shift) {
  const std::size_t n = a.rows();
  Mat m = a;
  for (std::size_t i = 0; i < n; ++i) m(i, i) -= shift;
  std::size_t negatives = 0;
  for (std::size_t k = 0; k < n; ++k) {
    double piv = m(k, k);
    if (piv == 0.0) piv = 1e-300;
    if (piv < 0.0) ++negatives;
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = m(i, k) / piv;
      for (std::size_t j = k; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return negatives;
}

std::vector<double> bisection_eigenvalues(const Mat& a) {
  const std::size_t n = a.rows();
  double bound = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += std::abs(a(i, j));
    bound = std::max(bound, row);
  }
  bound += 1.0;
  std::vector<double> out(n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    // eigenvalue with (n-1-idx) eigenvalues below it -> descending order
    double lo = -bound, hi = bound;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (eigs_below(a, mid) >= n - idx) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    out[idx] = 0.5 * (lo + hi);
  }
  return out;
}

}  // namespace

TEST_CASE("matmul identity and hand examples") {
  RngState rng(7);
  const Mat m = random_mat(2, 2, rng);
  CHECK(max_abs_diff(matmul(identity(2), m), m) == 0.0);

  const Mat a = Mat::from_rows({{1, 2}, {3, 4}});
  const Mat b = Mat::from_rows({{1}, {1}});
  const Mat c = matmul(a, b);
  CHECK(c(0, 0) == doctest::Approx(3.0));
  CHECK(c(1, 0) == doctest::Approx(7.0));

  CHECK_THROWS_AS(matmul(a, Mat(3, 2)), std::invalid_argument);
}

TEST_CASE("matmul matches triple-loop oracle") {
  RngState rng(11);
  const Mat a = random_mat(5, 7, rng);
  const Mat b = random_mat(7, 3, rng);
  CHECK(max_abs_diff(matmul(a, b), naive_product(a, b)) < 1e-12);

  // transposed kernels agree with the plain kernel
  CHECK(max_abs_diff(matmul_tn(transpose(a), b), naive_product(a, b)) < 1e-12);
  CHECK(max_abs_diff(matmul_nt(a, transpose(b)), naive_product(a, b)) < 1e-12);
}

TEST_CASE("matmul flop counter is exactly 2pqs") {
  RngState rng(3);
  const Mat a = random_mat(4, 6, rng);
  const Mat b = random_mat(6, 5, rng);
  flop_counters().reset();
  (void)matmul(a, b);
  CHECK(flop_counters().total == 2ull * 4 * 6 * 5);
  CHECK(flop_counters().madds_of(OpCategory::General) == 4ull * 6 * 5);
}

TEST_CASE("matmul associativity at tolerance") {
  RngState rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = random_mat(8, 8, rng);
    const Mat b = random_mat(8, 8, rng);
    const Mat c = random_mat(8, 8, rng);
    const Mat left = matmul(matmul(a, b), c);
    const Mat right = matmul(a, matmul(b, c));
    const double bound =
        1e-10 * frobenius_norm(a) * frobenius_norm(b) * frobenius_norm(c);
    CHECK(max_abs_diff(left, right) <= bound);
  }
}

TEST_CASE("row_norms") {
  const Mat g = Mat::from_rows({{3, 0}, {0, 1}, {2, 2}});
  const auto norms = row_norms(g);
  CHECK(norms[0] == doctest::Approx(3.0));
  CHECK(norms[1] == doctest::Approx(1.0));
  CHECK(norms[2] == doctest::Approx(std::sqrt(8.0)).epsilon(1e-12));

  const auto zero = row_norms(Mat(3, 4));
  for (double v : zero) CHECK(v == 0.0);

  RngState rng(5);
  const double a = rng.next_unit(), b = rng.next_unit();
  const Mat single = Mat::from_rows({{a, b}});
  CHECK(row_norms(single)[0] == doctest::Approx(std::sqrt(a * a + b * b)).epsilon(1e-14));
}

TEST_CASE("topr_svd_left on diagonal and rank-1 matrices") {
  Mat d(3, 3);
  d(0, 0) = 3;
  d(1, 1) = 2;
  d(2, 2) = 1;
  const Mat u = topr_svd_left(d, 2);
  // columns span e1, e2: projector reproduces those coordinates
  CHECK(std::abs(u(0, 0)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(u(1, 1)) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::abs(u(2, 0)) < 1e-10);
  CHECK(std::abs(u(2, 1)) < 1e-10);

  RngState rng(17);
  Mat uu = random_mat(5, 1, rng);
  Mat vv = random_mat(1, 4, rng);
  const Mat g = matmul(uu, vv);
  const Mat p = topr_svd_left(g, 1);
  const Mat rec = matmul(p, matmul_tn(p, g));
  CHECK(max_abs_diff(rec, g) < 1e-8);

  CHECK_THROWS_AS(topr_svd_left(g, 5), std::invalid_argument);
  CHECK_THROWS_AS(topr_svd_left(g, 0), std::invalid_argument);
}

TEST_CASE("topr_svd_left singular values match bisection oracle") {
  RngState rng(29);
  const Mat g = random_mat(6, 4, rng);
  const Mat p = topr_svd_left(g, 2);

  // orthonormal columns
  const Mat ptp = matmul_tn(p, p);
  CHECK(max_abs_diff(ptp, identity(2)) < 1e-8);

  // singular value i = ||G^T u_i||
  const Mat gtu = matmul_tn(g, p);
  const auto sv = col_norms(gtu);

  const Mat gram = matmul_tn(g, g);
  const auto lam = bisection_eigenvalues(gram);
  CHECK(sv[0] == doctest::Approx(std::sqrt(lam[0])).epsilon(1e-8));
  CHECK(sv[1] == doctest::Approx(std::sqrt(lam[1])).epsilon(1e-8));
}

TEST_CASE("topr_svd_left near-optimal reconstruction for any r") {
  RngState rng(31);
  for (std::size_t m : {4, 6}) {
    for (std::size_t n : {5}) {
      const Mat g = random_mat(m, n, rng);
      const Mat gram = matmul_nt(g, g);
      auto lam = bisection_eigenvalues(gram);
      for (std::size_t r = 1; r <= std::min(m, n); ++r) {
        const Mat p = topr_svd_left(g, r);
        const Mat residual = add_scaled(g, matmul(p, matmul_tn(p, g)), -1.0);
        double tail = 0.0;
        for (std::size_t i = r; i < lam.size(); ++i) tail += std::max(lam[i], 0.0);
        const double best = std::sqrt(tail);
        CHECK(frobenius_norm(residual) <= best + 1e-6 * frobenius_norm(g));
      }
    }
  }
}

TEST_CASE("sample_multinomial degenerate and NR cases") {
  RngState rng(1);
  const std::vector<double> q{1.0, 0.0, 0.0};
  const auto draws = sample_multinomial(q, 2, true, rng);
  CHECK(draws == std::vector<std::size_t>{0, 0});

  const double s8 = std::sqrt(8.0);
  const double total = 4.0 + s8;
  const std::vector<double> qn{3.0 / total, 1.0 / total, s8 / total};
  auto nr = sample_multinomial(qn, 3, false, rng);
  std::sort(nr.begin(), nr.end());
  CHECK(nr == std::vector<std::size_t>{0, 1, 2});

  CHECK_THROWS_AS(sample_multinomial(std::vector<double>{0.5, 0.6}, 1, true, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_multinomial(std::vector<double>{-0.5, 1.5}, 1, true, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_multinomial(q, 2, false, rng), std::invalid_argument);
}

TEST_CASE("sample_multinomial frequency over many seeds") {
  const std::vector<double> q{0.5, 0.5};
  std::size_t zeros = 0;
  const std::size_t trials = 1000000;
  for (std::size_t s = 0; s < trials; ++s) {
    RngState rng(s);
    const auto d = sample_multinomial(q, 1, true, rng);
    zeros += (d[0] == 0) ? 1 : 0;
  }
  const double freq = static_cast<double>(zeros) / trials;
  CHECK(freq == doctest::Approx(0.5).epsilon(0.0032));  // 3 standard errors
  CHECK(std::abs(freq - 0.5) < 0.0016);
}

TEST_CASE("sample_multinomial reproducibility") {
  RngState a(42), b(42);
  const std::vector<double> q{0.2, 0.3, 0.5};
  CHECK(sample_multinomial(q, 16, true, a) == sample_multinomial(q, 16, true, b));
  CHECK(sample_multinomial(q, 3, false, a) == sample_multinomial(q, 3, false, b));
}

TEST_CASE("gaussian_fill moments and determinism") {
  RngState rng(9);
  const Mat z = gaussian_fill(1000, 1000, 0.25, rng);
  double mean = 0.0;
  for (double v : z.data()) mean += v;
  mean /= z.size();
  CHECK(std::abs(mean) < 4.0 * 0.5 / 1000.0);
  double var = 0.0;
  for (double v : z.data()) var += (v - mean) * (v - mean);
  var /= z.size();
  CHECK(var > 0.245);
  CHECK(var < 0.255);

  RngState r1(13), r2(13);
  CHECK(max_abs_diff(gaussian_fill(8, 8, 1.0, r1), gaussian_fill(8, 8, 1.0, r2)) == 0.0);

  RngState r3(99);
  CHECK(std::isfinite(gaussian_fill(1, 1, 2.0, r3)(0, 0)));
  CHECK_THROWS_AS(gaussian_fill(1, 1, 0.0, r3), std::invalid_argument);
}

TEST_CASE("topk_indices") {
  const std::vector<double> v{3.0, 1.0, 2.828};
  CHECK(topk_indices(v, 2) == std::vector<std::size_t>{0, 2});

  const std::vector<double> eq{5.0, 5.0, 5.0};
  CHECK(topk_indices(eq, 2) == std::vector<std::size_t>{0, 1});

  const std::vector<double> w{1.0, 4.0, 2.0, 3.0};
  CHECK(topk_indices(w, 4) == std::vector<std::size_t>{1, 3, 2, 0});

  CHECK_THROWS_AS(topk_indices(w, 5), std::invalid_argument);
}

TEST_CASE("rng streams are stable and substreams distinct") {
  RngState a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngState s0 = RngState::substream(123, 0);
  RngState s1 = RngState::substream(123, 1);
  CHECK(s0.next_u64() != s1.next_u64());
}

TEST_CASE("allocation audit records peak buffer") {
  allocation_audit() = AllocationAudit{true, 0};
  { Mat tmp(7, 9); }
  CHECK(allocation_audit().peak_elems == 63);
  allocation_audit() = AllocationAudit{};
}
