#include "meso/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <string>

namespace meso::linalg {

namespace {

thread_local FlopCounters g_counters;
thread_local OpCategory g_category = OpCategory::General;
thread_local AllocationAudit g_audit;

void note_alloc(std::size_t elems) {
  if (g_audit.active && elems > g_audit.peak_elems) {
    g_audit.peak_elems = elems;
  }
}

}  // namespace

FlopCounters& flop_counters() { return g_counters; }
AllocationAudit& allocation_audit() { return g_audit; }
OpCategory current_category() { return g_category; }

void count_madds(OpCategory c, std::uint64_t n) {
  g_counters.total += 2 * n;
  g_counters.madds[static_cast<std::size_t>(c)] += n;
}

void count_raw(OpCategory c, std::uint64_t raw, std::uint64_t madds) {
  g_counters.total += raw;
  g_counters.madds[static_cast<std::size_t>(c)] += madds;
}

CategoryScope::CategoryScope(OpCategory c) : prev_(g_category) { g_category = c; }
CategoryScope::~CategoryScope() { g_category = prev_; }

// ---------------------------------------------------------------------------
// Mat
// ---------------------------------------------------------------------------

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  note_alloc(rows * cols);
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Mat out(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw std::invalid_argument("Mat::from_rows: ragged rows");
    }
    std::size_t j = 0;
    for (double v : row) out(i, j++) = v;
    ++i;
  }
  return out;
}

bool Mat::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// RngState
// ---------------------------------------------------------------------------

std::uint64_t RngState::mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

RngState RngState::substream(std::uint64_t seed, std::uint64_t stream_id) {
  return RngState(mix64(seed + kGamma * (stream_id + 1)));
}

std::uint64_t RngState::next_u64() {
  pos += 1;
  return mix64(seed + kGamma * pos);
}

double RngState::next_unit() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngState::next_normal(double variance) {
  const double u1 = next_unit();
  const double u2 = next_unit();
  const double radius = std::sqrt(-2.0 * std::log1p(-u1));  // u1 in [0,1) keeps 1-u1 > 0
  const double z = radius * std::cos(2.0 * std::numbers::pi * u2);
  return z * std::sqrt(variance);
}

std::size_t RngState::next_index(std::size_t n) {
  const double u = next_unit();
  auto k = static_cast<std::size_t>(u * static_cast<double>(n));
  return k >= n ? n - 1 : k;
}

// ---------------------------------------------------------------------------
// Products
// ---------------------------------------------------------------------------

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

Mat matmul(const Mat& a, const Mat& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree");
  const std::size_t p = a.rows(), q = a.cols(), s = b.cols();
  Mat c(p, s);
  for (std::size_t i = 0; i < p; ++i) {
    double* ci = c.row_ptr(i);
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a(i, k);
      const double* bk = b.row_ptr(k);
      for (std::size_t j = 0; j < s; ++j) ci[j] += aik * bk[j];
    }
  }
  count_madds(g_category, static_cast<std::uint64_t>(p) * q * s);
  return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dimensions disagree");
  const std::size_t p = a.cols(), q = a.rows(), s = b.cols();
  Mat c(p, s);
  for (std::size_t k = 0; k < q; ++k) {
    const double* ak = a.row_ptr(k);
    const double* bk = b.row_ptr(k);
    for (std::size_t i = 0; i < p; ++i) {
      double* ci = c.row_ptr(i);
      const double aki = ak[i];
      for (std::size_t j = 0; j < s; ++j) ci[j] += aki * bk[j];
    }
  }
  count_madds(g_category, static_cast<std::uint64_t>(p) * q * s);
  return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dimensions disagree");
  const std::size_t p = a.rows(), q = a.cols(), s = b.rows();
  Mat c(p, s);
  for (std::size_t i = 0; i < p; ++i) {
    const double* ai = a.row_ptr(i);
    double* ci = c.row_ptr(i);
    for (std::size_t j = 0; j < s; ++j) {
      const double* bj = b.row_ptr(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < q; ++k) acc += ai[k] * bj[k];
      ci[j] = acc;
    }
  }
  count_madds(g_category, static_cast<std::uint64_t>(p) * q * s);
  return c;
}

Mat transpose(const Mat& a) {
  Mat t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

std::vector<double> row_norms(const Mat& g) {
  std::vector<double> out(g.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const double* gi = g.row_ptr(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < g.cols(); ++j) acc += gi[j] * gi[j];
    out[i] = std::sqrt(acc);
  }
  count_raw(OpCategory::ComputeP, 2 * g.size() + g.rows(), g.size());
  return out;
}

std::vector<double> col_norms(const Mat& g) {
  std::vector<double> acc(g.cols(), 0.0);
  for (std::size_t i = 0; i < g.rows(); ++i) {
    const double* gi = g.row_ptr(i);
    for (std::size_t j = 0; j < g.cols(); ++j) acc[j] += gi[j] * gi[j];
  }
  for (double& v : acc) v = std::sqrt(v);
  count_raw(OpCategory::ComputeP, 2 * g.size() + g.cols(), g.size());
  return acc;
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi) and the SVD built on it
// ---------------------------------------------------------------------------

SymEig jacobi_eigen_symmetric(const Mat& a) {
  require(a.rows() == a.cols(), "jacobi_eigen_symmetric: matrix not square");
  const std::size_t n = a.rows();
  Mat s = a;
  Mat v = identity(n);

  double scale = 0.0;
  for (double x : s.data()) scale += x * x;
  scale = std::sqrt(scale);
  const double tol = scale * 1e-15;

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) off += s(i, j) * s(i, j);
    }
    if (std::sqrt(2.0 * off) <= tol) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = s(p, q);
        if (std::abs(apq) <= tol / (2.0 * n)) continue;
        const double app = s(p, p), aqq = s(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double sn = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double skp = s(k, p), skq = s(k, q);
          s(k, p) = c * skp - sn * skq;
          s(k, q) = sn * skp + c * skq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double spk = s(p, k), sqk = s(q, k);
          s(p, k) = c * spk - sn * sqk;
          s(q, k) = sn * spk + c * sqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - sn * vkq;
          v(k, q) = sn * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = s(i, i);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (diag[x] != diag[y]) return diag[x] > diag[y];
    return x < y;
  });

  SymEig out;
  out.eigenvalues.resize(n);
  out.eigenvectors = Mat(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    out.eigenvalues[c] = diag[order[c]];
    for (std::size_t k = 0; k < n; ++k) out.eigenvectors(k, c) = v(k, order[c]);
  }
  return out;
}

namespace {

// Extends the orthonormal columns of u (first `have` of `want`) with unit
// basis candidates, for rank-deficient inputs.
void complete_orthonormal(Mat& u, std::size_t have, std::size_t want) {
  const std::size_t m = u.rows();
  std::size_t next = have;
  for (std::size_t cand = 0; cand < m && next < want; ++cand) {
    std::vector<double> w(m, 0.0);
    w[cand] = 1.0;
    for (std::size_t c = 0; c < next; ++c) {
      double dot = 0.0;
      for (std::size_t k = 0; k < m; ++k) dot += w[k] * u(k, c);
      for (std::size_t k = 0; k < m; ++k) w[k] -= dot * u(k, c);
    }
    double norm = 0.0;
    for (double x : w) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-8) continue;
    for (std::size_t k = 0; k < m; ++k) u(k, next) = w[k] / norm;
    ++next;
  }
  if (next < want) {
    throw std::runtime_error("topr_svd_left: failed to complete orthonormal basis");
  }
}

}  // namespace

Mat topr_svd_left(const Mat& g, std::size_t r) {
  const std::size_t m = g.rows(), n = g.cols();
  require(r >= 1 && r <= std::min(m, n), "topr_svd_left: rank out of range");

  if (m <= n) {
    // Left singular vectors are the eigenvectors of G G^T.
    CategoryScope scope(OpCategory::ComputeP);
    const Mat gram = matmul_nt(g, g);
    const SymEig eig = jacobi_eigen_symmetric(gram);
    Mat u(m, r);
    for (std::size_t c = 0; c < r; ++c) {
      for (std::size_t k = 0; k < m; ++k) u(k, c) = eig.eigenvectors(k, c);
    }
    return u;
  }

  // Tall case: eigenvectors of G^T G give the right singular vectors; map
  // them through G and normalize. Zero singular directions are completed
  // with an orthonormal basis so P^T P = I regardless of rank.
  CategoryScope scope(OpCategory::ComputeP);
  const Mat gram = matmul_tn(g, g);
  const SymEig eig = jacobi_eigen_symmetric(gram);
  Mat u(m, r);
  const double lead = std::max(eig.eigenvalues.empty() ? 0.0 : eig.eigenvalues[0], 0.0);
  const double cutoff = std::sqrt(lead) * 1e-12 + 1e-300;
  std::size_t have = 0;
  for (std::size_t c = 0; c < r; ++c) {
    const double sigma = std::sqrt(std::max(eig.eigenvalues[c], 0.0));
    if (sigma <= cutoff) break;
    for (std::size_t k = 0; k < m; ++k) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += g(k, j) * eig.eigenvectors(j, c);
      u(k, have) = acc / sigma;
    }
    ++have;
  }
  if (have < r) complete_orthonormal(u, have, r);
  return u;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

namespace {

void validate_probabilities(std::span<const double> q) {
  double sum = 0.0;
  for (double x : q) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw std::invalid_argument("sample_multinomial: negative or non-finite probability");
    }
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw std::invalid_argument("sample_multinomial: probabilities must sum to 1");
  }
}

std::size_t draw_from(std::span<const double> w, double total, RngState& rng) {
  const double u = rng.next_unit() * total;
  double cum = 0.0;
  std::size_t last_positive = 0;
  bool seen_positive = false;
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k] > 0.0) {
      last_positive = k;
      seen_positive = true;
    }
    cum += w[k];
    if (u < cum && w[k] > 0.0) return k;
  }
  if (!seen_positive) throw std::invalid_argument("sample_multinomial: no mass left");
  return last_positive;  // guards against rounding at the top of the CDF
}

}  // namespace

std::vector<std::size_t> sample_multinomial(std::span<const double> q, std::size_t r,
                                            bool replacement, RngState& rng) {
  validate_probabilities(q);
  std::vector<std::size_t> out;
  out.reserve(r);

  if (replacement) {
    for (std::size_t j = 0; j < r; ++j) out.push_back(draw_from(q, 1.0, rng));
    return out;
  }

  std::size_t support = 0;
  for (double x : q) support += (x > 0.0) ? 1 : 0;
  if (r > support) {
    throw std::invalid_argument("sample_multinomial: support too small for NR draw");
  }
  std::vector<double> w(q.begin(), q.end());
  for (std::size_t j = 0; j < r; ++j) {
    double total = std::accumulate(w.begin(), w.end(), 0.0);
    const std::size_t k = draw_from(w, total, rng);
    out.push_back(k);
    w[k] = 0.0;
  }
  return out;
}

Mat gaussian_fill(std::size_t rows, std::size_t cols, double variance, RngState& rng) {
  require(variance > 0.0, "gaussian_fill: variance must be positive");
  Mat out(rows, cols);
  for (double& v : out.data()) v = rng.next_normal(variance);
  return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k) {
  require(k <= values.size(), "topk_indices: k exceeds length");
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  });
  order.resize(k);
  return order;
}

// ---------------------------------------------------------------------------
// Helpers
// ---------------------------------------------------------------------------

double frobenius_norm(const Mat& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v * v;
  return std::sqrt(acc);
}

double max_abs(const Mat& a) {
  double m = 0.0;
  for (double v : a.data()) m = std::max(m, std::abs(v));
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff: shape mismatch");
  double m = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

Mat add_scaled(const Mat& a, const Mat& b, double s) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add_scaled: shape mismatch");
  Mat out = a;
  auto dst = out.data();
  auto src = b.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
  return out;
}

void scale_inplace(Mat& a, double s) {
  for (double& v : a.data()) v *= s;
}

Mat identity(std::size_t n) {
  Mat out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

std::uint64_t bit_hash_combine(std::uint64_t h, const Mat& a) {
  auto d = a.data();
  const auto* bytes = reinterpret_cast<const unsigned char*>(d.data());
  const std::size_t nbytes = d.size() * sizeof(double);
  for (std::size_t i = 0; i < nbytes; ++i) {
    h ^= bytes[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

std::uint64_t bit_hash(const Mat& a) { return bit_hash_combine(0xCBF29CE484222325ull, a); }

}  // namespace meso::linalg
