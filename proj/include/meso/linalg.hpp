#pragma once

// Dense double-precision matrices, a seekable counter-based RNG, and the
// operation counters used by the cost model. Everything here is a pure
// function of its inputs plus an explicitly threaded RngState; the only
// thread-wide state is the per-thread op counter and allocation audit.

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace meso::linalg {

// ---------------------------------------------------------------------------
// Operation counters
// ---------------------------------------------------------------------------

// Categories used to reconcile measured work against the analytic cost model.
// `total` counts raw scalar ops (a multiply-add contributes 2); the per
// category tallies count multiply-adds so they line up with the cost tables.
enum class OpCategory : int {
  General = 0,
  GradFull,    // full-gradient products (grad_out^T x)
  Projection,  // fused projected-gradient product
  Scale,       // diagonal row scaling
  Update,      // weight updates
  Optimizer,   // elementwise optimizer work (raw ops, not madds)
  InputGrad,   // input-gradient chain products
  ComputeP,    // projection refresh work (row norms etc.)
  kCount,
};

struct FlopCounters {
  std::uint64_t total = 0;
  std::array<std::uint64_t, static_cast<std::size_t>(OpCategory::kCount)> madds{};

  void reset() { *this = FlopCounters{}; }
  std::uint64_t madds_of(OpCategory c) const {
    return madds[static_cast<std::size_t>(c)];
  }
};

FlopCounters& flop_counters();  // thread-local

void count_madds(OpCategory c, std::uint64_t n);  // total += 2n, madds[c] += n
void count_raw(OpCategory c, std::uint64_t raw, std::uint64_t madds);

// Scoped default category for matmul-style ops that do not take one.
class CategoryScope {
 public:
  explicit CategoryScope(OpCategory c);
  ~CategoryScope();
  CategoryScope(const CategoryScope&) = delete;
  CategoryScope& operator=(const CategoryScope&) = delete;

 private:
  OpCategory prev_;
};

OpCategory current_category();

// Test hook: tracks the largest single buffer allocated while active.
struct AllocationAudit {
  bool active = false;
  std::size_t peak_elems = 0;
};

AllocationAudit& allocation_audit();  // thread-local

// ---------------------------------------------------------------------------
// Mat
// ---------------------------------------------------------------------------

class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// RngState
// ---------------------------------------------------------------------------

// Counter-based 64-bit generator: draw i is mix64(seed + (i+1)*kGamma) with
// the SplitMix64 constants. Identical (seed, position) gives identical draws
// on any platform; substreams are derived by folding a stream id into the
// seed, so parallel consumers never share draws.
struct RngState {
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  std::uint64_t seed = 0;
  std::uint64_t pos = 0;

  RngState() = default;
  explicit RngState(std::uint64_t s) : seed(s) {}

  static std::uint64_t mix64(std::uint64_t z);
  static RngState substream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t next_u64();
  double next_unit();                     // uniform [0, 1)
  double next_normal(double variance);    // Box-Muller
  std::size_t next_index(std::size_t n);  // uniform {0, ..., n-1}
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// c = a * b. Counts 2*p*q*s raw ops (p*q*s multiply-adds).
Mat matmul(const Mat& a, const Mat& b);
// c = a^T * b without materializing a^T.
Mat matmul_tn(const Mat& a, const Mat& b);
// c = a * b^T without materializing b^T.
Mat matmul_nt(const Mat& a, const Mat& b);

Mat transpose(const Mat& a);

// Euclidean norm of every row / column.
std::vector<double> row_norms(const Mat& g);
std::vector<double> col_norms(const Mat& g);

// Top-r left singular vectors, via a cyclic-Jacobi eigendecomposition of the
// Gram matrix of the smaller dimension. Columns are orthonormal.
Mat topr_svd_left(const Mat& g, std::size_t r);

// Eigendecomposition of a symmetric matrix; eigenvalues descending, the
// eigenvector for eigenvalues[i] is column i of eigenvectors.
struct SymEig {
  std::vector<double> eigenvalues;
  Mat eigenvectors;
};
SymEig jacobi_eigen_symmetric(const Mat& a);

// r draws from Multinomial(1, q). With replacement the draws are i.i.d.;
// without replacement each drawn index has its mass zeroed and the rest is
// renormalized before the next draw.
std::vector<std::size_t> sample_multinomial(std::span<const double> q, std::size_t r,
                                            bool replacement, RngState& rng);

// rows x cols matrix of i.i.d. N(0, variance) entries.
Mat gaussian_fill(std::size_t rows, std::size_t cols, double variance, RngState& rng);

// Indices of the k largest values, descending, ties to the lower index.
std::vector<std::size_t> topk_indices(std::span<const double> values, std::size_t k);

// ---- small helpers used across modules ----

double frobenius_norm(const Mat& a);
double max_abs(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);
Mat add_scaled(const Mat& a, const Mat& b, double s);  // a + s*b
void scale_inplace(Mat& a, double s);
Mat identity(std::size_t n);

// FNV-1a over the raw bytes; used by the distributed simulator to assert
// replica consistency.
std::uint64_t bit_hash(const Mat& a);
std::uint64_t bit_hash_combine(std::uint64_t h, const Mat& a);

}  // namespace meso::linalg
