#pragma once

// Construction, application, and verification of the projection matrices used
// by the subspace optimizer: structured-sparse row selections (the method's
// own family), dense Gaussian and SVD baselines, and a CountSketch baseline.

#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "meso/linalg.hpp"

namespace meso::proj {

using linalg::Mat;
using linalg::RngState;

enum class ProjectionKind {
  FullRank,
  TopR,
  FrozenTopR,
  UniformR,
  UniformNR,
  MultNormR,
  MultNormNR,
  MultNorm2R,
  MultNorm2NR,
  DenseGaussian,
  DenseSvd,
  CountSketch,
};

bool is_sparse_kind(ProjectionKind k);
bool is_dense_kind(ProjectionKind k);
bool is_with_replacement(ProjectionKind k);
const char* kind_name(ProjectionKind k);
ProjectionKind kind_from_name(std::string_view name);

// P^T = rho * B: `sigma[j]` is the selected source row of subspace coordinate
// j and `rho[j]` its positive scale. Stored with r floats + r indices; the
// m x r matrix is never formed.
struct SparseProjection {
  std::size_t m = 0;
  std::vector<std::size_t> sigma;
  std::vector<double> rho;

  std::size_t rank() const { return sigma.size(); }
};

struct DenseProjection {
  Mat p;  // m x r

  std::size_t m() const { return p.rows(); }
  std::size_t rank() const { return p.cols(); }
};

// One nonzero +-1 per column of P^T: source row i lands in subspace row
// bucket[i] with sign[i].
struct CountSketchProjection {
  std::size_t r = 0;
  std::vector<std::size_t> bucket;  // m entries in [0, r)
  std::vector<signed char> sign;    // m entries in {-1, +1}

  std::size_t m() const { return bucket.size(); }
  std::size_t rank() const { return r; }
};

using Projection = std::variant<SparseProjection, DenseProjection, CountSketchProjection>;

std::size_t source_dim(const Projection& p);
std::size_t rank(const Projection& p);

enum class QKind { Norm, Norm2, Uniform };

// Sampling distribution over rows: norms/sum, norms^2/sum, or 1/m.
std::vector<double> compute_q(std::span<const double> norms, QKind kind);

// Sparse compute_P. TopR / FrozenTopR pick the r largest row norms with unit
// scales; R variants sample with replacement and scale by 1/sqrt(r q_sigma);
// NR variants sample without replacement with unit scales. FullRank returns
// the identity selection (requires r == m).
SparseProjection compute_p_sparse(const Mat& g, ProjectionKind kind, std::size_t r,
                                  RngState& rng);

// Dense compute_P for the DenseGaussian / DenseSvd / CountSketch baselines.
Projection compute_p_dense(const Mat& g, ProjectionKind kind, std::size_t r, RngState& rng);

// P^T g (r x n). Sparse projections gather and scale rows; no m x r matrix is
// ever formed.
Mat project(const Projection& p, const Mat& g);
Mat project(const SparseProjection& p, const Mat& g);

// P gc (m x n). Sparse projections scatter rows; duplicate indices accumulate.
Mat reconstruct(const Projection& p, const Mat& gc);
Mat reconstruct(const SparseProjection& p, const Mat& gc);

// Exhaustive E[P P^T] over all m^r index tuples for the with-replacement
// scaled construction; equals the identity when the scales are unbiased.
// Enumeration is capped at 1e5 tuples and q must be strictly positive.
Mat expected_reconstruction_exhaustive(std::span<const double> q, std::size_t r);

// (1/r) (sum_k ||G_k||^2 / q_k - sum_k ||G_k||^2): the total variance of the
// with-replacement estimator P P^T G.
double total_variance_analytic(const Mat& g, std::span<const double> q, std::size_t r);

// |union of selected indices| / m over a history of refreshes.
double coverage_fraction(std::span<const SparseProjection> history, std::size_t m);

}  // namespace meso::proj
