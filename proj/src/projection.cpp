#include "meso/projection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace meso::proj {

using linalg::count_raw;
using linalg::OpCategory;

bool is_sparse_kind(ProjectionKind k) {
  switch (k) {
    case ProjectionKind::FullRank:
    case ProjectionKind::TopR:
    case ProjectionKind::FrozenTopR:
    case ProjectionKind::UniformR:
    case ProjectionKind::UniformNR:
    case ProjectionKind::MultNormR:
    case ProjectionKind::MultNormNR:
    case ProjectionKind::MultNorm2R:
    case ProjectionKind::MultNorm2NR:
      return true;
    default:
      return false;
  }
}

bool is_dense_kind(ProjectionKind k) { return !is_sparse_kind(k); }

bool is_with_replacement(ProjectionKind k) {
  switch (k) {
    case ProjectionKind::UniformR:
    case ProjectionKind::MultNormR:
    case ProjectionKind::MultNorm2R:
      return true;
    default:
      return false;
  }
}

const char* kind_name(ProjectionKind k) {
  switch (k) {
    case ProjectionKind::FullRank: return "fullrank";
    case ProjectionKind::TopR: return "topr";
    case ProjectionKind::FrozenTopR: return "frozen-topr";
    case ProjectionKind::UniformR: return "uniform-r";
    case ProjectionKind::UniformNR: return "uniform-nr";
    case ProjectionKind::MultNormR: return "multnorm-r";
    case ProjectionKind::MultNormNR: return "multnorm-nr";
    case ProjectionKind::MultNorm2R: return "multnorm2-r";
    case ProjectionKind::MultNorm2NR: return "multnorm2-nr";
    case ProjectionKind::DenseGaussian: return "dense-gaussian";
    case ProjectionKind::DenseSvd: return "dense-svd";
    case ProjectionKind::CountSketch: return "countsketch";
  }
  return "?";
}

ProjectionKind kind_from_name(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ProjectionKind::CountSketch); ++i) {
    const auto k = static_cast<ProjectionKind>(i);
    if (name == kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown projection kind: " + std::string(name));
}

std::size_t source_dim(const Projection& p) {
  return std::visit([](const auto& v) -> std::size_t {
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, SparseProjection>) {
      return v.m;
    } else {
      return v.m();
    }
  }, p);
}

std::size_t rank(const Projection& p) {
  return std::visit([](const auto& v) { return v.rank(); }, p);
}

// ---------------------------------------------------------------------------
// compute_q / compute_P
// ---------------------------------------------------------------------------

std::vector<double> compute_q(std::span<const double> norms, QKind kind) {
  const std::size_t m = norms.size();
  if (m == 0) throw std::invalid_argument("compute_q: empty norms");
  std::vector<double> q(m);
  if (kind == QKind::Uniform) {
    std::fill(q.begin(), q.end(), 1.0 / static_cast<double>(m));
    return q;
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    const double v = norms[k];
    if (!(v >= 0.0)) throw std::invalid_argument("compute_q: negative norm");
    q[k] = (kind == QKind::Norm) ? v : v * v;
    sum += q[k];
  }
  if (sum <= 0.0) {
    throw std::invalid_argument("compute_q: all norms are zero");
  }
  for (double& v : q) v /= sum;
  return q;
}

namespace {

SparseProjection sampled_projection(const std::vector<double>& q, std::size_t m,
                                    std::size_t r, bool replacement, RngState& rng) {
  SparseProjection p;
  p.m = m;
  p.sigma = linalg::sample_multinomial(q, r, replacement, rng);
  p.rho.resize(r, 1.0);
  if (replacement) {
    for (std::size_t j = 0; j < r; ++j) {
      p.rho[j] = 1.0 / std::sqrt(static_cast<double>(r) * q[p.sigma[j]]);
    }
  }
  return p;
}

void require_all_positive(const std::vector<double>& q) {
  for (double v : q) {
    if (!(v > 0.0)) {
      throw std::invalid_argument(
          "compute_p_sparse: with-replacement scaling needs strictly positive q");
    }
  }
}

}  // namespace

SparseProjection compute_p_sparse(const Mat& g, ProjectionKind kind, std::size_t r,
                                  RngState& rng) {
  if (!is_sparse_kind(kind)) {
    throw std::invalid_argument("compute_p_sparse: kind is not sparse");
  }
  const std::size_t m = g.rows();
  if (r < 1 || r > m) throw std::invalid_argument("compute_p_sparse: rank out of range");

  switch (kind) {
    case ProjectionKind::FullRank: {
      if (r != m) throw std::invalid_argument("compute_p_sparse: FullRank needs r == m");
      SparseProjection p;
      p.m = m;
      p.sigma.resize(m);
      std::iota(p.sigma.begin(), p.sigma.end(), 0);
      p.rho.assign(m, 1.0);
      return p;
    }
    case ProjectionKind::TopR:
    case ProjectionKind::FrozenTopR: {
      const auto norms = linalg::row_norms(g);
      SparseProjection p;
      p.m = m;
      p.sigma = linalg::topk_indices(norms, r);
      p.rho.assign(r, 1.0);
      return p;
    }
    case ProjectionKind::UniformR: {
      const auto q = compute_q(std::vector<double>(m, 1.0), QKind::Uniform);
      return sampled_projection(q, m, r, true, rng);
    }
    case ProjectionKind::UniformNR: {
      const auto q = compute_q(std::vector<double>(m, 1.0), QKind::Uniform);
      return sampled_projection(q, m, r, false, rng);
    }
    case ProjectionKind::MultNormR: {
      const auto q = compute_q(linalg::row_norms(g), QKind::Norm);
      require_all_positive(q);
      return sampled_projection(q, m, r, true, rng);
    }
    case ProjectionKind::MultNormNR: {
      const auto q = compute_q(linalg::row_norms(g), QKind::Norm);
      return sampled_projection(q, m, r, false, rng);
    }
    case ProjectionKind::MultNorm2R: {
      const auto q = compute_q(linalg::row_norms(g), QKind::Norm2);
      require_all_positive(q);
      return sampled_projection(q, m, r, true, rng);
    }
    case ProjectionKind::MultNorm2NR: {
      const auto q = compute_q(linalg::row_norms(g), QKind::Norm2);
      return sampled_projection(q, m, r, false, rng);
    }
    default:
      throw std::invalid_argument("compute_p_sparse: unhandled kind");
  }
}

Projection compute_p_dense(const Mat& g, ProjectionKind kind, std::size_t r, RngState& rng) {
  const std::size_t m = g.rows();
  switch (kind) {
    case ProjectionKind::DenseGaussian:
      return DenseProjection{linalg::gaussian_fill(m, r, 1.0 / static_cast<double>(r), rng)};
    case ProjectionKind::DenseSvd:
      return DenseProjection{linalg::topr_svd_left(g, r)};
    case ProjectionKind::CountSketch: {
      CountSketchProjection p;
      p.r = r;
      p.bucket.resize(m);
      p.sign.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        p.bucket[i] = rng.next_index(r);
        p.sign[i] = rng.next_unit() < 0.5 ? -1 : 1;
      }
      return p;
    }
    default:
      throw std::invalid_argument("compute_p_dense: kind is not dense");
  }
}

// ---------------------------------------------------------------------------
// project / reconstruct
// ---------------------------------------------------------------------------

Mat project(const SparseProjection& p, const Mat& g) {
  if (p.m != g.rows()) throw std::invalid_argument("project: source dimension mismatch");
  const std::size_t r = p.rank(), n = g.cols();
  Mat out(r, n);
  for (std::size_t j = 0; j < r; ++j) {
    const double* src = g.row_ptr(p.sigma[j]);
    double* dst = out.row_ptr(j);
    const double s = p.rho[j];
    for (std::size_t c = 0; c < n; ++c) dst[c] = s * src[c];
  }
  count_raw(OpCategory::Scale, r * n, r * n);
  return out;
}

Mat project(const Projection& p, const Mat& g) {
  if (const auto* sp = std::get_if<SparseProjection>(&p)) return project(*sp, g);
  if (const auto* dp = std::get_if<DenseProjection>(&p)) {
    if (dp->m() != g.rows()) throw std::invalid_argument("project: source dimension mismatch");
    return linalg::matmul_tn(dp->p, g);
  }
  const auto& cs = std::get<CountSketchProjection>(p);
  if (cs.m() != g.rows()) throw std::invalid_argument("project: source dimension mismatch");
  Mat out(cs.r, g.cols());
  for (std::size_t i = 0; i < cs.m(); ++i) {
    const double* src = g.row_ptr(i);
    double* dst = out.row_ptr(cs.bucket[i]);
    const double s = static_cast<double>(cs.sign[i]);
    for (std::size_t c = 0; c < g.cols(); ++c) dst[c] += s * src[c];
  }
  count_raw(OpCategory::General, 2 * cs.m() * g.cols(), cs.m() * g.cols());
  return out;
}

Mat reconstruct(const SparseProjection& p, const Mat& gc) {
  if (gc.rows() != p.rank()) throw std::invalid_argument("reconstruct: rank mismatch");
  Mat out(p.m, gc.cols());
  for (std::size_t j = 0; j < p.rank(); ++j) {
    const double* src = gc.row_ptr(j);
    double* dst = out.row_ptr(p.sigma[j]);
    const double s = p.rho[j];
    for (std::size_t c = 0; c < gc.cols(); ++c) dst[c] += s * src[c];
  }
  count_raw(OpCategory::General, 2 * p.rank() * gc.cols(), p.rank() * gc.cols());
  return out;
}

Mat reconstruct(const Projection& p, const Mat& gc) {
  if (const auto* sp = std::get_if<SparseProjection>(&p)) return reconstruct(*sp, gc);
  if (const auto* dp = std::get_if<DenseProjection>(&p)) {
    if (gc.rows() != dp->rank()) throw std::invalid_argument("reconstruct: rank mismatch");
    return linalg::matmul(dp->p, gc);
  }
  const auto& cs = std::get<CountSketchProjection>(p);
  if (gc.rows() != cs.r) throw std::invalid_argument("reconstruct: rank mismatch");
  Mat out(cs.m(), gc.cols());
  for (std::size_t i = 0; i < cs.m(); ++i) {
    const double* src = gc.row_ptr(cs.bucket[i]);
    double* dst = out.row_ptr(i);
    const double s = static_cast<double>(cs.sign[i]);
    for (std::size_t c = 0; c < gc.cols(); ++c) dst[c] = s * src[c];
  }
  count_raw(OpCategory::General, 2 * cs.m() * gc.cols(), cs.m() * gc.cols());
  return out;
}

// ---------------------------------------------------------------------------
// Verification calculators
// ---------------------------------------------------------------------------

Mat expected_reconstruction_exhaustive(std::span<const double> q, std::size_t r) {
  const std::size_t m = q.size();
  if (m == 0 || r == 0) {
    throw std::invalid_argument("expected_reconstruction_exhaustive: empty problem");
  }
  for (double v : q) {
    if (!(v > 0.0)) {
      throw std::invalid_argument(
          "expected_reconstruction_exhaustive: q must be strictly positive (the "
          "unbiased scale 1/sqrt(r q) diverges on zero entries)");
    }
  }
  double tuples = std::pow(static_cast<double>(m), static_cast<double>(r));
  if (tuples > 1e5) {
    throw std::invalid_argument("expected_reconstruction_exhaustive: enumeration too large");
  }

  Mat expectation(m, m);
  std::vector<std::size_t> sigma(r, 0);
  while (true) {
    double weight = 1.0;
    for (std::size_t j = 0; j < r; ++j) weight *= q[sigma[j]];
    // P P^T for this tuple is diagonal: sum_j e_sigma e_sigma^T / (r q_sigma)
    for (std::size_t j = 0; j < r; ++j) {
      expectation(sigma[j], sigma[j]) +=
          weight / (static_cast<double>(r) * q[sigma[j]]);
    }
    std::size_t d = 0;
    while (d < r) {
      if (++sigma[d] < m) break;
      sigma[d] = 0;
      ++d;
    }
    if (d == r) break;
  }
  return expectation;
}

double total_variance_analytic(const Mat& g, std::span<const double> q, std::size_t r) {
  if (q.size() != g.rows()) {
    throw std::invalid_argument("total_variance_analytic: q length mismatch");
  }
  if (r == 0) throw std::invalid_argument("total_variance_analytic: r must be positive");
  double weighted = 0.0;
  double plain = 0.0;
  for (std::size_t k = 0; k < g.rows(); ++k) {
    if (!(q[k] > 0.0)) {
      throw std::invalid_argument("total_variance_analytic: q must be strictly positive");
    }
    const double* row = g.row_ptr(k);
    double sq = 0.0;
    for (std::size_t c = 0; c < g.cols(); ++c) sq += row[c] * row[c];
    weighted += sq / q[k];
    plain += sq;
  }
  return (weighted - plain) / static_cast<double>(r);
}

double coverage_fraction(std::span<const SparseProjection> history, std::size_t m) {
  if (m == 0) return 0.0;
  std::vector<bool> seen(m, false);
  for (const auto& p : history) {
    for (std::size_t idx : p.sigma) {
      if (idx < m) seen[idx] = true;
    }
  }
  const auto covered = static_cast<double>(std::count(seen.begin(), seen.end(), true));
  return covered / static_cast<double>(m);
}

}  // namespace meso::proj
