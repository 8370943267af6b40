#pragma once

// Linear layers with a fused projected backward pass, low-rank adapter
// baselines, and the small trainable stacks used by the training tasks.
//
// Layer orientation is y = x W^T (W is m x n, x is b x n), so the weight
// gradient is grad_out^T x and row selection on the gradient maps to row
// selection on W.

#include <optional>
#include <utility>
#include <vector>

#include "meso/linalg.hpp"
#include "meso/projection.hpp"

namespace meso::model {

using linalg::Mat;
using linalg::RngState;
using proj::SparseProjection;

enum class GradMode { Full, Projected, LoraDelegated };

class LinearLayer {
 public:
  LinearLayer() = default;
  explicit LinearLayer(Mat w) : w_(std::move(w)) {}

  std::size_t out_dim() const { return w_.rows(); }
  std::size_t in_dim() const { return w_.cols(); }
  Mat& weight() { return w_; }
  const Mat& weight() const { return w_; }

  void set_training(bool training) { training_ = training; }
  void set_grad_mode(GradMode mode) { grad_mode_ = mode; }
  GradMode grad_mode() const { return grad_mode_; }
  const std::optional<Mat>& cached_input() const { return cached_input_; }
  void clear_cache() { cached_input_.reset(); }

  // y = x W^T; caches x while training.
  Mat forward(const Mat& x);

  // grad_w = grad_out^T x (m x n), grad_in = grad_out W (b x n).
  std::pair<Mat, Mat> backward_full(const Mat& grad_out);

  // Fused projected backward: gathers the selected columns of grad_out,
  // multiplies by the cached input, scales rows. The m x n gradient is never
  // materialized. Returns (gc, grad_in); grad_in is empty when not requested.
  std::pair<Mat, Mat> backward_projected(const Mat& grad_out, const SparseProjection& p,
                                         bool want_input_grad = true);

  // Same fused pass against the transposed gradient view: selects rows of
  // G^T = x^T grad_out, i.e. columns of the weight gradient. Returns gc of
  // shape r x m.
  std::pair<Mat, Mat> backward_projected_cols(const Mat& grad_out, const SparseProjection& p,
                                              bool want_input_grad = true);

  // W[sigma_j, :] += alpha * rho_j * delta[j, :]; duplicates accumulate.
  void apply_sparse_update(const SparseProjection& p, const Mat& delta, double alpha);
  // Column-side counterpart for the transposed view: W[:, sigma_j] += ...
  void apply_sparse_update_cols(const SparseProjection& p, const Mat& delta, double alpha);

  // W += alpha * update (dense path used by the dense projection kinds).
  void apply_dense_update(const Mat& update, double alpha);

 private:
  Mat w_;
  std::optional<Mat> cached_input_;
  bool training_ = true;
  GradMode grad_mode_ = GradMode::Full;
};

// W0 frozen, effective weight W0 + B A with B (m x r) trainable from zero-ish
// Gaussian and A (r x n) trainable from zero.
class LoraLayer {
 public:
  LoraLayer() = default;
  LoraLayer(Mat w0, std::size_t r, RngState& rng);

  std::size_t out_dim() const { return w0_.rows(); }
  std::size_t in_dim() const { return w0_.cols(); }
  std::size_t rank() const { return bmat_.cols(); }
  Mat& w0() { return w0_; }
  Mat& bmat() { return bmat_; }
  Mat& amat() { return amat_; }
  const Mat& w0() const { return w0_; }
  const Mat& bmat() const { return bmat_; }
  const Mat& amat() const { return amat_; }
  void set_training(bool training) { training_ = training; }

  Mat forward(const Mat& x);  // x (W0 + B A)^T

  struct Grads {
    Mat grad_b;   // m x r
    Mat grad_a;   // r x n
    Mat grad_in;  // b x n
  };
  Grads backward(const Mat& grad_out);

  // W0 += B A, B resampled from N(0, 1/r), A zeroed. The effective function
  // is unchanged at the merge instant.
  void merge_and_reinit(RngState& rng);

 private:
  Mat w0_;
  Mat bmat_;
  Mat amat_;
  std::optional<Mat> cached_input_;  // x
  std::optional<Mat> cached_xat_;    // x A^T
  bool training_ = true;
};

// ---------------------------------------------------------------------------
// Tiny trainable stacks
// ---------------------------------------------------------------------------

Mat tanh_forward(const Mat& y);
// grad wrt pre-activation given activation a = tanh(y): grad .* (1 - a^2)
Mat tanh_backward(const Mat& grad_act, const Mat& act);

// MSE over all entries: loss = mean((yhat - y)^2), grad = 2 (yhat - y) / (b m)
std::pair<double, Mat> mse_loss(const Mat& yhat, const Mat& y);

// Row-wise softmax cross-entropy against integer targets; grad is
// (softmax - onehot) / b.
std::pair<double, Mat> softmax_cross_entropy(const Mat& logits,
                                             const std::vector<std::size_t>& targets);

// A stack of linear layers with tanh between hidden layers (none after the
// last). Loss head is applied by the caller.
struct TinyModel {
  std::vector<LinearLayer> layers;

  struct ForwardCache {
    std::vector<Mat> activations;  // post-tanh activation per hidden boundary
    Mat output;
  };

  Mat forward(const Mat& x);
  ForwardCache forward_cached(const Mat& x);
  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }
};

TinyModel make_mlp(const std::vector<std::size_t>& dims, RngState& rng);

}  // namespace meso::model
