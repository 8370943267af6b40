#include "meso/model.hpp"

#include <cmath>
#include <stdexcept>

namespace meso::model {

using linalg::CategoryScope;
using linalg::count_raw;
using linalg::OpCategory;

// ---------------------------------------------------------------------------
// LinearLayer
// ---------------------------------------------------------------------------

Mat LinearLayer::forward(const Mat& x) {
  if (x.cols() != in_dim()) throw std::invalid_argument("forward: input width mismatch");
  if (training_) {
    cached_input_ = x;
  } else {
    cached_input_.reset();
  }
  return linalg::matmul_nt(x, w_);
}

std::pair<Mat, Mat> LinearLayer::backward_full(const Mat& grad_out) {
  if (!cached_input_) throw std::logic_error("backward_full: no cached input");
  if (grad_out.cols() != out_dim()) {
    throw std::invalid_argument("backward_full: grad width mismatch");
  }
  Mat grad_w = [&] {
    CategoryScope scope(OpCategory::GradFull);
    return linalg::matmul_tn(grad_out, *cached_input_);
  }();
  Mat grad_in = [&] {
    CategoryScope scope(OpCategory::InputGrad);
    return linalg::matmul(grad_out, w_);
  }();
  return {std::move(grad_w), std::move(grad_in)};
}

std::pair<Mat, Mat> LinearLayer::backward_projected(const Mat& grad_out,
                                                    const SparseProjection& p,
                                                    bool want_input_grad) {
  if (!cached_input_) throw std::logic_error("backward_projected: no cached input");
  if (grad_out.cols() != out_dim()) {
    throw std::invalid_argument("backward_projected: grad width mismatch");
  }
  if (p.m != out_dim()) {
    throw std::invalid_argument("backward_projected: projection dimension mismatch");
  }
  const std::size_t b = grad_out.rows();
  const std::size_t r = p.rank();

  // row j of B grad_out^T is column sigma_j of grad_out; gather without
  // forming grad_out^T
  Mat selected(r, b);
  for (std::size_t j = 0; j < r; ++j) {
    double* dst = selected.row_ptr(j);
    const std::size_t col = p.sigma[j];
    for (std::size_t i = 0; i < b; ++i) dst[i] = grad_out(i, col);
  }

  Mat gc = [&] {
    CategoryScope scope(OpCategory::Projection);
    return linalg::matmul(selected, *cached_input_);
  }();
  for (std::size_t j = 0; j < r; ++j) {
    double* row = gc.row_ptr(j);
    const double s = p.rho[j];
    for (std::size_t c = 0; c < gc.cols(); ++c) row[c] *= s;
  }
  count_raw(OpCategory::Scale, r * gc.cols(), r * gc.cols());

  Mat grad_in;
  if (want_input_grad) {
    CategoryScope scope(OpCategory::InputGrad);
    grad_in = linalg::matmul(grad_out, w_);
  }
  return {std::move(gc), std::move(grad_in)};
}

std::pair<Mat, Mat> LinearLayer::backward_projected_cols(const Mat& grad_out,
                                                         const SparseProjection& p,
                                                         bool want_input_grad) {
  if (!cached_input_) throw std::logic_error("backward_projected_cols: no cached input");
  if (grad_out.cols() != out_dim()) {
    throw std::invalid_argument("backward_projected_cols: grad width mismatch");
  }
  if (p.m != in_dim()) {
    throw std::invalid_argument("backward_projected_cols: projection dimension mismatch");
  }
  const Mat& x = *cached_input_;
  const std::size_t b = x.rows();
  const std::size_t r = p.rank();

  // row j of B x^T is column sigma_j of x
  Mat selected(r, b);
  for (std::size_t j = 0; j < r; ++j) {
    double* dst = selected.row_ptr(j);
    const std::size_t col = p.sigma[j];
    for (std::size_t i = 0; i < b; ++i) dst[i] = x(i, col);
  }

  Mat gc = [&] {
    CategoryScope scope(OpCategory::Projection);
    return linalg::matmul(selected, grad_out);
  }();
  for (std::size_t j = 0; j < r; ++j) {
    double* row = gc.row_ptr(j);
    const double s = p.rho[j];
    for (std::size_t c = 0; c < gc.cols(); ++c) row[c] *= s;
  }
  count_raw(OpCategory::Scale, r * gc.cols(), r * gc.cols());

  Mat grad_in;
  if (want_input_grad) {
    CategoryScope scope(OpCategory::InputGrad);
    grad_in = linalg::matmul(grad_out, w_);
  }
  return {std::move(gc), std::move(grad_in)};
}

void LinearLayer::apply_sparse_update(const SparseProjection& p, const Mat& delta,
                                      double alpha) {
  if (p.m != out_dim() || delta.rows() != p.rank() || delta.cols() != in_dim()) {
    throw std::invalid_argument("apply_sparse_update: shape mismatch");
  }
  for (std::size_t j = 0; j < p.rank(); ++j) {
    const double s = alpha * p.rho[j];
    double* wrow = w_.row_ptr(p.sigma[j]);
    const double* drow = delta.row_ptr(j);
    for (std::size_t c = 0; c < in_dim(); ++c) wrow[c] += s * drow[c];
  }
  count_raw(OpCategory::Update, 2 * p.rank() * in_dim(), p.rank() * in_dim());
}

void LinearLayer::apply_sparse_update_cols(const SparseProjection& p, const Mat& delta,
                                           double alpha) {
  if (p.m != in_dim() || delta.rows() != p.rank() || delta.cols() != out_dim()) {
    throw std::invalid_argument("apply_sparse_update_cols: shape mismatch");
  }
  for (std::size_t j = 0; j < p.rank(); ++j) {
    const double s = alpha * p.rho[j];
    const std::size_t col = p.sigma[j];
    const double* drow = delta.row_ptr(j);
    for (std::size_t i = 0; i < out_dim(); ++i) w_(i, col) += s * drow[i];
  }
  count_raw(OpCategory::Update, 2 * p.rank() * out_dim(), p.rank() * out_dim());
}

void LinearLayer::apply_dense_update(const Mat& update, double alpha) {
  if (update.rows() != out_dim() || update.cols() != in_dim()) {
    throw std::invalid_argument("apply_dense_update: shape mismatch");
  }
  auto wd = w_.data();
  auto ud = update.data();
  for (std::size_t i = 0; i < wd.size(); ++i) wd[i] += alpha * ud[i];
  count_raw(OpCategory::Update, 2 * wd.size(), wd.size());
}

// ---------------------------------------------------------------------------
// LoraLayer
// ---------------------------------------------------------------------------

LoraLayer::LoraLayer(Mat w0, std::size_t r, RngState& rng) : w0_(std::move(w0)) {
  bmat_ = linalg::gaussian_fill(w0_.rows(), r, 1.0 / static_cast<double>(r), rng);
  amat_ = Mat(r, w0_.cols());
}

Mat LoraLayer::forward(const Mat& x) {
  if (x.cols() != in_dim()) throw std::invalid_argument("lora forward: width mismatch");
  Mat xat = linalg::matmul_nt(x, amat_);  // b x r
  Mat y = linalg::matmul_nt(x, w0_);
  const Mat low = linalg::matmul_nt(xat, bmat_);  // b x m
  if (training_) {
    cached_input_ = x;
    cached_xat_ = std::move(xat);
  } else {
    cached_input_.reset();
    cached_xat_.reset();
  }
  auto yd = y.data();
  auto ld = low.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] += ld[i];
  return y;
}

LoraLayer::Grads LoraLayer::backward(const Mat& grad_out) {
  if (!cached_input_ || !cached_xat_) throw std::logic_error("lora backward: no cache");
  Grads g;
  g.grad_b = linalg::matmul_tn(grad_out, *cached_xat_);       // m x r
  const Mat gb_in = linalg::matmul(grad_out, bmat_);          // b x r
  g.grad_a = linalg::matmul_tn(gb_in, *cached_input_);        // r x n
  g.grad_in = linalg::matmul(grad_out, w0_);                  // b x n
  const Mat low_in = linalg::matmul(gb_in, amat_);            // b x n
  auto gd = g.grad_in.data();
  auto ld = low_in.data();
  for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += ld[i];
  return g;
}

void LoraLayer::merge_and_reinit(RngState& rng) {
  const Mat ba = linalg::matmul(bmat_, amat_);
  auto wd = w0_.data();
  auto bd = ba.data();
  for (std::size_t i = 0; i < wd.size(); ++i) wd[i] += bd[i];
  bmat_ = linalg::gaussian_fill(w0_.rows(), rank(), 1.0 / static_cast<double>(rank()), rng);
  for (double& v : amat_.data()) v = 0.0;
}

// ---------------------------------------------------------------------------
// Activations and losses
// ---------------------------------------------------------------------------

Mat tanh_forward(const Mat& y) {
  Mat out = y;
  for (double& v : out.data()) v = std::tanh(v);
  return out;
}

Mat tanh_backward(const Mat& grad_act, const Mat& act) {
  if (grad_act.rows() != act.rows() || grad_act.cols() != act.cols()) {
    throw std::invalid_argument("tanh_backward: shape mismatch");
  }
  Mat out = grad_act;
  auto od = out.data();
  auto ad = act.data();
  for (std::size_t i = 0; i < od.size(); ++i) od[i] *= (1.0 - ad[i] * ad[i]);
  return out;
}

std::pair<double, Mat> mse_loss(const Mat& yhat, const Mat& y) {
  if (yhat.rows() != y.rows() || yhat.cols() != y.cols()) {
    throw std::invalid_argument("mse_loss: shape mismatch");
  }
  const double inv = 1.0 / static_cast<double>(yhat.size());
  double loss = 0.0;
  Mat grad(yhat.rows(), yhat.cols());
  auto gd = grad.data();
  auto pd = yhat.data();
  auto td = y.data();
  for (std::size_t i = 0; i < gd.size(); ++i) {
    const double d = pd[i] - td[i];
    loss += d * d;
    gd[i] = 2.0 * d * inv;
  }
  return {loss * inv, std::move(grad)};
}

std::pair<double, Mat> softmax_cross_entropy(const Mat& logits,
                                             const std::vector<std::size_t>& targets) {
  if (targets.size() != logits.rows()) {
    throw std::invalid_argument("softmax_cross_entropy: target count mismatch");
  }
  const std::size_t b = logits.rows(), v = logits.cols();
  const double invb = 1.0 / static_cast<double>(b);
  Mat grad(b, v);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (targets[i] >= v) throw std::invalid_argument("softmax_cross_entropy: target range");
    const double* row = logits.row_ptr(i);
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
    const double logz = std::log(z) + mx;
    loss += logz - row[targets[i]];
    double* grow = grad.row_ptr(i);
    for (std::size_t j = 0; j < v; ++j) {
      grow[j] = std::exp(row[j] - logz) * invb;
    }
    grow[targets[i]] -= invb;
  }
  return {loss * invb, std::move(grad)};
}

// ---------------------------------------------------------------------------
// TinyModel
// ---------------------------------------------------------------------------

Mat TinyModel::forward(const Mat& x) {
  Mat cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cur = layers[i].forward(cur);
    if (i + 1 < layers.size()) cur = tanh_forward(cur);
  }
  return cur;
}

TinyModel::ForwardCache TinyModel::forward_cached(const Mat& x) {
  ForwardCache cache;
  Mat cur = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    cur = layers[i].forward(cur);
    if (i + 1 < layers.size()) {
      cur = tanh_forward(cur);
      cache.activations.push_back(cur);
    }
  }
  cache.output = std::move(cur);
  return cache;
}

TinyModel make_mlp(const std::vector<std::size_t>& dims, RngState& rng) {
  if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in/out dims");
  TinyModel m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i], fan_out = dims[i + 1];
    m.layers.emplace_back(
        linalg::gaussian_fill(fan_out, fan_in, 1.0 / static_cast<double>(fan_in), rng));
  }
  return m;
}

}  // namespace meso::model
