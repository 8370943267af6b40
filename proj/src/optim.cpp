#include "meso/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace meso::optim {

using linalg::count_raw;
using linalg::OpCategory;
using proj::SparseProjection;

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

AdamState adam_init(std::size_t rows, std::size_t cols) {
  AdamState s;
  s.m1 = Mat(rows, cols);
  s.m2 = Mat(rows, cols);
  s.t = 0;
  return s;
}

Mat adam_update(AdamState& state, const Mat& grad, double lr) {
  if (grad.rows() != state.m1.rows() || grad.cols() != state.m1.cols()) {
    throw std::invalid_argument("adam_update: gradient shape mismatch");
  }
  state.t += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double inv_bc1 = 1.0 / (1.0 - std::pow(b1, static_cast<double>(state.t)));
  const double inv_bc2 = 1.0 / (1.0 - std::pow(b2, static_cast<double>(state.t)));

  Mat update(grad.rows(), grad.cols());
  auto m1 = state.m1.data();
  auto m2 = state.m2.data();
  auto g = grad.data();
  auto u = update.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    m1[i] = b1 * m1[i] + (1.0 - b1) * g[i];
    m2[i] = b2 * m2[i] + (1.0 - b2) * (g[i] * g[i]);
    const double mhat = m1[i] * inv_bc1;
    const double vhat = m2[i] * inv_bc2;
    u[i] = -lr * mhat / (std::sqrt(vhat) + state.eps);
  }
  count_raw(OpCategory::Optimizer, kAdamOpsPerElement * g.size(),
            kAdamOpsPerElement * g.size());
  return update;
}

StatePolicy state_policy_from_name(std::string_view name) {
  if (name == "reset") return StatePolicy::Reset;
  if (name == "keep") return StatePolicy::Keep;
  if (name == "flora-transfer") return StatePolicy::FloraTransfer;
  throw std::invalid_argument("unknown state policy: " + std::string(name));
}

const char* state_policy_name(StatePolicy p) {
  switch (p) {
    case StatePolicy::Reset: return "reset";
    case StatePolicy::Keep: return "keep";
    case StatePolicy::FloraTransfer: return "flora-transfer";
  }
  return "?";
}

void apply_state_policy(AdamState& state, const Projection& old_p, const Projection& new_p,
                        StatePolicy policy) {
  switch (policy) {
    case StatePolicy::Keep:
      return;
    case StatePolicy::Reset:
      for (double& v : state.m1.data()) v = 0.0;
      for (double& v : state.m2.data()) v = 0.0;
      state.t = 0;
      return;
    case StatePolicy::FloraTransfer: {
      // first moment follows the subspace change; the second moment has no
      // published transfer rule and restarts
      state.m1 = proj::project(new_p, proj::reconstruct(old_p, state.m1));
      for (double& v : state.m2.data()) v = 0.0;
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// Schedule
// ---------------------------------------------------------------------------

double lr_at(const Schedule& s, std::int64_t t) {
  if (t < 0) throw std::invalid_argument("lr_at: negative step");
  double v;
  if (s.warmup_steps > 0 && t < s.warmup_steps) {
    v = s.base_lr * static_cast<double>(t) / static_cast<double>(s.warmup_steps);
  } else {
    const double span =
        std::max<std::int64_t>(1, s.total_steps - s.warmup_steps);
    double prog = static_cast<double>(t - s.warmup_steps) / span;
    prog = std::clamp(prog, 0.0, 1.0);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * prog));
    v = s.base_lr * (s.floor_frac + (1.0 - s.floor_frac) * cosine);
  }
  if (s.refresh_period > 0 && s.refresh_warmup > 0 && t >= s.refresh_period) {
    const auto since = t % s.refresh_period;
    const double f = std::min(
        1.0, static_cast<double>(since) / static_cast<double>(s.refresh_warmup));
    v *= f;
  }
  return v;
}

// ---------------------------------------------------------------------------
// MesoLayerDriver
// ---------------------------------------------------------------------------

RngState make_projection_rng(std::uint64_t seed, std::size_t layer_index) {
  return RngState::substream(seed, 0x9000 + layer_index);
}

MesoLayerDriver::MesoLayerDriver(model::LinearLayer& layer, const MesoConfig& cfg,
                                 RngState proj_rng)
    : layer_(&layer), cfg_(cfg), rng_(proj_rng) {
  if (cfg_.r < 1 || cfg_.k_freq < 1 || !(cfg_.alpha > 0.0 || cfg_.alpha == 0.0)) {
    throw std::invalid_argument("MesoLayerDriver: bad config");
  }
  transposed_ = cfg_.side_auto && layer.out_dim() > layer.in_dim();
  m_eff_ = transposed_ ? layer.in_dim() : layer.out_dim();
  n_eff_ = transposed_ ? layer.out_dim() : layer.in_dim();
  r_eff_ = cfg_.kind == ProjectionKind::FullRank ? m_eff_ : std::min(cfg_.r, m_eff_);
  state_ = adam_init(r_eff_, n_eff_);
  covered_.assign(m_eff_, false);

  schedule_ = cfg_.schedule;
  const bool never_refreshes = cfg_.kind == ProjectionKind::FullRank ||
                               cfg_.kind == ProjectionKind::FrozenTopR;
  schedule_.refresh_period = never_refreshes ? 0 : cfg_.k_freq;
  schedule_.refresh_warmup = never_refreshes ? 0 : cfg_.warmup_after_update;
}

bool MesoLayerDriver::refresh_due(std::int64_t t) const {
  if (!initialized_) return true;
  if (cfg_.kind == ProjectionKind::FullRank || cfg_.kind == ProjectionKind::FrozenTopR) {
    return false;  // computed once at the first step, never again
  }
  return t % cfg_.k_freq == 0;
}

Mat MesoLayerDriver::full_grad_eff(const Mat& grad_out, Mat* grad_in, bool want_input_grad) {
  auto [gw, gin] = layer_->backward_full(grad_out);
  if (grad_in) *grad_in = want_input_grad ? std::move(gin) : Mat{};
  return transposed_ ? linalg::transpose(gw) : std::move(gw);
}

void MesoLayerDriver::refresh_projection(const Mat& sample_src, std::int64_t t) {
  Projection fresh;
  if (proj::is_sparse_kind(cfg_.kind)) {
    fresh = proj::compute_p_sparse(sample_src, cfg_.kind, r_eff_, rng_);
  } else {
    fresh = proj::compute_p_dense(sample_src, cfg_.kind, r_eff_, rng_);
  }
  if (initialized_) {
    apply_state_policy(state_, p_, fresh, cfg_.state_policy);
  }
  p_ = std::move(fresh);
  initialized_ = true;
  (void)t;

  if (const auto* sp = std::get_if<SparseProjection>(&p_)) {
    for (std::size_t idx : sp->sigma) covered_[idx] = true;
  } else {
    covered_.assign(m_eff_, true);  // dense projections touch every row
  }
}

Mat MesoLayerDriver::project_full(const Mat& g_eff) const {
  return proj::project(p_, g_eff);
}

Mat MesoLayerDriver::fused_gc(const Mat& grad_out, Mat* grad_in, bool want_input_grad) {
  const auto& sp = std::get<SparseProjection>(p_);
  auto [gc, gin] = transposed_
                       ? layer_->backward_projected_cols(grad_out, sp, want_input_grad)
                       : layer_->backward_projected(grad_out, sp, want_input_grad);
  if (grad_in) *grad_in = std::move(gin);
  return std::move(gc);
}

void MesoLayerDriver::apply_update(const Mat& gc, std::int64_t t) {
  const double lr = lr_at(schedule_, t);
  const Mat delta = adam_update(state_, gc, lr);
  if (const auto* sp = std::get_if<SparseProjection>(&p_)) {
    if (transposed_) {
      layer_->apply_sparse_update_cols(*sp, delta, cfg_.alpha);
    } else {
      layer_->apply_sparse_update(*sp, delta, cfg_.alpha);
    }
    return;
  }
  Mat update = proj::reconstruct(p_, delta);
  if (transposed_) update = linalg::transpose(update);
  layer_->apply_dense_update(update, cfg_.alpha);
}

Mat MesoLayerDriver::step(std::int64_t t, const Mat& grad_out, bool want_input_grad) {
  Mat grad_in;
  Mat gc;
  if (refresh_due(t)) {
    const Mat g_eff = full_grad_eff(grad_out, &grad_in, want_input_grad);
    refresh_projection(g_eff, t);
    gc = project_full(g_eff);
  } else if (dense_kind()) {
    const Mat g_eff = full_grad_eff(grad_out, &grad_in, want_input_grad);
    gc = project_full(g_eff);
  } else {
    gc = fused_gc(grad_out, &grad_in, want_input_grad);
  }
  apply_update(gc, t);
  return grad_in;
}

double MesoLayerDriver::coverage() const {
  if (covered_.empty()) return 0.0;
  const auto n = static_cast<double>(std::count(covered_.begin(), covered_.end(), true));
  return n / static_cast<double>(covered_.size());
}

// ---------------------------------------------------------------------------
// Single-layer harnesses
// ---------------------------------------------------------------------------

Trajectory train_meso_layer(const Mat& w0, const BatchFn& batch, const MesoConfig& cfg,
                            std::uint64_t seed, std::int64_t steps) {
  model::LinearLayer layer(w0);
  MesoLayerDriver driver(layer, cfg, make_projection_rng(seed, 0));
  Trajectory traj;
  for (std::int64_t t = 0; t < steps; ++t) {
    const auto [x, y] = batch(t);
    const Mat yhat = layer.forward(x);
    auto [loss, grad_out] = model::mse_loss(yhat, y);
    driver.step(t, grad_out, /*want_input_grad=*/false);
    traj.weights.push_back(layer.weight());
    traj.losses.push_back(loss);
  }
  return traj;
}

Trajectory train_instantiated(const Mat& w0, const BatchFn& batch, const MesoConfig& cfg,
                              std::uint64_t seed, std::int64_t steps) {
  const bool transposed = cfg.side_auto && w0.rows() > w0.cols();
  Mat w0_eff = transposed ? linalg::transpose(w0) : w0;
  const std::size_t m_eff = w0_eff.rows(), n_eff = w0_eff.cols();
  const std::size_t r_eff =
      cfg.kind == ProjectionKind::FullRank ? m_eff : std::min(cfg.r, m_eff);

  Schedule schedule = cfg.schedule;
  const bool never_refreshes = cfg.kind == ProjectionKind::FullRank ||
                               cfg.kind == ProjectionKind::FrozenTopR;
  schedule.refresh_period = never_refreshes ? 0 : cfg.k_freq;
  schedule.refresh_warmup = never_refreshes ? 0 : cfg.warmup_after_update;

  RngState rng = make_projection_rng(seed, 0);
  AdamState state = adam_init(r_eff, n_eff);
  Mat a(r_eff, n_eff);
  Projection p;
  bool initialized = false;

  auto grad_eff_at = [&](const Mat& w_eff, std::int64_t t) {
    const Mat w_real = transposed ? linalg::transpose(w_eff) : w_eff;
    model::LinearLayer layer(w_real);
    const auto [x, y] = batch(t);
    const Mat yhat = layer.forward(x);
    auto [loss, grad_out] = model::mse_loss(yhat, y);
    auto [gw, gin] = layer.backward_full(grad_out);
    (void)gin;
    return std::pair<double, Mat>(loss, transposed ? linalg::transpose(gw) : std::move(gw));
  };

  auto compose = [&](void) -> Mat {
    if (!initialized) return w0_eff;
    return linalg::add_scaled(w0_eff, proj::reconstruct(p, a), 1.0);
  };

  Trajectory traj;
  for (std::int64_t t = 0; t < steps; ++t) {
    const bool refresh =
        !initialized || (!never_refreshes && t % cfg.k_freq == 0);
    if (refresh) {
      if (initialized) {
        w0_eff = linalg::add_scaled(w0_eff, proj::reconstruct(p, a), 1.0);  // record progress
        for (double& v : a.data()) v = 0.0;
      }
      auto [loss0, g_eff] = grad_eff_at(w0_eff, t);
      (void)loss0;
      Projection fresh;
      if (proj::is_sparse_kind(cfg.kind)) {
        fresh = proj::compute_p_sparse(g_eff, cfg.kind, r_eff, rng);
      } else {
        fresh = proj::compute_p_dense(g_eff, cfg.kind, r_eff, rng);
      }
      if (initialized) apply_state_policy(state, p, fresh, cfg.state_policy);
      p = std::move(fresh);
      initialized = true;
      traj.a_norm_at_refresh.push_back(linalg::frobenius_norm(a));
    }

    auto [loss, g_eff] = grad_eff_at(compose(), t);
    const Mat gc = proj::project(p, g_eff);
    const Mat u = adam_update(state, gc, lr_at(schedule, t));
    a = linalg::add_scaled(a, u, cfg.alpha);

    const Mat w_eff = compose();
    traj.weights.push_back(transposed ? linalg::transpose(w_eff) : w_eff);
    traj.losses.push_back(loss);
  }
  return traj;
}

Trajectory train_plain_adam(const Mat& w0, const BatchFn& batch, const MesoConfig& cfg,
                            std::int64_t steps) {
  model::LinearLayer layer(w0);
  Schedule schedule = cfg.schedule;
  schedule.refresh_period = 0;
  AdamState state = adam_init(w0.rows(), w0.cols());
  Trajectory traj;
  for (std::int64_t t = 0; t < steps; ++t) {
    const auto [x, y] = batch(t);
    const Mat yhat = layer.forward(x);
    auto [loss, grad_out] = model::mse_loss(yhat, y);
    auto [gw, gin] = layer.backward_full(grad_out);
    (void)gin;
    const Mat u = adam_update(state, gw, lr_at(schedule, t));
    layer.apply_dense_update(u, cfg.alpha);
    traj.weights.push_back(layer.weight());
    traj.losses.push_back(loss);
  }
  return traj;
}

}  // namespace meso::optim
