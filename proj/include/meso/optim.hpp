#pragma once

// The Adam inner optimizer, learning-rate schedules, optimizer-state policies
// applied at projection refreshes, the per-layer subspace training driver,
// and the instantiated-A reference driver it is checked against.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "meso/linalg.hpp"
#include "meso/model.hpp"
#include "meso/projection.hpp"

namespace meso::optim {

using linalg::Mat;
using linalg::RngState;
using proj::Projection;
using proj::ProjectionKind;

// Raw scalar ops per element of adam_update as implemented below; the cost
// model uses this as the default optimizer constant.
inline constexpr int kAdamOpsPerElement = 13;

struct AdamState {
  Mat m1;
  Mat m2;
  std::int64_t t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState adam_init(std::size_t rows, std::size_t cols);

// One Adam step: advances t, updates both moments, and returns the additive
// update U = -lr * M_hat / (sqrt(V_hat) + eps) with bias corrections
// 1 - beta^t taken after the increment.
Mat adam_update(AdamState& state, const Mat& grad, double lr);

enum class StatePolicy { Reset, Keep, FloraTransfer };

StatePolicy state_policy_from_name(std::string_view name);
const char* state_policy_name(StatePolicy p);

// Reset zeroes moments and t; Keep leaves everything; FloraTransfer maps the
// first moment through P_new^T P_old and zeroes the second moment.
void apply_state_policy(AdamState& state, const Projection& old_p, const Projection& new_p,
                        StatePolicy policy);

// ---------------------------------------------------------------------------
// Learning-rate schedule
// ---------------------------------------------------------------------------

struct Schedule {
  double base_lr = 0.01;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  double floor_frac = 0.1;          // cosine decays to floor_frac * base_lr
  std::int64_t refresh_period = 0;  // 0: no post-refresh re-ramp
  std::int64_t refresh_warmup = 0;
};

// Linear ramp over the initial warmup, cosine from base to floor after, and a
// multiplicative linear re-ramp for refresh_warmup steps after each refresh
// (refreshes at t > 0 only; the one at t = 0 is covered by the initial
// warmup).
double lr_at(const Schedule& s, std::int64_t t);

// ---------------------------------------------------------------------------
// Driver configuration
// ---------------------------------------------------------------------------

struct MesoConfig {
  std::size_t r = 16;
  std::int64_t k_freq = 200;
  double alpha = 0.25;
  ProjectionKind kind = ProjectionKind::TopR;
  StatePolicy state_policy = StatePolicy::Reset;
  std::int64_t warmup_after_update = 20;
  Schedule schedule{};
  bool side_auto = true;
};

// Deterministic projection stream for layer `layer_index` of a run.
RngState make_projection_rng(std::uint64_t seed, std::size_t layer_index);

// Per-layer driver implementing the subspace optimization loop: every k_freq
// steps the projection is recomputed from the full gradient (row norms for
// sparse kinds, the gradient itself for the SVD kind), the optimizer state
// policy is applied, and a learning-rate re-ramp begins; on every step the
// compressed gradient feeds Adam and the scaled update is scattered back.
//
// The phase methods are exposed separately so the distributed simulator can
// interleave its reductions; step() composes them for single-worker use.
class MesoLayerDriver {
 public:
  MesoLayerDriver(model::LinearLayer& layer, const MesoConfig& cfg, RngState proj_rng);

  bool transposed() const { return transposed_; }
  std::size_t proj_dim() const { return m_eff_; }
  std::size_t other_dim() const { return n_eff_; }
  std::size_t rank() const { return r_eff_; }
  bool refresh_due(std::int64_t t) const;
  bool dense_kind() const { return proj::is_dense_kind(cfg_.kind); }
  double lr_now(std::int64_t t) const { return lr_at(schedule_, t); }
  const Projection& projection() const { return p_; }
  const AdamState& state() const { return state_; }
  double coverage() const;
  const MesoConfig& config() const { return cfg_; }

  // Full gradient in the effective (side-selected) orientation.
  Mat full_grad_eff(const Mat& grad_out, Mat* grad_in, bool want_input_grad);

  // Recompute the projection from `sample_src` (the full effective gradient,
  // or a column sketch of it with identical row indexing).
  void refresh_projection(const Mat& sample_src, std::int64_t t);

  // P^T g for a full effective gradient (dense route).
  Mat project_full(const Mat& g_eff) const;

  // Fused compressed gradient for sparse kinds on regular steps.
  Mat fused_gc(const Mat& grad_out, Mat* grad_in, bool want_input_grad);

  // Adam + scaled back-projected weight update from a compressed gradient.
  void apply_update(const Mat& gc, std::int64_t t);

  // Complete single-worker step; returns dL/dx when requested.
  Mat step(std::int64_t t, const Mat& grad_out, bool want_input_grad);

 private:
  model::LinearLayer* layer_;
  MesoConfig cfg_;
  Schedule schedule_;
  bool transposed_ = false;
  std::size_t m_eff_ = 0, n_eff_ = 0, r_eff_ = 0;
  bool initialized_ = false;
  Projection p_;
  AdamState state_;
  RngState rng_;
  std::vector<bool> covered_;
};

// ---------------------------------------------------------------------------
// Single-layer training harnesses (regression loss), used to check the
// implicit driver against the instantiated-A reference trajectory.
// ---------------------------------------------------------------------------

// Batch for step t: (x, y) with y the regression target of x.
using BatchFn = std::function<std::pair<Mat, Mat>(std::int64_t)>;

struct Trajectory {
  std::vector<Mat> weights;             // snapshot after every step
  std::vector<double> losses;
  std::vector<double> a_norm_at_refresh;  // instantiated driver only
};

// Algorithm-style implicit driver: runs MesoLayerDriver on one linear layer.
Trajectory train_meso_layer(const Mat& w0, const BatchFn& batch, const MesoConfig& cfg,
                            std::uint64_t seed, std::int64_t steps);

// Reference driver with an explicit A matrix: maintains W = W0 + P A, merges
// W0 <- W0 + P A and re-zeroes A at every projection refresh. Trajectories
// must match train_meso_layer.
Trajectory train_instantiated(const Mat& w0, const BatchFn& batch, const MesoConfig& cfg,
                              std::uint64_t seed, std::int64_t steps);

// Plain full Adam on the same harness (the no-projection baseline): the update
// is applied as W += alpha * U with the same schedule.
Trajectory train_plain_adam(const Mat& w0, const BatchFn& batch, const MesoConfig& cfg,
                            std::int64_t steps);

}  // namespace meso::optim
