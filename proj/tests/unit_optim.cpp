#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "meso/linalg.hpp"
#include "meso/model.hpp"
#include "meso/optim.hpp"
#include "meso/projection.hpp"

using namespace meso::linalg;
using namespace meso::optim;
using meso::model::LinearLayer;
using meso::proj::DenseProjection;
using meso::proj::Projection;
using meso::proj::ProjectionKind;
using meso::proj::SparseProjection;

namespace {

Mat random_mat(std::size_t r, std::size_t c, RngState& rng, double scale = 1.0) {
  Mat m(r, c);
  for (double& v : m.data()) v = scale * (2.0 * rng.next_unit() - 1.0);
  return m;
}

// Deterministic linear-teacher regression batches.
BatchFn make_regression(std::uint64_t seed, const Mat& teacher, std::size_t batch,
                        double noise = 0.01) {
  return [=](std::int64_t t) {
    RngState rng = RngState::substream(seed, 5000 + static_cast<std::uint64_t>(t));
    Mat x(batch, teacher.cols());
    for (double& v : x.data()) v = rng.next_normal(1.0);
    Mat y = matmul_nt(x, teacher);
    for (double& v : y.data()) v += noise * rng.next_normal(1.0);
    return std::pair<Mat, Mat>(std::move(x), std::move(y));
  };
}

MesoConfig basic_config(std::size_t r, std::int64_t k, std::int64_t steps) {
  MesoConfig cfg;
  cfg.r = r;
  cfg.k_freq = k;
  cfg.alpha = 0.25;
  cfg.kind = ProjectionKind::TopR;
  cfg.state_policy = StatePolicy::Reset;
  cfg.warmup_after_update = 0;
  cfg.schedule.base_lr = 0.02;
  cfg.schedule.warmup_steps = 0;
  cfg.schedule.total_steps = steps;
  cfg.side_auto = false;
  return cfg;
}

}  // namespace

TEST_CASE("adam_init gives zero moments and t = 0") {
  AdamState s = adam_init(2, 3);
  CHECK(max_abs(s.m1) == 0.0);
  CHECK(max_abs(s.m2) == 0.0);
  CHECK(s.t == 0);
  CHECK(s.beta1 == 0.9);
  CHECK(s.beta2 == 0.999);
  CHECK(s.eps == 1e-8);

  const Mat u = adam_update(s, Mat(2, 3, 1.0), 0.1);
  (void)u;
  AdamState fresh = adam_init(2, 3);
  CHECK(fresh.t == 0);
  CHECK(max_abs(fresh.m1) == 0.0);
}

TEST_CASE("adam_update zero gradient and scalar transcript") {
  AdamState s = adam_init(1, 1);
  const Mat u0 = adam_update(s, Mat(1, 1, 0.0), 0.1);
  CHECK(u0(0, 0) == 0.0);

  AdamState s1 = adam_init(1, 1);
  const Mat u1 = adam_update(s1, Mat(1, 1, 1.0), 0.1);
  CHECK(s1.t == 1);
  CHECK(s1.m1(0, 0) == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(s1.m2(0, 0) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(u1(0, 0) == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam_update matches a hand-rolled scalar oracle over two steps") {
  AdamState s = adam_init(1, 1);
  const double lr = 0.05;

  double m = 0.0, v = 0.0;
  double w_impl = 0.0, w_oracle = 0.0;
  const double grads[2] = {1.0, -1.0};
  for (int step = 0; step < 2; ++step) {
    const double g = grads[step];
    const Mat u = adam_update(s, Mat(1, 1, g), lr);
    w_impl += u(0, 0);

    const double t = step + 1;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mhat = m / (1.0 - std::pow(0.9, t));
    const double vhat = v / (1.0 - std::pow(0.999, t));
    w_oracle += -lr * mhat / (std::sqrt(vhat) + 1e-8);
  }
  CHECK(w_impl == doctest::Approx(w_oracle).epsilon(1e-12));
}

TEST_CASE("state policies") {
  AdamState s = adam_init(2, 2);
  RngState rng(3);
  (void)adam_update(s, random_mat(2, 2, rng), 0.1);
  (void)adam_update(s, random_mat(2, 2, rng), 0.1);
  CHECK(s.t == 2);

  SparseProjection some{4, {0, 1}, {1.0, 1.0}};
  AdamState kept = s;
  apply_state_policy(kept, Projection{some}, Projection{some}, StatePolicy::Keep);
  CHECK(max_abs_diff(kept.m1, s.m1) == 0.0);
  CHECK(kept.t == s.t);

  AdamState reset = s;
  apply_state_policy(reset, Projection{some}, Projection{some}, StatePolicy::Reset);
  CHECK(max_abs(reset.m1) == 0.0);
  CHECK(max_abs(reset.m2) == 0.0);
  CHECK(reset.t == 0);

  // orthonormal dense projection: transfer through P P^T leaves m1 unchanged
  const Mat g = random_mat(6, 4, rng);
  const Mat p = topr_svd_left(g, 2);
  AdamState dense_state = adam_init(2, 4);
  (void)adam_update(dense_state, random_mat(2, 4, rng), 0.1);
  const Mat m1_before = dense_state.m1;
  Projection dp = DenseProjection{p};
  apply_state_policy(dense_state, dp, dp, StatePolicy::FloraTransfer);
  CHECK(max_abs_diff(dense_state.m1, m1_before) < 1e-10);
  CHECK(max_abs(dense_state.m2) == 0.0);
}

TEST_CASE("lr_at ramp, floor, midpoint, and refresh re-ramp") {
  Schedule s;
  s.base_lr = 1.0;
  s.warmup_steps = 100;
  s.total_steps = 1100;
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 1) == doctest::Approx(0.01));
  CHECK(lr_at(s, 100) == doctest::Approx(1.0));
  CHECK(lr_at(s, 1100) == doctest::Approx(0.1));
  CHECK(lr_at(s, 2000) == doctest::Approx(0.1));
  CHECK(lr_at(s, 600) == doctest::Approx(0.55));

  // re-ramp multiplies after each refresh, skipping the one at t = 0
  Schedule r = s;
  r.refresh_period = 200;
  r.refresh_warmup = 10;
  CHECK(lr_at(r, 150) == lr_at(s, 150));
  CHECK(lr_at(r, 200) == 0.0);
  CHECK(lr_at(r, 205) == doctest::Approx(0.5 * lr_at(s, 205)));
  CHECK(lr_at(r, 215) == doctest::Approx(lr_at(s, 215)));

  for (std::int64_t t = 0; t <= 1200; ++t) {
    CHECK(lr_at(r, t) >= 0.0);
    if (t > 0 && t % 200 != 0) {
      CHECK(std::abs(lr_at(r, t) - lr_at(r, t - 1)) < 0.12);
    }
  }
  CHECK_THROWS_AS(lr_at(s, -1), std::invalid_argument);
}

TEST_CASE("identity projection reproduces plain Adam bitwise") {
  RngState rng(7);
  const Mat teacher = random_mat(4, 6, rng);
  const Mat w0 = random_mat(4, 6, rng, 0.3);
  const auto batch = make_regression(11, teacher, 3);

  MesoConfig cfg = basic_config(4, 1000, 100);
  cfg.kind = ProjectionKind::FullRank;
  cfg.state_policy = StatePolicy::Keep;

  const Trajectory meso = train_meso_layer(w0, batch, cfg, 1, 100);
  const Trajectory adam = train_plain_adam(w0, batch, cfg, 100);
  for (std::size_t t = 0; t < 100; ++t) {
    CHECK(max_abs_diff(meso.weights[t], adam.weights[t]) == 0.0);
    CHECK(meso.losses[t] == adam.losses[t]);
  }
}

TEST_CASE("one refresh cycle matches a literal dense-matrix transcript") {
  RngState rng(19);
  const Mat teacher = random_mat(4, 3, rng);
  const Mat w0 = random_mat(4, 3, rng, 0.5);
  const std::uint64_t seed = 5;
  const auto batch = make_regression(seed, teacher, 2);

  MesoConfig cfg = basic_config(2, 4, 8);
  const Trajectory got = train_meso_layer(w0, batch, cfg, seed, 8);

  // scripted oracle: dense projection matrix, explicit matmuls, scalar Adam
  Mat w = w0;
  Mat pmat;  // 4 x 2 binary
  std::vector<double> m1, m2;
  std::int64_t adam_t = 0;
  for (std::int64_t t = 0; t < 8; ++t) {
    const auto [x, y] = batch(t);
    LinearLayer layer(w);
    const Mat yhat = layer.forward(x);
    auto [loss, grad_out] = meso::model::mse_loss(yhat, y);
    (void)loss;
    auto [g, gin] = layer.backward_full(grad_out);
    (void)gin;

    if (t % 4 == 0) {
      const auto norms = row_norms(g);
      const auto idx = topk_indices(norms, 2);
      pmat = Mat(4, 2);
      pmat(idx[0], 0) = 1.0;
      pmat(idx[1], 1) = 1.0;
      m1.assign(2 * 3, 0.0);
      m2.assign(2 * 3, 0.0);
      adam_t = 0;
    }
    const Mat gc = matmul_tn(pmat, g);
    adam_t += 1;
    Mat delta(2, 3);
    const double lr = lr_at(cfg.schedule, t);
    for (std::size_t i = 0; i < 6; ++i) {
      const double gv = gc.data()[i];
      m1[i] = 0.9 * m1[i] + 0.1 * gv;
      m2[i] = 0.999 * m2[i] + 0.001 * gv * gv;
      const double mhat = m1[i] / (1.0 - std::pow(0.9, static_cast<double>(adam_t)));
      const double vhat = m2[i] / (1.0 - std::pow(0.999, static_cast<double>(adam_t)));
      delta.data()[i] = -lr * mhat / (std::sqrt(vhat) + 1e-8);
    }
    w = add_scaled(w, matmul(pmat, delta), cfg.alpha);
    CHECK(max_abs_diff(got.weights[static_cast<std::size_t>(t)], w) < 1e-12);
  }
}

TEST_CASE("alpha = 0 never changes the weights") {
  RngState rng(23);
  const Mat teacher = random_mat(3, 5, rng);
  const Mat w0 = random_mat(3, 5, rng);
  MesoConfig cfg = basic_config(2, 5, 20);
  cfg.alpha = 0.0;
  const Trajectory traj = train_meso_layer(w0, make_regression(3, teacher, 2), cfg, 3, 20);
  for (const auto& w : traj.weights) CHECK(max_abs_diff(w, w0) == 0.0);
}

TEST_CASE("implicit and instantiated-A drivers agree across refreshes") {
  RngState rng(31);
  const Mat teacher = random_mat(6, 4, rng);
  const Mat w0 = random_mat(6, 4, rng, 0.4);
  const std::uint64_t seed = 17;
  const auto batch = make_regression(seed, teacher, 3);

  for (auto kind : {ProjectionKind::TopR, ProjectionKind::MultNormR,
                    ProjectionKind::DenseGaussian, ProjectionKind::CountSketch}) {
    MesoConfig cfg = basic_config(2, 20, 70);
    cfg.kind = kind;
    const Trajectory a = train_meso_layer(w0, batch, cfg, seed, 70);  // >= 3 refreshes
    const Trajectory b = train_instantiated(w0, batch, cfg, seed, 70);
    double dev = 0.0;
    for (std::size_t t = 0; t < 70; ++t) {
      dev = std::max(dev, max_abs_diff(a.weights[t], b.weights[t]));
    }
    CHECK(dev < 1e-8);
    for (double an : b.a_norm_at_refresh) CHECK(an == 0.0);
  }
}

TEST_CASE("instantiated driver with identity P and no refresh equals plain Adam") {
  RngState rng(37);
  const Mat teacher = random_mat(3, 4, rng);
  const Mat w0 = random_mat(3, 4, rng);
  const auto batch = make_regression(7, teacher, 2);
  MesoConfig cfg = basic_config(3, 1 << 30, 50);
  cfg.kind = ProjectionKind::FullRank;

  const Trajectory inst = train_instantiated(w0, batch, cfg, 7, 50);
  const Trajectory adam = train_plain_adam(w0, batch, cfg, 50);
  for (std::size_t t = 0; t < 50; ++t) {
    CHECK(max_abs_diff(inst.weights[t], adam.weights[t]) < 1e-10);
  }
}

TEST_CASE("fused regular steps match the dense route over a full run") {
  RngState rng(41);
  const Mat teacher = random_mat(5, 5, rng);
  const Mat w0 = random_mat(5, 5, rng, 0.3);
  const std::uint64_t seed = 23;
  const auto batch = make_regression(seed, teacher, 4);
  MesoConfig cfg = basic_config(2, 10, 60);
  cfg.kind = ProjectionKind::MultNorm2NR;

  const Trajectory fused = train_meso_layer(w0, batch, cfg, seed, 60);

  // dense route: full gradient + project on every step, same driver phases
  meso::model::LinearLayer layer(w0);
  MesoLayerDriver driver(layer, cfg, make_projection_rng(seed, 0));
  for (std::int64_t t = 0; t < 60; ++t) {
    const auto [x, y] = batch(t);
    const Mat yhat = layer.forward(x);
    auto [loss, grad_out] = meso::model::mse_loss(yhat, y);
    (void)loss;
    Mat grad_in;
    const Mat g = driver.full_grad_eff(grad_out, &grad_in, false);
    if (driver.refresh_due(t)) driver.refresh_projection(g, t);
    driver.apply_update(driver.project_full(g), t);
  }
  CHECK(max_abs_diff(fused.weights.back(), layer.weight()) < 1e-8);
}

TEST_CASE("reset policy restarts bias correction") {
  RngState rng(43);
  const Mat teacher = random_mat(4, 4, rng);
  const Mat w0 = random_mat(4, 4, rng);
  const std::uint64_t seed = 29;
  const auto batch = make_regression(seed, teacher, 2);
  MesoConfig cfg = basic_config(2, 8, 20);

  meso::model::LinearLayer layer(w0);
  MesoLayerDriver driver(layer, cfg, make_projection_rng(seed, 0));
  for (std::int64_t t = 0; t < 20; ++t) {
    const auto [x, y] = batch(t);
    const Mat yhat = layer.forward(x);
    auto [loss, grad_out] = meso::model::mse_loss(yhat, y);
    (void)loss;
    driver.step(t, grad_out, false);
    if (t > 0 && t % 8 == 0) {
      CHECK(driver.state().t == 1);  // reset at refresh, then one update
    }
  }
}

TEST_CASE("side_auto transposes the view so the projection hits the smaller dim") {
  RngState rng(47);
  const Mat w0 = random_mat(8, 3, rng);  // m > n: project the 3-dim side
  meso::model::LinearLayer layer(w0);
  MesoConfig cfg = basic_config(2, 5, 10);
  cfg.side_auto = true;
  MesoLayerDriver driver(layer, cfg, make_projection_rng(1, 0));
  CHECK(driver.transposed());
  CHECK(driver.proj_dim() == 3);
  CHECK(driver.other_dim() == 8);

  const Mat teacher = random_mat(8, 3, rng);
  const auto batch = make_regression(31, teacher, 4);
  for (std::int64_t t = 0; t < 10; ++t) {
    const auto [x, y] = batch(t);
    const Mat yhat = layer.forward(x);
    auto [loss, grad_out] = meso::model::mse_loss(yhat, y);
    (void)loss;
    driver.step(t, grad_out, false);
  }
  CHECK(layer.weight().all_finite());
  CHECK(driver.coverage() > 0.0);

  // transposed fused route agrees with the transposed dense oracle
  const auto batch2 = make_regression(33, teacher, 4);
  meso::model::LinearLayer l2(w0);
  MesoLayerDriver d2(l2, cfg, make_projection_rng(2, 0));
  const auto [x, y] = batch2(0);
  const Mat yhat = l2.forward(x);
  auto [loss, grad_out] = meso::model::mse_loss(yhat, y);
  (void)loss;
  Mat grad_in;
  const Mat g_eff = d2.full_grad_eff(grad_out, &grad_in, false);
  d2.refresh_projection(g_eff, 0);
  l2.forward(x);
  Mat gin2;
  const Mat gc_fused = d2.fused_gc(grad_out, &gin2, false);
  CHECK(max_abs_diff(gc_fused, d2.project_full(g_eff)) < 1e-10);
}
