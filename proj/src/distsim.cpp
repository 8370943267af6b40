#include "meso/distsim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

namespace meso::distsim {

using optim::MesoConfig;
using optim::MesoLayerDriver;
using proj::ProjectionKind;

SketchMessage topr_columns(const Mat& g, std::size_t r) {
  if (r > g.cols()) throw std::invalid_argument("topr_columns: r exceeds column count");
  const auto norms = linalg::col_norms(g);
  SketchMessage msg;
  msg.col_indices = linalg::topk_indices(norms, r);
  msg.g_sketch = columns_at(g, msg.col_indices);
  return msg;
}

Mat columns_at(const Mat& g, std::span<const std::size_t> indices) {
  Mat out(g.rows(), indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t src = indices[j];
    if (src >= g.cols()) throw std::invalid_argument("columns_at: index out of range");
    for (std::size_t i = 0; i < g.rows(); ++i) out(i, j) = g(i, src);
  }
  return out;
}

Mat allreduce_mean(std::span<const Mat> payloads) {
  if (payloads.empty()) throw std::invalid_argument("allreduce_mean: no payloads");
  const std::size_t rows = payloads[0].rows(), cols = payloads[0].cols();
  for (const Mat& p : payloads) {
    if (p.rows() != rows || p.cols() != cols) {
      throw std::runtime_error("allreduce_mean: payload shape mismatch");
    }
  }
  std::vector<Mat> acc(payloads.begin(), payloads.end());
  for (std::size_t stride = 1; stride < acc.size(); stride *= 2) {
    for (std::size_t i = 0; i + stride < acc.size(); i += 2 * stride) {
      auto dst = acc[i].data();
      auto src = acc[i + stride].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  Mat out = std::move(acc[0]);
  const double inv = 1.0 / static_cast<double>(payloads.size());
  for (double& v : out.data()) v *= inv;
  return out;
}

void CommLog::add(std::int64_t step, std::string op, std::size_t rows, std::size_t cols,
                  bool is_colnorm) {
  const std::uint64_t floats = static_cast<std::uint64_t>(rows) * cols;
  records.push_back({step, std::move(op), floats, rows, cols});
  total_floats_per_worker += floats;
  if (is_colnorm) colnorm_floats_per_worker += floats;
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

Simulator::Simulator(const SimSetup& setup) : setup_(setup) {
  if (!setup_.task) throw std::invalid_argument("Simulator: no task");
  if (setup_.world < 1) throw std::invalid_argument("Simulator: world size must be >= 1");
  if (setup_.global_batch % static_cast<std::size_t>(setup_.world) != 0) {
    throw std::invalid_argument("Simulator: global batch must divide evenly across workers");
  }
  local_batch_ = setup_.global_batch / static_cast<std::size_t>(setup_.world);

  for (int w = 0; w < setup_.world; ++w) {
    WorkerReplica rep;
    rep.id = w;
    rep.net = tasks::make_task_model(*setup_.task, setup_.hidden, setup_.model_layers,
                                     setup_.seed);
    for (std::size_t l = 0; l < rep.net.layers.size(); ++l) {
      const bool projected = setup_.project_first_layer || l > 0;
      MesoConfig cfg = setup_.meso;
      if (!projected) {
        cfg.kind = ProjectionKind::FullRank;
        cfg.alpha = 1.0;
        cfg.state_policy = optim::StatePolicy::Keep;
      }
      // the projection stream depends on the layer, never the worker, so all
      // replicas draw identical indices
      rep.drivers.emplace_back(rep.net.layers[l], cfg,
                               optim::make_projection_rng(setup_.seed, l));
    }
    rep.gc_local.resize(rep.net.layers.size());
    rep.g_full.resize(rep.net.layers.size());
    workers_.push_back(std::move(rep));
  }
}

void Simulator::local_pass(WorkerReplica& w, std::int64_t t) {
  const auto before = linalg::flop_counters();
  const std::int64_t first =
      t * static_cast<std::int64_t>(setup_.global_batch) +
      w.id * static_cast<std::int64_t>(local_batch_);
  w.shard_cursor = first;
  const tasks::Batch batch = setup_.task->make_batch(first, local_batch_);
  auto cache = w.net.forward_cached(batch.x);
  auto [loss, grad] = setup_.task->loss(cache.output, batch);
  w.loss = loss;

  for (std::size_t li = w.net.layers.size(); li-- > 0;) {
    MesoLayerDriver& driver = w.drivers[li];
    const bool want_input = li > 0;
    Mat grad_in;
    if (driver.refresh_due(t) || driver.dense_kind()) {
      w.g_full[li] = driver.full_grad_eff(grad, &grad_in, want_input);
      w.gc_local[li] = Mat{};
    } else {
      w.gc_local[li] = driver.fused_gc(grad, &grad_in, want_input);
      if (setup_.check_linearity) {
        Mat unused;
        w.g_full[li] = driver.full_grad_eff(grad, &unused, false);
      } else {
        w.g_full[li] = Mat{};
      }
    }
    if (want_input) {
      grad = model::tanh_backward(grad_in, cache.activations[li - 1]);
    }
  }
  const auto after = linalg::flop_counters();
  w.flops = after.total - before.total;
}

StepStats Simulator::step(std::int64_t t) {
  const int p = setup_.world;

  if (setup_.threaded && p > 1) {
    std::vector<std::thread> pool;
    pool.reserve(p);
    for (auto& w : workers_) {
      pool.emplace_back([this, &w, t] { local_pass(w, t); });
    }
    for (auto& th : pool) th.join();
  } else {
    for (auto& w : workers_) local_pass(w, t);
  }

  // coordinator: per-layer reductions in fixed order
  for (std::size_t li = 0; li < workers_[0].net.layers.size(); ++li) {
    MesoLayerDriver& lead = workers_[0].drivers[li];
    const bool refresh = lead.refresh_due(t);

    if (refresh) {
      Mat sample_src;
      if (p == 1) {
        sample_src = workers_[0].g_full[li];
      } else if (lead.config().kind == ProjectionKind::FullRank) {
        // identity projection needs no index agreement
        sample_src = workers_[0].g_full[li];
      } else {
        // column-norm exchange, then the index-aligned sketch
        std::vector<Mat> norm_rows;
        norm_rows.reserve(p);
        for (auto& w : workers_) {
          const auto norms = linalg::col_norms(w.g_full[li]);
          Mat row(1, norms.size());
          for (std::size_t j = 0; j < norms.size(); ++j) row(0, j) = norms[j];
          norm_rows.push_back(std::move(row));
        }
        const Mat reduced_norms = allreduce_mean(norm_rows);
        log_.add(t, "allreduce-colnorms", 1, reduced_norms.cols(), /*is_colnorm=*/true);

        std::vector<double> nv(reduced_norms.data().begin(), reduced_norms.data().end());
        const auto cols = linalg::topk_indices(nv, lead.rank());

        std::vector<Mat> sketches;
        sketches.reserve(p);
        for (auto& w : workers_) sketches.push_back(columns_at(w.g_full[li], cols));
        sample_src = allreduce_mean(sketches);
        log_.add(t, "allreduce-sketch", sample_src.rows(), sample_src.cols());
      }
      for (auto& w : workers_) w.drivers[li].refresh_projection(sample_src, t);
      for (auto& w : workers_) w.gc_local[li] = w.drivers[li].project_full(w.g_full[li]);
    } else if (lead.dense_kind()) {
      for (auto& w : workers_) w.gc_local[li] = w.drivers[li].project_full(w.g_full[li]);
    }

    Mat gc_reduced;
    if (p == 1) {
      gc_reduced = std::move(workers_[0].gc_local[li]);
    } else {
      std::vector<Mat> payloads;
      payloads.reserve(p);
      for (auto& w : workers_) payloads.push_back(std::move(w.gc_local[li]));
      gc_reduced = allreduce_mean(payloads);
      log_.add(t, "allreduce-gc", gc_reduced.rows(), gc_reduced.cols());

      if (setup_.check_linearity) {
        std::vector<Mat> fulls;
        for (auto& w : workers_) fulls.push_back(w.g_full[li]);
        if (!fulls.empty() && !fulls[0].empty()) {
          const Mat mean_full = allreduce_mean(fulls);
          const Mat direct = workers_[0].drivers[li].project_full(mean_full);
          if (linalg::max_abs_diff(direct, gc_reduced) > 1e-10) {
            throw std::runtime_error("projection linearity violated at step " +
                                     std::to_string(t));
          }
        }
      }
    }

    for (auto& w : workers_) w.drivers[li].apply_update(gc_reduced, t);
  }

  // consistency: replicas must stay bitwise identical
  const std::uint64_t h0 = weight_hash(0);
  for (int w = 1; w < p; ++w) {
    if (weight_hash(w) != h0) {
      throw std::runtime_error("replica divergence detected at step " + std::to_string(t));
    }
  }

  StepStats stats;
  for (auto& w : workers_) {
    stats.loss += w.loss;
    stats.flops += w.flops;
  }
  stats.loss /= static_cast<double>(p);
  stats.lr = workers_[0].drivers[0].lr_now(t);
  stats.coverage = coverage();
  return stats;
}

std::uint64_t Simulator::weight_hash(int worker) const {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (const auto& layer : workers_[worker].net.layers) {
    h = linalg::bit_hash_combine(h, layer.weight());
  }
  return h;
}

double Simulator::coverage() const {
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t li = 0; li < workers_[0].drivers.size(); ++li) {
    const bool projected = setup_.project_first_layer || li > 0;
    if (!projected) continue;
    acc += workers_[0].drivers[li].coverage();
    ++n;
  }
  return n == 0 ? 0.0 : acc / static_cast<double>(n);
}

}  // namespace meso::distsim
