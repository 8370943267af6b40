#pragma once

// Deterministic in-process simulation of data-parallel training with the
// reduced-communication protocol: regular steps all-reduce only the r x n
// compressed gradient; refresh steps exchange column norms, an index-aligned
// m x r column sketch, and the compressed gradient. All reductions run in a
// fixed pairwise-tree order, so results are identical whether workers execute
// sequentially or on threads. The network model is zero-latency; only volume
// is accounted.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "meso/linalg.hpp"
#include "meso/model.hpp"
#include "meso/optim.hpp"
#include "meso/tasks.hpp"

namespace meso::distsim {

using linalg::Mat;

struct SketchMessage {
  Mat g_sketch;                          // m x r, columns in norm-descending order
  std::vector<std::size_t> col_indices;  // original column index per sketch column
};

// Columns with the r largest Euclidean norms, ties to the lower index.
SketchMessage topr_columns(const Mat& g, std::size_t r);

// Gather the named columns, in order.
Mat columns_at(const Mat& g, std::span<const std::size_t> indices);

// Elementwise mean over identically shaped payloads via a fixed-order
// pairwise tree: (0,1)(2,3)... then merge, so the result does not depend on
// scheduling.
Mat allreduce_mean(std::span<const Mat> payloads);

struct CommRecord {
  std::int64_t step;
  std::string op;
  std::uint64_t floats_per_worker;
  std::size_t rows, cols;
};

struct CommLog {
  std::vector<CommRecord> records;
  std::uint64_t total_floats_per_worker = 0;
  // the n-float column-norm exchange, tracked separately so both accountings
  // (with and without it) are reportable
  std::uint64_t colnorm_floats_per_worker = 0;

  void add(std::int64_t step, std::string op, std::size_t rows, std::size_t cols,
           bool is_colnorm = false);
};

struct SimSetup {
  const tasks::Task* task = nullptr;
  std::size_t hidden = 64;
  std::size_t model_layers = 2;
  bool project_first_layer = true;
  optim::MesoConfig meso{};
  std::uint64_t seed = 0;
  std::size_t global_batch = 16;
  int world = 1;
  bool threaded = false;
  bool check_linearity = false;  // assert mean-of-projections == projection-of-mean
};

struct StepStats {
  double loss = 0;
  double lr = 0;
  std::uint64_t flops = 0;  // summed over workers
  double coverage = 0;      // mean over projected layers
};

struct WorkerReplica {
  int id = 0;
  model::TinyModel net;
  std::vector<optim::MesoLayerDriver> drivers;
  std::int64_t shard_cursor = 0;

  // per-step scratch
  std::vector<Mat> gc_local;
  std::vector<Mat> g_full;
  double loss = 0;
  std::uint64_t flops = 0;
};

class Simulator {
 public:
  explicit Simulator(const SimSetup& setup);

  StepStats step(std::int64_t t);

  int world() const { return setup_.world; }
  const CommLog& comm_log() const { return log_; }
  const model::TinyModel& net(int worker = 0) const { return workers_[worker].net; }
  model::TinyModel& net(int worker = 0) { return workers_[worker].net; }
  std::uint64_t weight_hash(int worker = 0) const;
  double coverage() const;

 private:
  void local_pass(WorkerReplica& w, std::int64_t t);

  SimSetup setup_;
  std::size_t local_batch_ = 0;
  std::vector<WorkerReplica> workers_;
  CommLog log_;
};

}  // namespace meso::distsim
