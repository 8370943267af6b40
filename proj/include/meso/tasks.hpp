#pragma once

// Desk-scale training tasks. Examples are addressable by global index so the
// data-parallel simulator can carve disjoint, reproducible shards.

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "meso/linalg.hpp"
#include "meso/model.hpp"

namespace meso::tasks {

using linalg::Mat;
using linalg::RngState;

struct Batch {
  Mat x;
  Mat y;                             // regression targets
  std::vector<std::size_t> targets;  // next-symbol targets
};

class Task {
 public:
  virtual ~Task() = default;
  virtual std::size_t input_dim() const = 0;
  virtual std::size_t output_dim() const = 0;
  virtual Batch make_batch(std::int64_t first_example, std::size_t count) const = 0;
  virtual std::pair<double, Mat> loss(const Mat& out, const Batch& b) const = 0;
};

// y = x W*^T + noise for a fixed random teacher W*. row_decay < 1 scales
// teacher row i by row_decay^i, giving well-separated gradient row norms.
std::unique_ptr<Task> make_regression_task(std::uint64_t seed, std::size_t d_in,
                                           std::size_t d_out, double noise,
                                           double row_decay = 1.0);

// Next-symbol prediction over a synthetic first-order Markov corpus with
// skewed transition rows; inputs are one-hot, loss is softmax cross-entropy.
std::unique_ptr<Task> make_toy_lm_task(std::uint64_t seed, std::size_t vocab,
                                       std::size_t corpus_len, double skew);

// tanh MLP sized for a task: input_dim -> hidden x (layers - 1) -> output_dim.
model::TinyModel make_task_model(const Task& task, std::size_t hidden, std::size_t layers,
                                 std::uint64_t seed);

}  // namespace meso::tasks
