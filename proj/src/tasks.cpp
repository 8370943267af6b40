#include "meso/tasks.hpp"

#include <cmath>
#include <stdexcept>

namespace meso::tasks {

namespace {

constexpr std::uint64_t kTeacherStream = 1;
constexpr std::uint64_t kCorpusStream = 2;
constexpr std::uint64_t kModelStream = 7;
constexpr std::uint64_t kExampleBase = 1'000'000;

class RegressionTask final : public Task {
 public:
  RegressionTask(std::uint64_t seed, std::size_t d_in, std::size_t d_out, double noise,
                 double row_decay)
      : seed_(seed), noise_(noise) {
    RngState rng = RngState::substream(seed, kTeacherStream);
    teacher_ = linalg::gaussian_fill(d_out, d_in, 1.0 / static_cast<double>(d_in), rng);
    if (row_decay != 1.0) {
      double scale = 1.0;
      for (std::size_t i = 0; i < teacher_.rows(); ++i) {
        double* row = teacher_.row_ptr(i);
        for (std::size_t j = 0; j < teacher_.cols(); ++j) row[j] *= scale;
        scale *= row_decay;
      }
    }
  }

  std::size_t input_dim() const override { return teacher_.cols(); }
  std::size_t output_dim() const override { return teacher_.rows(); }

  Batch make_batch(std::int64_t first_example, std::size_t count) const override {
    Batch b;
    b.x = Mat(count, input_dim());
    for (std::size_t i = 0; i < count; ++i) {
      RngState rng = RngState::substream(
          seed_, kExampleBase + static_cast<std::uint64_t>(first_example) + i);
      for (std::size_t j = 0; j < input_dim(); ++j) b.x(i, j) = rng.next_normal(1.0);
    }
    b.y = linalg::matmul_nt(b.x, teacher_);
    for (std::size_t i = 0; i < count; ++i) {
      RngState rng = RngState::substream(
          seed_, 2 * kExampleBase + static_cast<std::uint64_t>(first_example) + i);
      for (std::size_t j = 0; j < output_dim(); ++j) {
        b.y(i, j) += noise_ * rng.next_normal(1.0);
      }
    }
    return b;
  }

  std::pair<double, Mat> loss(const Mat& out, const Batch& b) const override {
    return model::mse_loss(out, b.y);
  }

 private:
  std::uint64_t seed_;
  double noise_;
  Mat teacher_;
};

class ToyLmTask final : public Task {
 public:
  ToyLmTask(std::uint64_t seed, std::size_t vocab, std::size_t corpus_len, double skew)
      : vocab_(vocab) {
    if (vocab < 2 || corpus_len < 2) throw std::invalid_argument("toy-lm: corpus too small");
    // skewed transition rows: softmax of scaled Gaussians
    RngState rng = RngState::substream(seed, kTeacherStream);
    transition_ = Mat(vocab, vocab);
    for (std::size_t i = 0; i < vocab; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < vocab; ++j) {
        transition_(i, j) = skew * rng.next_normal(1.0);
        mx = std::max(mx, transition_(i, j));
      }
      double z = 0.0;
      for (std::size_t j = 0; j < vocab; ++j) {
        transition_(i, j) = std::exp(transition_(i, j) - mx);
        z += transition_(i, j);
      }
      for (std::size_t j = 0; j < vocab; ++j) transition_(i, j) /= z;
    }

    RngState walk = RngState::substream(seed, kCorpusStream);
    corpus_.resize(corpus_len);
    corpus_[0] = 0;
    for (std::size_t t = 1; t < corpus_len; ++t) {
      const double u = walk.next_unit();
      const double* row = transition_.row_ptr(corpus_[t - 1]);
      double cum = 0.0;
      std::size_t pick = vocab - 1;
      for (std::size_t j = 0; j < vocab; ++j) {
        cum += row[j];
        if (u < cum) {
          pick = j;
          break;
        }
      }
      corpus_[t] = pick;
    }
  }

  std::size_t input_dim() const override { return vocab_; }
  std::size_t output_dim() const override { return vocab_; }

  Batch make_batch(std::int64_t first_example, std::size_t count) const override {
    Batch b;
    b.x = Mat(count, vocab_);
    b.targets.resize(count);
    const std::size_t span = corpus_.size() - 1;
    for (std::size_t i = 0; i < count; ++i) {
      const auto pos =
          static_cast<std::size_t>((static_cast<std::uint64_t>(first_example) + i) % span);
      b.x(i, corpus_[pos]) = 1.0;
      b.targets[i] = corpus_[pos + 1];
    }
    return b;
  }

  std::pair<double, Mat> loss(const Mat& out, const Batch& b) const override {
    return model::softmax_cross_entropy(out, b.targets);
  }

  const Mat& transition() const { return transition_; }

 private:
  std::size_t vocab_;
  Mat transition_;
  std::vector<std::size_t> corpus_;
};

}  // namespace

std::unique_ptr<Task> make_regression_task(std::uint64_t seed, std::size_t d_in,
                                           std::size_t d_out, double noise,
                                           double row_decay) {
  return std::make_unique<RegressionTask>(seed, d_in, d_out, noise, row_decay);
}

std::unique_ptr<Task> make_toy_lm_task(std::uint64_t seed, std::size_t vocab,
                                       std::size_t corpus_len, double skew) {
  return std::make_unique<ToyLmTask>(seed, vocab, corpus_len, skew);
}

model::TinyModel make_task_model(const Task& task, std::size_t hidden, std::size_t layers,
                                 std::uint64_t seed) {
  if (layers < 1) throw std::invalid_argument("make_task_model: need at least one layer");
  std::vector<std::size_t> dims;
  dims.push_back(task.input_dim());
  for (std::size_t i = 0; i + 1 < layers; ++i) dims.push_back(hidden);
  dims.push_back(task.output_dim());
  RngState rng = RngState::substream(seed, kModelStream);
  return model::make_mlp(dims, rng);
}

}  // namespace meso::tasks
