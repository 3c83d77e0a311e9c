#pragma once

#include "xalign/errors.hpp"
#include "xalign/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <vector>

namespace xalign {

enum class ScheduleStep { per_update, per_epoch };

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 6;
  Index batch_size = 512;
  Index schedule_period = 200;
  ScheduleStep schedule_step = ScheduleStep::per_update;
  std::uint64_t seed = 0;
  // Element variance the source matrix is rescaled to before fitting.
  double target_variance = 4.5;

  void validate() const;
};

// Same mechanics, 40 epochs: the recipe for concept-bottleneck heads.
SgdConfig cbm_default_config();

// Cosine annealing with eta_min = 0, evaluated in closed form like
// torch.optim.lr_scheduler.CosineAnnealingLR.
class CosineSchedule {
 public:
  CosineSchedule(const SgdConfig& cfg, Index n_rows);

  double learning_rate(Index update, int epoch) const;

  Index updates_per_epoch() const { return updates_per_epoch_; }
  Index total_updates() const { return total_updates_; }
  // Effective period in schedule steps (updates or epochs).
  Index period() const { return period_; }

 private:
  double base_;
  ScheduleStep step_;
  Index updates_per_epoch_;
  Index total_updates_;
  Index period_;
};

// Heavy-ball momentum with coupled L2 decay, matching torch.optim.SGD with
// dampening 0 and nesterov off.
class MomentumSgd {
 public:
  MomentumSgd(double momentum, double weight_decay) : momentum_(momentum), decay_(weight_decay) {}

  template <typename Param, typename Grad>
  void step(std::size_t slot, Eigen::MatrixBase<Param>& param, const Eigen::MatrixBase<Grad>& grad,
            double lr, bool apply_decay) {
    if (slot >= velocity_.size()) velocity_.resize(slot + 1);
    Matrix& v = velocity_[slot];
    if (v.rows() != param.rows() || v.cols() != param.cols()) v = Matrix::Zero(param.rows(), param.cols());
    if (apply_decay && decay_ != 0.0) {
      v = momentum_ * v + grad + decay_ * param;
    } else {
      v = momentum_ * v + grad;
    }
    param -= lr * v;
  }

 private:
  double momentum_;
  double decay_;
  std::vector<Matrix> velocity_;
};

// Drives `step(batch_rows, learning_rate)` over shuffled minibatches for
// cfg.epochs epochs. The shuffle sequence is a pure function of cfg.seed.
template <typename StepFn>
void run_minibatches(const SgdConfig& cfg, Index n_rows, StepFn&& step) {
  const CosineSchedule schedule(cfg, n_rows);
  std::mt19937_64 rng(cfg.seed);
  std::vector<Index> order(static_cast<std::size_t>(n_rows));
  Index update = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (Index start = 0; start < n_rows; start += cfg.batch_size) {
      const Index len = std::min(cfg.batch_size, n_rows - start);
      step(std::span<const Index>(order.data() + start, static_cast<std::size_t>(len)),
           schedule.learning_rate(update, epoch));
      ++update;
    }
  }
}

}  // namespace xalign
