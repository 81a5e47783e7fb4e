#pragma once

#include <cstdint>

#include "distlab/model.hpp"
#include "distlab/train_config.hpp"

namespace distlab {

/// Linear warm-up from 0 to the peak over warmup_steps, then cosine or
/// linear decay to 0 at total_steps (or held constant). Throws ConfigError
/// when step lies outside [0, total_steps].
double lr_at_step(const TrainConfig& config, std::int64_t step, std::int64_t total_steps);

template <typename Scalar>
struct AdamState {
  ModelParams<Scalar> m;
  ModelParams<Scalar> v;
  std::int64_t step = 0;

  static AdamState zeros(const ModelConfig& config) {
    return {ModelParams<Scalar>::zeros(config), ModelParams<Scalar>::zeros(config), 0};
  }
};

/// One AdamW update of a single tensor at (1-based) step `step`. Weight decay
/// is decoupled: theta <- theta * (1 - lr * wd) before the moment update.
template <typename Scalar>
void adamw_update(Matrix<Scalar>& param, const Matrix<Scalar>& grad, Matrix<Scalar>& m, Matrix<Scalar>& v,
                  std::int64_t step, double lr, const TrainConfig& config, bool decays);

/// AdamW over every tensor; norm gains are not decayed. Throws ModelError on
/// non-finite gradients (parameters untouched in that case).
template <typename Scalar>
void adamw_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, AdamState<Scalar>& state, double lr,
                const TrainConfig& config);

template <typename Scalar>
double global_grad_norm(const ModelParams<Scalar>& grads);

/// Rescales all gradients by max_norm / norm when the global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
template <typename Scalar>
double clip_grad_norm(ModelParams<Scalar>& grads, double max_norm);

}  // namespace distlab
