#include "distlab/optim.hpp"

#include <cmath>
#include <numbers>

namespace distlab {

double lr_at_step(const TrainConfig& c, std::int64_t step, std::int64_t total_steps) {
  if (step < 0 || step > total_steps) throw ConfigError("schedule step out of range");
  const double peak = c.max_learning_rate;
  if (step < c.warmup_steps) return peak * static_cast<double>(step) / static_cast<double>(c.warmup_steps);
  const std::int64_t decay_steps = total_steps - c.warmup_steps;
  if (c.schedule == Schedule::kConstant || decay_steps <= 0) return peak;
  const double progress = static_cast<double>(step - c.warmup_steps) / static_cast<double>(decay_steps);
  if (c.schedule == Schedule::kLinear) return peak * (1.0 - progress);
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <typename Scalar>
void adamw_update(Matrix<Scalar>& param, const Matrix<Scalar>& grad, Matrix<Scalar>& m, Matrix<Scalar>& v,
                  std::int64_t step, double lr, const TrainConfig& c, bool decays) {
  if (decays && c.weight_decay != 0.0) param *= static_cast<Scalar>(1.0 - lr * c.weight_decay);
  const auto b1 = static_cast<Scalar>(c.adam_beta1);
  const auto b2 = static_cast<Scalar>(c.adam_beta2);
  m = b1 * m + (Scalar(1) - b1) * grad;
  v = b2 * v + (Scalar(1) - b2) * grad.cwiseAbs2();
  const auto bc1 = static_cast<Scalar>(1.0 - std::pow(c.adam_beta1, static_cast<double>(step)));
  const auto bc2 = static_cast<Scalar>(1.0 - std::pow(c.adam_beta2, static_cast<double>(step)));
  const auto lr_s = static_cast<Scalar>(lr);
  const auto eps = static_cast<Scalar>(c.adam_epsilon);
  param.array() -= lr_s * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
}

template <typename Scalar>
void adamw_step(ModelParams<Scalar>& params, const ModelParams<Scalar>& grads, AdamState<Scalar>& state, double lr,
                const TrainConfig& c) {
  auto p = named_tensors(params);
  const auto g = named_tensors(grads);
  auto m = named_tensors(state.m);
  auto v = named_tensors(state.v);
  for (const auto& t : g) {
    if (!t.tensor->allFinite()) throw ModelError("non-finite gradient in " + t.name);
  }
  ++state.step;
  for (std::size_t i = 0; i < p.size(); ++i) {
    adamw_update(*p[i].tensor, *g[i].tensor, *m[i].tensor, *v[i].tensor, state.step, lr, c, p[i].decays);
  }
}

template <typename Scalar>
double global_grad_norm(const ModelParams<Scalar>& grads) {
  double sq = 0.0;
  for (const auto& t : named_tensors(grads)) sq += t.tensor->template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

template <typename Scalar>
double clip_grad_norm(ModelParams<Scalar>& grads, double max_norm) {
  const double norm = global_grad_norm(grads);
  if (norm > max_norm && norm > 0.0) {
    const auto s = static_cast<Scalar>(max_norm / norm);
    for (auto& t : named_tensors(grads)) *t.tensor *= s;
  }
  return norm;
}

#define DISTLAB_INSTANTIATE(S)                                                                                   \
  template void adamw_update(Matrix<S>&, const Matrix<S>&, Matrix<S>&, Matrix<S>&, std::int64_t, double,        \
                             const TrainConfig&, bool);                                                          \
  template void adamw_step(ModelParams<S>&, const ModelParams<S>&, AdamState<S>&, double, const TrainConfig&);  \
  template double global_grad_norm(const ModelParams<S>&);                                                       \
  template double clip_grad_norm(ModelParams<S>&, double);

DISTLAB_INSTANTIATE(float)
DISTLAB_INSTANTIATE(double)

#undef DISTLAB_INSTANTIATE

}  // namespace distlab
